#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <doctest.h>

#include "bss/ingestion.hpp"

using namespace bss;

namespace {

std::string status_doc(const std::string& stations) {
  return R"({"last_updated": 1700000000, "ttl": 10, "data": {"stations": [)" + stations + "]}}";
}

std::string info_doc(const std::string& stations) { return R"({"data": {"stations": [)" + stations + "]}}"; }

GbfsSnapshot snapshot_of(std::vector<GbfsStation> stations) { return {std::move(stations), 0, 0, 0}; }

RateSeries sampled(const FourierRateModel& model, int samples) {
  RateSeries s;
  for (int i = 0; i < samples; ++i) {
    const double t = model.period * i / samples;
    s.times.push_back(t);
    s.rates.push_back(arrival_rate(model, t));
  }
  return s;
}

}  // namespace

TEST_CASE("gbfs join") {
  SUBCASE("one matching station") {
    const auto snap = parse_gbfs(status_doc(R"({"station_id": "s1", "num_bikes_available": 3})"),
                                 info_doc(R"({"station_id": "s1", "capacity": 10})"));
    REQUIRE(snap.stations.size() == 1);
    CHECK(snap.stations[0].station_id == "s1");
    CHECK(snap.stations[0].bikes_available == 3);
    CHECK(snap.stations[0].capacity == 10);
    CHECK(snap.dropped == 0);
    CHECK(snap.clamped == 0);
    CHECK(snap.timestamp == 1700000000);
  }

  SUBCASE("unmatched stations are dropped and counted") {
    const auto snap = parse_gbfs(
        status_doc(R"({"station_id": "s1", "num_bikes_available": 3}, {"station_id": "s2", "num_bikes_available": 1})"),
        info_doc(R"({"station_id": "s1", "capacity": 10})"));
    CHECK(snap.stations.size() == 1);
    CHECK(snap.dropped == 1);

    const auto other = parse_gbfs(status_doc(R"({"station_id": "s1", "num_bikes_available": 3})"),
                                  info_doc(R"({"station_id": "s1", "capacity": 10}, {"station_id": "s9", "capacity": 4},
                                              {"station_id": "s1x", "capacity": 0})"));
    CHECK(other.stations.size() == 1);
    CHECK(other.dropped == 2);
  }

  SUBCASE("overfilled racks are clamped") {
    const auto snap = parse_gbfs(status_doc(R"({"station_id": "s1", "num_bikes_available": 12})"),
                                 info_doc(R"({"station_id": "s1", "capacity": 10})"));
    CHECK(snap.stations[0].bikes_available == 10);
    CHECK(snap.stations[0].capacity == 10);
    CHECK(snap.clamped == 1);
  }

  SUBCASE("numeric station ids join with string ids") {
    const auto snap = parse_gbfs(status_doc(R"({"station_id": 72, "num_bikes_available": 4})"),
                                 info_doc(R"({"station_id": "72", "capacity": 39})"));
    REQUIRE(snap.stations.size() == 1);
    CHECK(snap.stations[0].station_id == "72");
  }

  SUBCASE("malformed documents report a path") {
    const auto path_of = [](const std::string& status, const std::string& info) {
      try {
        parse_gbfs(status, info);
      } catch (const ParseError& e) {
        return e.path();
      }
      return std::string("<none>");
    };
    const std::string info = info_doc(R"({"station_id": "s1", "capacity": 10})");
    CHECK(path_of("{not json", info) == "status");
    CHECK(path_of(R"({"data": {}})", info) == "status.data.stations");
    CHECK(path_of(status_doc(R"({"station_id": "s1"})"), info) == "status.data.stations[0].num_bikes_available");
    CHECK(path_of(status_doc(R"({"station_id": "s1", "num_bikes_available": 1}, {"num_bikes_available": 2})"), info) ==
          "status.data.stations[1].station_id");
    CHECK(path_of(status_doc(R"({"station_id": "s1", "num_bikes_available": -1})"), info) ==
          "status.data.stations[0].num_bikes_available");
    CHECK(path_of(status_doc(R"({"station_id": "s1", "num_bikes_available": 1})"),
                  info_doc(R"({"station_id": "s1", "capacity": "ten"})")) == "information.data.stations[0].capacity");
    CHECK(path_of(status_doc(R"({"station_id": "s2", "num_bikes_available": 1})"), info) == "status.data.stations");
  }
}

TEST_CASE("snapshot histograms") {
  const auto h = snapshot_histograms(snapshot_of({{"a", 3, 5}, {"b", 3, 60}}), 60);
  CHECK(h.counts.size() == 61);
  CHECK(h.counts[3] == 1.0);
  CHECK(h.ratio[36] == 0.5);
  CHECK(h.ratio[3] == 0.5);

  const auto full = snapshot_histograms(snapshot_of({{"a", 5, 5}, {"b", 19, 19}, {"c", 60, 60}}));
  CHECK(full.ratio.size() == 61);
  CHECK(full.ratio[60] == doctest::Approx(1.0));

  const auto one = snapshot_histograms(snapshot_of({{"a", 2, 7}}));
  CHECK(one.counts[2] == 1.0);
  CHECK(one.ratio[2] == 1.0);

  std::mt19937_64 rng(61);
  std::vector<GbfsStation> stations;
  std::uniform_int_distribution<int> cap(1, 40);
  for (int i = 0; i < 50; ++i) {
    const int k = cap(rng);
    stations.push_back({std::to_string(i), static_cast<int>(rng() % (k + 1)), k});
  }
  const auto base = snapshot_histograms(snapshot_of(stations), 40);
  CHECK(std::abs(base.counts.sum() - 1.0) < 1e-12);
  CHECK(std::abs(base.ratio.sum() - 1.0) < 1e-12);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(stations.begin(), stations.end(), rng);
    const auto shuffled = snapshot_histograms(snapshot_of(stations), 40);
    CHECK((shuffled.counts - base.counts).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((shuffled.ratio - base.ratio).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("rate series csv") {
  std::istringstream good("t_hours,rate\n0,1.5\n0.5,2\n1.0,0\n");
  const auto s = read_rate_series(good);
  CHECK(s.times == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(s.rates == std::vector<double>{1.5, 2.0, 0.0});

  std::istringstream header("time,rate\n0,1\n");
  CHECK_THROWS_AS(read_rate_series(header), ParseError);
  std::istringstream order("t_hours,rate\n1,1\n0.5,1\n");
  CHECK_THROWS_AS(read_rate_series(order), ParseError);
  std::istringstream negative("t_hours,rate\n0,-1\n");
  CHECK_THROWS_AS(read_rate_series(negative), ParseError);
}

TEST_CASE("fourier fit recovers a noiseless generator") {
  const auto fit = fit_fourier(sampled({24.0, 5.0, {2.0}, {0.0}}, 288), 1);
  CHECK(std::abs(fit.model.intercept - 5.0) < 1e-9);
  CHECK(std::abs(fit.model.sin_coeffs[0] - 2.0) < 1e-9);
  CHECK(std::abs(fit.model.cos_coeffs[0]) < 1e-9);
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));

  // five harmonics reproduce the training samples
  FourierRateModel rich{24.0, 91.4, {-43.4, -38.2, 30.1, 14.6, -29.4}, {-49.5, -40.0, 23.7, -1.4, 1.4}};
  const auto series = sampled(rich, 288);
  const auto refit = fit_fourier(series, 5);
  for (std::size_t i = 0; i < series.times.size(); ++i)
    CHECK(std::abs(arrival_rate(refit.model, series.times[i]) - series.rates[i]) <= 1e-9);
  for (int j = 0; j < 5; ++j) {
    CHECK(std::abs(refit.model.sin_coeffs[j] - rich.sin_coeffs[j]) <= 1e-9);
    CHECK(std::abs(refit.model.cos_coeffs[j] - rich.cos_coeffs[j]) <= 1e-9);
  }
}

TEST_CASE("fourier fit edge cases") {
  RateSeries flat;
  for (int i = 0; i < 48; ++i) {
    flat.times.push_back(i * 0.5);
    flat.rates.push_back(7.0);
  }
  const auto fit = fit_fourier(flat, 3);
  CHECK(fit.model.intercept == doctest::Approx(7.0).epsilon(1e-12));
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(fit.model.sin_coeffs[j]) < 1e-9);
    CHECK(std::abs(fit.model.cos_coeffs[j]) < 1e-9);
  }
  CHECK(fit.r_squared == 1.0);

  RateSeries repeated{{1.0, 1.0, 1.0, 1.0}, {1.0, 2.0, 3.0, 4.0}};
  CHECK_THROWS_AS(fit_fourier(repeated, 1), std::invalid_argument);
  RateSeries aliased{{0.0, 24.0, 48.0}, {1.0, 2.0, 3.0}};
  CHECK_THROWS_AS(fit_fourier(aliased, 1), std::invalid_argument);
  CHECK_THROWS_AS(fit_fourier(flat, 30), std::invalid_argument);
}

TEST_CASE("R squared never decreases with the order") {
  std::mt19937_64 rng(67);
  std::normal_distribution<double> noise(0.0, 4.0);
  RateSeries noisy = sampled({24.0, 50.0, {-20.0, 8.0, 3.0}, {-15.0, 5.0, -2.0}}, 288);
  for (auto& r : noisy.rates) r = std::max(0.0, r + noise(rng));
  double previous = -INFINITY;
  for (int order = 0; order <= 10; ++order) {
    const double r2 = fit_fourier(noisy, order).r_squared;
    CHECK(r2 >= previous - 1e-12);
    CHECK(r2 <= 1.0);
    previous = r2;
  }
  CHECK(fit_fourier(noisy, 0).r_squared == doctest::Approx(0.0).epsilon(1e-12));
}
