#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <doctest.h>

#include "bss/equilibrium.hpp"
#include "bss/harness.hpp"
#include "bss/meanfield.hpp"

using namespace bss;

namespace {

std::vector<std::string> csv_header(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream line(text.substr(0, text.find('\n')));
  for (std::string cell; std::getline(line, cell, ',');) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("flln") {
  SUBCASE("errors shrink with the station count") {
    FllnOptions opts;
    opts.n_list = {100, 1600};
    opts.horizon = 2.0;
    opts.reps = 10;
    opts.seed = 3;
    const auto report = flln_experiment(small_test_params(), opts);
    CHECK(report.name == "flln");
    CHECK(report.metrics.at("sup_error_N1600") < report.metrics.at("sup_error_N100"));
    CHECK(report.passed());
  }

  SUBCASE("an empty system has no fluctuations") {
    SystemParams s = small_test_params();
    s.arrival.rate = 0.0;
    s.gamma = 0.0;
    s.fleet = 0;
    FllnOptions opts;
    opts.n_list = {50};
    opts.horizon = 1.0;
    opts.reps = 2;
    const auto report = flln_experiment(s, opts);
    CHECK(report.metrics.at("sup_error_N50") == 0.0);
  }

  SUBCASE("bad options") {
    FllnOptions opts;
    opts.n_list.clear();
    CHECK_THROWS_AS(flln_experiment(small_test_params(), opts), std::invalid_argument);
  }
}

TEST_CASE("fclt") {
  SUBCASE("too few replications are reported, not judged") {
    FcltOptions opts;
    opts.reps = 2;
    const auto report = fclt_experiment(small_test_params(), opts);
    CHECK(report.status == ReportStatus::insufficient);
    CHECK(report.to_json()["status"] == "insufficient sample");
    CHECK(report.to_json()["pass"].is_null());
  }

  SUBCASE("dropping the noise term is detected") {
    FcltOptions opts;
    opts.n = 200;
    opts.reps = 200;
    opts.t_check = 2.0;
    opts.include_noise = false;
    const auto report = fclt_experiment(small_test_params(), opts);
    CHECK(report.name == "fclt_negative_control");
    CHECK(report.status == ReportStatus::fail);
  }
}

TEST_CASE("interchange below the gate is informational") {
  InterchangeOptions opts;
  opts.n = 50;
  opts.burn_in = 10;
  opts.horizon = 100;
  const auto report = interchange_experiment(small_test_params(), opts);
  CHECK(report.status == ReportStatus::informational);
  CHECK(report.metrics.at("total_variation") >= 0.0);
  CHECK(report.metrics.at("total_variation") <= 1.0);
}

TEST_CASE("forward equation residual") {
  SUBCASE("coordinate test function") {
    ForwardOptions opts;
    opts.n = 100;
    opts.index = 1;
    const auto report = forward_equation_residual(small_test_params(), opts);
    CHECK(report.passed());
  }

  SUBCASE("square test function from the start") {
    ForwardOptions opts;
    opts.n = 100;
    opts.t = 0.0;
    opts.f = TestFunction::square;
    const auto report = forward_equation_residual(small_test_params(), opts);
    CHECK(report.passed());
  }

  SUBCASE("no arrivals") {
    SystemParams s = small_test_params();
    s.arrival.rate = 0.0;
    ForwardOptions opts;
    opts.n = 100;
    opts.index = 3;
    CHECK(forward_equation_residual(s, opts).passed());
  }
}

TEST_CASE("grid parsing") {
  const auto axes = parse_grid("p=0:1:0.25,theta=0:2:0.5");
  REQUIRE(axes.size() == 2);
  CHECK(axes[0].name == "p");
  CHECK(axes[0].values() == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(axes[1].values().size() == 5);
  CHECK(parse_grid("p=0.3")[0].values() == std::vector<double>{0.3});
  CHECK(parse_grid("p=0:1:0.1")[0].values().size() == 11);

  CHECK_THROWS_AS(parse_grid("p"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grid("p=a:b"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grid("p=1:0:0.1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grid("p=0:1:0"), std::invalid_argument);

  for (auto plane : {SweepPlane::p_theta, SweepPlane::p_c, SweepPlane::p_alpha, SweepPlane::p_gamma})
    CHECK(parse_plane(to_string(plane)) == plane);
  CHECK_THROWS_AS(parse_plane("theta-p"), std::invalid_argument);
}

TEST_CASE("sweeps") {
  SystemParams base = default_sweep_base();
  base.capacity = {{8}, {1.0}};
  base.gamma = 4.0;
  base.fleet = 400;

  SUBCASE("p = 0 ignores the choice function") {
    const auto grid = parse_grid("p=0:0.5:0.5,theta=0:2:0.5");
    const auto rows = sweep(SweepPlane::p_theta, grid, base, 1);
    REQUIRE(rows.size() == 10);
    for (int j = 1; j < 5; ++j) {
      CHECK(rows[j].converged);
      CHECK(rows[j].ybar0 == doctest::Approx(rows[0].ybar0).epsilon(1e-10));
      CHECK(rows[j].entropy == doctest::Approx(rows[0].entropy).epsilon(1e-10));
    }
    // at p = 0.5 the empty-station mass shrinks as θ grows
    for (int j = 6; j < 10; ++j) CHECK(rows[j].ybar0 < rows[j - 1].ybar0);
  }

  SUBCASE("entropy does not increase in p") {
    const auto rows = sweep(SweepPlane::p_c, parse_grid("p=0:1:0.1,c=3"), base, 1);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].entropy <= rows[i - 1].entropy + 1e-12);
  }

  SUBCASE("failing nodes are flagged") {
    const auto rows = sweep(SweepPlane::p_gamma, parse_grid("p=0.5,gamma=-1:2:1"), base, 1);
    REQUIRE(rows.size() == 4);
    CHECK_FALSE(rows[0].converged);
    CHECK(std::isnan(rows[0].entropy));
    CHECK(rows[3].converged);
  }

  SUBCASE("csv layout") {
    const auto rows = sweep(SweepPlane::p_alpha, parse_grid("p=0:1:0.5,alpha=0:1:1"), base, 2);
    std::ostringstream out;
    write_sweep_csv(out, SweepPlane::p_alpha, rows);
    CHECK(csv_header(out.str()) ==
          std::vector<std::string>{"x", "y", "ybar0", "ybar1", "ybarKm1", "ybarK", "entropy", "converged"});
    std::size_t lines = 0;
    for (char c : out.str()) lines += c == '\n';
    CHECK(lines == rows.size() + 1);
  }

  SUBCASE("grid names must match the plane") {
    CHECK_THROWS_AS(sweep(SweepPlane::p_c, parse_grid("p=0:1:0.5,theta=0:1:1"), base, 1), std::invalid_argument);
    CHECK_THROWS_AS(sweep(SweepPlane::p_c, parse_grid("p=0:1:0.5"), base, 1), std::invalid_argument);
  }
}

TEST_CASE("nonstationary runs") {
  SUBCASE("constant arrivals settle") {
    SystemParams s = toy_nonstationary_params(0.5);
    s.arrival.rate = 1.0;
    const auto grid = uniform_grid(0.0, 60.0, 0.5);
    const auto frames = nonstationary_run(s, Vector::Constant(4, 0.25), grid, {}, false);
    CHECK(oscillation_amplitude(frames, 0, 40.0) < 1e-6);
  }

  SUBCASE("toy forcing keeps the occupancy oscillating") {
    const double period = 4.0 * std::numbers::pi;
    const auto grid = uniform_grid(0.0, 10 * period, period / 200);
    for (double p : {0.0, 0.5, 1.0}) {
      CAPTURE(p);
      const auto frames = nonstationary_run(toy_nonstationary_params(p), Vector::Constant(4, 0.25), grid, {}, false);
      CHECK(oscillation_amplitude(frames, 0, 5 * period) > 1e-3);
      CHECK(periodicity_gap(frames, period) < 1e-4);
    }
  }

  SUBCASE("weekday forcing becomes daily periodic") {
    SystemParams s = base_params(0.5);
    s.arrival.rate = weekday_citibike_model();
    const auto grid = uniform_grid(0.0, 24.0 * 10, 0.25);
    const auto frames = nonstationary_run(s, Vector::Constant(21, 1.0 / 21), grid, {}, false);
    CHECK(periodicity_gap(frames, 24.0) < 1e-3);
    for (const auto& f : frames) CHECK(std::abs(f.y.sum() - 1.0) < 1e-10);
  }

  SUBCASE("variance columns and determinism") {
    const auto grid = uniform_grid(0.0, 4.0, 0.5);
    const auto a = nonstationary_run(toy_nonstationary_params(0.5), Vector::Constant(4, 0.25), grid, {}, true);
    const auto b = nonstationary_run(toy_nonstationary_params(0.5), Vector::Constant(4, 0.25), grid, {}, true);
    std::ostringstream oa, ob;
    write_frames_csv(oa, a);
    write_frames_csv(ob, b);
    CHECK(oa.str() == ob.str());
    CHECK(csv_header(oa.str()).size() == 1 + 4 + 1 + 4);
    CHECK(a.front().variance.cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.back().variance.array() > 0.0).all());
  }

  SUBCASE("short runs cannot be checked for periodicity") {
    const auto grid = uniform_grid(0.0, 10.0, 0.5);
    const auto frames = nonstationary_run(toy_nonstationary_params(0.5), Vector::Constant(4, 0.25), grid, {}, false);
    CHECK_THROWS_AS(periodicity_gap(frames, 24.0), std::invalid_argument);
  }
}

TEST_CASE("report json") {
  ExperimentReport r;
  r.name = "demo";
  r.status = ReportStatus::fail;
  r.metrics["x"] = 1.5;
  r.metrics["missing"] = std::numeric_limits<double>::quiet_NaN();
  r.criteria["x"] = "x below one";
  const auto j = r.to_json();
  CHECK(j["name"] == "demo");
  CHECK(j["status"] == "fail");
  CHECK(j["pass"] == false);
  CHECK(j["metrics"]["x"] == 1.5);
  CHECK(j["metrics"]["missing"].is_null());
  CHECK(j["criteria"]["x"] == "x below one");
}
