#include "bss/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace bss {

namespace {

using nlohmann::json;

json parse_document(std::string_view text, const std::string& name) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(name, e.what());
  }
}

const json& stations_of(const json& doc, const std::string& name) {
  if (!doc.is_object() || !doc.contains("data") || !doc["data"].is_object())
    throw ParseError(name + ".data", "missing object");
  const auto& data = doc["data"];
  if (!data.contains("stations") || !data["stations"].is_array())
    throw ParseError(name + ".data.stations", "missing array");
  return data["stations"];
}

std::string station_id(const json& station, const std::string& path) {
  if (!station.is_object()) throw ParseError(path, "station entry must be an object");
  if (!station.contains("station_id")) throw ParseError(path + ".station_id", "missing");
  const auto& id = station["station_id"];
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return std::to_string(id.get<long long>());
  throw ParseError(path + ".station_id", "must be a string or an integer");
}

int integer_field(const json& station, const std::string& key, const std::string& path) {
  if (!station.contains(key)) throw ParseError(path + "." + key, "missing");
  const auto& v = station[key];
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return static_cast<int>(v.get<double>());
  throw ParseError(path + "." + key, "must be an integer");
}

}  // namespace

GbfsSnapshot parse_gbfs(std::string_view status_document, std::string_view information_document) {
  const json status = parse_document(status_document, "status");
  const json info = parse_document(information_document, "information");
  const auto& status_stations = stations_of(status, "status");
  const auto& info_stations = stations_of(info, "information");

  std::unordered_map<std::string, int> capacity;
  for (std::size_t i = 0; i < info_stations.size(); ++i) {
    const std::string path = "information.data.stations[" + std::to_string(i) + "]";
    capacity[station_id(info_stations[i], path)] = integer_field(info_stations[i], "capacity", path);
  }

  GbfsSnapshot snap;
  if (status.contains("last_updated") && status["last_updated"].is_number())
    snap.timestamp = status["last_updated"].get<long long>();
  std::unordered_map<std::string, bool> matched;
  for (std::size_t i = 0; i < status_stations.size(); ++i) {
    const std::string path = "status.data.stations[" + std::to_string(i) + "]";
    const std::string id = station_id(status_stations[i], path);
    const int bikes = integer_field(status_stations[i], "num_bikes_available", path);
    if (bikes < 0) throw ParseError(path + ".num_bikes_available", "must be non-negative");
    const auto it = capacity.find(id);
    if (it == capacity.end() || it->second < 1) {
      ++snap.dropped;
      continue;
    }
    matched[id] = true;
    GbfsStation s{id, bikes, it->second};
    if (s.bikes_available > s.capacity) {
      s.bikes_available = s.capacity;
      ++snap.clamped;
    }
    snap.stations.push_back(std::move(s));
  }
  for (const auto& [id, cap] : capacity)
    if (!matched.count(id)) ++snap.dropped;
  if (snap.stations.empty()) throw ParseError("status.data.stations", "no station appears in both documents");
  return snap;
}

SnapshotHistograms snapshot_histograms(const GbfsSnapshot& snapshot, int k_max) {
  if (snapshot.stations.empty()) throw std::invalid_argument("snapshot_histograms: empty snapshot");
  int largest = 0;
  for (const auto& s : snapshot.stations) largest = std::max(largest, s.capacity);
  if (k_max <= 0) k_max = largest;
  if (largest > k_max) throw std::invalid_argument("snapshot_histograms: capacity exceeds k_max");
  SnapshotHistograms h{Vector::Zero(largest + 1), RatioHistogram::Zero(k_max + 1)};
  const double w = 1.0 / static_cast<double>(snapshot.stations.size());
  for (const auto& s : snapshot.stations) {
    h.counts[s.bikes_available] += w;
    h.ratio[ratio_bin(s.bikes_available, s.capacity, k_max)] += w;
  }
  return h;
}

RateSeries read_rate_series(std::istream& in) {
  RateSeries out;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("rate series", "empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_hours,rate") throw ParseError("rate series line 1", "expected header t_hours,rate");
  for (int row = 2; std::getline(in, line); ++row) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string where = "rate series line " + std::to_string(row);
    if (comma == std::string::npos) throw ParseError(where, "expected two columns");
    double t = 0, r = 0;
    try {
      std::size_t used = 0;
      t = std::stod(line.substr(0, comma), &used);
      r = std::stod(line.substr(comma + 1), &used);
    } catch (const std::exception&) {
      throw ParseError(where, "not a number");
    }
    if (!out.times.empty() && !(t > out.times.back())) throw ParseError(where, "times must be strictly increasing");
    if (!(r >= 0)) throw ParseError(where, "rates must be non-negative");
    out.times.push_back(t);
    out.rates.push_back(r);
  }
  return out;
}

RateSeries load_rate_series(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_rate_series(in);
}

FourierFit fit_fourier(const RateSeries& series, int order, double period) {
  if (order < 0) throw std::invalid_argument("fit_fourier: order must be non-negative");
  if (!(period > 0)) throw std::invalid_argument("fit_fourier: period must be positive");
  if (series.times.size() != series.rates.size()) throw std::invalid_argument("fit_fourier: ragged series");
  const auto n = static_cast<Eigen::Index>(series.times.size());
  const Eigen::Index cols = 2 * order + 1;
  if (n < cols) throw std::invalid_argument("fit_fourier: need at least 2*order+1 samples");

  Matrix design(n, cols);
  Vector rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = series.times[static_cast<std::size_t>(i)];
    design(i, 0) = 1.0;
    for (int j = 1; j <= order; ++j) {
      const double arg = 2.0 * std::numbers::pi * t * j / period;
      design(i, 2 * j - 1) = std::sin(arg);
      design(i, 2 * j) = std::cos(arg);
    }
    rhs[i] = series.rates[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) throw std::invalid_argument("fit_fourier: rank-deficient design (duplicate sample times?)");
  const Vector beta = (design.transpose() * design).ldlt().solve(design.transpose() * rhs);

  FourierFit fit;
  fit.model.period = period;
  fit.model.intercept = beta[0];
  for (int j = 1; j <= order; ++j) {
    fit.model.sin_coeffs.push_back(beta[2 * j - 1]);
    fit.model.cos_coeffs.push_back(beta[2 * j]);
  }
  const double mean = rhs.mean();
  const double ss_tot = (rhs.array() - mean).square().sum();
  const double ss_res = (rhs - design * beta).squaredNorm();
  fit.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

}  // namespace bss
