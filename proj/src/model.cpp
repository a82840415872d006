#include "bss/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace bss {

namespace {

constexpr double kRateGridStep = 0.01;
constexpr double kRateBoundSafety = 1.001;

std::string describe(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

double require_number(const nlohmann::json& node, const std::string& field) {
  if (!node.is_number()) throw ValidationError(field, "expected a number");
  const double v = node.get<double>();
  if (!std::isfinite(v)) throw ValidationError(field, "must be finite");
  return v;
}

long require_integer(const nlohmann::json& node, const std::string& field) {
  if (node.is_number_integer()) return node.get<long>();
  if (node.is_number_float()) {
    const double v = node.get<double>();
    if (std::isfinite(v) && v == std::floor(v)) return static_cast<long>(v);
  }
  throw ValidationError(field, "expected an integer");
}

std::vector<double> number_array(const nlohmann::json& node, const std::string& field) {
  if (!node.is_array()) throw ValidationError(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < node.size(); ++i)
    out.push_back(require_number(node[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

ChoiceSpec parse_choice(const nlohmann::json& node) {
  if (!node.is_object()) throw ValidationError("choice", "expected an object");
  if (!node.contains("kind") || !node["kind"].is_string())
    throw ValidationError("choice.kind", "expected one of exponential|minimum|polynomial|none");
  const auto kind = node["kind"].get<std::string>();
  ChoiceSpec spec;
  if (kind == "exponential" || kind == "exp") {
    spec.kind = ChoiceKind::exponential;
    if (!node.contains("theta")) throw ValidationError("choice.theta", "required for exponential choice");
    spec.param = require_number(node["theta"], "choice.theta");
    if (spec.param < 0) throw ValidationError("choice.theta", "must be >= 0, got " + describe(spec.param));
  } else if (kind == "minimum" || kind == "min") {
    spec.kind = ChoiceKind::minimum;
    if (!node.contains("c")) throw ValidationError("choice.c", "required for minimum choice");
    const long c = require_integer(node["c"], "choice.c");
    if (c < 1) throw ValidationError("choice.c", "must be an integer >= 1, got " + std::to_string(c));
    spec.param = static_cast<double>(c);
  } else if (kind == "polynomial" || kind == "poly") {
    spec.kind = ChoiceKind::polynomial;
    if (!node.contains("alpha")) throw ValidationError("choice.alpha", "required for polynomial choice");
    spec.param = require_number(node["alpha"], "choice.alpha");
    if (spec.param < 0) throw ValidationError("choice.alpha", "must be >= 0, got " + describe(spec.param));
  } else if (kind == "none") {
    spec.kind = ChoiceKind::none;
  } else {
    throw ValidationError("choice.kind", "unknown kind '" + kind + "'");
  }
  return spec;
}

void check_fourier_nonnegative(const FourierRateModel& model, const std::string& path) {
  const auto steps = static_cast<long>(std::llround(model.period / kRateGridStep));
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) * kRateGridStep;
    const double v = arrival_rate(model, t);
    if (v < 0.0)
      throw ValidationError(path, "rate is negative (" + describe(v) + ") at t=" + describe(t) + " h");
  }
}

ArrivalModel parse_arrival(const nlohmann::json& node) {
  ArrivalModel model;
  if (node.is_number()) {
    model.rate = require_number(node, "arrival");
  } else if (node.is_object() && node.contains("constant")) {
    model.rate = require_number(node["constant"], "arrival.constant");
  } else if (node.is_object() && node.contains("fourier")) {
    model.rate = fourier_from_json(node["fourier"], "arrival.fourier");
  } else {
    throw ValidationError("arrival", "expected {\"constant\": rate} or {\"fourier\": {...}}");
  }
  if (const auto* c = std::get_if<double>(&model.rate); c && *c < 0)
    throw ValidationError("arrival.constant", "must be >= 0, got " + describe(*c));
  return model;
}

CapacityDistribution parse_capacity(const nlohmann::json& node) {
  CapacityDistribution dist;
  if (node.is_number()) {
    const long k = require_integer(node, "capacity");
    if (k < 1) throw ValidationError("capacity", "must be >= 1, got " + std::to_string(k));
    return {{static_cast<int>(k)}, {1.0}};
  }
  if (!node.is_object() || !node.contains("values") || !node.contains("fractions"))
    throw ValidationError("capacity", "expected an integer or {values: [...], fractions: [...]}");
  const auto& values = node["values"];
  if (!values.is_array() || values.empty()) throw ValidationError("capacity.values", "must be a non-empty array");
  auto fractions = number_array(node["fractions"], "capacity.fractions");
  if (fractions.size() != values.size())
    throw ValidationError("capacity.fractions", "length must match capacity.values");

  std::vector<std::pair<int, double>> classes;
  std::set<int> seen;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string field = "capacity.values[" + std::to_string(i) + "]";
    const long k = require_integer(values[i], field);
    if (k < 1) throw ValidationError(field, "must be >= 1, got " + std::to_string(k));
    if (!seen.insert(static_cast<int>(k)).second) throw ValidationError(field, "duplicate capacity");
    if (fractions[i] < 0)
      throw ValidationError("capacity.fractions[" + std::to_string(i) + "]", "must be >= 0");
    classes.emplace_back(static_cast<int>(k), fractions[i]);
  }
  std::sort(classes.begin(), classes.end());
  const double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  if (!(total > 0)) throw ValidationError("capacity.fractions", "must have a positive sum");
  for (const auto& [k, f] : classes) {
    if (f == 0.0) continue;  // empty classes carry no stations
    dist.values.push_back(k);
    dist.fractions.push_back(f);
  }
  if (std::abs(total - 1.0) > 1e-12)
    for (auto& f : dist.fractions) f /= total;
  return dist;
}

}  // namespace

double choice_weight(const ChoiceSpec& spec, int n) {
  if (n < 0) throw std::domain_error("choice_weight: bike count must be non-negative");
  const double x = static_cast<double>(n);
  switch (spec.kind) {
    case ChoiceKind::exponential: return std::exp(spec.param * x);
    case ChoiceKind::minimum: return std::min(x, spec.param);
    case ChoiceKind::polynomial: return std::pow(x, spec.param);
    case ChoiceKind::none: return 1.0;
  }
  return 1.0;
}

double choice_weight_scale(const ChoiceSpec& spec, int k_max) {
  const double s = choice_weight(spec, k_max);
  return s > 0 ? s : 1.0;
}

Vector normalized_choice_weights(const ChoiceSpec& spec, int k_max) {
  Vector g(k_max + 1);
  const double km = static_cast<double>(k_max);
  for (int n = 0; n <= k_max; ++n) {
    const double x = static_cast<double>(n);
    switch (spec.kind) {
      case ChoiceKind::exponential: g[n] = std::exp(spec.param * (x - km)); break;
      case ChoiceKind::minimum: g[n] = std::min(x, spec.param) / std::min(km, spec.param); break;
      case ChoiceKind::polynomial: g[n] = k_max > 0 ? std::pow(x / km, spec.param) : 1.0; break;
      case ChoiceKind::none: g[n] = 1.0; break;
    }
  }
  return g;
}

std::string to_string(ChoiceKind kind) {
  switch (kind) {
    case ChoiceKind::exponential: return "exponential";
    case ChoiceKind::minimum: return "minimum";
    case ChoiceKind::polynomial: return "polynomial";
    case ChoiceKind::none: return "none";
  }
  return "none";
}

double arrival_rate(const FourierRateModel& model, double t) {
  double v = model.intercept;
  // reducing first makes λ(t) and λ(t+ω) bitwise equal whenever t+ω is exact
  double phase = std::fmod(t, model.period);
  if (phase < 0) phase += model.period;
  const double w = 2.0 * std::numbers::pi * phase / model.period;
  for (int j = 0; j < model.order(); ++j) {
    const double arg = w * (j + 1);
    v += model.sin_coeffs[j] * std::sin(arg) + model.cos_coeffs[j] * std::cos(arg);
  }
  return model.clip ? std::max(v, 0.0) : v;
}

double arrival_rate(const ArrivalModel& model, double t) {
  if (const auto* c = std::get_if<double>(&model.rate)) return *c;
  return arrival_rate(std::get<FourierRateModel>(model.rate), t);
}

double arrival_rate_bound(const ArrivalModel& model, double horizon) {
  if (const auto* c = std::get_if<double>(&model.rate)) return *c;
  const auto& f = std::get<FourierRateModel>(model.rate);
  const double span = std::min(horizon, f.period);
  const auto steps = static_cast<long>(std::ceil(span / kRateGridStep));
  double peak = 0.0;
  for (long i = 0; i <= steps; ++i) peak = std::max(peak, arrival_rate(f, static_cast<double>(i) * kRateGridStep));
  return peak * kRateBoundSafety;
}

FourierRateModel weekday_citibike_model() {
  return {24.0, 91.4, {-43.4, -38.2, 30.1, 14.6, -29.4}, {-49.5, -40.0, 23.7, -1.4, 1.4}, true};
}

FourierRateModel weekend_citibike_model() { return {24.0, 58.6, {-43.8, 6.0}, {-39.5, 6.7}}; }

FourierRateModel fourier_from_json(const nlohmann::json& node, const std::string& path) {
  if (!node.is_object()) throw ValidationError(path, "expected an object");
  FourierRateModel model;
  if (node.contains("period")) model.period = require_number(node["period"], path + ".period");
  if (!(model.period > 0)) throw ValidationError(path + ".period", "must be > 0");
  if (node.contains("intercept")) model.intercept = require_number(node["intercept"], path + ".intercept");
  if (node.contains("sin")) model.sin_coeffs = number_array(node["sin"], path + ".sin");
  if (node.contains("cos")) model.cos_coeffs = number_array(node["cos"], path + ".cos");
  if (model.sin_coeffs.size() != model.cos_coeffs.size())
    throw ValidationError(path + ".cos", "sin and cos coefficient arrays must have equal length");
  if (node.contains("clip")) {
    if (!node["clip"].is_boolean()) throw ValidationError(path + ".clip", "expected a boolean");
    model.clip = node["clip"].get<bool>();
  }
  check_fourier_nonnegative(model, path);
  return model;
}

nlohmann::json to_json(const FourierRateModel& model) {
  return {{"period", model.period},
          {"intercept", model.intercept},
          {"sin", model.sin_coeffs},
          {"cos", model.cos_coeffs},
          {"clip", model.clip}};
}

SystemParams validate_params(const nlohmann::json& raw) {
  if (!raw.is_object()) throw ValidationError("$", "configuration must be an object");
  static const std::set<std::string> known{"n_stations", "fleet", "gamma", "capacity", "mu",
                                           "p",          "arrival", "lambda", "choice"};
  for (const auto& [key, _] : raw.items())
    if (!known.contains(key)) throw ValidationError(key, "unknown field");

  SystemParams out;
  if (!raw.contains("n_stations")) throw ValidationError("n_stations", "required");
  const long n = require_integer(raw["n_stations"], "n_stations");
  if (n < 1) throw ValidationError("n_stations", "must be >= 1, got " + std::to_string(n));
  out.n_stations = static_cast<int>(n);

  if (!raw.contains("capacity")) throw ValidationError("capacity", "required");
  out.capacity = parse_capacity(raw["capacity"]);

  if (raw.contains("mu")) out.mu = require_number(raw["mu"], "mu");
  if (!(out.mu > 0)) throw ValidationError("mu", "must be > 0, got " + describe(out.mu));

  if (raw.contains("p")) out.p = require_number(raw["p"], "p");
  if (out.p < 0 || out.p > 1) throw ValidationError("p", "must lie in [0, 1], got " + describe(out.p));

  const bool has_fleet = raw.contains("fleet");
  const bool has_gamma = raw.contains("gamma");
  if (!has_fleet && !has_gamma) throw ValidationError("fleet", "one of fleet or gamma is required");
  if (has_gamma) {
    out.gamma = require_number(raw["gamma"], "gamma");
    if (out.gamma < 0) throw ValidationError("gamma", "must be >= 0, got " + describe(out.gamma));
  }
  if (has_fleet) {
    out.fleet = require_integer(raw["fleet"], "fleet");
    if (out.fleet < 0) throw ValidationError("fleet", "must be >= 0, got " + std::to_string(out.fleet));
    if (!has_gamma) out.gamma = static_cast<double>(out.fleet) / static_cast<double>(out.n_stations);
    else if (std::abs(static_cast<double>(out.fleet) - out.gamma * out.n_stations) > 0.5)
      throw ValidationError("gamma", "inconsistent with fleet / n_stations");
  } else {
    out.fleet = std::lround(out.gamma * out.n_stations);
  }

  if (raw.contains("arrival") && raw.contains("lambda"))
    throw ValidationError("lambda", "give either arrival or lambda, not both");
  if (raw.contains("arrival")) out.arrival = parse_arrival(raw["arrival"]);
  else if (raw.contains("lambda")) out.arrival = parse_arrival(nlohmann::json{{"constant", raw["lambda"]}});

  if (raw.contains("choice")) out.choice = parse_choice(raw["choice"]);
  return out;
}

nlohmann::json to_json(const SystemParams& params) {
  nlohmann::json j;
  j["n_stations"] = params.n_stations;
  j["fleet"] = params.fleet;
  j["gamma"] = params.gamma;
  if (params.capacity.uniform()) j["capacity"] = params.capacity.values.front();
  else j["capacity"] = {{"values", params.capacity.values}, {"fractions", params.capacity.fractions}};
  j["mu"] = params.mu;
  j["p"] = params.p;
  if (params.arrival.is_constant()) j["arrival"] = {{"constant", std::get<double>(params.arrival.rate)}};
  else j["arrival"] = {{"fourier", to_json(std::get<FourierRateModel>(params.arrival.rate))}};
  nlohmann::json choice{{"kind", to_string(params.choice.kind)}};
  switch (params.choice.kind) {
    case ChoiceKind::exponential: choice["theta"] = params.choice.param; break;
    case ChoiceKind::minimum: choice["c"] = std::lround(params.choice.param); break;
    case ChoiceKind::polynomial: choice["alpha"] = params.choice.param; break;
    case ChoiceKind::none: break;
  }
  j["choice"] = choice;
  return j;
}

SystemParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("$", "cannot open configuration file " + path.string());
  nlohmann::json raw;
  try {
    raw = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("$", std::string("malformed JSON: ") + e.what());
  }
  return validate_params(raw);
}

std::vector<int> station_capacities(const SystemParams& params) {
  const auto& dist = params.capacity;
  const std::size_t classes = dist.values.size();
  const long n = params.n_stations;
  std::vector<long> counts(classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  long assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double exact = dist.fractions[c] * static_cast<double>(n);
    counts[c] = static_cast<long>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[remainders[i % classes].second];

  std::vector<int> caps;
  caps.reserve(static_cast<std::size_t>(n));
  for (std::size_t c = 0; c < classes; ++c) caps.insert(caps.end(), static_cast<std::size_t>(counts[c]), dist.values[c]);
  return caps;
}

}  // namespace bss
