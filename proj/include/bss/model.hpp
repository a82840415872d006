#pragma once

// Domain types shared by every module: choice functions, arrival-rate
// functions and the validated system configuration.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace bss {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a configuration document violates a field constraint.
/// `field()` holds the dotted path of the offending field.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class ChoiceKind { exponential, minimum, polynomial, none };

/// Informed-user choice function g. `param` is θ (exponential), c (minimum)
/// or α (polynomial); ignored for `none`.
struct ChoiceSpec {
  ChoiceKind kind = ChoiceKind::none;
  double param = 0.0;

  friend bool operator==(const ChoiceSpec&, const ChoiceSpec&) = default;
};

/// g(n). Throws std::domain_error for n < 0.
double choice_weight(const ChoiceSpec& spec, int n);

/// g(0..k_max) divided by g(k_max). Every formula uses g only through
/// ratios g(n)/Σg, so the scaled table is interchangeable with the raw one
/// and stays finite for large θ·k_max.
Vector normalized_choice_weights(const ChoiceSpec& spec, int k_max);

/// g(k_max), the scale removed by normalized_choice_weights.
double choice_weight_scale(const ChoiceSpec& spec, int k_max);

std::string to_string(ChoiceKind kind);

/// Periodic arrival rate: intercept + Σ_j sin_j sin(2πtj/ω) + cos_j cos(2πtj/ω),
/// optionally floored at zero.
struct FourierRateModel {
  double period = 24.0;
  double intercept = 0.0;
  std::vector<double> sin_coeffs;
  std::vector<double> cos_coeffs;
  bool clip = false;  // max(0, series); negative values pass validation

  int order() const { return static_cast<int>(sin_coeffs.size()); }

  friend bool operator==(const FourierRateModel&, const FourierRateModel&) = default;
};

/// Per-station arrival rate λ(t) in customers per hour.
struct ArrivalModel {
  std::variant<double, FourierRateModel> rate = 1.0;

  bool is_constant() const { return std::holds_alternative<double>(rate); }

  friend bool operator==(const ArrivalModel&, const ArrivalModel&) = default;
};

double arrival_rate(const FourierRateModel& model, double t);
double arrival_rate(const ArrivalModel& model, double t);

/// Upper bound on λ over [0, horizon] from a 0.01 h grid scan, inflated by
/// the factor 1.001. Exact for constant models.
double arrival_rate_bound(const ArrivalModel& model, double horizon);

/// Weekday CitiBike fit (order 5, ω = 24 h) reported for the NYC system.
/// Dips to about −0.09 near t = 1 h, so it is clipped.
FourierRateModel weekday_citibike_model();
/// Weekend CitiBike fit (order 2, ω = 24 h).
FourierRateModel weekend_citibike_model();

/// Finite capacity distribution: `values` strictly increasing, `fractions`
/// positive and summing to one.
struct CapacityDistribution {
  std::vector<int> values;
  std::vector<double> fractions;

  bool uniform() const { return values.size() == 1; }
  int max() const { return values.back(); }

  friend bool operator==(const CapacityDistribution&, const CapacityDistribution&) = default;
};

struct SystemParams {
  int n_stations = 1;
  long fleet = 0;
  double gamma = 0.0;  // fleet per station
  CapacityDistribution capacity{{1}, {1.0}};
  double mu = 1.0;
  double p = 0.0;
  ArrivalModel arrival;
  ChoiceSpec choice;

  int k_max() const { return capacity.max(); }

  friend bool operator==(const SystemParams&, const SystemParams&) = default;
};

/// Parses and normalizes a configuration tree. γ and M are reconciled,
/// capacity fractions normalized, Fourier rates scanned for negativity.
SystemParams validate_params(const nlohmann::json& raw);

/// Canonical configuration tree; validate_params(to_json(p)) == p.
nlohmann::json to_json(const SystemParams& params);
nlohmann::json to_json(const FourierRateModel& model);
FourierRateModel fourier_from_json(const nlohmann::json& raw, const std::string& path = "fourier");

SystemParams load_params(const std::filesystem::path& path);

/// Per-station capacities: class counts by largest-remainder rounding of
/// fraction·N, stations laid out class by class in increasing capacity.
std::vector<int> station_capacities(const SystemParams& params);

}  // namespace bss
