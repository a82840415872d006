#include "bss/equilibrium.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace bss {

namespace {

constexpr int kMaxOuterIterations = 2000;
constexpr int kMaxBisection = 400;
constexpr double kDamping = 0.5;
constexpr double kLogSpaceThreshold = 30;

// Stationary law of every capacity class for given reduced scalars.
struct ReducedState {
  Vector rho;
  std::vector<Vector> classes;
  double mean = 0.0;  // Σ_c f_c Σ_n n ν_c(n)
  double s = 0.0;     // Σ_c f_c Σ_n g(n) ν_c(n)
};

void require_constant_positive(const MeanFieldModel& m) {
  if (!m.arrival.is_constant()) throw std::invalid_argument("equilibrium requires a constant arrival rate");
  if (!(m.lambda(0.0) > 0)) throw std::invalid_argument("equilibrium requires a positive arrival rate");
  if (!(m.gamma > 0)) throw std::invalid_argument("equilibrium requires a positive fleet");
}

Vector ratios(const MeanFieldModel& m, double a, double s) {
  const double lambda = m.lambda(0.0);
  const int k = m.k_max();
  Vector rho(k);
  for (int i = 0; i < k; ++i) {
    const double death = lambda * ((1.0 - m.p) + (s < kEmptyChoiceDenominator ? 0.0 : m.p * m.g[i + 1] / s));
    rho[i] = a / death;
  }
  return rho;
}

ReducedState reduce(const MeanFieldModel& m, double a, double s) {
  ReducedState out;
  out.rho = ratios(m, a, s);
  for (std::size_t c = 0; c < m.layout.classes(); ++c) {
    const int k = m.layout.capacity(c);
    Vector nu = birth_death_stationary(out.rho.head(k));
    const double f = m.class_fractions[static_cast<Eigen::Index>(c)];
    for (int n = 0; n <= k; ++n) {
      out.mean += f * n * nu[n];
      out.s += f * m.g[n] * nu[n];
    }
    out.classes.push_back(std::move(nu));
  }
  return out;
}

// Root of a − μ(γ − mean(a, s)) on (0, μγ]; the left side is increasing in a.
double solve_return_intensity(const MeanFieldModel& m, double s) {
  double lo = 0.0;
  double hi = m.mu * m.gamma;
  for (int i = 0; i < kMaxBisection && hi - lo > 2.0 * std::numeric_limits<double>::epsilon() * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double phi = mid - m.mu * (m.gamma - reduce(m, mid, s).mean);
    (phi > 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Solution {
  double a;
  double s;
  int iterations;
};

Solution solve_reduced(const MeanFieldModel& m) {
  double s = m.g.head(m.k_max() + 1).mean();
  int it = 0;
  for (; it < kMaxOuterIterations; ++it) {
    const double a = solve_return_intensity(m, s);
    const double next = reduce(m, a, s).s;
    if (std::abs(next - s) <= 1e-15 * std::max(s, 1e-300)) return {a, s, it + 1};
    s = kDamping * s + (1.0 - kDamping) * next;
  }

  // Fallback: s − S(s) changes sign on [1e−300, max g]; the root is unique.
  double lo = std::log(1e-300);
  double hi = std::log(m.g.head(m.k_max() + 1).maxCoeff());
  const auto gap = [&](double log_s) {
    const double sv = std::exp(log_s);
    return sv - reduce(m, solve_return_intensity(m, sv), sv).s;
  };
  if (gap(lo) >= 0) throw ConvergenceError("equilibrium: choice denominator root below 1e-300", NAN);
  for (int i = 0; i < kMaxBisection && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i, ++it) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) > 0 ? hi : lo) = mid;
  }
  const double sv = std::exp(0.5 * (lo + hi));
  return {solve_return_intensity(m, sv), sv, it};
}

}  // namespace

EmpiricalMeasure birth_death_stationary(const Vector& rho) {
  for (Eigen::Index i = 0; i < rho.size(); ++i)
    if (!(rho[i] > 0) || !std::isfinite(rho[i]))
      throw std::invalid_argument("birth_death_stationary: ratios must be positive and finite");
  const Eigen::Index k = rho.size();
  EmpiricalMeasure y(k + 1);
  if (k <= kLogSpaceThreshold) {
    y[0] = 1.0;
    for (Eigen::Index n = 1; n <= k; ++n) y[n] = y[n - 1] * rho[n - 1];
    return y / y.sum();
  }
  Vector logs(k + 1);
  logs[0] = 0.0;
  for (Eigen::Index n = 1; n <= k; ++n) logs[n] = logs[n - 1] + std::log(rho[n - 1]);
  const double top = logs.maxCoeff();
  const double log_z = top + std::log((logs.array() - top).exp().sum());
  return (logs.array() - log_z).exp().matrix();
}

Vector birth_death_ratios(const MeanFieldModel& m, const EmpiricalMeasure& y, double t) {
  const auto f = field_scalars(m, m.layout, y, t);
  const int k = m.k_max();
  Vector rho(k);
  for (int i = 0; i < k; ++i) rho[i] = f.a / (f.lambda * ((1.0 - m.p) + f.informed * m.g[i + 1]));
  return rho;
}

EquilibriumResult solve_equilibrium(const SystemParams& params, double tolerance) {
  return solve_equilibrium(MeanFieldModel::from(params), tolerance);
}

EquilibriumResult solve_equilibrium(const MeanFieldModel& m, double tolerance) {
  if (!m.uniform()) throw std::invalid_argument("solve_equilibrium: heterogeneous capacities");
  const auto het = solve_equilibrium_hetero(m, tolerance);
  EquilibriumResult out;
  out.y_bar = het.y_bar.values;
  out.rho = het.rho;
  out.a = het.a;
  out.s = het.s;
  out.residual = het.residual;
  out.iterations = het.iterations;
  return out;
}

HeteroEquilibriumResult solve_equilibrium_hetero(const SystemParams& params, double tolerance) {
  return solve_equilibrium_hetero(MeanFieldModel::from(params), tolerance);
}

HeteroEquilibriumResult solve_equilibrium_hetero(const MeanFieldModel& m, double tolerance) {
  require_constant_positive(m);
  const auto sol = solve_reduced(m);
  const auto state = reduce(m, sol.a, sol.s);

  HeteroEquilibriumResult out;
  out.y_bar.layout = m.layout;
  out.y_bar.values.resize(m.layout.size());
  for (std::size_t c = 0; c < m.layout.classes(); ++c)
    out.y_bar.block(c) = m.class_fractions[static_cast<Eigen::Index>(c)] * state.classes[c];
  out.r_bar = ratio_projection(out.y_bar, m.k_max());
  out.rho = state.rho;
  const auto f = field_scalars(m, m.layout, out.y_bar.values, 0.0);
  out.a = f.a;
  out.s = f.s * m.g_scale;
  out.residual = drift_flat(m, m.layout, out.y_bar.values, 0.0).cwiseAbs().maxCoeff();
  out.iterations = sol.iterations;
  if (!(out.residual <= tolerance))
    throw ConvergenceError("equilibrium: residual " + std::to_string(out.residual) + " above tolerance",
                           out.residual);
  return out;
}

double relative_entropy(const EmpiricalMeasure& y, const MeanFieldModel& m) {
  if (y.minCoeff() <= 0) throw std::domain_error("relative_entropy: y must lie in the simplex interior");
  const Vector rho = birth_death_ratios(m, y);
  if (rho.size() > 0 && !(rho.minCoeff() > 0)) throw std::domain_error("relative_entropy: non-positive return intensity");
  const Vector nu = birth_death_stationary(rho);
  return (y.array() * (y.array() / nu.array()).log()).sum();
}

double lyapunov_derivative(const EmpiricalMeasure& y, const MeanFieldModel& m) {
  if (y.minCoeff() <= 0) throw std::domain_error("lyapunov_derivative: y must lie in the simplex interior");
  const auto f = field_scalars(m, m.layout, y, 0.0);
  const Vector rho = birth_death_ratios(m, y);
  if (rho.size() > 0 && !(rho.minCoeff() > 0)) throw std::domain_error("lyapunov_derivative: non-positive return intensity");
  const Vector nu = birth_death_stationary(rho);
  const Vector log_ratio = (y.array().log() - nu.array().log()).matrix();
  double total = 0.0;
  for (Eigen::Index n = 0; n + 1 < y.size(); ++n) {
    const double flow = nu[n] * f.a;  // q(n, n+1) = q(n+1, n)
    total += flow * (y[n] / nu[n] - y[n + 1] / nu[n + 1]) * (log_ratio[n] - log_ratio[n + 1]);
  }
  return -total;
}

}  // namespace bss
