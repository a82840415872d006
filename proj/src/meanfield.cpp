#include "bss/meanfield.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace bss {

namespace {

constexpr double kNegativeTolerance = -1e-9;
constexpr double kSimplexDrift = 1e-12;
constexpr double kRk4StabilityMargin = 2.5;
// ROS2 diagonal coefficient 1 + 1/√2.
constexpr double kRosGamma = 1.0 + 1.0 / std::numbers::sqrt2;

Vector rk4_step(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, double t, double h) {
  const Vector k1 = drift_flat(m, layout, y, t);
  const Vector k2 = drift_flat(m, layout, y + 0.5 * h * k1, t + 0.5 * h);
  const Vector k3 = drift_flat(m, layout, y + 0.5 * h * k2, t + 0.5 * h);
  const Vector k4 = drift_flat(m, layout, y + h * k3, t + h);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vector rosenbrock_step(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, double t, double h) {
  const Matrix w = Matrix::Identity(y.size(), y.size()) - kRosGamma * h * jacobian_flat(m, layout, y, t);
  const Eigen::PartialPivLU<Matrix> lu(w);
  const Vector k1 = lu.solve(drift_flat(m, layout, y, t));
  const Vector k2 = lu.solve(drift_flat(m, layout, Vector(y + h * k1), t + h) - 2.0 * k1);
  return y + h * (1.5 * k1 + 0.5 * k2);
}

Vector single_step(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, double t, double h,
                   Scheme scheme) {
  if (scheme == Scheme::automatic)
    scheme = h * stiffness_bound(m, layout, y, t) <= kRk4StabilityMargin ? Scheme::rk4 : Scheme::rosenbrock;
  return scheme == Scheme::rk4 ? rk4_step(m, layout, y, t, h) : rosenbrock_step(m, layout, y, t, h);
}

bool acceptable(const Vector& y) { return y.allFinite() && y.minCoeff() >= kNegativeTolerance; }

Vector guarded_step(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, double t, double h,
                    const IntegrationOptions& opts) {
  Vector next = single_step(m, layout, y, t, h, opts.scheme);
  if (!acceptable(next)) {
    const double half = 0.5 * h;
    if (half < opts.min_step)
      throw StiffnessError("mean-field integration: step fell below " + std::to_string(opts.min_step) +
                           " at t=" + std::to_string(t));
    next = guarded_step(m, layout, guarded_step(m, layout, y, t, half, opts), t + half, half, opts);
  }
  const double total = next.sum();
  if (std::abs(total - 1.0) > kSimplexDrift) next /= total;
  return next;
}

}  // namespace

std::vector<double> uniform_grid(double t0, double t1, double dt) {
  if (!(dt > 0) || t1 < t0) throw std::invalid_argument("uniform_grid: need dt > 0 and t1 >= t0");
  std::vector<double> grid;
  const auto steps = static_cast<long>(std::floor((t1 - t0) / dt + 1e-9));
  for (long i = 0; i <= steps; ++i) grid.push_back(t0 + static_cast<double>(i) * dt);
  if (t1 - grid.back() > 1e-9 * std::max(1.0, std::abs(t1))) grid.push_back(t1);
  else grid.back() = t1;
  return grid;
}

void require_simplex(const Vector& y, const char* what) {
  if (y.size() == 0 || !y.allFinite() || y.minCoeff() < -1e-12 || std::abs(y.sum() - 1.0) > 1e-10)
    throw std::invalid_argument(std::string(what) + ": not a probability vector");
}

Vector advance(const MeanFieldModel& m, const HeteroLayout& layout, Vector y, double t0, double t1,
               const IntegrationOptions& opts) {
  if (!(opts.step > 0)) throw std::invalid_argument("integrate: step must be positive");
  if (t1 <= t0) return y;
  const auto substeps = static_cast<long>(std::ceil((t1 - t0) / opts.step - 1e-9));
  const double h = (t1 - t0) / static_cast<double>(std::max(1L, substeps));
  for (long i = 0; i < std::max(1L, substeps); ++i) y = guarded_step(m, layout, y, t0 + static_cast<double>(i) * h, h, opts);
  return y;
}

Trajectory integrate(const MeanFieldModel& m, const EmpiricalMeasure& y0, std::span<const double> t_grid,
                     const IntegrationOptions& opts) {
  if (!m.uniform()) throw std::invalid_argument("integrate: heterogeneous capacities, use integrate_hetero");
  require_simplex(y0, "integrate y0");
  if (t_grid.empty()) throw std::invalid_argument("integrate: empty time grid");
  Trajectory out;
  Vector y = y0;
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (i > 0) {
      if (!(t_grid[i] > t_grid[i - 1])) throw std::invalid_argument("integrate: time grid must be increasing");
      y = advance(m, m.layout, y, t_grid[i - 1], t_grid[i], opts);
    }
    out.times.push_back(t_grid[i]);
    out.states.push_back(y);
  }
  return out;
}

HeteroTrajectory integrate_hetero(const MeanFieldModel& m, const HeterogeneousMeasure& y0,
                                  std::span<const double> t_grid, const IntegrationOptions& opts) {
  require_simplex(y0.values, "integrate_hetero y0");
  if (t_grid.empty()) throw std::invalid_argument("integrate_hetero: empty time grid");
  HeteroTrajectory out;
  Vector y = y0.values;
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (i > 0) {
      if (!(t_grid[i] > t_grid[i - 1])) throw std::invalid_argument("integrate_hetero: time grid must be increasing");
      y = advance(m, y0.layout, y, t_grid[i - 1], t_grid[i], opts);
    }
    out.times.push_back(t_grid[i]);
    out.states.push_back({y0.layout, y});
  }
  return out;
}

}  // namespace bss
