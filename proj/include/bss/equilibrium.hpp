#pragma once

// Fixed point of the mean-field limit and the relative-entropy Lyapunov
// diagnostics around it.

#include <stdexcept>

#include "bss/measures.hpp"
#include "bss/vector_field.hpp"

namespace bss {

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_residual)
      : std::runtime_error(what), best_residual_(best_residual) {}
  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

struct EquilibriumResult {
  EmpiricalMeasure y_bar;
  Vector rho;         // ρ_0..ρ_{K−1}
  double a = 0.0;     // μ(γ − Σ n ȳ_n)
  double s = 0.0;     // Σ g(n) ȳ_n in raw choice units
  double residual = 0.0;  // ‖b(ȳ)‖_∞
  int iterations = 0;
};

struct HeteroEquilibriumResult {
  HeterogeneousMeasure y_bar;
  RatioHistogram r_bar;
  Vector rho;  // shared by all classes, length K_max
  double a = 0.0;
  double s = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// ȳ_n = Π_{i<n} ρ_i / (1 + Σ_{i=1..K} Π_{j<i} ρ_j); log-space for K > 30.
EmpiricalMeasure birth_death_stationary(const Vector& rho);

/// ρ_k(y) = a(y) / d(k+1; y), the ratio of return to pickup intensity
/// across the k → k+1 edge, evaluated at the state y.
Vector birth_death_ratios(const MeanFieldModel& m, const EmpiricalMeasure& y, double t = 0.0);

/// Unique equilibrium for constant arrivals. The K-dimensional problem is
/// reduced to the two scalars (a, s): an inner bisection solves a for given
/// s, an outer damped iteration (damping 0.5) solves s, with bisection on
/// log s as fallback. Throws ConvergenceError if ‖b(ȳ)‖_∞ > tolerance.
EquilibriumResult solve_equilibrium(const SystemParams& params, double tolerance = 1e-10);
EquilibriumResult solve_equilibrium(const MeanFieldModel& m, double tolerance = 1e-10);

/// Heterogeneous capacities: per-class conditional equilibria coupled
/// through the same (a, s); r̄ by ratio projection.
HeteroEquilibriumResult solve_equilibrium_hetero(const SystemParams& params, double tolerance = 1e-10);
HeteroEquilibriumResult solve_equilibrium_hetero(const MeanFieldModel& m, double tolerance = 1e-10);

/// h(y) = Σ y_n log(y_n / ν_ρ(y)(n)). Throws std::domain_error on the boundary.
double relative_entropy(const EmpiricalMeasure& y, const MeanFieldModel& m);

/// −½ Σ_{m,n} q(m,n)(f_m − f_n)(log f_m − log f_n) with f = y/ν_ρ(y) and
/// q(m,n) = ν(m)·B_y(m,n). Non-positive; zero exactly at the equilibrium.
double lyapunov_derivative(const EmpiricalMeasure& y, const MeanFieldModel& m);

}  // namespace bss
