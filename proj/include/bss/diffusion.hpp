#pragma once

// Gaussian fluctuations around the mean-field path: Jacobian, bracket
// (noise covariance rate) matrix and the covariance ODE
//
//   Σ' = J(y)Σ + ΣJ(y)ᵀ + A(y).

#include <span>
#include <vector>

#include "bss/meanfield.hpp"
#include "bss/vector_field.hpp"

namespace bss {

/// ∂b(y_k)/∂y_i; uniform capacity, interior y.
Matrix jacobian(const MeanFieldModel& m, const EmpiricalMeasure& y, double t);

/// Instantaneous covariance rate of the martingale part over `layout`.
/// Tridiagonal inside each class: the diagonal collects every transition
/// into or out of a count, entry (n, n+1) is −(a·y(n) + d(n+1)·y(n+1)).
Matrix bracket_matrix_flat(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, double t);
Matrix bracket_matrix(const MeanFieldModel& m, const EmpiricalMeasure& y, double t);

/// JΣ + ΣJᵀ + A.
Matrix lyapunov_rhs(const Matrix& jac, const Matrix& sigma, const Matrix& noise);

/// Exact flow of the constant-coefficient equation over one step h:
/// Σ ↦ e^{Jh}Σe^{Jᵀh} + ∫_0^h e^{Js}Ae^{Jᵀs}ds, by Taylor expansion on a
/// short subinterval followed by repeated doubling. Stable for stiff J.
Matrix lyapunov_exponential_step(const Matrix& jac, const Matrix& noise, const Matrix& sigma, double h);

/// Constant-coefficient propagation over `span` in steps of at most `step`.
/// Scheme::rk4 uses classical RK4, anything else the exponential step.
Matrix propagate_covariance(const Matrix& jac, const Matrix& noise, Matrix sigma, double span, double step,
                            Scheme scheme = Scheme::rk4);

struct CovarianceOptions {
  IntegrationOptions integration;
  bool include_noise = true;  // false forces A ≡ 0
};

struct CovarianceTrajectory {
  std::vector<double> times;
  std::vector<Vector> means;
  std::vector<Matrix> sigmas;
};

/// Co-integrates (y, Σ) over the model layout. Non-stiff steps are joint
/// RK4; stiff steps advance y with the Rosenbrock step and Σ with the
/// exponential step, J and A frozen at the step midpoint.
CovarianceTrajectory integrate_covariance(const MeanFieldModel& m, const Vector& y0, const Matrix& sigma0,
                                          std::span<const double> t_grid, const CovarianceOptions& opts = {});

/// Cov(Z(j), Z(j')) = Σ_k Cov(D_k(n*(j,k)), D_k(n*(j',k))) with independent
/// capacity classes; bins without a preimage contribute 0.
Matrix ratio_covariance(std::span<const Matrix> per_class, std::span<const int> capacities, int k_max);

/// Projection of a covariance over the flat (count, class) layout.
Matrix ratio_covariance(const Matrix& flat_sigma, const HeteroLayout& layout, int k_max);

}  // namespace bss
