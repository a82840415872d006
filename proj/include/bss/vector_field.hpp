#pragma once

// Mean-field vector field b(y) and its Jacobian, written once for the
// flat (count, capacity) layout. Uniform capacities are the single-class
// case of the same code.
//
// With a = μ(γ − Σ n·y(n,k)), s = Σ g(n)·y(n,k) and the pickup intensity
// d(n) = λ(t)·((1−p) + p·g(n)/s), every capacity class evolves as a
// birth-death chain with birth rate a and death rate d(n):
//
//   b(n,k) = d(n+1)·y(n+1,k)·1{n<k} − (d(n)·1{n>0} + a·1{n<k})·y(n,k)
//            + a·y(n−1,k)·1{n>0}.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bss/measures.hpp"
#include "bss/model.hpp"

namespace bss {

/// Scale-free view of SystemParams used by the deterministic limit.
struct MeanFieldModel {
  HeteroLayout layout;
  Vector g;              // normalized choice weights, index 0..k_max
  double g_scale = 1.0;  // raw g(k_max)
  double p = 0.0;
  double mu = 1.0;
  double gamma = 0.0;
  ArrivalModel arrival;
  Vector class_fractions;

  static MeanFieldModel from(const SystemParams& params);

  double lambda(double t) const { return arrival_rate(arrival, t); }
  int k_max() const { return layout.k_max(); }
  bool uniform() const { return layout.classes() == 1; }
};

/// Below this the informed-user term is dropped: informed users see no
/// bikes anywhere and leave.
inline constexpr double kEmptyChoiceDenominator = 1e-300;

template <typename Scalar>
struct FieldScalars {
  Scalar a;         // per-station return intensity μ(γ − mean occupancy)
  Scalar s;         // Σ g(n) y(n,k)
  Scalar informed;  // p / s, or 0 when s vanishes
  double lambda;
};

template <typename Derived>
FieldScalars<typename Derived::Scalar> field_scalars(const MeanFieldModel& m, const HeteroLayout& layout,
                                                     const Eigen::MatrixBase<Derived>& y, double t) {
  using Scalar = typename Derived::Scalar;
  if (y.size() != layout.size()) throw std::invalid_argument("mean-field state has the wrong dimension");
  if (m.g.size() <= layout.k_max()) throw std::invalid_argument("choice table shorter than the largest capacity");
  Scalar occupancy(0), s(0);
  for (std::size_t c = 0; c < layout.classes(); ++c)
    for (int n = 0; n <= layout.capacity(c); ++n) {
      const Scalar v = y(layout.index(c, n));
      occupancy += Scalar(n) * v;
      s += m.g[n] * v;
    }
  const Scalar informed = s < kEmptyChoiceDenominator ? Scalar(0) : Scalar(m.p) / s;
  return {Scalar(m.mu) * (Scalar(m.gamma) - occupancy), s, informed, m.lambda(t)};
}

/// b over an arbitrary class layout.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> drift_flat(const MeanFieldModel& m,
                                                                      const HeteroLayout& layout,
                                                                      const Eigen::MatrixBase<Derived>& y, double t) {
  using Scalar = typename Derived::Scalar;
  const auto f = field_scalars(m, layout, y, t);
  const auto death = [&](int n) { return Scalar(f.lambda) * (Scalar(1.0 - m.p) + f.informed * m.g[n]); };
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> b(layout.size());
  for (std::size_t c = 0; c < layout.classes(); ++c) {
    const int k = layout.capacity(c);
    const auto base = layout.offset(c);
    for (int n = 0; n <= k; ++n) {
      Scalar v(0);
      if (n < k) v += death(n + 1) * y(base + n + 1) - f.a * y(base + n);
      if (n > 0) v += f.a * y(base + n - 1) - death(n) * y(base + n);
      b(base + n) = v;
    }
  }
  return b;
}

/// b(y) for uniform capacity K; y has length K+1.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> drift(const MeanFieldModel& m,
                                                                 const Eigen::MatrixBase<Derived>& y, double t) {
  if (!m.uniform()) throw std::invalid_argument("drift: heterogeneous capacities, use drift_hetero");
  return drift_flat(m, m.layout, y, t);
}

/// Per-(n,k) drift of a heterogeneous measure.
HeterogeneousMeasure drift_hetero(const MeanFieldModel& m, const HeterogeneousMeasure& y, double t);

/// ∂b/∂y over the flat layout: a block-tridiagonal part plus the two
/// rank-one couplings through s and through the mean occupancy.
/// Throws std::domain_error when s vanishes (interior states only).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> jacobian_flat(
    const MeanFieldModel& m, const HeteroLayout& layout, const Eigen::MatrixBase<Derived>& y, double t) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto f = field_scalars(m, layout, y, t);
  if (f.s < kEmptyChoiceDenominator) throw std::domain_error("jacobian: choice denominator vanishes");
  const auto death = [&](int n) { return Scalar(f.lambda) * (Scalar(1.0 - m.p) + f.informed * m.g[n]); };

  const Eigen::Index d = layout.size();
  Mat jac = Mat::Zero(d, d);
  Vec via_s(d), via_mean(d), g_col(d), n_col(d);
  const Scalar ds = -Scalar(f.lambda) * Scalar(m.p) / (f.s * f.s);  // ∂d(n)/∂y_i = ds·g(n)·g(i)
  for (std::size_t c = 0; c < layout.classes(); ++c) {
    const int k = layout.capacity(c);
    const auto base = layout.offset(c);
    for (int n = 0; n <= k; ++n) {
      const auto row = base + n;
      Scalar us(0), um(0);
      if (n < k) {
        us += m.g[n + 1] * y(row + 1);
        um += y(row);
        jac(row, row + 1) += death(n + 1);
        jac(row, row) -= f.a;
      }
      if (n > 0) {
        us -= m.g[n] * y(row);
        um -= y(row - 1);
        jac(row, row) -= death(n);
        jac(row, row - 1) += f.a;
      }
      via_s(row) = ds * us;
      via_mean(row) = Scalar(m.mu) * um;  // ∂a/∂y_i = −μ·n_i
      g_col(row) = Scalar(m.g[n]);
      n_col(row) = Scalar(n);
    }
  }
  jac.noalias() += via_s * g_col.transpose();
  jac.noalias() += via_mean * n_col.transpose();
  return jac;
}

/// ∂b(y_k)/∂y_i for uniform capacity.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> drift_jacobian(
    const MeanFieldModel& m, const Eigen::MatrixBase<Derived>& y, double t) {
  if (!m.uniform()) throw std::invalid_argument("jacobian: heterogeneous capacities");
  return jacobian_flat(m, m.layout, y, t);
}

/// Gershgorin-type bound on the spectral radius of ∂b/∂y at y.
template <typename Derived>
double stiffness_bound(const MeanFieldModel& m, const HeteroLayout& layout, const Eigen::MatrixBase<Derived>& y,
                       double t) {
  const auto f = field_scalars(m, layout, y, t);
  const double s = std::max(static_cast<double>(f.s), kEmptyChoiceDenominator);
  const double gmax = m.g.head(layout.k_max() + 1).maxCoeff();
  return 2.0 * (std::abs(f.lambda) * ((1.0 - m.p) + 2.0 * m.p * gmax / s) + std::abs(static_cast<double>(f.a)) +
                m.mu * layout.k_max());
}

}  // namespace bss
