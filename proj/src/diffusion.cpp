#include "bss/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bss {

namespace {

constexpr double kTaylorReach = 1e-2;  // ‖J‖·h on the innermost subinterval
constexpr int kTaylorTerms = 8;
constexpr double kRk4StabilityMargin = 2.5;

struct JointRate {
  Vector dy;
  Matrix dsigma;
};

JointRate joint_rate(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, const Matrix& sigma,
                     double t, bool noise) {
  const Matrix jac = jacobian_flat(m, layout, y, t);
  Matrix ds = jac * sigma;
  ds += ds.transpose().eval();
  if (noise) ds += bracket_matrix_flat(m, layout, y, t);
  return {drift_flat(m, layout, y, t), ds};
}

struct ExponentialFactors {
  Matrix e;     // e^{Jh}
  Matrix gram;  // ∫_0^h e^{Js}Ae^{Jᵀs}ds
};

ExponentialFactors exponential_factors(const Matrix& jac, const Matrix& noise, double h) {
  const double reach = jac.cwiseAbs().rowwise().sum().maxCoeff() * h;
  const int doublings = reach > kTaylorReach ? static_cast<int>(std::ceil(std::log2(reach / kTaylorReach))) : 0;
  const double h0 = std::ldexp(h, -doublings);

  // e^{Jh0} = Σ (Jh0)^k/k!  and  ∫_0^{h0} e^{Js}Ae^{Jᵀs}ds = Σ h0^{k+1}/(k+1)!·L^k(A), L(X) = JX + XJᵀ.
  const auto n = jac.rows();
  Matrix e = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  Matrix gram = Matrix::Zero(n, n);
  Matrix lk = noise;
  double coeff = h0;
  for (int k = 1; k <= kTaylorTerms; ++k) {
    term = term * jac * (h0 / k);
    e += term;
    gram += coeff * lk;
    lk = lyapunov_rhs(jac, lk, Matrix::Zero(n, n));
    coeff *= h0 / (k + 1);
  }
  for (int i = 0; i < doublings; ++i) {
    gram += e * gram * e.transpose();
    e = e * e;
  }
  return {e, gram};
}

// Each class mass is conserved: 1_cᵀJ = 0 and A·1_c = 0, so exactly
// 1_cᵀe^{Jh} = 1_cᵀ and Q·1_c = 0. Rounding in the repeated squaring breaks
// both by ~ε‖Jh‖; restore them by the smallest corrections.
void conserve_class_mass(const HeteroLayout& layout, ExponentialFactors& f) {
  const auto n = layout.size();
  Matrix u = Matrix::Zero(n, static_cast<Eigen::Index>(layout.classes()));
  for (std::size_t c = 0; c < layout.classes(); ++c)
    u.col(static_cast<Eigen::Index>(c)).segment(layout.offset(c), layout.capacity(c) + 1).setConstant(
        1.0 / std::sqrt(layout.capacity(c) + 1.0));
  const Matrix uut = u * u.transpose();
  f.e += uut * (Matrix::Identity(n, n) - f.e);
  const Matrix proj = Matrix::Identity(n, n) - uut;
  f.gram = proj * f.gram * proj;
}

bool acceptable(const Vector& y) { return y.allFinite() && y.minCoeff() >= -1e-9; }

void joint_step(const MeanFieldModel& m, const HeteroLayout& layout, Vector& y, Matrix& sigma, double t, double h,
                const CovarianceOptions& opts) {
  const auto& io = opts.integration;
  const bool stiff = io.scheme == Scheme::rosenbrock ||
                     (io.scheme == Scheme::automatic && h * stiffness_bound(m, layout, y, t) > kRk4StabilityMargin);
  if (stiff) {
    IntegrationOptions single = io;
    single.step = h;
    single.scheme = Scheme::rosenbrock;
    const Vector next = advance(m, layout, y, t, t + h, single);
    const Vector mid = 0.5 * (y + next);
    const Matrix noise = opts.include_noise ? bracket_matrix_flat(m, layout, mid, t + 0.5 * h)
                                            : Matrix::Zero(y.size(), y.size()).eval();
    auto f = exponential_factors(jacobian_flat(m, layout, mid, t + 0.5 * h), noise, h);
    conserve_class_mass(layout, f);
    sigma = f.e * sigma * f.e.transpose() + f.gram;
    y = next;
    return;
  }

  const bool noise = opts.include_noise;
  const auto k1 = joint_rate(m, layout, y, sigma, t, noise);
  const auto k2 = joint_rate(m, layout, y + 0.5 * h * k1.dy, sigma + 0.5 * h * k1.dsigma, t + 0.5 * h, noise);
  const auto k3 = joint_rate(m, layout, y + 0.5 * h * k2.dy, sigma + 0.5 * h * k2.dsigma, t + 0.5 * h, noise);
  const auto k4 = joint_rate(m, layout, y + h * k3.dy, sigma + h * k3.dsigma, t + h, noise);
  Vector next = y + (h / 6.0) * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy);
  if (!acceptable(next)) {
    const double half = 0.5 * h;
    if (half < io.min_step)
      throw StiffnessError("covariance integration: step fell below " + std::to_string(io.min_step) +
                           " at t=" + std::to_string(t));
    joint_step(m, layout, y, sigma, t, half, opts);
    joint_step(m, layout, y, sigma, t + half, half, opts);
    return;
  }
  const double total = next.sum();
  if (std::abs(total - 1.0) > 1e-12) next /= total;
  y = next;
  sigma += (h / 6.0) * (k1.dsigma + 2.0 * k2.dsigma + 2.0 * k3.dsigma + k4.dsigma);
}

}  // namespace

Matrix jacobian(const MeanFieldModel& m, const EmpiricalMeasure& y, double t) { return drift_jacobian(m, y, t); }

Matrix bracket_matrix_flat(const MeanFieldModel& m, const HeteroLayout& layout, const Vector& y, double t) {
  const auto f = field_scalars(m, layout, y, t);
  const auto death = [&](int n) { return f.lambda * ((1.0 - m.p) + f.informed * m.g[n]); };
  Matrix a = Matrix::Zero(layout.size(), layout.size());
  for (std::size_t c = 0; c < layout.classes(); ++c) {
    const int k = layout.capacity(c);
    const auto base = layout.offset(c);
    for (int n = 0; n < k; ++n) {
      // n → n+1 at rate a·y(n) and n+1 → n at rate d(n+1)·y(n+1); each
      // moves 1/N of mass between the two coordinates.
      const double flow = f.a * y[base + n] + death(n + 1) * y[base + n + 1];
      a(base + n, base + n) += flow;
      a(base + n + 1, base + n + 1) += flow;
      a(base + n, base + n + 1) -= flow;
      a(base + n + 1, base + n) -= flow;
    }
  }
  return a;
}

Matrix bracket_matrix(const MeanFieldModel& m, const EmpiricalMeasure& y, double t) {
  if (!m.uniform()) throw std::invalid_argument("bracket_matrix: heterogeneous capacities, use bracket_matrix_flat");
  return bracket_matrix_flat(m, m.layout, y, t);
}

Matrix lyapunov_rhs(const Matrix& jac, const Matrix& sigma, const Matrix& noise) {
  Matrix out = jac * sigma;
  out += out.transpose().eval();
  return out + noise;
}

Matrix lyapunov_exponential_step(const Matrix& jac, const Matrix& noise, const Matrix& sigma, double h) {
  const auto f = exponential_factors(jac, noise, h);
  Matrix out = f.e * sigma * f.e.transpose() + f.gram;
  return 0.5 * (out + out.transpose());
}

Matrix propagate_covariance(const Matrix& jac, const Matrix& noise, Matrix sigma, double span, double step,
                            Scheme scheme) {
  if (!(step > 0) || span < 0) throw std::invalid_argument("propagate_covariance: need step > 0 and span >= 0");
  if (span == 0) return sigma;
  const auto substeps = std::max(1L, static_cast<long>(std::ceil(span / step - 1e-9)));
  const double h = span / static_cast<double>(substeps);
  if (scheme != Scheme::rk4) {
    Matrix out = sigma;
    for (long i = 0; i < substeps; ++i) out = lyapunov_exponential_step(jac, noise, out, h);
    return out;
  }
  for (long i = 0; i < substeps; ++i) {
    const Matrix k1 = lyapunov_rhs(jac, sigma, noise);
    const Matrix k2 = lyapunov_rhs(jac, sigma + 0.5 * h * k1, noise);
    const Matrix k3 = lyapunov_rhs(jac, sigma + 0.5 * h * k2, noise);
    const Matrix k4 = lyapunov_rhs(jac, sigma + h * k3, noise);
    sigma += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return sigma;
}

CovarianceTrajectory integrate_covariance(const MeanFieldModel& m, const Vector& y0, const Matrix& sigma0,
                                          std::span<const double> t_grid, const CovarianceOptions& opts) {
  const auto& layout = m.layout;
  if (y0.size() != layout.size()) throw std::invalid_argument("integrate_covariance: y0 has the wrong dimension");
  if (sigma0.rows() != y0.size() || sigma0.cols() != y0.size())
    throw std::invalid_argument("integrate_covariance: sigma0 has the wrong shape");
  if ((sigma0 - sigma0.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("integrate_covariance: sigma0 is not symmetric");
  require_simplex(y0, "integrate_covariance y0");
  if (t_grid.empty()) throw std::invalid_argument("integrate_covariance: empty time grid");
  if (!(opts.integration.step > 0)) throw std::invalid_argument("integrate_covariance: step must be positive");

  CovarianceTrajectory out;
  Vector y = y0;
  Matrix sigma = sigma0;
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (i > 0) {
      const double t0 = t_grid[i - 1];
      const double t1 = t_grid[i];
      if (!(t1 > t0)) throw std::invalid_argument("integrate_covariance: time grid must be increasing");
      const auto substeps = std::max(1L, static_cast<long>(std::ceil((t1 - t0) / opts.integration.step - 1e-9)));
      const double h = (t1 - t0) / static_cast<double>(substeps);
      for (long s = 0; s < substeps; ++s) {
        joint_step(m, layout, y, sigma, t0 + static_cast<double>(s) * h, h, opts);
        sigma = 0.5 * (sigma + sigma.transpose()).eval();
      }
    }
    out.times.push_back(t_grid[i]);
    out.means.push_back(y);
    out.sigmas.push_back(sigma);
  }
  return out;
}

Matrix ratio_covariance(std::span<const Matrix> per_class, std::span<const int> capacities, int k_max) {
  if (per_class.size() != capacities.size())
    throw std::invalid_argument("ratio_covariance: one covariance per capacity class required");
  Matrix z = Matrix::Zero(k_max + 1, k_max + 1);
  for (std::size_t c = 0; c < capacities.size(); ++c) {
    const int k = capacities[c];
    if (k < 1 || k > k_max) throw std::invalid_argument("ratio_covariance: capacity outside [1, k_max]");
    if (per_class[c].rows() != k + 1 || per_class[c].cols() != k + 1)
      throw std::invalid_argument("ratio_covariance: covariance of capacity " + std::to_string(k) +
                                  " must be (k+1)x(k+1)");
    Matrix proj = Matrix::Zero(k_max + 1, k + 1);
    for (int n = 0; n <= k; ++n) proj(ratio_bin(n, k, k_max), n) = 1.0;
    z += proj * per_class[c] * proj.transpose();
  }
  return z;
}

Matrix ratio_covariance(const Matrix& flat_sigma, const HeteroLayout& layout, int k_max) {
  const Matrix proj = ratio_projection_matrix(layout, k_max);
  return proj * flat_sigma * proj.transpose();
}

}  // namespace bss
