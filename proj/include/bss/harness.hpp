#pragma once

// Numerical checks of the limit theorems and the parameter sweeps behind
// the equilibrium surfaces. Every experiment is a pure function of
// (parameters, options, seed).

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bss/meanfield.hpp"
#include "bss/model.hpp"

namespace bss {

enum class ReportStatus { pass, fail, insufficient, informational };

std::string to_string(ReportStatus status);

struct ExperimentReport {
  std::string name;
  ReportStatus status = ReportStatus::informational;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> criteria;  // human-readable gates with their thresholds
  std::vector<std::string> artifacts;

  bool passed() const { return status == ReportStatus::pass; }
  nlohmann::json to_json() const;
};

/// Copy of `params` with N stations and the fleet rounded from γN.
SystemParams with_stations(const SystemParams& params, int n_stations);

/// K=3, λ=1, μ=1, γ=1.5, p=0.5, exponential θ=1, N=2000.
SystemParams small_test_params();
/// K=20, λ=1, μ=1, γ=10, exponential θ=2, N=500, informed fraction p.
SystemParams base_params(double p = 0.5);
/// K=3, γ=1.5, exponential θ=1, λ(t) = 1 + 0.5 sin(t/2).
SystemParams toy_nonstationary_params(double p);

struct FllnOptions {
  std::vector<int> n_list{200, 2000};
  double horizon = 20.0;
  double sample_dt = 0.1;
  int reps = 20;
  std::uint64_t seed = 1;
  int threads = 0;
};

/// E[sup_t ‖Y^N_t − y_t‖_∞] per N. Passes when every consecutive error
/// ratio lies in [√r/2, 2√r], r the ratio of station counts.
ExperimentReport flln_experiment(const SystemParams& params, const FllnOptions& opts = {});

struct FcltOptions {
  int n = 2000;
  int reps = 2000;
  double t_check = 5.0;
  std::uint64_t seed = 1;
  int threads = 0;
  bool include_noise = true;  // false is the A ≡ 0 negative control
  double tolerance = 0.15;
  int min_reps = 100;
};

/// N·Cov(Y^N_t) against Σ(t) from the covariance ODE, started from the
/// uniform measure over 0..K (Σ(0) = 0), plus a 3σ check that the mean of
/// √N(Y^N_t − y_t) vanishes. Fewer than min_reps replications: insufficient.
ExperimentReport fclt_experiment(const SystemParams& params, const FcltOptions& opts = {});

struct InterchangeOptions {
  int n = 500;
  double burn_in = 100.0;
  double horizon = 5000.0;
  std::uint64_t seed = 1;
  bool ratio = false;  // compare R against r̄ instead of Y against ȳ
  double tolerance = 0.0;  // 0: 0.02 (counts) or 0.03 (ratio)
  int gated_min_stations = 500;  // smaller N is reported as informational
};

/// Total variation between the long-run time average and the equilibrium.
ExperimentReport interchange_experiment(const SystemParams& params, const InterchangeOptions& opts = {});

enum class TestFunction { coordinate, square };

struct ForwardOptions {
  int n = 100;
  double t = 1.0;
  double delta = 0.1;
  int reps = 2000;
  TestFunction f = TestFunction::coordinate;
  int index = 0;  // f(Y) = Y(index) or Y(index)²
  std::uint64_t seed = 1;
  int threads = 0;
};

/// d/dt E[f(Y_t)] by finite differences (central, or second-order
/// one-sided when t < delta) against E[(Lf)(Y_t)] from the generator, both
/// by Monte Carlo on the same replications. Passes within 3 standard
/// errors of the paired difference.
ExperimentReport forward_equation_residual(const SystemParams& params, const ForwardOptions& opts = {});

enum class SweepPlane { p_theta, p_c, p_alpha, p_gamma };

SweepPlane parse_plane(std::string_view name);
std::string to_string(SweepPlane plane);

struct GridAxis {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  double step = 1.0;

  std::vector<double> values() const;
};

/// "p=0:1:0.05,theta=0:2:0.1" → two axes (lo:hi:step, hi inclusive).
std::vector<GridAxis> parse_grid(std::string_view spec);

struct SweepRow {
  double x = 0.0;
  double y = 0.0;
  double ybar0 = 0.0;
  double ybar1 = 0.0;
  double ybar_km1 = 0.0;
  double ybar_k = 0.0;
  double entropy = 0.0;
  bool converged = true;
};

/// λ=1, μ=1, K=20, γ=10, N=100, exponential θ=2, p=0.
SystemParams default_sweep_base();

/// Equilibrium summaries on the grid, nodes in row-major order (x outer).
/// Axis names must match the plane (p and theta|c|alpha|gamma). Nodes where
/// the solver fails are kept with converged = false.
std::vector<SweepRow> sweep(SweepPlane plane, std::span<const GridAxis> grid, const SystemParams& base,
                            int threads = 0);

void write_sweep_csv(std::ostream& out, SweepPlane plane, std::span<const SweepRow> rows);

struct Frame {
  double t = 0.0;
  Vector y;
  double entropy = 0.0;
  Vector variance;  // diagonal of Σ, empty unless requested
};

/// Mean-field frames with entropy; optionally the co-integrated Σ diagonal
/// (Σ(0) = 0).
std::vector<Frame> nonstationary_run(const SystemParams& params, const Vector& y0, std::span<const double> t_grid,
                                     const IntegrationOptions& opts = {}, bool with_variance = false);

void write_frames_csv(std::ostream& out, std::span<const Frame> frames);

/// max − min of y(component) over frames with t ≥ t_from.
double oscillation_amplitude(std::span<const Frame> frames, int component, double t_from);

/// max over frames t in the last period of ‖y(t) − y(t − period)‖_∞.
double periodicity_gap(std::span<const Frame> frames, double period);

}  // namespace bss
