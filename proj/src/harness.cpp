#include "bss/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "bss/csv.hpp"
#include "bss/diffusion.hpp"
#include "bss/equilibrium.hpp"
#include "bss/parallel.hpp"
#include "bss/simulator.hpp"

namespace bss {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

SystemParams exponential_params(int k, double gamma, double p, double theta, int n) {
  SystemParams s;
  s.n_stations = n;
  s.gamma = gamma;
  s.fleet = std::llround(gamma * n);
  s.capacity = {{k}, {1.0}};
  s.mu = 1.0;
  s.p = p;
  s.arrival.rate = 1.0;
  s.choice = {ChoiceKind::exponential, theta};
  return s;
}

// Count marginal Σ_k ỹ(n, k) over n = 0..K_max.
Vector count_marginal(const HeterogeneousMeasure& y) {
  Vector out = Vector::Zero(y.layout.k_max() + 1);
  for (std::size_t c = 0; c < y.layout.classes(); ++c) out.head(y.layout.capacity(c) + 1) += y.block(c);
  return out;
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(ReportStatus status) {
  switch (status) {
    case ReportStatus::pass: return "pass";
    case ReportStatus::fail: return "fail";
    case ReportStatus::insufficient: return "insufficient sample";
    case ReportStatus::informational: return "informational";
  }
  return "unknown";
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["status"] = to_string(status);
  if (status == ReportStatus::pass || status == ReportStatus::fail) j["pass"] = passed();
  else j["pass"] = nullptr;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : metrics) {
    if (std::isfinite(v)) j["metrics"][k] = v;
    else j["metrics"][k] = nullptr;
  }
  j["criteria"] = criteria;
  j["artifacts"] = artifacts;
  return j;
}

SystemParams with_stations(const SystemParams& params, int n_stations) {
  if (n_stations < 1) throw std::invalid_argument("with_stations: need at least one station");
  SystemParams out = params;
  out.n_stations = n_stations;
  out.fleet = std::llround(params.gamma * n_stations);
  return out;
}

SystemParams small_test_params() { return exponential_params(3, 1.5, 0.5, 1.0, 2000); }

SystemParams base_params(double p) { return exponential_params(20, 10.0, p, 2.0, 500); }

SystemParams toy_nonstationary_params(double p) {
  SystemParams s = exponential_params(3, 1.5, p, 1.0, 1000);
  s.arrival.rate = FourierRateModel{4.0 * std::numbers::pi, 1.0, {0.5}, {0.0}};
  return s;
}

ExperimentReport flln_experiment(const SystemParams& params, const FllnOptions& opts) {
  if (opts.n_list.empty()) throw std::invalid_argument("flln: empty N list");
  if (opts.reps < 1) throw std::invalid_argument("flln: need at least one replication");
  ExperimentReport report;
  report.name = "flln";
  const auto grid = uniform_grid(0.0, opts.horizon, opts.sample_dt);
  std::vector<double> errors;
  for (int n : opts.n_list) {
    const SystemParams pn = with_stations(params, n);
    MeanFieldModel m = MeanFieldModel::from(pn);
    m.gamma = static_cast<double>(pn.fleet) / n;
    const Vector y0 = count_histogram(synthesize_initial_state(pn));
    const auto limit = integrate(m, y0, grid);
    const std::uint64_t n_seed = derive_seed(opts.seed, static_cast<std::uint64_t>(n));
    std::vector<double> sup(static_cast<std::size_t>(opts.reps));
    parallel_for(sup.size(), resolve_threads(opts.threads), [&](std::size_t r) {
      const auto run = simulate(pn, {opts.horizon, opts.sample_dt, derive_seed(n_seed, r), std::nullopt});
      double worst = 0.0;
      for (std::size_t i = 0; i < run.times.size(); ++i)
        worst = std::max(worst, (run.y_series[i] - limit.states[i]).cwiseAbs().maxCoeff());
      sup[r] = worst;
    });
    errors.push_back(mean_of(sup));
    report.metrics["sup_error_N" + std::to_string(n)] = errors.back();
  }
  bool ok = true;
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    const double r = static_cast<double>(opts.n_list[i + 1]) / opts.n_list[i];
    const std::string tag = std::to_string(opts.n_list[i]) + "_" + std::to_string(opts.n_list[i + 1]);
    report.criteria["ratio_" + tag] = "error ratio within [sqrt(r)/2, 2 sqrt(r)]";
    report.metrics["ratio_lo_" + tag] = std::sqrt(r) / 2;
    report.metrics["ratio_hi_" + tag] = 2 * std::sqrt(r);
    if (errors[i] == 0.0 && errors[i + 1] == 0.0) {
      report.metrics["ratio_" + tag] = kNaN;
      continue;  // deterministic system, both errors vanish
    }
    const double ratio = errors[i] / errors[i + 1];
    report.metrics["ratio_" + tag] = ratio;
    ok = ok && ratio >= std::sqrt(r) / 2 && ratio <= 2 * std::sqrt(r);
  }
  report.metrics["replications"] = opts.reps;
  report.status = ok ? ReportStatus::pass : ReportStatus::fail;
  return report;
}

ExperimentReport fclt_experiment(const SystemParams& params, const FcltOptions& opts) {
  ExperimentReport report;
  report.name = opts.include_noise ? "fclt" : "fclt_negative_control";
  report.criteria["frobenius"] = "||N Cov(Y) - Sigma||_F / ||Sigma||_F <= " + format_real(opts.tolerance);
  report.criteria["mean"] = "|mean of sqrt(N)(Y - y)| <= 3 standard errors per component";
  report.metrics["replications"] = opts.reps;
  report.metrics["stations"] = opts.n;
  report.metrics["t_check"] = opts.t_check;
  if (opts.reps < 2) {
    report.status = ReportStatus::insufficient;
    return report;
  }
  if (!params.capacity.uniform()) throw std::invalid_argument("fclt: uniform capacity required");

  const SystemParams pn = with_stations(params, opts.n);
  const int k = pn.k_max();
  const NetworkState start = state_from_measure(pn, Vector::Constant(k + 1, 1.0 / (k + 1)));
  const Vector y0 = count_histogram(start);
  MeanFieldModel m = MeanFieldModel::from(pn);
  m.gamma = static_cast<double>(pn.fleet) / opts.n;

  const std::vector<double> grid{0.0, opts.t_check};
  CovarianceOptions co;
  co.include_noise = opts.include_noise;
  const auto limit = integrate_covariance(m, y0, Matrix::Zero(k + 1, k + 1), grid, co);
  const Vector& y = limit.means.back();
  const Matrix& sigma = limit.sigmas.back();

  EnsembleOptions eo;
  eo.threads = opts.threads;
  eo.initial = start;
  const auto ens = ensemble(pn, opts.reps, opts.t_check, opts.t_check, opts.seed, eo);
  const Matrix scaled = ens.covariance.back() * static_cast<double>(opts.n);
  const double denom = sigma.norm();
  const double rel = denom > 0 ? (scaled - sigma).norm() / denom : std::numeric_limits<double>::infinity();
  report.metrics["frobenius_relative_error"] = rel;
  report.metrics["sigma_frobenius"] = denom;
  report.metrics["sample_frobenius"] = scaled.norm();

  double worst_z = 0.0;
  const Vector centred = std::sqrt(static_cast<double>(opts.n)) * (ens.mean.back() - y);
  for (int i = 0; i <= k; ++i) {
    const double se = std::sqrt(scaled(i, i) / opts.reps);
    const double z = se > 0 ? std::abs(centred[i]) / se : (std::abs(centred[i]) > 1e-12 ? kNaN : 0.0);
    worst_z = std::isnan(z) || std::isnan(worst_z) ? kNaN : std::max(worst_z, z);
  }
  report.metrics["max_mean_z"] = worst_z;

  if (opts.reps < opts.min_reps) {
    report.status = ReportStatus::insufficient;
    return report;
  }
  const bool ok = rel <= opts.tolerance && worst_z <= 3.0;
  report.status = ok ? ReportStatus::pass : ReportStatus::fail;
  return report;
}

ExperimentReport interchange_experiment(const SystemParams& params, const InterchangeOptions& opts) {
  if (!params.arrival.is_constant()) throw std::invalid_argument("interchange: constant arrivals required");
  ExperimentReport report;
  report.name = opts.ratio ? "interchange_ratio" : "interchange";
  const double tol = opts.tolerance > 0 ? opts.tolerance : (opts.ratio ? 0.03 : 0.02);
  report.criteria["total_variation"] = "TV(time average, equilibrium) <= " + format_real(tol);
  const SystemParams pn = with_stations(params, opts.n);
  const auto eq = solve_equilibrium_hetero(pn);
  const auto avg = stationary_average(pn, opts.burn_in, opts.horizon, opts.seed);
  const double tv = opts.ratio ? total_variation(avg.r, eq.r_bar) : total_variation(avg.y, count_marginal(eq.y_bar));
  report.metrics["total_variation"] = tv;
  report.metrics["tolerance"] = tol;
  report.metrics["stations"] = opts.n;
  report.metrics["horizon"] = opts.horizon;
  report.metrics["burn_in"] = opts.burn_in;
  report.metrics["equilibrium_residual"] = eq.residual;
  if (opts.n < opts.gated_min_stations) report.status = ReportStatus::informational;
  else report.status = tv <= tol ? ReportStatus::pass : ReportStatus::fail;
  return report;
}

ExperimentReport forward_equation_residual(const SystemParams& params, const ForwardOptions& opts) {
  if (opts.reps < 2) throw std::invalid_argument("forward: need at least two replications");
  if (!(opts.delta > 0) || opts.t < 0) throw std::invalid_argument("forward: need delta > 0 and t >= 0");
  ExperimentReport report;
  report.name = "forward";
  report.criteria["residual"] = "|FD derivative - generator| <= 3 paired standard errors";
  const SystemParams pn = with_stations(params, opts.n);
  const bool central = opts.t >= opts.delta;
  const std::vector<double> probes =
      central ? std::vector<double>{opts.t - opts.delta, opts.t, opts.t + opts.delta}
              : std::vector<double>{opts.t, opts.t + opts.delta, opts.t + 2 * opts.delta};
  const NetworkState start = synthesize_initial_state(pn);
  if (opts.index < 0 || opts.index > pn.k_max()) throw std::invalid_argument("forward: test index out of range");

  const auto f = [&](const Vector& y) {
    const double v = y[opts.index];
    return opts.f == TestFunction::coordinate ? v : v * v;
  };
  std::vector<double> diff(static_cast<std::size_t>(opts.reps)), deriv(diff.size()), gen(diff.size());
  parallel_for(diff.size(), resolve_threads(opts.threads), [&](std::size_t r) {
    Simulator sim(pn, start, derive_seed(opts.seed, r), probes.back());
    double fv[3];
    double lf = 0.0;
    for (int i = 0; i < 3; ++i) {
      sim.advance_to(probes[static_cast<std::size_t>(i)]);
      const Vector y = sim.count_histogram();
      fv[i] = f(y);
      if (probes[static_cast<std::size_t>(i)] == opts.t) {
        const auto rates = sim.bucket_rates(opts.t);
        const auto& layout = sim.layout();
        const double unit = 1.0 / pn.n_stations;
        for (std::size_t c = 0; c < layout.classes(); ++c)
          for (int n = 0; n <= layout.capacity(c); ++n) {
            const auto b = layout.index(c, n);
            for (int dir : {+1, -1}) {
              const double rate = dir > 0 ? rates.up[b] : rates.down[b];
              if (rate == 0.0) continue;
              Vector moved = y;
              moved[n] -= unit;
              moved[n + dir] += unit;
              lf += rate * (f(moved) - fv[i]);
            }
          }
      }
    }
    deriv[r] = central ? (fv[2] - fv[0]) / (2 * opts.delta) : (-3 * fv[0] + 4 * fv[1] - fv[2]) / (2 * opts.delta);
    gen[r] = lf;
    diff[r] = deriv[r] - gen[r];
  });

  const double d = mean_of(diff);
  const double se = sample_sd(diff) / std::sqrt(static_cast<double>(opts.reps));
  report.metrics["finite_difference"] = mean_of(deriv);
  report.metrics["generator"] = mean_of(gen);
  report.metrics["residual"] = d;
  report.metrics["standard_error"] = se;
  report.metrics["replications"] = opts.reps;
  const bool ok = se > 0 ? std::abs(d) <= 3 * se : std::abs(d) <= 1e-12;
  report.status = ok ? ReportStatus::pass : ReportStatus::fail;
  return report;
}

SweepPlane parse_plane(std::string_view name) {
  if (name == "p-theta") return SweepPlane::p_theta;
  if (name == "p-c") return SweepPlane::p_c;
  if (name == "p-alpha") return SweepPlane::p_alpha;
  if (name == "p-gamma") return SweepPlane::p_gamma;
  throw std::invalid_argument("unknown sweep plane '" + std::string(name) + "'");
}

std::string to_string(SweepPlane plane) {
  switch (plane) {
    case SweepPlane::p_theta: return "p-theta";
    case SweepPlane::p_c: return "p-c";
    case SweepPlane::p_alpha: return "p-alpha";
    case SweepPlane::p_gamma: return "p-gamma";
  }
  return "unknown";
}

std::vector<double> GridAxis::values() const {
  if (!(step > 0) || hi < lo) throw std::invalid_argument("grid axis " + name + ": need step > 0 and hi >= lo");
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  std::vector<double> out;
  for (long i = 0; i <= count; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

std::vector<GridAxis> parse_grid(std::string_view spec) {
  std::vector<GridAxis> axes;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string_view part = spec.substr(start, comma == std::string_view::npos ? spec.npos : comma - start);
    const auto eq = part.find('=');
    if (eq == part.npos) throw std::invalid_argument("grid: expected name=lo:hi:step in '" + std::string(part) + "'");
    GridAxis axis;
    axis.name = std::string(part.substr(0, eq));
    const std::string range(part.substr(eq + 1));
    const auto c1 = range.find(':');
    const auto c2 = c1 == std::string::npos ? std::string::npos : range.find(':', c1 + 1);
    try {
      if (c1 == std::string::npos) {
        axis.lo = axis.hi = std::stod(range);
        axis.step = 1.0;
      } else {
        axis.lo = std::stod(range.substr(0, c1));
        axis.hi = std::stod(range.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1));
        axis.step = c2 == std::string::npos ? 1.0 : std::stod(range.substr(c2 + 1));
      }
    } catch (const std::logic_error&) {
      throw std::invalid_argument("grid: malformed range '" + range + "'");
    }
    axis.values();
    axes.push_back(axis);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return axes;
}

SystemParams default_sweep_base() { return exponential_params(20, 10.0, 0.0, 2.0, 100); }

std::vector<SweepRow> sweep(SweepPlane plane, std::span<const GridAxis> grid, const SystemParams& base, int threads) {
  static const char* second[] = {"theta", "c", "alpha", "gamma"};
  const char* y_name = second[static_cast<int>(plane)];
  if (grid.size() != 2 || grid[0].name != "p" || grid[1].name != y_name)
    throw std::invalid_argument("sweep " + to_string(plane) + ": grid must be p=...," + y_name + "=...");
  if (!base.arrival.is_constant()) throw std::invalid_argument("sweep: constant arrivals required");
  const auto xs = grid[0].values();
  const auto ys = grid[1].values();
  std::vector<SweepRow> rows(xs.size() * ys.size());
  parallel_for(rows.size(), resolve_threads(threads), [&](std::size_t idx) {
    SweepRow& row = rows[idx];
    row.x = xs[idx / ys.size()];
    row.y = ys[idx % ys.size()];
    try {
      SystemParams p = base;
      p.p = row.x;
      switch (plane) {
        case SweepPlane::p_theta: p.choice = {ChoiceKind::exponential, row.y}; break;
        case SweepPlane::p_c: p.choice = {ChoiceKind::minimum, row.y}; break;
        case SweepPlane::p_alpha: p.choice = {ChoiceKind::polynomial, row.y}; break;
        case SweepPlane::p_gamma:
          p.gamma = row.y;
          p.fleet = std::llround(row.y * p.n_stations);
          break;
      }
      p = validate_params(to_json(p));
      const auto eq = solve_equilibrium_hetero(p);
      const Vector y = count_marginal(eq.y_bar);
      const auto k = y.size() - 1;
      row.ybar0 = y[0];
      row.ybar1 = k >= 1 ? y[1] : kNaN;
      row.ybar_km1 = y[k - 1 >= 0 ? k - 1 : 0];
      row.ybar_k = y[k];
      row.entropy = entropy(y);
    } catch (const std::exception&) {
      row.converged = false;
      row.ybar0 = row.ybar1 = row.ybar_km1 = row.ybar_k = row.entropy = kNaN;
    }
  });
  return rows;
}

void write_sweep_csv(std::ostream& out, SweepPlane plane, std::span<const SweepRow> rows) {
  (void)plane;
  CsvWriter w(out);
  for (const char* h : {"x", "y", "ybar0", "ybar1", "ybarKm1", "ybarK", "entropy", "converged"}) w.field(h);
  w.end_row();
  for (const auto& r : rows) {
    w.field(r.x).field(r.y).field(r.ybar0).field(r.ybar1).field(r.ybar_km1).field(r.ybar_k).field(r.entropy);
    w.field(r.converged ? 1 : 0);
    w.end_row();
  }
}

std::vector<Frame> nonstationary_run(const SystemParams& params, const Vector& y0, std::span<const double> t_grid,
                                     const IntegrationOptions& opts, bool with_variance) {
  const MeanFieldModel m = MeanFieldModel::from(params);
  std::vector<Frame> frames;
  if (with_variance) {
    CovarianceOptions co;
    co.integration = opts;
    const auto traj = integrate_covariance(m, y0, Matrix::Zero(y0.size(), y0.size()), t_grid, co);
    for (std::size_t i = 0; i < traj.times.size(); ++i)
      frames.push_back({traj.times[i], traj.means[i], entropy(traj.means[i]), traj.sigmas[i].diagonal()});
    return frames;
  }
  const auto traj = integrate_hetero(m, {m.layout, y0}, t_grid, opts);
  for (std::size_t i = 0; i < traj.times.size(); ++i)
    frames.push_back({traj.times[i], traj.states[i].values, entropy(traj.states[i].values), Vector()});
  return frames;
}

void write_frames_csv(std::ostream& out, std::span<const Frame> frames) {
  CsvWriter w(out);
  if (frames.empty()) return;
  const auto dim = frames.front().y.size();
  const bool var = frames.front().variance.size() > 0;
  w.field("t");
  for (Eigen::Index i = 0; i < dim; ++i) w.field("y" + std::to_string(i));
  w.field("entropy");
  if (var)
    for (Eigen::Index i = 0; i < dim; ++i) w.field("var" + std::to_string(i));
  w.end_row();
  for (const auto& f : frames) {
    w.field(f.t);
    for (Eigen::Index i = 0; i < dim; ++i) w.field(f.y[i]);
    w.field(f.entropy);
    if (var)
      for (Eigen::Index i = 0; i < dim; ++i) w.field(f.variance[i]);
    w.end_row();
  }
}

double oscillation_amplitude(std::span<const Frame> frames, int component, double t_from) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& f : frames) {
    if (f.t < t_from) continue;
    lo = std::min(lo, f.y[component]);
    hi = std::max(hi, f.y[component]);
  }
  return hi >= lo ? hi - lo : 0.0;
}

double periodicity_gap(std::span<const Frame> frames, double period) {
  if (frames.empty()) return 0.0;
  const double t_end = frames.back().t;
  if (t_end - frames.front().t < 2 * period) throw std::invalid_argument("periodicity_gap: run shorter than two periods");
  double gap = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].t < t_end - period - 1e-9) continue;
    const double target = frames[i].t - period;
    while (j + 1 < frames.size() && std::abs(frames[j + 1].t - target) <= std::abs(frames[j].t - target)) ++j;
    if (std::abs(frames[j].t - target) > 1e-6)
      throw std::invalid_argument("periodicity_gap: the time grid does not contain shifted instants");
    gap = std::max(gap, (frames[i].y - frames[j].y).cwiseAbs().maxCoeff());
  }
  return gap;
}

}  // namespace bss
