#include "bss/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bss/csv.hpp"
#include "bss/diffusion.hpp"
#include "bss/equilibrium.hpp"
#include "bss/harness.hpp"
#include "bss/ingestion.hpp"
#include "bss/meanfield.hpp"
#include "bss/parallel.hpp"
#include "bss/simulator.hpp"

#ifndef BSS_VERSION
#define BSS_VERSION "0.0.0"
#endif

namespace bss {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Manifest {
  std::string subcommand;
  json config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> outputs;
  json extra = json::object();
};

std::ofstream open_output(const std::string& path) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

void write_manifest(const Manifest& m, const std::string& primary_output, double seconds) {
  json j;
  j["subcommand"] = m.subcommand;
  j["config"] = m.config;
  j["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  j["tool_version"] = BSS_VERSION;
  j["outputs"] = m.outputs;
  j["wall_clock_seconds"] = seconds;
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  auto out = open_output(primary_output + ".manifest.json");
  out << j.dump(2) << '\n';
}

Vector parse_y0(const std::string& spec, const SystemParams& params) {
  const HeteroLayout layout = layout_of(params);
  Vector y = Vector::Zero(layout.size());
  if (spec == "builtin:uniform") return uniform_hetero(params).values;
  if (spec.rfind("builtin:mass@", 0) == 0) {
    int n = 0;
    try {
      n = std::stoi(spec.substr(13));
    } catch (const std::exception&) {
      throw UsageError("--y0: expected builtin:mass@<n>");
    }
    if (n < 0) throw UsageError("--y0: mass index must be non-negative");
    for (std::size_t c = 0; c < layout.classes(); ++c)
      y[layout.index(c, std::min(n, layout.capacity(c)))] = params.capacity.fractions[c];
    return y;
  }
  std::ifstream in(spec);
  if (!in) throw UsageError("--y0: cannot open " + spec);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool keyed_by_class = line == "k,n,y";
  if (!keyed_by_class && line != "n,y") throw UsageError("--y0: expected header n,y or k,n,y");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string a, b, c;
    std::getline(row, a, ',');
    std::getline(row, b, ',');
    std::getline(row, c, ',');
    try {
      const int k = keyed_by_class ? std::stoi(a) : layout.k_max();
      const int n = std::stoi(keyed_by_class ? b : a);
      const double v = std::stod(keyed_by_class ? c : b);
      const int cls = layout.class_of(k);
      if (cls < 0 || n < 0 || n > k) throw UsageError("--y0: entry outside the capacity layout: " + line);
      y[layout.index(static_cast<std::size_t>(cls), n)] = v;
    } catch (const std::logic_error&) {
      throw UsageError("--y0: malformed row: " + line);
    }
  }
  if (!keyed_by_class && !params.capacity.uniform()) throw UsageError("--y0: heterogeneous capacities need k,n,y rows");
  return y;
}

std::string default_y0(const SystemParams& params) {
  const int n = static_cast<int>(std::floor(std::min(params.gamma, static_cast<double>(params.k_max()))));
  return "builtin:mass@" + std::to_string(n);
}

Scheme parse_scheme(const std::string& s) {
  if (s == "auto") return Scheme::automatic;
  if (s == "rk4") return Scheme::rk4;
  if (s == "rosenbrock") return Scheme::rosenbrock;
  throw UsageError("--scheme must be auto, rk4 or rosenbrock");
}

Vector count_marginal(const HeterogeneousMeasure& y) {
  Vector out = Vector::Zero(y.layout.k_max() + 1);
  for (std::size_t c = 0; c < y.layout.classes(); ++c) out.head(y.layout.capacity(c) + 1) += y.block(c);
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bike-sharing mean-field toolkit", "bss"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", BSS_VERSION);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "worker threads (default: BSS_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);

  std::string config_path, out_path;
  std::uint64_t seed = 0;
  double horizon = 0, sample_dt = 0, t_end = 0, frame_dt = 1.0, step = 0.005;
  std::string y0_spec, scheme_name = "auto";
  bool with_variance = false;

  auto* sim = app.add_subcommand("simulate", "event-driven simulation of the station network");
  sim->add_option("--config", config_path, "configuration JSON")->required();
  sim->add_option("--horizon", horizon, "hours")->required();
  sim->add_option("--sample-dt", sample_dt, "sampling interval in hours")->required();
  sim->add_option("--seed", seed, "random seed");
  sim->add_option("--out", out_path, "output CSV")->required();

  auto* mf = app.add_subcommand("meanfield", "integrate the mean-field ODE; frames with entropy");
  mf->add_option("--config", config_path)->required();
  mf->add_option("--y0", y0_spec, "CSV file, builtin:uniform or builtin:mass@n");
  mf->add_option("--t-end", t_end, "hours")->required();
  mf->add_option("--dt", frame_dt, "frame interval in hours");
  mf->add_option("--step", step, "integration step");
  mf->add_option("--scheme", scheme_name, "auto, rk4 or rosenbrock");
  mf->add_flag("--variance", with_variance, "co-integrate the covariance diagonal");
  mf->add_option("--out", out_path)->required();

  auto* dif = app.add_subcommand("diffusion", "integrate the fluctuation covariance");
  dif->add_option("--config", config_path)->required();
  dif->add_option("--y0", y0_spec);
  dif->add_option("--t-end", t_end)->required();
  dif->add_option("--dt", frame_dt, "output interval in hours");
  dif->add_option("--step", step);
  dif->add_option("--out", out_path)->required();

  auto* eqc = app.add_subcommand("equilibrium", "solve for the mean-field equilibrium");
  eqc->add_option("--config", config_path)->required();
  eqc->add_option("--out", out_path, "output CSV (default: equilibrium.csv)");

  std::string plane_name, grid_spec;
  auto* sw = app.add_subcommand("sweep", "equilibrium surfaces over a parameter plane");
  sw->add_option("--plane", plane_name, "p-theta, p-c, p-alpha or p-gamma")->required();
  sw->add_option("--grid", grid_spec, "e.g. p=0:1:0.05,theta=0:2:0.1")->required();
  sw->add_option("--config", config_path, "base configuration (default K=20, gamma=10, lambda=1)");
  sw->add_option("--out", out_path)->required();

  std::string suite;
  int reps = -1, stations = -1;
  double burn_in = -1, t_check = -1;
  bool ratio_variant = false, no_noise = false;
  auto* ver = app.add_subcommand("verify", "run a verification experiment");
  ver->add_option("--suite", suite, "flln, fclt, interchange or forward")
      ->required()
      ->check(CLI::IsMember({"flln", "fclt", "interchange", "forward"}));
  ver->add_option("--config", config_path);
  ver->add_option("--seed", seed);
  ver->add_option("--reps", reps);
  ver->add_option("--n", stations, "stations");
  ver->add_option("--horizon", horizon);
  ver->add_option("--burn-in", burn_in);
  ver->add_option("--t", t_check, "check time");
  ver->add_flag("--ratio", ratio_variant, "interchange: compare the ratio process");
  ver->add_flag("--no-noise", no_noise, "fclt: negative control with A = 0");
  ver->add_option("--out", out_path)->required();

  std::string csv_path;
  int order = 0;
  double period = 24.0;
  auto* fit = app.add_subcommand("fit-arrivals", "least-squares Fourier fit of a rate series");
  fit->add_option("--csv", csv_path, "t_hours,rate CSV")->required();
  fit->add_option("--order", order)->required()->check(CLI::NonNegativeNumber);
  fit->add_option("--period", period);
  fit->add_option("--out", out_path)->required();

  std::string status_path, info_path;
  int k_max = 0;
  auto* gb = app.add_subcommand("gbfs-hist", "count and ratio histograms of a GBFS snapshot");
  gb->add_option("--status", status_path, "station_status JSON")->required();
  gb->add_option("--info", info_path, "station_information JSON")->required();
  gb->add_option("--k-max", k_max, "ratio bins (default: largest capacity)");
  gb->add_option("--out", out_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForVersion&) {
    out << BSS_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::Success&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  const int threads = resolve_threads(threads_flag);
  const auto started = std::chrono::steady_clock::now();
  Manifest manifest;
  manifest.subcommand = app.get_subcommands().front()->get_name();
  int status = kExitOk;

  try {
    const auto load = [&] {
      SystemParams p = load_params(config_path);
      manifest.config = to_json(p);
      return p;
    };

    if (*sim) {
      const SystemParams p = load();
      manifest.seed = seed;
      const auto traj = simulate(p, {horizon, sample_dt, seed, std::nullopt});
      auto f = open_output(out_path);
      CsvWriter w(f);
      w.field("t").field("observable").field("index").field("value");
      w.end_row();
      for (const char* obs : {"y", "r"})
        for (std::size_t i = 0; i < traj.times.size(); ++i) {
          const Vector& v = obs[0] == 'y' ? traj.y_series[i] : traj.r_series[i];
          for (Eigen::Index n = 0; n < v.size(); ++n) {
            w.field(traj.times[i]).field(obs).field(static_cast<long long>(n)).field(v[n]);
            w.end_row();
          }
        }
      manifest.extra["event_count"] = traj.event_count;
    } else if (*mf) {
      const SystemParams p = load();
      const Vector y0 = parse_y0(y0_spec.empty() ? default_y0(p) : y0_spec, p);
      IntegrationOptions io;
      io.step = step;
      io.scheme = parse_scheme(scheme_name);
      const auto grid = uniform_grid(0.0, t_end, frame_dt);
      const auto frames = nonstationary_run(p, y0, grid, io, with_variance);
      auto f = open_output(out_path);
      write_frames_csv(f, frames);
      manifest.extra["y0"] = y0_spec.empty() ? default_y0(p) : y0_spec;
    } else if (*dif) {
      const SystemParams p = load();
      const Vector y0 = parse_y0(y0_spec.empty() ? default_y0(p) : y0_spec, p);
      CovarianceOptions co;
      co.integration.step = step;
      const auto grid = uniform_grid(0.0, t_end, frame_dt);
      const auto traj =
          integrate_covariance(MeanFieldModel::from(p), y0, Matrix::Zero(y0.size(), y0.size()), grid, co);
      auto f = open_output(out_path);
      CsvWriter w(f);
      w.field("t").field("i").field("j").field("sigma_ij");
      w.end_row();
      for (std::size_t s = 0; s < traj.times.size(); ++s)
        for (Eigen::Index i = 0; i < y0.size(); ++i)
          for (Eigen::Index j = 0; j < y0.size(); ++j) {
            w.field(traj.times[s]).field(static_cast<long long>(i)).field(static_cast<long long>(j));
            w.field(traj.sigmas[s](i, j));
            w.end_row();
          }
      manifest.extra["y0"] = y0_spec.empty() ? default_y0(p) : y0_spec;
    } else if (*eqc) {
      if (out_path.empty()) out_path = "equilibrium.csv";
      const SystemParams p = load();
      const auto eq = solve_equilibrium_hetero(p);
      const Vector y = count_marginal(eq.y_bar);
      auto f = open_output(out_path);
      CsvWriter w(f);
      w.field("quantity").field("index").field("value");
      w.end_row();
      const auto vec_rows = [&](const std::string& name, const Vector& v) {
        for (Eigen::Index n = 0; n < v.size(); ++n) {
          w.field(name).field(static_cast<long long>(n)).field(v[n]);
          w.end_row();
        }
      };
      vec_rows("y_bar", y);
      if (!p.capacity.uniform()) {
        vec_rows("r_bar", eq.r_bar);
        for (std::size_t c = 0; c < eq.y_bar.layout.classes(); ++c)
          vec_rows("y_tilde_k" + std::to_string(eq.y_bar.layout.capacity(c)), eq.y_bar.block(c));
      }
      vec_rows("rho", eq.rho);
      for (const auto& [name, v] : std::vector<std::pair<std::string, double>>{
               {"a", eq.a}, {"s", eq.s}, {"residual", eq.residual}, {"entropy", entropy(y)},
               {"iterations", eq.iterations}}) {
        w.field(name).field("").field(v);
        w.end_row();
      }
    } else if (*sw) {
      SystemParams base = default_sweep_base();
      if (!config_path.empty()) base = load();
      else manifest.config = to_json(base);
      const SweepPlane plane = parse_plane(plane_name);
      const auto grid = parse_grid(grid_spec);
      const auto rows = sweep(plane, grid, base, threads);
      auto f = open_output(out_path);
      write_sweep_csv(f, plane, rows);
      long failed = std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.converged; });
      manifest.extra["plane"] = plane_name;
      manifest.extra["grid"] = grid_spec;
      manifest.extra["failed_nodes"] = failed;
      if (failed > 0) err << "warning: " << failed << " grid node(s) did not converge\n";
    } else if (*ver) {
      manifest.seed = seed;
      ExperimentReport report;
      if (suite == "flln") {
        const SystemParams p = config_path.empty() ? small_test_params() : load();
        FllnOptions o;
        o.seed = seed;
        o.threads = threads;
        if (reps > 0) o.reps = reps;
        if (horizon > 0) o.horizon = horizon;
        if (stations > 0) o.n_list = {stations, 10 * stations};
        report = flln_experiment(p, o);
      } else if (suite == "fclt") {
        const SystemParams p = config_path.empty() ? small_test_params() : load();
        FcltOptions o;
        o.seed = seed;
        o.threads = threads;
        o.include_noise = !no_noise;
        if (reps >= 0) o.reps = reps;
        if (stations > 0) o.n = stations;
        if (t_check > 0) o.t_check = t_check;
        report = fclt_experiment(p, o);
      } else if (suite == "interchange") {
        const SystemParams p = config_path.empty() ? base_params() : load();
        InterchangeOptions o;
        o.seed = seed;
        o.ratio = ratio_variant;
        if (stations > 0) o.n = stations;
        if (horizon > 0) o.horizon = horizon;
        if (burn_in >= 0) o.burn_in = burn_in;
        report = interchange_experiment(p, o);
      } else {
        const SystemParams p = config_path.empty() ? with_stations(small_test_params(), 100) : load();
        ForwardOptions o;
        o.seed = seed;
        o.threads = threads;
        if (reps > 0) o.reps = reps;
        if (stations > 0) o.n = stations;
        if (t_check >= 0) o.t = t_check;
        report = forward_equation_residual(p, o);
      }
      if (manifest.config.is_null()) manifest.config = nullptr;
      report.artifacts.push_back(out_path);
      auto f = open_output(out_path);
      f << report.to_json().dump(2) << '\n';
      out << report.name << ": " << to_string(report.status) << '\n';
      if (report.status == ReportStatus::fail) status = kExitRuntime;
    } else if (*fit) {
      const RateSeries series = load_rate_series(csv_path);
      const auto result = fit_fourier(series, order, period);
      json j;
      j["model"] = to_json(result.model);
      j["r_squared"] = result.r_squared;
      j["samples"] = series.times.size();
      auto f = open_output(out_path);
      f << j.dump(2) << '\n';
      manifest.extra["input"] = csv_path;
    } else if (*gb) {
      const auto read = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw UsageError("cannot open " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        return buf.str();
      };
      const auto snap = parse_gbfs(read(status_path), read(info_path));
      const auto hist = snapshot_histograms(snap, k_max);
      auto f = open_output(out_path);
      CsvWriter w(f);
      w.field("histogram").field("index").field("value");
      w.end_row();
      for (Eigen::Index n = 0; n < hist.counts.size(); ++n) {
        w.field("counts").field(static_cast<long long>(n)).field(hist.counts[n]);
        w.end_row();
      }
      for (Eigen::Index j = 0; j < hist.ratio.size(); ++j) {
        w.field("ratio").field(static_cast<long long>(j)).field(hist.ratio[j]);
        w.end_row();
      }
      manifest.extra["stations"] = snap.stations.size();
      manifest.extra["dropped"] = snap.dropped;
      manifest.extra["clamped"] = snap.clamped;
      manifest.extra["timestamp"] = snap.timestamp;
      if (snap.dropped > 0) err << "warning: dropped " << snap.dropped << " unmatched station(s)\n";
      if (snap.clamped > 0) err << "warning: clamped " << snap.clamped << " overfilled station(s)\n";
    }
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }

  manifest.outputs.push_back(out_path);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  try {
    write_manifest(manifest, out_path, seconds);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return status;
}

}  // namespace bss
