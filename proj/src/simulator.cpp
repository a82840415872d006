#include "bss/simulator.hpp"

#include <algorithm>
#include <cassert>
#include <numeric>
#include <stdexcept>
#include <string>

#include "bss/meanfield.hpp"
#include "bss/parallel.hpp"
#include "bss/vector_field.hpp"

namespace bss {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

int max_capacity(const NetworkState& state) {
  if (state.capacities.empty()) throw std::invalid_argument("network state has no stations");
  return *std::max_element(state.capacities.begin(), state.capacities.end());
}

HeteroLayout distinct_layout(const NetworkState& state) {
  std::vector<int> caps = state.capacities;
  std::sort(caps.begin(), caps.end());
  caps.erase(std::unique(caps.begin(), caps.end()), caps.end());
  return HeteroLayout(std::move(caps));
}

}  // namespace

long NetworkState::docked() const { return std::accumulate(counts.begin(), counts.end(), 0L); }

void validate_state(const NetworkState& state) {
  if (state.counts.empty()) throw std::invalid_argument("network state has no stations");
  if (state.counts.size() != state.capacities.size())
    throw std::invalid_argument("network state: counts and capacities differ in length");
  for (std::size_t i = 0; i < state.counts.size(); ++i) {
    if (state.capacities[i] < 1) throw std::invalid_argument("station " + std::to_string(i) + ": capacity < 1");
    if (state.counts[i] < 0 || state.counts[i] > state.capacities[i])
      throw std::invalid_argument("station " + std::to_string(i) + ": " + std::to_string(state.counts[i]) +
                                  " bikes outside [0, " + std::to_string(state.capacities[i]) + "]");
  }
  if (state.fleet < 0) throw std::invalid_argument("network state: negative fleet");
  if (state.docked() > state.fleet)
    throw std::invalid_argument("network state: " + std::to_string(state.docked()) + " docked bikes exceed fleet " +
                                std::to_string(state.fleet));
}

NetworkState synthesize_initial_state(const SystemParams& params) {
  NetworkState s;
  s.capacities = station_capacities(params);
  s.counts.assign(s.capacities.size(), 0);
  s.fleet = params.fleet;
  long remaining = params.fleet;
  bool placed = true;
  while (remaining > 0 && placed) {
    placed = false;
    for (std::size_t i = 0; i < s.counts.size() && remaining > 0; ++i) {
      if (s.counts[i] < s.capacities[i]) {
        ++s.counts[i];
        --remaining;
        placed = true;
      }
    }
  }
  return s;
}

NetworkState state_from_measure(const SystemParams& params, const EmpiricalMeasure& y0) {
  if (!params.capacity.uniform()) throw std::invalid_argument("state_from_measure: uniform capacity required");
  const int k = params.k_max();
  if (y0.size() != k + 1) throw std::invalid_argument("state_from_measure: y0 must have length K+1");
  require_simplex(y0, "state_from_measure y0");
  const long n = params.n_stations;
  std::vector<long> per_count(static_cast<std::size_t>(k + 1));
  std::vector<std::pair<double, int>> remainders;
  long assigned = 0;
  for (int j = 0; j <= k; ++j) {
    const double exact = std::max(0.0, y0[j]) * static_cast<double>(n);
    per_count[j] = static_cast<long>(std::floor(exact));
    assigned += per_count[j];
    remainders.emplace_back(exact - std::floor(exact), j);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++per_count[remainders[i % remainders.size()].second];

  NetworkState s;
  s.capacities.assign(static_cast<std::size_t>(n), k);
  for (int j = 0; j <= k; ++j) s.counts.insert(s.counts.end(), static_cast<std::size_t>(per_count[j]), j);
  s.fleet = params.fleet;
  validate_state(s);
  return s;
}

double pickup_rate(const NetworkState& state, int i, const SystemParams& params, double t) {
  if (state.counts[i] == 0) return 0.0;
  const Vector g = normalized_choice_weights(params.choice, std::max(params.k_max(), max_capacity(state)));
  double total = 0.0;
  for (int x : state.counts) total += g[x];
  const double lambda = arrival_rate(params.arrival, t);
  const double informed =
      total < kEmptyChoiceDenominator ? 0.0 : params.p * state.size() * g[state.counts[i]] / total;
  return lambda * ((1.0 - params.p) + informed);
}

double dropoff_rate(const NetworkState& state, int i, const SystemParams& params) {
  if (state.counts[i] >= state.capacities[i]) return 0.0;
  return params.mu * static_cast<double>(state.in_circulation()) / state.size();
}

EmpiricalMeasure empirical_measure(const NetworkState& state) {
  const int k = max_capacity(state);
  if (std::any_of(state.capacities.begin(), state.capacities.end(), [k](int c) { return c != k; }))
    throw std::invalid_argument("empirical_measure: heterogeneous capacities, use hetero_measure");
  return count_histogram(state);
}

Vector count_histogram(const NetworkState& state) {
  Vector y = Vector::Zero(max_capacity(state) + 1);
  for (int x : state.counts) y[x] += 1.0;
  return y / state.size();
}

HeterogeneousMeasure hetero_measure(const NetworkState& state) {
  HeterogeneousMeasure y{distinct_layout(state), {}};
  y.values = Vector::Zero(y.layout.size());
  for (int i = 0; i < state.size(); ++i)
    y.values[y.layout.index(static_cast<std::size_t>(y.layout.class_of(state.capacities[i])), state.counts[i])] += 1.0;
  y.values /= state.size();
  return y;
}

RatioHistogram ratio_histogram(const NetworkState& state, int k_max) {
  if (max_capacity(state) > k_max) throw std::invalid_argument("ratio_histogram: capacity exceeds k_max");
  RatioHistogram r = RatioHistogram::Zero(k_max + 1);
  for (int i = 0; i < state.size(); ++i) r[ratio_bin(state.counts[i], state.capacities[i], k_max)] += 1.0;
  return r / state.size();
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x9E3779B97F4A7C15ULL));
}

Simulator::Simulator(const SystemParams& params, NetworkState initial, std::uint64_t seed, double horizon)
    : params_(params),
      state_(std::move(initial)),
      layout_(layout_of(params)),
      g_(normalized_choice_weights(params.choice, params.k_max())),
      lambda_bound_(arrival_rate_bound(params.arrival, horizon)),
      rng_(seed) {
  validate_state(state_);
  const auto b = static_cast<std::size_t>(layout_.size());
  bucket_count_.assign(b, 0);
  members_.resize(b);
  bucket_n_.resize(b);
  bucket_k_.resize(b);
  for (std::size_t c = 0; c < layout_.classes(); ++c)
    for (int n = 0; n <= layout_.capacity(c); ++n) {
      bucket_n_[layout_.index(c, n)] = n;
      bucket_k_[layout_.index(c, n)] = layout_.capacity(c);
    }
  position_.resize(state_.counts.size());
  station_class_.resize(state_.counts.size());
  for (int i = 0; i < state_.size(); ++i) {
    const int c = layout_.class_of(state_.capacities[i]);
    if (c < 0)
      throw std::invalid_argument("station " + std::to_string(i) + ": capacity " +
                                  std::to_string(state_.capacities[i]) + " not in the configured capacity set");
    station_class_[i] = c;
    const auto idx = layout_.index(static_cast<std::size_t>(c), state_.counts[i]);
    position_[i] = static_cast<int>(members_[idx].size());
    members_[idx].push_back(i);
    ++bucket_count_[idx];
  }
  docked_ = state_.docked();
  occupancy_.assign(b, 0.0);
  touched_.assign(b, state_.t);
}

Simulator::Aggregates Simulator::aggregates() const {
  double g_total = 0.0;
  for (std::size_t b = 0; b < bucket_count_.size(); ++b) g_total += bucket_count_[b] * g_[bucket_n_[b]];
  const double informed = g_total < kEmptyChoiceDenominator ? 0.0 : params_.p * state_.size() / g_total;
  double weight = 0.0;
  long nonfull = 0;
  for (std::size_t b = 0; b < bucket_count_.size(); ++b) {
    if (bucket_count_[b] == 0) continue;
    if (bucket_n_[b] > 0) weight += bucket_count_[b] * ((1.0 - params_.p) + informed * g_[bucket_n_[b]]);
    if (bucket_n_[b] < bucket_k_[b]) nonfull += bucket_count_[b];
  }
  return {weight, informed, nonfull};
}

void Simulator::touch_bucket(Eigen::Index b) {
  if (averaging_) occupancy_[b] += bucket_count_[b] * (state_.t - touched_[b]);
  touched_[b] = state_.t;
}

void Simulator::move_station(int station, int delta) {
  const auto c = static_cast<std::size_t>(station_class_[station]);
  const int n = state_.counts[station];
  const auto from = layout_.index(c, n);
  const auto to = layout_.index(c, n + delta);
  touch_bucket(from);
  touch_bucket(to);

  auto& src = members_[from];
  const int last = src.back();
  src[position_[station]] = last;
  position_[last] = position_[station];
  src.pop_back();
  --bucket_count_[from];

  position_[station] = static_cast<int>(members_[to].size());
  members_[to].push_back(station);
  ++bucket_count_[to];

  state_.counts[station] = n + delta;
  docked_ += delta;
}

void Simulator::advance_to(double t_stop) {
  const double n_stations = state_.size();
  while (true) {
    const auto ag = aggregates();
    const long circulating = state_.fleet - docked_;
    const double dropoff_total = params_.mu * static_cast<double>(circulating) / n_stations * ag.nonfull;
    const double bound = lambda_bound_ * ag.pickup_weight + dropoff_total;
    if (!(bound > 0)) break;
    const double dt = rng_.exponential(bound);
    if (state_.t + dt > t_stop) break;
    state_.t += dt;

    const double u = rng_.uniform() * bound;
    if (u < dropoff_total) {
      auto pick = static_cast<long>(rng_.uniform() * static_cast<double>(ag.nonfull));
      pick = std::min(pick, ag.nonfull - 1);
      std::size_t b = 0;
      for (; b < bucket_count_.size(); ++b) {
        if (bucket_n_[b] == bucket_k_[b]) continue;
        if (pick < bucket_count_[b]) break;
        pick -= bucket_count_[b];
      }
      move_station(members_[b][static_cast<std::size_t>(pick)], +1);
    } else {
      const double lambda = arrival_rate(params_.arrival, state_.t);
      if (lambda > lambda_bound_ * (1.0 + 1e-12))
        throw std::runtime_error("thinning bound exceeded at t=" + std::to_string(state_.t));
      if (u >= dropoff_total + lambda * ag.pickup_weight) continue;  // rejected candidate
      double v = rng_.uniform() * ag.pickup_weight;
      std::size_t chosen = bucket_count_.size();
      for (std::size_t b = 0; b < bucket_count_.size(); ++b) {
        if (bucket_n_[b] == 0 || bucket_count_[b] == 0) continue;
        chosen = b;
        const double w = bucket_count_[b] * ((1.0 - params_.p) + ag.informed * g_[bucket_n_[b]]);
        if (v < w) break;
        v -= w;
      }
      const auto slot = std::min<std::size_t>(static_cast<std::size_t>(rng_.uniform() * bucket_count_[chosen]),
                                              members_[chosen].size() - 1);
      move_station(members_[chosen][slot], -1);
    }
    ++events_;
    assert(docked_ == state_.docked() && docked_ >= 0 && docked_ <= state_.fleet);
    if (observer_) observer_(*this);
  }
  state_.t = std::max(state_.t, t_stop);
}

Vector Simulator::count_histogram() const {
  Vector y = Vector::Zero(layout_.k_max() + 1);
  for (std::size_t b = 0; b < bucket_count_.size(); ++b) y[bucket_n_[b]] += bucket_count_[b];
  return y / state_.size();
}

HeterogeneousMeasure Simulator::hetero_measure() const {
  HeterogeneousMeasure y{layout_, Vector(layout_.size())};
  for (std::size_t b = 0; b < bucket_count_.size(); ++b)
    y.values[static_cast<Eigen::Index>(b)] = static_cast<double>(bucket_count_[b]) / state_.size();
  return y;
}

RatioHistogram Simulator::ratio_histogram() const { return ratio_projection(hetero_measure(), layout_.k_max()); }

BucketRates Simulator::bucket_rates(double t) const {
  const auto ag = aggregates();
  const double lambda = arrival_rate(params_.arrival, t);
  const double per_dropoff = params_.mu * static_cast<double>(state_.fleet - docked_) / state_.size();
  BucketRates r{Vector::Zero(layout_.size()), Vector::Zero(layout_.size())};
  for (std::size_t b = 0; b < bucket_count_.size(); ++b) {
    const auto i = static_cast<Eigen::Index>(b);
    if (bucket_n_[b] < bucket_k_[b]) r.up[i] = bucket_count_[b] * per_dropoff;
    if (bucket_n_[b] > 0)
      r.down[i] = lambda * bucket_count_[b] * ((1.0 - params_.p) + ag.informed * g_[bucket_n_[b]]);
  }
  return r;
}

void Simulator::start_averaging() {
  averaging_ = true;
  average_start_ = state_.t;
  std::fill(occupancy_.begin(), occupancy_.end(), 0.0);
  std::fill(touched_.begin(), touched_.end(), state_.t);
}

HeterogeneousMeasure Simulator::averaged_measure() const {
  const double span = state_.t - average_start_;
  if (!averaging_ || !(span > 0)) return hetero_measure();
  HeterogeneousMeasure y{layout_, Vector(layout_.size())};
  for (std::size_t b = 0; b < bucket_count_.size(); ++b)
    y.values[static_cast<Eigen::Index>(b)] =
        (occupancy_[b] + bucket_count_[b] * (state_.t - touched_[b])) / (span * state_.size());
  return y;
}

TrajectorySample simulate(const SystemParams& params, const SimulationOptions& opts) {
  if (!(opts.horizon > 0)) throw std::invalid_argument("simulate: horizon must be positive");
  if (!(opts.sample_dt > 0)) throw std::invalid_argument("simulate: sample_dt must be positive");
  NetworkState initial = opts.initial ? *opts.initial : synthesize_initial_state(params);
  const double t0 = initial.t;
  Simulator sim(params, std::move(initial), opts.seed, opts.horizon);
  TrajectorySample out;
  for (double t : uniform_grid(t0, std::max(t0, opts.horizon), opts.sample_dt)) {
    sim.advance_to(t);
    out.times.push_back(t);
    out.y_series.push_back(sim.count_histogram());
    out.r_series.push_back(sim.ratio_histogram());
  }
  out.event_count = sim.events();
  return out;
}

StationaryAverage stationary_average(const SystemParams& params, double burn_in, double horizon, std::uint64_t seed,
                                     std::optional<NetworkState> initial) {
  if (!(horizon > burn_in) || burn_in < 0)
    throw std::invalid_argument("stationary_average: need 0 <= burn_in < horizon");
  Simulator sim(params, initial ? std::move(*initial) : synthesize_initial_state(params), seed, horizon);
  sim.advance_to(burn_in);
  sim.start_averaging();
  sim.advance_to(horizon);
  StationaryAverage out;
  out.y_tilde = sim.averaged_measure();
  out.y = Vector::Zero(out.y_tilde.layout.k_max() + 1);
  for (std::size_t c = 0; c < out.y_tilde.layout.classes(); ++c)
    out.y.head(out.y_tilde.layout.capacity(c) + 1) += out.y_tilde.block(c);
  out.r = ratio_projection(out.y_tilde, out.y_tilde.layout.k_max());
  return out;
}

EnsembleResult ensemble(const SystemParams& params, int replications, double horizon, double sample_dt,
                        std::uint64_t seed, const EnsembleOptions& opts) {
  if (replications < 2) throw std::invalid_argument("ensemble: at least 2 replications required");
  std::vector<TrajectorySample> runs(static_cast<std::size_t>(replications));
  parallel_for(runs.size(), resolve_threads(opts.threads), [&](std::size_t r) {
    SimulationOptions so{horizon, sample_dt, opts.same_seed ? seed : derive_seed(seed, r), opts.initial};
    runs[r] = simulate(params, so);
  });

  EnsembleResult out;
  out.times = runs.front().times;
  out.replications = replications;
  for (std::size_t i = 0; i < out.times.size(); ++i) {
    Vector mean = Vector::Zero(runs.front().y_series[i].size());
    for (const auto& run : runs) mean += run.y_series[i];
    mean /= replications;
    Matrix cov = Matrix::Zero(mean.size(), mean.size());
    for (const auto& run : runs) {
      const Vector d = run.y_series[i] - mean;
      cov.noalias() += d * d.transpose();
    }
    out.mean.push_back(std::move(mean));
    out.covariance.push_back(cov / (replications - 1));
  }
  return out;
}

}  // namespace bss
