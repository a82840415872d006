#pragma once

// Event-driven simulation of the N-station chain X(t).
//
// Stations are kept in buckets keyed by (bike count, capacity class). All
// aggregate rates are sums over buckets of count × per-station rate, so
// they are recomputed exactly from integer counts at every event and
// never drift. A time-varying arrival rate is handled by thinning against
// the horizon-wide bound from arrival_rate_bound.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "bss/measures.hpp"
#include "bss/model.hpp"

namespace bss {

struct NetworkState {
  std::vector<int> counts;      // X_i
  std::vector<int> capacities;  // K_i
  long fleet = 0;               // M
  double t = 0.0;

  long docked() const;
  long in_circulation() const { return fleet - docked(); }
  int size() const { return static_cast<int>(counts.size()); }
};

/// Throws std::invalid_argument unless 0 ≤ X_i ≤ K_i and ΣX ≤ M.
void validate_state(const NetworkState& state);

/// Round-robin placement of M bikes, one per station per pass, skipping
/// full stations. Bikes that do not fit stay in circulation.
NetworkState synthesize_initial_state(const SystemParams& params);

/// Station counts whose empirical measure is the largest-remainder
/// rounding of y0·N (uniform capacity). Throws if the docked bikes exceed M.
NetworkState state_from_measure(const SystemParams& params, const EmpiricalMeasure& y0);

/// ((1−p)λ + pλN·g(X_i)/Σ_j g(X_j))·1{X_i > 0}.
double pickup_rate(const NetworkState& state, int i, const SystemParams& params, double t);
/// μ(M − ΣX)/N·1{X_i < K_i}.
double dropoff_rate(const NetworkState& state, int i, const SystemParams& params);

/// Y: fraction of stations per count. Requires uniform capacities.
EmpiricalMeasure empirical_measure(const NetworkState& state);
/// Fraction of stations per count 0..max K_i, any capacities.
Vector count_histogram(const NetworkState& state);
/// ỹ over the distinct capacities present in the state.
HeterogeneousMeasure hetero_measure(const NetworkState& state);
/// R over K_max+1 ratio bins. Throws if some K_i > k_max.
RatioHistogram ratio_histogram(const NetworkState& state, int k_max);

/// splitmix64(master ⊕ splitmix64(index + 0x9E3779B97F4A7C15)).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// 53-bit uniforms and exponentials on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

 private:
  std::mt19937_64 engine_;
};

/// Per flat (count, class) index: total rate of n → n+1 (dropoffs) and of
/// n → n−1 (pickups) over all stations in the bucket.
struct BucketRates {
  Vector up;
  Vector down;
};

class Simulator {
 public:
  using Observer = std::function<void(const Simulator&)>;

  /// `horizon` fixes the thinning bound for time-varying arrivals.
  Simulator(const SystemParams& params, NetworkState initial, std::uint64_t seed, double horizon);

  /// Runs events up to `t_stop` and parks the clock there.
  void advance_to(double t_stop);

  const NetworkState& state() const { return state_; }
  const HeteroLayout& layout() const { return layout_; }
  std::uint64_t events() const { return events_; }
  /// Called after every accepted event.
  void set_observer(Observer observer) { observer_ = std::move(observer); }

  Vector count_histogram() const;
  HeterogeneousMeasure hetero_measure() const;
  RatioHistogram ratio_histogram() const;
  BucketRates bucket_rates(double t) const;

  /// Starts time-weighted accumulation of ỹ at the current clock.
  void start_averaging();
  /// Time average of ỹ since start_averaging().
  HeterogeneousMeasure averaged_measure() const;

 private:
  struct Aggregates {
    double pickup_weight;  // Σ_b cnt·((1−p) + informed·g(n)), without λ
    double informed;       // pN/Σg(X), or 0
    long nonfull;
  };

  Aggregates aggregates() const;
  void move_station(int station, int delta);
  void touch_bucket(Eigen::Index b);

  SystemParams params_;
  NetworkState state_;
  HeteroLayout layout_;
  Vector g_;
  std::vector<int> bucket_count_;
  std::vector<int> bucket_n_;
  std::vector<int> bucket_k_;
  std::vector<std::vector<int>> members_;
  std::vector<int> position_;
  std::vector<int> station_class_;
  long docked_ = 0;
  double lambda_bound_;
  Rng rng_;
  std::uint64_t events_ = 0;
  Observer observer_;

  bool averaging_ = false;
  double average_start_ = 0.0;
  std::vector<double> occupancy_;
  std::vector<double> touched_;
};

struct SimulationOptions {
  double horizon = 1.0;
  double sample_dt = 1.0;
  std::uint64_t seed = 0;
  std::optional<NetworkState> initial;  // synthesized when empty
};

struct TrajectorySample {
  std::vector<double> times;
  std::vector<Vector> y_series;  // count histograms over 0..K_max
  std::vector<RatioHistogram> r_series;
  std::uint64_t event_count = 0;
};

TrajectorySample simulate(const SystemParams& params, const SimulationOptions& opts);

struct StationaryAverage {
  Vector y;  // count histogram over 0..K_max
  RatioHistogram r;
  HeterogeneousMeasure y_tilde;
};

/// Time averages over [burn_in, horizon] of one run.
StationaryAverage stationary_average(const SystemParams& params, double burn_in, double horizon, std::uint64_t seed,
                                     std::optional<NetworkState> initial = std::nullopt);

struct EnsembleOptions {
  int threads = 0;            // 0: resolve_threads()
  bool same_seed = false;     // every replication uses `seed` itself
  std::optional<NetworkState> initial;
};

struct EnsembleResult {
  std::vector<double> times;
  std::vector<Vector> mean;        // per instant
  std::vector<Matrix> covariance;  // unbiased, per instant
  int replications = 0;
};

/// Replication r uses derive_seed(seed, r). Reduction runs in replication
/// order, so results do not depend on the thread count.
EnsembleResult ensemble(const SystemParams& params, int replications, double horizon, double sample_dt,
                        std::uint64_t seed, const EnsembleOptions& opts = {});

}  // namespace bss
