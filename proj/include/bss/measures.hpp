#pragma once

// Probability vectors over bike counts and over (count, capacity) pairs.

#include <span>
#include <vector>

#include "bss/model.hpp"

namespace bss {

/// Fraction of stations holding n = 0..K bikes.
using EmpiricalMeasure = Vector;
/// Fraction of stations per fill-ratio bin j = floor(n·K_max/k), j = 0..K_max.
using RatioHistogram = Vector;

/// Ratio bin of a station with n bikes and capacity k.
inline int ratio_bin(int n, int k, int k_max) { return static_cast<int>((static_cast<long>(n) * k_max) / k); }

/// Flat indexing of (n, k) pairs: one contiguous block of k+1 entries per
/// capacity class, classes in increasing capacity.
class HeteroLayout {
 public:
  HeteroLayout() = default;
  explicit HeteroLayout(std::vector<int> capacities);

  std::span<const int> capacities() const { return capacities_; }
  std::size_t classes() const { return capacities_.size(); }
  int capacity(std::size_t c) const { return capacities_[c]; }
  Eigen::Index offset(std::size_t c) const { return offsets_[c]; }
  Eigen::Index index(std::size_t c, int n) const { return offsets_[c] + n; }
  Eigen::Index size() const { return size_; }
  int k_max() const { return capacities_.back(); }
  /// Class index of capacity k, or -1.
  int class_of(int k) const;

  friend bool operator==(const HeteroLayout&, const HeteroLayout&) = default;

 private:
  std::vector<int> capacities_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index size_ = 0;
};

/// ỹ(n, k): proportion of stations with n bikes and capacity k.
struct HeterogeneousMeasure {
  HeteroLayout layout;
  Vector values;

  double operator()(int n, int k) const;
  /// Block of class c (length capacity(c)+1).
  auto block(std::size_t c) const { return values.segment(layout.offset(c), layout.capacity(c) + 1); }
  auto block(std::size_t c) { return values.segment(layout.offset(c), layout.capacity(c) + 1); }
  /// Σ_n ỹ(n, k) per class.
  Vector class_marginals() const;
};

/// Embeds a uniform-capacity measure y (length K+1) as a single-class table.
HeterogeneousMeasure as_hetero(const EmpiricalMeasure& y);

/// Layout for the capacity classes of a configuration.
HeteroLayout layout_of(const SystemParams& params);

/// ỹ with class marginals taken from the capacity fractions and the
/// conditional distribution inside each class uniform over 0..k.
HeterogeneousMeasure uniform_hetero(const SystemParams& params);

/// r(j) = Σ_k Σ_n ỹ(n,k)·1{floor(n·K_max/k) = j}. Throws if a class capacity exceeds k_max.
RatioHistogram ratio_projection(const HeterogeneousMeasure& y, int k_max);

/// The linear map of ratio_projection as a (K_max+1) × layout.size() 0/1 matrix.
Matrix ratio_projection_matrix(const HeteroLayout& layout, int k_max);

/// Natural-log entropy with 0·log 0 = 0.
double entropy(const Vector& y);

/// ½ Σ |a − b|.
double total_variation(const Vector& a, const Vector& b);

}  // namespace bss
