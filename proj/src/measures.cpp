#include "bss/measures.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bss {

HeteroLayout::HeteroLayout(std::vector<int> capacities) : capacities_(std::move(capacities)) {
  if (capacities_.empty()) throw std::invalid_argument("HeteroLayout: empty capacity set");
  if (!std::is_sorted(capacities_.begin(), capacities_.end()) ||
      std::adjacent_find(capacities_.begin(), capacities_.end()) != capacities_.end())
    throw std::invalid_argument("HeteroLayout: capacities must be strictly increasing");
  for (int k : capacities_) {
    if (k < 1) throw std::invalid_argument("HeteroLayout: capacities must be >= 1");
    offsets_.push_back(size_);
    size_ += k + 1;
  }
}

int HeteroLayout::class_of(int k) const {
  const auto it = std::lower_bound(capacities_.begin(), capacities_.end(), k);
  if (it == capacities_.end() || *it != k) return -1;
  return static_cast<int>(it - capacities_.begin());
}

double HeterogeneousMeasure::operator()(int n, int k) const {
  const int c = layout.class_of(k);
  if (c < 0 || n < 0 || n > k) return 0.0;
  return values[layout.index(static_cast<std::size_t>(c), n)];
}

Vector HeterogeneousMeasure::class_marginals() const {
  Vector m(static_cast<Eigen::Index>(layout.classes()));
  for (std::size_t c = 0; c < layout.classes(); ++c) m[static_cast<Eigen::Index>(c)] = block(c).sum();
  return m;
}

HeterogeneousMeasure as_hetero(const EmpiricalMeasure& y) {
  return {HeteroLayout({static_cast<int>(y.size()) - 1}), y};
}

HeteroLayout layout_of(const SystemParams& params) { return HeteroLayout(params.capacity.values); }

HeterogeneousMeasure uniform_hetero(const SystemParams& params) {
  HeterogeneousMeasure y{layout_of(params), {}};
  y.values.resize(y.layout.size());
  for (std::size_t c = 0; c < y.layout.classes(); ++c)
    y.block(c).setConstant(params.capacity.fractions[c] / (y.layout.capacity(c) + 1));
  return y;
}

RatioHistogram ratio_projection(const HeterogeneousMeasure& y, int k_max) {
  RatioHistogram r = RatioHistogram::Zero(k_max + 1);
  for (std::size_t c = 0; c < y.layout.classes(); ++c) {
    const int k = y.layout.capacity(c);
    if (k > k_max) throw std::invalid_argument("ratio_projection: capacity " + std::to_string(k) + " exceeds K_max");
    for (int n = 0; n <= k; ++n) r[ratio_bin(n, k, k_max)] += y.values[y.layout.index(c, n)];
  }
  return r;
}

Matrix ratio_projection_matrix(const HeteroLayout& layout, int k_max) {
  Matrix a = Matrix::Zero(k_max + 1, layout.size());
  for (std::size_t c = 0; c < layout.classes(); ++c) {
    const int k = layout.capacity(c);
    if (k > k_max) throw std::invalid_argument("ratio_projection_matrix: capacity exceeds K_max");
    for (int n = 0; n <= k; ++n) a(ratio_bin(n, k, k_max), layout.index(c, n)) = 1.0;
  }
  return a;
}

double entropy(const Vector& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] > 0) s -= y[i] * std::log(y[i]);
  return s;
}

double total_variation(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("total_variation: size mismatch");
  return 0.5 * (a - b).cwiseAbs().sum();
}

}  // namespace bss
