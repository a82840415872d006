#pragma once

#include <random>

#include <doctest.h>

#include "bss/model.hpp"

namespace bss::test {

inline SystemParams uniform_params(int k, double gamma, double lambda, double p, ChoiceSpec choice, int n = 100,
                                   double mu = 1.0) {
  SystemParams s;
  s.n_stations = n;
  s.gamma = gamma;
  s.fleet = std::llround(gamma * n);
  s.capacity = {{k}, {1.0}};
  s.mu = mu;
  s.p = p;
  s.arrival.rate = lambda;
  s.choice = choice;
  return s;
}

inline ChoiceSpec exp_choice(double theta) { return {ChoiceKind::exponential, theta}; }

/// Uniform point on the simplex interior (normalized exponentials).
inline Vector random_simplex(std::mt19937_64& rng, Eigen::Index dim, double floor = 1e-3) {
  std::exponential_distribution<double> e(1.0);
  Vector y(dim);
  for (Eigen::Index i = 0; i < dim; ++i) y[i] = e(rng) + floor;
  return y / y.sum();
}

/// Random interior point with mean occupancy below γ, so the return
/// intensity a(y) is positive.
inline Vector random_state(std::mt19937_64& rng, int k, double gamma) {
  for (;;) {
    Vector y = random_simplex(rng, k + 1);
    if (Vector::LinSpaced(k + 1, 0, k).dot(y) < gamma) return y;
  }
}

}  // namespace bss::test
