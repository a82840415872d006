#pragma once

// Numerical integration of the mean-field ODE ẏ = b(y).

#include <span>
#include <stdexcept>
#include <vector>

#include "bss/measures.hpp"
#include "bss/vector_field.hpp"

namespace bss {

class StiffnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Scheme {
  automatic,   // RK4 while h·(spectral bound) ≤ 2.5, Rosenbrock otherwise
  rk4,         // classical fixed-step Runge-Kutta
  rosenbrock,  // L-stable two-stage ROS2 with the analytic Jacobian
};

struct IntegrationOptions {
  double step = 0.005;
  double min_step = 1e-6;
  Scheme scheme = Scheme::automatic;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
};

struct HeteroTrajectory {
  std::vector<double> times;
  std::vector<HeterogeneousMeasure> states;
};

/// t0, t0+dt, ... up to and including t1 (the last point snaps to t1).
std::vector<double> uniform_grid(double t0, double t1, double dt);

/// Advances y from t0 to t1 over `layout`. Steps of at most opts.step; a
/// step that drives a component below −1e−9 is retried as two halves,
/// and StiffnessError is raised below opts.min_step. The state is
/// rescaled onto the simplex whenever |Σy − 1| exceeds 1e−12.
Vector advance(const MeanFieldModel& m, const HeteroLayout& layout, Vector y, double t0, double t1,
               const IntegrationOptions& opts = {});

/// Uniform-capacity trajectory sampled at `t_grid` (starting at t_grid[0]).
Trajectory integrate(const MeanFieldModel& m, const EmpiricalMeasure& y0, std::span<const double> t_grid,
                     const IntegrationOptions& opts = {});

HeteroTrajectory integrate_hetero(const MeanFieldModel& m, const HeterogeneousMeasure& y0,
                                  std::span<const double> t_grid, const IntegrationOptions& opts = {});

/// Throws std::invalid_argument unless y is a probability vector (1e−10).
void require_simplex(const Vector& y, const char* what);

}  // namespace bss
