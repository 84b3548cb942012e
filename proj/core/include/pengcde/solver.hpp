#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "pengcde/tensor.hpp"

namespace pengcde {

/// Raised on step-size underflow or other unrecoverable integration states.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Right-hand side evaluated at (t, z). When a tape is active the returned
/// tensor participates in the record, so gradients flow through the unrolled
/// solver steps. Step-size decisions are made on detached values only.
using VectorField = std::function<Tensor(double, const Tensor&)>;

enum class SolverMethod { Tsit5, RK4 };

struct SolverConfig {
  SolverMethod method = SolverMethod::Tsit5;
  double rtol = 1e-3;
  double atol = 1e-6;
  double dt0 = 0.0;          // 0 -> span / 100
  std::size_t rk4_steps = 128;
};

struct SolverStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t field_evals = 0;
};

/// Latent trajectory sampled at the requested save times.
struct LatentPath {
  std::vector<double> times;
  std::vector<Tensor> states;
  SolverStats stats;
};

/// Adaptive embedded Runge-Kutta 5(4) with the Tsitouras coefficient tableau,
/// a PI step controller, and fourth-order Hermite dense output at save times.
/// The error norm is the RMS of componentwise error / (atol + rtol * |z|).
LatentPath tsit5_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                       std::vector<double> save_times, double rtol, double atol, double dt0);

/// Classical fixed-step RK4 with uniform steps; save times must coincide with
/// step endpoints (within 1e-9 of the span) or the solve fails.
LatentPath rk4_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                     std::size_t num_steps, std::vector<double> save_times);

/// RK4 over an explicit strictly increasing time grid; save times must be
/// grid nodes. Used for irregular snapshot grids and reparametrization tests.
LatentPath rk4_solve_grid(const VectorField& field, const Tensor& z0,
                          std::vector<double> grid, std::vector<double> save_times);

LatentPath solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                 std::vector<double> save_times, const SolverConfig& config);

/// Inserts `substeps - 1` evenly spaced points into every interval of `knots`.
std::vector<double> refine_grid(const std::vector<double>& knots, std::size_t substeps);

}  // namespace pengcde
