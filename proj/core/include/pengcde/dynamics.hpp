#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pengcde/series.hpp"
#include "pengcde/tensor.hpp"

namespace pengcde {

enum class SystemKind { Heat, Gene, Wealth, Opinion, Sir };

SystemKind system_kind_from_string(const std::string& name);
std::string to_string(SystemKind kind);

/// One of the network dynamical systems driving ground-truth node features.
/// State is n x 1 except for Sir, which tracks (S, I, R) per node as n x 3.
struct SystemSpec {
  SystemKind kind = SystemKind::Heat;
  double gene_degradation = 1.0;
  double wealth_delta = 0.05;
  Tensor wealth_savings;  // per-node s_u; sampled on demand when empty
  double opinion_threshold = 0.5;
  double sir_beta = 0.3;
  double sir_gamma = 0.3;

  std::size_t channels() const { return kind == SystemKind::Sir ? 3 : 1; }
};

/// Spec with per-node parameters sampled for an n-node graph.
SystemSpec default_system(SystemKind kind, std::size_t n, std::uint64_t seed);

/// Initial state: uniform [0, 25] per node for heat/gene/wealth, uniform
/// [-1, 1] for opinion; for sir, I = 1 on 5% of nodes (at least one),
/// S = 1 - I, R = 0.
Tensor sample_x0(const SystemSpec& spec, std::size_t n, std::uint64_t seed);

/// Instantaneous rate of change. Wealth states are clamped at zero before
/// the fractional power; the clamp count is reported via `clamp_warnings`.
Tensor rhs(const SystemSpec& spec, const Tensor& adjacency, const Tensor& state,
           std::size_t* clamp_warnings = nullptr);

struct SimulateOptions {
  double max_substep = 1e-2;
  double blowup_threshold = 1e9;
};

/// Dense RK4 integration over the piecewise-constant topology of `series`,
/// switching adjacency exactly at its change times and sampling the state at
/// every series timestamp.
std::vector<Tensor> simulate(const SystemSpec& spec, const DynamicGraphSeries& series,
                             const Tensor& x0, const SimulateOptions& options = {});

/// N strictly increasing times spanning [0, T] exactly: N-1 Gamma(k, 1)
/// increments normalized to total T, then cumulative-summed from 0.
std::vector<double> gamma_times(std::size_t n_times, double shape, double t_end,
                                std::uint64_t seed);

/// Trajectory class implied by the generating regime: outbreak when the
/// transmission rate sustains spread (beta >= gamma), die-out otherwise.
enum class SirOutcome { DieOut = 0, Outbreak = 1 };
SirOutcome sir_label(const SystemSpec& spec);

}  // namespace pengcde
