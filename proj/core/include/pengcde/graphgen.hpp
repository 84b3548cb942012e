#pragma once

#include <cstdint>
#include <string>

#include "pengcde/series.hpp"
#include "pengcde/tensor.hpp"

namespace pengcde {

enum class GraphKind { Grid, SmallWorld, PowerLaw, Community };

GraphKind graph_kind_from_string(const std::string& name);
std::string to_string(GraphKind kind);

struct GraphParams {
  // grid: rows x cols; 0 means the most square factorization of n
  std::size_t grid_rows = 0;
  // small-world ring degree (even) and rewiring probability
  std::size_t ws_degree = 4;
  double ws_rewire = 0.1;
  // power-law attachment count
  std::size_t ba_attach = 2;
  // community block count and link probabilities (p_in > p_out)
  std::size_t sbm_blocks = 4;
  double sbm_p_in = 0.2;
  double sbm_p_out = 0.01;
};

/// Samples one symmetric 0/1 adjacency with zero diagonal.
Tensor gen_graph(GraphKind kind, std::size_t n, std::uint64_t seed,
                 const GraphParams& params = {});

/// Flips each unordered node pair independently with probability `flip_rate`,
/// drawing u(i, j) from `draws` (symmetric n x n uniform variates). Entry
/// (i, j) flips iff u(i, j) < flip_rate.
Tensor perturb_with_draws(const Tensor& adjacency, const Tensor& draws, double flip_rate);

/// As above with draws generated from the seed (fixed i < j order).
Tensor perturb(const Tensor& adjacency, std::uint64_t seed, double flip_rate);

Tensor pair_draws(std::size_t n, std::uint64_t seed);

struct SeriesParams {
  double t_end = 5.0;
  std::size_t num_times = 120;
  std::size_t num_changes = 12;
  double flip_rate = 0.01;
  GraphParams graph;
};

/// Builds a dynamic series: sorted uniform times on [0, t_end], change
/// indices sampled without replacement from 1..num_times-1, piecewise
/// constant topology perturbed at each change, and splits in the
/// 80/20/20-of-120 proportion (the extrapolation block is the final sixth of
/// the indices, the interpolation block a random sixth of the rest).
DynamicGraphSeries build_series(GraphKind kind, std::size_t n, std::uint64_t seed,
                                const SeriesParams& params = {});

}  // namespace pengcde
