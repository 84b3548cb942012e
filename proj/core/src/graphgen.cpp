#include "pengcde/graphgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "pengcde/rng.hpp"

namespace pengcde {

GraphKind graph_kind_from_string(const std::string& name) {
  if (name == "grid") return GraphKind::Grid;
  if (name == "small-world" || name == "smallworld") return GraphKind::SmallWorld;
  if (name == "power-law" || name == "powerlaw") return GraphKind::PowerLaw;
  if (name == "community") return GraphKind::Community;
  throw std::invalid_argument("unknown graph kind: " + name);
}

std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::Grid: return "grid";
    case GraphKind::SmallWorld: return "small-world";
    case GraphKind::PowerLaw: return "power-law";
    case GraphKind::Community: return "community";
  }
  return "?";
}

namespace {

void add_edge(Tensor& a, std::size_t i, std::size_t j) {
  if (i == j) return;
  a.at(i, j) = 1.0;
  a.at(j, i) = 1.0;
}

Tensor gen_grid(std::size_t n, const GraphParams& params) {
  std::size_t rows = params.grid_rows;
  if (rows == 0) {
    rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (rows > 1 && n % rows != 0) --rows;
  }
  if (rows == 0 || n % rows != 0) {
    throw std::invalid_argument("gen_graph(grid): n must factor as rows x cols");
  }
  const std::size_t cols = n / rows;
  Tensor a = Tensor::zeros({n, n});
  auto id = [cols](std::size_t r, std::size_t c) { return r * cols + c; };
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (c + 1 < cols) add_edge(a, id(r, c), id(r, c + 1));
      if (r + 1 < rows) add_edge(a, id(r, c), id(r + 1, c));
    }
  return a;
}

Tensor gen_small_world(std::size_t n, std::uint64_t seed, const GraphParams& params) {
  const std::size_t k = params.ws_degree;
  if (k % 2 != 0 || k == 0 || k >= n) {
    throw std::invalid_argument("gen_graph(small-world): ring degree must be even and < n");
  }
  if (params.ws_rewire < 0.0 || params.ws_rewire > 1.0) {
    throw std::invalid_argument("gen_graph(small-world): rewire probability outside [0, 1]");
  }
  Tensor a = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 1; d <= k / 2; ++d) add_edge(a, i, (i + d) % n);

  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  // Watts-Strogatz pass: each lattice edge (i, i+d) may be rewired to a
  // uniformly chosen endpoint, avoiding loops and duplicates.
  for (std::size_t d = 1; d <= k / 2; ++d)
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + d) % n;
      if (u01(rng) >= params.ws_rewire) continue;
      std::size_t target = pick(rng);
      std::size_t guard = 0;
      while ((target == i || a.at(i, target) != 0.0) && guard++ < 4 * n) target = pick(rng);
      if (target == i || a.at(i, target) != 0.0) continue;  // saturated node
      a.at(i, j) = a.at(j, i) = 0.0;
      add_edge(a, i, target);
    }
  return a;
}

Tensor gen_power_law(std::size_t n, std::uint64_t seed, const GraphParams& params) {
  const std::size_t m = params.ba_attach;
  if (m < 1 || m >= n) {
    throw std::invalid_argument("gen_graph(power-law): attachment count must be in [1, n)");
  }
  Tensor a = Tensor::zeros({n, n});
  auto rng = make_rng(seed);
  // Barabasi-Albert preferential attachment, seeded with a small clique.
  std::vector<std::size_t> endpoint_pool;
  const std::size_t seed_nodes = m + 1;
  for (std::size_t i = 0; i < seed_nodes; ++i)
    for (std::size_t j = i + 1; j < seed_nodes; ++j) {
      add_edge(a, i, j);
      endpoint_pool.push_back(i);
      endpoint_pool.push_back(j);
    }
  for (std::size_t v = seed_nodes; v < n; ++v) {
    std::vector<std::size_t> targets;
    std::size_t guard = 0;
    while (targets.size() < m && guard++ < 64 * m) {
      std::uniform_int_distribution<std::size_t> pick(0, endpoint_pool.size() - 1);
      const std::size_t t = endpoint_pool[pick(rng)];
      if (t != v && std::find(targets.begin(), targets.end(), t) == targets.end()) {
        targets.push_back(t);
      }
    }
    for (std::size_t t : targets) {
      add_edge(a, v, t);
      endpoint_pool.push_back(v);
      endpoint_pool.push_back(t);
    }
  }
  return a;
}

Tensor gen_community(std::size_t n, std::uint64_t seed, const GraphParams& params) {
  const std::size_t b = params.sbm_blocks;
  if (b < 1 || b > n) throw std::invalid_argument("gen_graph(community): bad block count");
  if (!(params.sbm_p_in > params.sbm_p_out) || params.sbm_p_in > 1.0 || params.sbm_p_out < 0.0) {
    throw std::invalid_argument("gen_graph(community): need 0 <= p_out < p_in <= 1");
  }
  // Equal-size blocks, remainder spread over the first blocks.
  std::vector<std::size_t> block(n);
  const std::size_t base = n / b, extra = n % b;
  std::size_t node = 0;
  for (std::size_t g = 0; g < b; ++g) {
    const std::size_t sz = base + (g < extra ? 1 : 0);
    for (std::size_t i = 0; i < sz; ++i) block[node++] = g;
  }
  Tensor a = Tensor::zeros({n, n});
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = block[i] == block[j] ? params.sbm_p_in : params.sbm_p_out;
      if (u01(rng) < p) add_edge(a, i, j);
    }
  return a;
}

}  // namespace

Tensor gen_graph(GraphKind kind, std::size_t n, std::uint64_t seed, const GraphParams& params) {
  if (n < 2) throw std::invalid_argument("gen_graph: need n >= 2 nodes");
  switch (kind) {
    case GraphKind::Grid: return gen_grid(n, params);
    case GraphKind::SmallWorld: return gen_small_world(n, seed, params);
    case GraphKind::PowerLaw: return gen_power_law(n, seed, params);
    case GraphKind::Community: return gen_community(n, seed, params);
  }
  throw std::invalid_argument("gen_graph: unknown kind");
}

Tensor pair_draws(std::size_t n, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Tensor draws = Tensor::ones({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double u = u01(rng);
      draws.at(i, j) = u;
      draws.at(j, i) = u;
    }
  return draws;
}

Tensor perturb_with_draws(const Tensor& adjacency, const Tensor& draws, double flip_rate) {
  if (!(flip_rate > 0.0 && flip_rate < 1.0)) {
    throw std::invalid_argument("perturb: flip rate must lie in (0, 1)");
  }
  if (!adjacency.same_shape(draws)) {
    throw std::invalid_argument("perturb: draws shape mismatch");
  }
  const std::size_t n = adjacency.dim(0);
  Tensor out = adjacency.clone();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (draws.at(i, j) < flip_rate) {
        const double v = out.at(i, j) == 0.0 ? 1.0 : 0.0;
        out.at(i, j) = v;
        out.at(j, i) = v;
      }
    }
  return out;
}

Tensor perturb(const Tensor& adjacency, std::uint64_t seed, double flip_rate) {
  return perturb_with_draws(adjacency, pair_draws(adjacency.dim(0), seed), flip_rate);
}

DynamicGraphSeries build_series(GraphKind kind, std::size_t n, std::uint64_t seed,
                                const SeriesParams& params) {
  if (params.num_times < 6) throw std::invalid_argument("build_series: too few snapshots");
  if (params.num_changes >= params.num_times) {
    throw std::invalid_argument("build_series: num_changes must be < num_times");
  }

  DynamicGraphSeries s;
  s.meta.kind = to_string(kind);
  s.meta.seed = seed;
  s.meta.params["t_end"] = params.t_end;
  s.meta.params["num_times"] = static_cast<double>(params.num_times);
  s.meta.params["num_changes"] = static_cast<double>(params.num_changes);
  s.meta.params["flip_rate"] = params.flip_rate;

  auto rng = make_rng(derive_seed(seed, "series-times"));
  std::uniform_real_distribution<double> ut(0.0, params.t_end);
  s.times.resize(params.num_times);
  for (double& t : s.times) t = ut(rng);
  std::sort(s.times.begin(), s.times.end());
  for (std::size_t k = 1; k < s.times.size(); ++k) {
    if (s.times[k] <= s.times[k - 1]) {
      s.times[k] = std::nextafter(s.times[k - 1], params.t_end * 2.0);
    }
  }

  // Change indices: uniform without replacement from 1..num_times-1
  // (a change never coincides with the first snapshot).
  std::vector<std::size_t> candidates(params.num_times - 1);
  std::iota(candidates.begin(), candidates.end(), 1);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  s.change_indices.assign(candidates.begin(),
                          candidates.begin() + static_cast<std::ptrdiff_t>(params.num_changes));
  std::sort(s.change_indices.begin(), s.change_indices.end());

  Tensor a = gen_graph(kind, n, derive_seed(seed, "series-graph"), params.graph);
  s.adjacency.reserve(params.num_times);
  std::size_t next_change = 0;
  for (std::size_t k = 0; k < params.num_times; ++k) {
    if (next_change < s.change_indices.size() && s.change_indices[next_change] == k) {
      a = perturb(a, derive_seed(seed, "series-change", k), params.flip_rate);
      ++next_change;
    }
    s.adjacency.push_back(a);
  }

  // Splits in the 80/20/20-of-120 proportion: the final sixth extrapolates,
  // a random sixth of the remainder validates interpolation.
  const std::size_t n_extrap = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(params.num_times) / 6.0)));
  const std::size_t n_interp = n_extrap;
  const std::size_t head = params.num_times - n_extrap;
  if (n_interp >= head) throw std::invalid_argument("build_series: degenerate split counts");

  for (std::size_t k = head; k < params.num_times; ++k) s.split.extrap_val.push_back(k);
  std::vector<std::size_t> pool(head);
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng);
  s.split.interp_val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_interp));
  std::sort(s.split.interp_val.begin(), s.split.interp_val.end());
  std::vector<char> is_interp(head, 0);
  for (std::size_t k : s.split.interp_val) is_interp[k] = 1;
  for (std::size_t k = 0; k < head; ++k) {
    if (!is_interp[k]) s.split.train.push_back(k);
  }
  return s;
}

}  // namespace pengcde
