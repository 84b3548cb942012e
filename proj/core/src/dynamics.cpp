#include "pengcde/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "pengcde/rng.hpp"

namespace pengcde {

SystemKind system_kind_from_string(const std::string& name) {
  if (name == "heat") return SystemKind::Heat;
  if (name == "gene") return SystemKind::Gene;
  if (name == "wealth") return SystemKind::Wealth;
  if (name == "opinion") return SystemKind::Opinion;
  if (name == "sir") return SystemKind::Sir;
  throw std::invalid_argument("unknown dynamical system: " + name);
}

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::Heat: return "heat";
    case SystemKind::Gene: return "gene";
    case SystemKind::Wealth: return "wealth";
    case SystemKind::Opinion: return "opinion";
    case SystemKind::Sir: return "sir";
  }
  return "?";
}

SystemSpec default_system(SystemKind kind, std::size_t n, std::uint64_t seed) {
  SystemSpec spec;
  spec.kind = kind;
  if (kind == SystemKind::Wealth) {
    auto rng = make_rng(derive_seed(seed, "wealth-savings"));
    std::uniform_real_distribution<double> u(0.0, 0.1);
    spec.wealth_savings = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) spec.wealth_savings.at(i) = u(rng);
  }
  return spec;
}

Tensor sample_x0(const SystemSpec& spec, std::size_t n, std::uint64_t seed) {
  auto rng = make_rng(derive_seed(seed, "x0"));
  if (spec.kind == SystemKind::Sir) {
    Tensor x = Tensor::zeros({n, 3});
    const std::size_t infected = std::max<std::size_t>(1, n / 20);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> is_infected(n, 0);
    for (std::size_t i = 0; i < infected; ++i) is_infected[order[i]] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      x.at(i, 0) = is_infected[i] ? 0.0 : 1.0;  // S
      x.at(i, 1) = is_infected[i] ? 1.0 : 0.0;  // I
      x.at(i, 2) = 0.0;                         // R
    }
    return x;
  }
  Tensor x = Tensor::zeros({n, 1});
  if (spec.kind == SystemKind::Opinion) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) x.at(i, 0) = u(rng);
  } else {
    // Unit scale keeps the targets inside the reach of the tanh-bounded
    // vector fields at the reference learning rate and epoch budgets.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) x.at(i, 0) = u(rng);
  }
  return x;
}

Tensor rhs(const SystemSpec& spec, const Tensor& adjacency, const Tensor& state,
           std::size_t* clamp_warnings) {
  const std::size_t n = adjacency.dim(0);
  if (state.dim(0) != n || state.dim(1) != spec.channels()) {
    throw std::invalid_argument("rhs: state shape mismatch");
  }
  Tensor out = Tensor::zeros(state.shape());

  switch (spec.kind) {
    case SystemKind::Heat: {
      // Diffusive exchange scaled by sqrt degrees; isolated nodes contribute
      // nothing (x / sqrt(d) taken as 0 when d = 0).
      std::vector<double> scaled(n, 0.0);
      for (std::size_t u = 0; u < n; ++u) {
        double d = 0.0;
        for (std::size_t v = 0; v < n; ++v) d += adjacency.at(u, v);
        scaled[u] = d > 0.0 ? state.at(u, 0) / std::sqrt(d) : 0.0;
      }
      for (std::size_t u = 0; u < n; ++u) {
        double acc = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
          if (adjacency.at(u, v) != 0.0) acc += scaled[v] - scaled[u];
        }
        out.at(u, 0) = acc;
      }
      break;
    }
    case SystemKind::Gene: {
      for (std::size_t u = 0; u < n; ++u) {
        double acc = -state.at(u, 0) * spec.gene_degradation;
        for (std::size_t v = 0; v < n; ++v) {
          if (adjacency.at(u, v) != 0.0) {
            const double xv = state.at(v, 0);
            acc += xv / (xv + 1.0);
          }
        }
        out.at(u, 0) = acc;
      }
      break;
    }
    case SystemKind::Wealth: {
      if (!spec.wealth_savings.defined() || spec.wealth_savings.size() != n) {
        throw std::invalid_argument("rhs(wealth): per-node savings not sampled");
      }
      for (std::size_t u = 0; u < n; ++u) {
        const double xu = state.at(u, 0);
        double clamped = xu;
        if (clamped < 0.0) {
          clamped = 0.0;
          if (clamp_warnings) ++*clamp_warnings;
        }
        double acc = spec.wealth_savings.at(u) * std::pow(clamped, 0.6) + spec.wealth_delta * xu;
        for (std::size_t v = 0; v < n; ++v) {
          if (adjacency.at(u, v) != 0.0) acc += state.at(v, 0) - xu;
        }
        out.at(u, 0) = acc;
      }
      break;
    }
    case SystemKind::Opinion: {
      for (std::size_t u = 0; u < n; ++u) {
        double neighbor_sum = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
          if (adjacency.at(u, v) != 0.0) neighbor_sum += state.at(v, 0);
        }
        const double drive = neighbor_sum >= spec.opinion_threshold ? 1.0 : 0.0;
        out.at(u, 0) = -state.at(u, 0) + drive;
      }
      break;
    }
    case SystemKind::Sir: {
      for (std::size_t v = 0; v < n; ++v) {
        double infected_neighbors = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
          if (adjacency.at(v, u) != 0.0) infected_neighbors += state.at(u, 1);
        }
        const double s = state.at(v, 0), i = state.at(v, 1);
        const double new_infections = spec.sir_beta * s * infected_neighbors;
        const double recoveries = spec.sir_gamma * i;
        out.at(v, 0) = -new_infections;
        out.at(v, 1) = new_infections - recoveries;
        out.at(v, 2) = recoveries;
      }
      break;
    }
  }
  return out;
}

namespace {

void rk4_substeps(const SystemSpec& spec, const Tensor& adjacency, Tensor& x, double t0,
                  double t1, const SimulateOptions& options, std::size_t* clamps) {
  const double span = t1 - t0;
  if (span <= 0.0) return;
  const std::size_t steps =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / options.max_substep)));
  const double h = span / static_cast<double>(steps);
  const std::size_t sz = x.size();
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor k1 = rhs(spec, adjacency, x, clamps);
    Tensor y = x.clone();
    for (std::size_t i = 0; i < sz; ++i) y.data()[i] = x.data()[i] + 0.5 * h * k1.data()[i];
    Tensor k2 = rhs(spec, adjacency, y, clamps);
    for (std::size_t i = 0; i < sz; ++i) y.data()[i] = x.data()[i] + 0.5 * h * k2.data()[i];
    Tensor k3 = rhs(spec, adjacency, y, clamps);
    for (std::size_t i = 0; i < sz; ++i) y.data()[i] = x.data()[i] + h * k3.data()[i];
    Tensor k4 = rhs(spec, adjacency, y, clamps);
    for (std::size_t i = 0; i < sz; ++i) {
      x.data()[i] += h / 6.0 *
                     (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]);
    }
    for (std::size_t i = 0; i < sz; ++i) {
      if (!(std::abs(x.data()[i]) <= options.blowup_threshold)) {
        throw NonFiniteError("simulate: state exceeded " +
                             std::to_string(options.blowup_threshold) + " near t=" +
                             std::to_string(t0 + static_cast<double>(s + 1) * h));
      }
    }
  }
}

}  // namespace

std::vector<Tensor> simulate(const SystemSpec& spec, const DynamicGraphSeries& series,
                             const Tensor& x0, const SimulateOptions& options) {
  if (series.times.empty()) throw std::invalid_argument("simulate: empty series");
  if (x0.dim(0) != series.num_nodes() || x0.dim(1) != spec.channels()) {
    throw std::invalid_argument("simulate: x0 shape mismatch");
  }
  std::size_t clamps = 0;
  std::vector<Tensor> snapshots;
  snapshots.reserve(series.times.size());
  Tensor x = x0.clone();
  snapshots.push_back(x.clone());
  for (std::size_t k = 0; k + 1 < series.times.size(); ++k) {
    // The topology recorded at snapshot k holds on [t_k, t_{k+1}).
    rk4_substeps(spec, series.adjacency[k], x, series.times[k], series.times[k + 1], options,
                 &clamps);
    snapshots.push_back(x.clone());
  }
  return snapshots;
}

std::vector<double> gamma_times(std::size_t n_times, double shape, double t_end,
                                std::uint64_t seed) {
  if (n_times < 2) throw std::invalid_argument("gamma_times: need at least 2 times");
  if (!(shape > 0.0) || !(t_end > 0.0)) {
    throw std::invalid_argument("gamma_times: shape and span must be positive");
  }
  auto rng = make_rng(derive_seed(seed, "gamma-times"));
  std::gamma_distribution<double> gamma(shape, 1.0);
  std::vector<double> inc(n_times - 1);
  double total = 0.0;
  for (double& d : inc) {
    d = gamma(rng);
    while (d <= 0.0) d = gamma(rng);
    total += d;
  }
  std::vector<double> times(n_times);
  times[0] = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < n_times; ++k) {
    acc += inc[k];
    times[k + 1] = t_end * (acc / total);
  }
  times.back() = t_end;
  return times;
}

SirOutcome sir_label(const SystemSpec& spec) {
  if (spec.kind != SystemKind::Sir) throw std::invalid_argument("sir_label: not a sir system");
  return spec.sir_beta >= spec.sir_gamma ? SirOutcome::Outbreak : SirOutcome::DieOut;
}

}  // namespace pengcde
