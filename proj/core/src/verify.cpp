#include "pengcde/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "pengcde/dynamics.hpp"
#include "pengcde/equivariant.hpp"
#include "pengcde/graphgen.hpp"
#include "pengcde/rng.hpp"
#include "pengcde/solver.hpp"
#include "pengcde/trainer.hpp"

namespace pengcde {

namespace {

CheckItem item_lt(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, true, value < threshold};
}

CheckItem item_gt(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, false, value > threshold};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

/// Heat-driven test series with features, shared by several suites.
DynamicGraphSeries make_test_series(std::size_t n, std::size_t num_times, std::uint64_t seed,
                                    GraphKind kind = GraphKind::SmallWorld) {
  SeriesParams sp;
  sp.t_end = 1.0;
  sp.num_times = num_times;
  sp.num_changes = std::max<std::size_t>(1, num_times / 6);
  sp.flip_rate = 0.05;
  sp.graph.ws_degree = 4;
  DynamicGraphSeries series = build_series(kind, n, seed, sp);
  SystemSpec spec = default_system(SystemKind::Heat, n, seed);
  series.features = simulate(spec, series, sample_x0(spec, n, seed));
  series.meta.task = "heat";
  return series;
}

DynamicGraphSeries conjugate_series(const Permutation& p, const DynamicGraphSeries& src) {
  DynamicGraphSeries out = src;
  out.adjacency.clear();
  for (const Tensor& a : src.adjacency) out.adjacency.push_back(conjugate(p, a));
  out.features.clear();
  for (const Tensor& x : src.features) out.features.push_back(permute_rows(p, x));
  return out;
}

/// Randomized equivariant fusion so the forward test does not sit at the
/// identity initialization.
void randomize_fusion(ModelParams& params, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto* set : {&params.fusion_a, &params.fusion_da}) {
    for (Tensor& w : *set) {
      for (std::size_t k = 0; k < w.size(); ++k) w.data()[k] += u(rng);
    }
  }
}

double forward_equivariance_gap(const ModelParams& params, const DynamicGraphSeries& series,
                                std::size_t permutations, std::uint64_t seed) {
  ControlPaths paths = build_paths(series, params.variant == Variant::PengFeatures);
  // Save times on the uniform 128-step grid.
  const double t0 = series.times.front(), t1 = series.times.back();
  std::vector<double> save;
  for (std::size_t k = 1; k <= 4; ++k) {
    save.push_back(t0 + (t1 - t0) * static_cast<double>(k) / 4.0);
  }
  ForwardResult base =
      forward(params, paths, save, SolverConfig{SolverMethod::RK4, 0, 0, 0, 128});
  double worst = 0.0;
  for (std::size_t r = 0; r < permutations; ++r) {
    const Permutation p = Permutation::random(series.num_nodes(), derive_seed(seed, "perm", r));
    DynamicGraphSeries permuted = conjugate_series(p, series);
    ControlPaths ppaths = build_paths(permuted, params.variant == Variant::PengFeatures);
    ForwardResult got =
        forward(params, ppaths, save, SolverConfig{SolverMethod::RK4, 0, 0, 0, 128});
    for (std::size_t k = 0; k < got.predictions.size(); ++k) {
      worst = std::max(worst,
                       max_abs_diff(got.predictions[k], permute_rows(p, base.predictions[k])));
    }
  }
  return worst;
}

}  // namespace

std::string format_report(const CheckReport& report) {
  std::ostringstream os;
  for (const CheckItem& item : report.items) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "[%s] %-48s %.3e %s %.3e\n", item.pass ? "PASS" : "FAIL",
                  item.name.c_str(), item.value, item.less_than ? "<" : ">", item.threshold);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Equivariance
// ---------------------------------------------------------------------------

CheckReport check_equivariance(std::uint64_t seed) {
  CheckReport report;
  report.suite = "equivariance";

  // Exhaustive: every basis map, every permutation of S2..S4, integer input,
  // exact equality.
  double basis_worst = 0.0;
  for (std::size_t n : {2u, 3u, 4u}) {
    Tensor a = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = static_cast<double>((7 * i) % 23);
    for (const Permutation& p : all_permutations(n)) {
      const Tensor pap = conjugate(p, a);
      for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
        basis_worst =
            std::max(basis_worst, max_abs_diff(basis_apply(k, pap), conjugate(p, basis_apply(k, a))));
      }
    }
  }
  CheckItem exhaustive = item_lt("basis maps exhaustive S2..S4 (exact)", basis_worst, 1e-300);
  exhaustive.pass = basis_worst == 0.0;
  report.items.push_back(exhaustive);

  const DynamicGraphSeries series = make_test_series(8, 10, derive_seed(seed, "equiv-series"));

  {
    ModelParams peng = init_params(Variant::Peng, 8, 8, 0, 1, 2, derive_seed(seed, "pm"));
    randomize_fusion(peng, derive_seed(seed, "pf"));
    report.items.push_back(item_lt("peng forward equivariance (20 perms)",
                                   forward_equivariance_gap(peng, series, 20, seed), 1e-9));
  }
  {
    ModelParams feats =
        init_params(Variant::PengFeatures, 8, 8, 1, 1, 2, derive_seed(seed, "fm"));
    randomize_fusion(feats, derive_seed(seed, "ff"));
    report.items.push_back(item_lt("peng-features forward equivariance",
                                   forward_equivariance_gap(feats, series, 6, seed), 1e-9));
  }
  {
    ModelParams orig = init_params(Variant::Original, 8, 8, 0, 1, 2, derive_seed(seed, "om"));
    report.items.push_back(item_lt("original forward equivariance",
                                   forward_equivariance_gap(orig, series, 6, seed), 1e-9));
  }
  {
    ModelParams adj = init_params(Variant::Adjacency, 8, 8, 0, 1, 2, derive_seed(seed, "am"));
    report.items.push_back(item_lt("adjacency forward equivariance",
                                   forward_equivariance_gap(adj, series, 6, seed), 1e-9));
  }
  {
    ModelParams pre = init_params(Variant::PreMult, 8, 8, 0, 1, 2, derive_seed(seed, "xm"));
    report.items.push_back(item_gt("premult forward breaks equivariance",
                                   forward_equivariance_gap(pre, series, 20, seed), 1e-3));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Time warp
// ---------------------------------------------------------------------------

CubicWarp::CubicWarp(double t0, double t1, double strength, double center)
    : t0_(t0), t1_(t1), a_(strength), c_(center) {
  // w'(x) = 1 + a (3x^2 - 2(1+c)x + c) stays positive for moderate strength.
  for (double x = 0.0; x <= 1.0; x += 1.0 / 512.0) {
    if (deriv(t0_ + (t1_ - t0_) * x) <= 0.0) {
      throw std::invalid_argument("CubicWarp: not strictly monotone at this strength");
    }
  }
}

double CubicWarp::operator()(double t) const {
  const double x = (t - t0_) / (t1_ - t0_);
  const double w = x + a_ * x * (1.0 - x) * (x - c_);
  return t0_ + (t1_ - t0_) * w;
}

double CubicWarp::deriv(double t) const {
  // w(x) = x + a(-x^3 + (1+c)x^2 - cx)
  const double x = (t - t0_) / (t1_ - t0_);
  return 1.0 + a_ * (-3.0 * x * x + 2.0 * (1.0 + c_) * x - c_);
}

double CubicWarp::inverse(double target) const {
  double lo = t0_, hi = t1_;
  double x = target;
  for (int it = 0; it < 200; ++it) {
    const double f = (*this)(x)-target;
    if (std::abs(f) < 1e-15 * std::max(1.0, std::abs(target))) break;
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double d = deriv(x);
    double next = x - f / d;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

CheckReport check_timewarp(std::uint64_t seed) {
  CheckReport report;
  report.suite = "timewarp";
  const std::size_t n = 8;
  const DynamicGraphSeries series = make_test_series(n, 9, derive_seed(seed, "warp-series"));
  const double t0 = series.times.front(), t1 = series.times.back();
  const CubicWarp warp(t0, t1);

  const std::size_t steps = 384;
  std::vector<double> t_grid(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    t_grid[k] = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(steps);
  }
  t_grid.back() = t1;
  std::vector<double> s_grid(t_grid.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) s_grid[k] = warp.inverse(t_grid[k]);
  s_grid.front() = t0;
  s_grid.back() = t1;

  auto run_variant = [&](Variant variant, std::uint64_t mseed) {
    ModelParams params = init_params(variant, n, 8, variant == Variant::PengFeatures ? 1 : 0, 1,
                                     2, mseed);
    randomize_fusion(params, derive_seed(mseed, "rf"));
    ControlPaths paths = build_paths(series, variant == Variant::PengFeatures);
    Tensor z0 = init_state(params, paths, t0);

    VectorField plain = [&](double t, const Tensor& z) {
      return vector_field(params, t, z, paths);
    };
    LatentPath base = rk4_solve_grid(plain, z0, t_grid, t_grid);

    // Warped coordinates: path channels are composed with tau; the
    // multiplicative control derivative picks up tau'.
    VectorField warped = [&](double s, const Tensor& z) {
      const double t = std::clamp(warp(s), t0, t1);
      const Tensor a = paths.a_path.eval(t);
      const Tensor da = paths.a_path.deriv(t);
      if (variant == Variant::PengFeatures) {
        Tensor dx = paths.x_path->deriv(t);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] *= warp.deriv(s);
        return vector_field_values(params, z, a, da, &dx);
      }
      return scale(vector_field_values(params, z, a, da, nullptr), warp.deriv(s));
    };
    LatentPath warped_path = rk4_solve_grid(warped, z0, s_grid, s_grid);

    double worst = 0.0;
    for (std::size_t k = 0; k < base.states.size(); ++k) {
      worst = std::max(worst, max_abs_diff(readout(params, warped_path.states[k]),
                                           readout(params, base.states[k])));
    }
    return worst;
  };

  report.items.push_back(
      item_lt("peng warped vs unwarped outputs", run_variant(Variant::Peng, seed + 1), 1e-6));
  report.items.push_back(item_lt("peng-features warped vs unwarped outputs",
                                 run_variant(Variant::PengFeatures, seed + 2), 1e-6));
  return report;
}

// ---------------------------------------------------------------------------
// Projection / linear-case optimality
// ---------------------------------------------------------------------------

CheckReport check_projection(std::uint64_t seed) {
  CheckReport report;
  report.suite = "projection";
  const std::size_t n = 4;

  {
    const std::size_t rank4 = basis_rank(4);
    const std::size_t rank3 = basis_rank(3);
    CheckItem full("basis rank at n=4 equals 15", static_cast<double>(rank4), 15.0, true,
                   rank4 == 15);
    report.items.push_back(full);
    report.items.push_back(item_lt("basis rank at n=3 deficient", static_cast<double>(rank3),
                                   15.0));
  }

  const Tensor m = random_matrix(n * n, n * n, derive_seed(seed, "proj-m"));
  const Tensor pm = project_group_average(m, n);
  report.items.push_back(item_lt("projection idempotent",
                                 max_abs_diff(project_group_average(pm, n), pm), 1e-12));
  {
    // A random combination of basis maps is already equivariant.
    Tensor combo = Tensor::zeros({n * n, n * n});
    auto rng = make_rng(derive_seed(seed, "proj-combo"));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
      const Tensor b = materialize_basis(k, n);
      const double c = u(rng);
      for (std::size_t i = 0; i < combo.size(); ++i) combo.data()[i] += c * b.data()[i];
    }
    report.items.push_back(item_lt("projection fixes equivariant maps",
                                   max_abs_diff(project_group_average(combo, n), combo), 1e-12));
  }
  {
    // Conjugating before projecting changes nothing.
    const Permutation p = Permutation::random(n, derive_seed(seed, "proj-p"));
    Tensor conj_m = Tensor::zeros({n * n, n * n});
    std::vector<std::size_t> pi(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pi[i * n + j] = p(i) * n + p(j);
    for (std::size_t r = 0; r < n * n; ++r)
      for (std::size_t c = 0; c < n * n; ++c) conj_m.at(r, c) = m.at(pi[r], pi[c]);
    report.items.push_back(item_lt(
        "projection commutes with conjugation",
        max_abs_diff(project_group_average(conj_m, n), pm), 1e-12));
  }

  // Linear case: one convolution, identity activation. The Haar average of
  // the premultiplication field equals the equivariant model whose fusion
  // weights are the least-squares decomposition of the projected fusion maps.
  const std::size_t dz = 3;
  ModelParams pre = init_params(Variant::PreMult, n, dz, 0, 1, 1, derive_seed(seed, "lin-pre"));
  pre.use_layer_norm = false;
  pre.activation = Activation::Identity;

  LsqDecomposition d1 = lsq_decompose(
      project_group_average(materialize_premult(pre.premult_w1), n), n);
  LsqDecomposition d2 = lsq_decompose(
      project_group_average(materialize_premult(pre.premult_w2), n), n);
  report.items.push_back(item_lt("averaged fusion in 15-map span (A)", d1.residual, 1e-10));
  report.items.push_back(item_lt("averaged fusion in 15-map span (dA)", d2.residual, 1e-10));

  ModelParams peng = pre;
  peng.variant = Variant::Peng;
  peng.premult_w1 = Tensor();
  peng.premult_w2 = Tensor();
  peng.fusion_a = {d1.weights};
  peng.fusion_da = {d2.weights};

  // Shared random path of symmetric snapshots and shared initial state.
  std::vector<double> knots = {0.0, 0.23, 0.51, 0.74, 1.0};
  std::vector<Tensor> snaps;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    Tensor s = random_matrix(n, n, derive_seed(seed, "lin-snap", k), 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      s.at(i, i) = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) s.at(j, i) = s.at(i, j);
    }
    snaps.push_back(std::move(s));
  }
  CubicPath a_path = CubicPath::fit(knots, snaps);
  const Tensor z0 = random_matrix(n, dz, derive_seed(seed, "lin-z0"));
  const auto perms = all_permutations(n);

  VectorField averaged = [&](double t, const Tensor& z) {
    const Tensor a = a_path.eval(t);
    const Tensor da = a_path.deriv(t);
    Tensor acc = Tensor::zeros({n, dz});
    for (const Permutation& p : perms) {
      const Tensor out = vector_field_values(pre, permute_rows(p, z), conjugate(p, a),
                                             conjugate(p, da), nullptr);
      const Tensor back = permute_rows(p.inverse(), out);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += back.data()[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      acc.data()[i] /= static_cast<double>(perms.size());
    }
    return acc;
  };
  VectorField equivariant_field = [&](double t, const Tensor& z) {
    return vector_field_values(peng, z, a_path.eval(t), a_path.deriv(t), nullptr);
  };
  std::vector<double> save = {0.25, 0.5, 0.75, 1.0};
  LatentPath flow_avg = rk4_solve(averaged, z0, 0.0, 1.0, 128, save);
  LatentPath flow_eq = rk4_solve(equivariant_field, z0, 0.0, 1.0, 128, save);
  double worst = 0.0;
  for (std::size_t k = 0; k < save.size(); ++k) {
    worst = std::max(worst, max_abs_diff(flow_avg.states[k], flow_eq.states[k]));
  }
  report.items.push_back(item_lt("averaged flow equals decomposed flow", worst, 1e-10));
  return report;
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

namespace {

double gradcheck_variant(Variant variant, std::uint64_t seed) {
  const std::size_t n = 6;
  // Four snapshots at thirds so three uniform RK4 steps land on them; the
  // topology flips once so the control derivative is non-trivial. A sparse
  // grid graph and half-scale weights keep the higher derivatives mild
  // enough for the h = 1e-5 central-difference oracle.
  DynamicGraphSeries series;
  series.times = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  Tensor a0 = gen_graph(GraphKind::Grid, n, derive_seed(seed, "gc-graph"));
  Tensor a1 = perturb(a0, derive_seed(seed, "gc-flip"), 0.1);
  series.adjacency = {a0, a0, a1, a1};
  series.change_indices = {2};
  SystemSpec spec = default_system(SystemKind::Heat, n, seed);
  series.features = simulate(spec, series, sample_x0(spec, n, seed));

  ModelParams params = init_params(variant, n, 4, variant == Variant::PengFeatures ? 1 : 0, 1, 2,
                                   derive_seed(seed, "gc-model"));
  for (Tensor& w : params.conv_w) {
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] *= 0.5;
  }
  for (std::size_t i = 0; i < params.init_w.size(); ++i) params.init_w.data()[i] *= 0.5;
  {
    auto rng = make_rng(derive_seed(seed, "gc-fuse"));
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (auto* set : {&params.fusion_a, &params.fusion_da}) {
      for (Tensor& w : *set) {
        for (std::size_t k = 0; k < w.size(); ++k) w.data()[k] += u(rng);
      }
    }
  }
  ControlPaths paths = build_paths(series, variant == Variant::PengFeatures);
  std::vector<std::size_t> mask = {1, 2, 3};

  auto build_loss = [&]() {
    Tensor z0 = init_state(params, paths, series.times.front());
    VectorField field = [&](double t, const Tensor& z) {
      return vector_field(params, t, z, paths);
    };
    LatentPath latent = rk4_solve(field, z0, 0.0, 1.0, 3, series.times);
    std::vector<Tensor> preds;
    preds.reserve(latent.states.size());
    for (const Tensor& z : latent.states) preds.push_back(readout(params, z));
    return masked_mse(preds, series.features, mask);
  };

  std::vector<NamedParam> named = collect_parameters(params);
  std::vector<Tensor*> tensors;
  for (const NamedParam& np : named) tensors.push_back(np.tensor);
  return gradcheck(build_loss, tensors, 1e-5).max_rel_error;
}

}  // namespace

CheckReport check_gradients(std::uint64_t seed) {
  CheckReport report;
  report.suite = "gradients";
  report.items.push_back(
      item_lt("peng forward+mse gradients vs central differences",
              gradcheck_variant(Variant::Peng, seed), 1e-4));
  report.items.push_back(
      item_lt("peng-features forward+mse gradients vs central differences",
              gradcheck_variant(Variant::PengFeatures, seed + 1), 1e-4));
  report.items.push_back(item_lt("premult forward+mse gradients vs central differences",
                                 gradcheck_variant(Variant::PreMult, seed + 2), 1e-4));
  return report;
}

// ---------------------------------------------------------------------------
// Solver order
// ---------------------------------------------------------------------------

CheckReport check_solver_order() {
  CheckReport report;
  report.suite = "solver-order";

  VectorField decay = [](double, const Tensor& z) { return scale(z, -1.0); };
  const Tensor one = Tensor::ones({1, 1});

  {
    LatentPath path = tsit5_solve(decay, one, 0.0, 1.0, {1.0}, 1e-8, 1e-8, 0.0);
    const double err = std::abs(path.states.back().value() - std::exp(-1.0)) / std::exp(-1.0);
    report.items.push_back(item_lt("tsit5 exp decay relative error @1e-8", err, 1e-8));
  }
  {
    auto rk4_err = [&](std::size_t steps) {
      LatentPath path = rk4_solve(decay, one, 0.0, 1.0, steps, {1.0});
      return std::abs(path.states.back().value() - std::exp(-1.0));
    };
    const double e16 = rk4_err(16), e32 = rk4_err(32), e64 = rk4_err(64);
    const double slope1 = std::log2(e16 / e32);
    const double slope2 = std::log2(e32 / e64);
    CheckItem s1("rk4 convergence slope (16->32 steps)", slope1, 4.0, true,
                 slope1 > 3.8 && slope1 < 4.2);
    CheckItem s2("rk4 convergence slope (32->64 steps)", slope2, 4.0, true,
                 slope2 > 3.8 && slope2 < 4.2);
    report.items.push_back(s1);
    report.items.push_back(s2);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

CheckReport check_dynamics(std::uint64_t seed) {
  CheckReport report;
  report.suite = "dynamics";

  {
    // Per-node S+I+R stays constant along the whole trajectory.
    DynamicGraphSeries series = make_test_series(16, 12, derive_seed(seed, "sir-series"),
                                                 GraphKind::Grid);
    series.features.clear();
    SystemSpec spec = default_system(SystemKind::Sir, 16, seed);
    spec.sir_beta = 0.3;
    spec.sir_gamma = 0.3;
    const Tensor x0 = sample_x0(spec, 16, seed);
    const auto traj = simulate(spec, series, x0);
    double drift = 0.0;
    for (const Tensor& x : traj) {
      for (std::size_t i = 0; i < 16; ++i) {
        const double total0 = x0.at(i, 0) + x0.at(i, 1) + x0.at(i, 2);
        const double total = x.at(i, 0) + x.at(i, 1) + x.at(i, 2);
        drift = std::max(drift, std::abs(total - total0));
      }
    }
    report.items.push_back(item_lt("sir per-node S+I+R drift", drift, 1e-8));
  }
  {
    // Uniform temperatures on a regular graph are a fixed point, exactly.
    GraphParams gp;
    gp.ws_rewire = 0.0;
    const Tensor ring = gen_graph(GraphKind::SmallWorld, 12, 1, gp);
    SystemSpec spec = default_system(SystemKind::Heat, 12, seed);
    const Tensor uniform = Tensor::full({12, 1}, 3.5);
    const Tensor rate = rhs(spec, ring, uniform);
    double worst = 0.0;
    for (std::size_t i = 0; i < rate.size(); ++i) {
      worst = std::max(worst, std::abs(rate.data()[i]));
    }
    CheckItem fixed("heat uniform state fixed point on regular graph (exact)", worst, 1e-300,
                    true, worst == 0.0);
    report.items.push_back(fixed);
  }
  {
    // Simulation commutes with node relabelling.
    DynamicGraphSeries series = make_test_series(10, 8, derive_seed(seed, "cov-series"));
    series.features.clear();
    SystemSpec spec = default_system(SystemKind::Gene, 10, seed);
    const Tensor x0 = sample_x0(spec, 10, seed);
    const Permutation p = Permutation::random(10, derive_seed(seed, "cov-perm"));
    const auto base = simulate(spec, series, x0);
    const auto conjugated = simulate(spec, conjugate_series(p, series), permute_rows(p, x0));
    double worst = 0.0;
    for (std::size_t k = 0; k < base.size(); ++k) {
      worst = std::max(worst, max_abs_diff(conjugated[k], permute_rows(p, base[k])));
    }
    report.items.push_back(item_lt("simulate permutation covariance", worst, 1e-10));
  }
  return report;
}

CheckReport run_check(const std::string& which) {
  if (which == "equivariance") return check_equivariance();
  if (which == "timewarp") return check_timewarp();
  if (which == "projection") return check_projection();
  if (which == "gradients") return check_gradients();
  if (which == "solver-order") return check_solver_order();
  throw std::invalid_argument(
      "unknown check: " + which +
      " (expected equivariance|timewarp|projection|gradients|solver-order)");
}

// ---------------------------------------------------------------------------
// Scaling bench
// ---------------------------------------------------------------------------

namespace {

double time_epochs(ModelParams& model, const std::vector<DynamicGraphSeries>& batch,
                   const TrainConfig& config, std::size_t timed_epochs) {
  std::vector<NamedParam> params = collect_parameters(model);
  OptimState optim;
  std::vector<ControlPaths> paths;
  for (const DynamicGraphSeries& s : batch) paths.push_back(build_paths(s, false));

  auto epoch = [&]() {
    std::vector<Tensor> grads(params.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Tape tape;
      TapeScope scope(tape);
      for (const NamedParam& np : params) tape.watch(*np.tensor);
      const double t0 = paths[b].t_begin();
      Tensor z0 = init_state(model, paths[b], t0);
      VectorField field = [&](double t, const Tensor& z) {
        return vector_field(model, t, z, paths[b]);
      };
      LatentPath latent = rk4_solve_grid(
          field, z0, refine_grid(batch[b].times, config.grid_substeps), batch[b].times);
      std::vector<Tensor> preds;
      for (const Tensor& z : latent.states) preds.push_back(readout(model, z));
      Tensor loss = masked_mse(preds, batch[b].features, batch[b].split.train);
      auto g = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (auto it = g.find(params[i].tensor->node); it != g.end()) {
          accumulate_grad(grads[i], it->second);
        }
      }
    }
    adam_step(params, grads, optim, config.adam);
  };

  epoch();  // warmup
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t e = 0; e < timed_epochs; ++e) epoch();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() /
         static_cast<double>(timed_epochs);
}

}  // namespace

std::vector<ScalingPoint> scaling_bench(const std::vector<std::size_t>& sizes,
                                        std::uint64_t seed, std::size_t snapshots,
                                        std::size_t timed_epochs) {
  std::vector<ScalingPoint> points;
  for (std::size_t n : sizes) {
    SeriesParams sp;
    sp.t_end = 1.0;
    sp.num_times = snapshots;
    sp.num_changes = 2;
    sp.flip_rate = 0.005;
    DynamicGraphSeries series =
        build_series(GraphKind::Community, n, derive_seed(seed, "bench", n), sp);
    SystemSpec spec = default_system(SystemKind::Heat, n, seed);
    series.features = simulate(spec, series, sample_x0(spec, n, seed));
    std::vector<DynamicGraphSeries> batch = {std::move(series)};

    TrainConfig config;
    config.grid_substeps = 1;

    ScalingPoint point;
    point.nodes = n;
    {
      ModelParams peng = init_params(Variant::Peng, n, 16, 0, 1, 2, derive_seed(seed, "bp", n));
      point.peng_fusion_params = peng.fusion_parameter_count();
      point.peng_epoch_seconds = time_epochs(peng, batch, config, timed_epochs);
    }
    {
      ModelParams pre = init_params(Variant::PreMult, n, 16, 0, 1, 2, derive_seed(seed, "bx", n));
      point.premult_fusion_params = pre.fusion_parameter_count();
      point.premult_epoch_seconds = time_epochs(pre, batch, config, timed_epochs);
    }
    points.push_back(point);
  }
  return points;
}

std::string scaling_csv(const std::vector<ScalingPoint>& points) {
  std::ostringstream os;
  os << "nodes,peng_epoch_seconds,premult_epoch_seconds,peng_fusion_params,premult_fusion_params\n";
  for (const ScalingPoint& p : points) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%zu,%zu\n", p.nodes, p.peng_epoch_seconds,
                  p.premult_epoch_seconds, p.peng_fusion_params, p.premult_fusion_params);
    os << buf;
  }
  return os.str();
}

}  // namespace pengcde
