#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pengcde/dynamics.hpp"
#include "pengcde/equivariant.hpp"
#include "pengcde/graphgen.hpp"
#include "pengcde/model.hpp"
#include "pengcde/rng.hpp"
#include "pengcde/trainer.hpp"

using namespace pengcde;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

DynamicGraphSeries heat_series(std::size_t n, std::size_t num_times, std::uint64_t seed,
                               GraphKind kind = GraphKind::SmallWorld) {
  SeriesParams sp;
  sp.t_end = 1.0;
  sp.num_times = num_times;
  sp.num_changes = std::max<std::size_t>(1, num_times / 6);
  sp.flip_rate = 0.05;
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

}  // namespace

// ---------------------------------------------------------------------------
// initial state
// ---------------------------------------------------------------------------

TEST_CASE("initial state on the empty graph is zero") {
  DynamicGraphSeries series;
  series.times = {0.0, 0.5, 1.0};
  series.adjacency.assign(3, Tensor::zeros({5, 5}));
  ModelParams params = init_params(Variant::Peng, 5, 4, 0, 1, 2, 1);
  ControlPaths paths = build_paths(series, false);
  Tensor z0 = init_state(params, paths, 0.0);
  for (std::size_t i = 0; i < z0.size(); ++i) CHECK(z0.data()[i] == 0.0);
}

TEST_CASE("initial state is node-symmetric on the complete graph") {
  const std::size_t n = 6;
  Tensor complete = Tensor::ones({n, n});
  for (std::size_t i = 0; i < n; ++i) complete.at(i, i) = 0.0;
  DynamicGraphSeries series;
  series.times = {0.0, 1.0};
  series.adjacency.assign(2, complete);
  ModelParams params = init_params(Variant::Peng, n, 4, 0, 1, 2, 2);
  Tensor z0 = init_state(params, build_paths(series, false), 0.0);
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(z0.at(i, j) == doctest::Approx(z0.at(0, j)).epsilon(1e-14));
    }
}

TEST_CASE("initial state permutes with the graph") {
  DynamicGraphSeries series = heat_series(7, 6, 3);
  ModelParams params = init_params(Variant::Peng, 7, 4, 0, 1, 2, 3);
  const Permutation p = Permutation::random(7, 44);
  Tensor base = init_state(params, build_paths(series, false), series.times.front());
  DynamicGraphSeries permuted = conjugate_series(p, series);
  Tensor got = init_state(params, build_paths(permuted, false), series.times.front());
  CHECK(max_abs_diff(got, permute_rows(p, base)) < 1e-12);
}

// ---------------------------------------------------------------------------
// fields
// ---------------------------------------------------------------------------

TEST_CASE("constant field ignores time and state") {
  const std::size_t n = 5;
  DynamicGraphSeries series = heat_series(n, 6, 4);
  ModelParams params = init_params(Variant::Constant, n, 4, 0, 1, 2, 4);
  ControlPaths paths = build_paths(series, false);
  Tensor z1 = Tensor::zeros({n, 4});
  Tensor z2 = Tensor::full({n, 4}, 3.0);
  Tensor f1 = vector_field(params, series.times.front() + 0.01, z1, paths);
  Tensor f2 = vector_field(params, series.times.back() - 0.01, z2, paths);
  CHECK(max_abs_diff(f1, f2) == 0.0);
  CHECK(max_abs_diff(f1, params.const_field) == 0.0);
}

TEST_CASE("identity fusion coincides with the plain-sum variant") {
  const std::size_t n = 6;
  DynamicGraphSeries series = heat_series(n, 8, 5);
  // Same seed -> identical convolution, init, and readout weights.
  ModelParams original = init_params(Variant::Original, n, 4, 0, 1, 2, 99);
  ModelParams peng = init_params(Variant::Peng, n, 4, 0, 1, 2, 99);
  ControlPaths paths = build_paths(series, false);
  Tensor z = Tensor::full({n, 4}, 0.3);
  const double t = 0.5 * (series.times.front() + series.times.back());
  CHECK(max_abs_diff(vector_field(peng, t, z, paths),
                     vector_field(original, t, z, paths)) == 0.0);
}

TEST_CASE("equivariant field permutes exactly") {
  const std::size_t n = 6;
  DynamicGraphSeries series = heat_series(n, 8, 6);
  ModelParams params = init_params(Variant::Peng, n, 4, 0, 1, 2, 7);
  for (Tensor& w : params.fusion_a) w = Tensor::full({15}, 0.13);
  for (Tensor& w : params.fusion_da) w = Tensor::full({15}, -0.07);
  ControlPaths paths = build_paths(series, false);
  const Permutation p = Permutation::random(n, 8);
  DynamicGraphSeries permuted = conjugate_series(p, series);
  ControlPaths ppaths = build_paths(permuted, false);
  auto rng = make_rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor z = Tensor::zeros({n, 4});
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = u(rng);
  const double t = 0.4;
  Tensor base = vector_field(params, t, z, paths);
  Tensor got = vector_field(params, t, permute_rows(p, z), ppaths);
  CHECK(max_abs_diff(got, permute_rows(p, base)) < 1e-12);
}

TEST_CASE("snapshot model holds the field between observations") {
  const std::size_t n = 6;
  DynamicGraphSeries series = heat_series(n, 8, 10);
  ModelParams params = init_params(Variant::Gnode, n, 4, 0, 1, 2, 10);
  ControlPaths paths = build_paths(series, false);
  Tensor z = Tensor::full({n, 4}, 0.2);
  // two times inside the same inter-snapshot interval see the same topology
  const double lo = series.times[2], hi = series.times[3];
  Tensor f1 = vector_field(params, lo + 0.25 * (hi - lo), z, paths);
  Tensor f2 = vector_field(params, lo + 0.75 * (hi - lo), z, paths);
  CHECK(max_abs_diff(f1, f2) == 0.0);
}

TEST_CASE("fusion parameter counts") {
  for (std::size_t n : {10u, 50u}) {
    ModelParams peng = init_params(Variant::Peng, n, 16, 0, 1, 2, 1);
    CHECK(peng.fusion_parameter_count() == 30);
    ModelParams pre = init_params(Variant::PreMult, n, 16, 0, 1, 2, 1);
    CHECK(pre.fusion_parameter_count() == 2 * n * n);
  }
  ModelParams per_layer = init_params(Variant::Peng, 10, 16, 0, 1, 2, 1, true);
  CHECK(per_layer.fusion_parameter_count() == 60);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

TEST_CASE("constant variant predictions are affine in time") {
  const std::size_t n = 5;
  DynamicGraphSeries series = heat_series(n, 6, 11);
  ModelParams params = init_params(Variant::Constant, n, 4, 0, 1, 2, 11);
  ControlPaths paths = build_paths(series, false);
  const double t0 = paths.t_begin(), t1 = paths.t_end();
  std::vector<double> save = {t0 + 0.25 * (t1 - t0), t0 + 0.5 * (t1 - t0),
                              t0 + 0.75 * (t1 - t0)};
  ForwardResult fwd = forward(params, paths, save, {SolverMethod::RK4, 0, 0, 0, 64});
  // second difference of an affine sequence vanishes
  Tensor second = add(sub(fwd.predictions[0], scale(fwd.predictions[1], 2.0)),
                      fwd.predictions[2]);
  for (std::size_t i = 0; i < second.size(); ++i) CHECK(std::abs(second.data()[i]) < 1e-10);
}

TEST_CASE("forward is permutation equivariant for the fixed-step solver") {
  const std::size_t n = 5;
  DynamicGraphSeries series = heat_series(n, 6, 12);
  ModelParams params = init_params(Variant::Peng, n, 4, 0, 1, 2, 12);
  ControlPaths paths = build_paths(series, false);
  const double t0 = paths.t_begin(), t1 = paths.t_end();
  std::vector<double> save = {t0 + 0.5 * (t1 - t0), t1};
  ForwardResult base = forward(params, paths, save, {SolverMethod::RK4, 0, 0, 0, 64});
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Permutation p = Permutation::random(n, 100 + s);
    DynamicGraphSeries permuted = conjugate_series(p, series);
    ForwardResult got =
        forward(params, build_paths(permuted, false), save, {SolverMethod::RK4, 0, 0, 0, 64});
    for (std::size_t k = 0; k < save.size(); ++k) {
      CHECK(max_abs_diff(got.predictions[k], permute_rows(p, base.predictions[k])) < 1e-9);
    }
  }
  CHECK(base.stats.field_evals == 64 * 4);
}

TEST_CASE("feature-driven variant consumes the control derivative") {
  const std::size_t n = 6;
  DynamicGraphSeries series = heat_series(n, 8, 13);
  ModelParams params = init_params(Variant::PengFeatures, n, 4, 1, 1, 2, 13);
  ControlPaths paths = build_paths(series, true);
  const double t0 = paths.t_begin(), t1 = paths.t_end();
  ForwardResult fwd = forward(params, paths, {t1}, {SolverMethod::RK4, 0, 0, 0, 32});
  CHECK(fwd.predictions.size() == 1);
  CHECK(fwd.predictions[0].shape() == Shape{n, 1});
  // the x-path is required
  ControlPaths no_features = build_paths(series, false);
  CHECK_THROWS_AS(vector_field(params, 0.5 * (t0 + t1), Tensor::zeros({n, 4}), no_features),
                  std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelParams params = init_params(Variant::Peng, 8, 6, 0, 2, 2, 21);
  SolverConfig solver;
  solver.rtol = 1e-4;
  const std::string text = checkpoint_to_json(params, solver, 77);
  Checkpoint ck = checkpoint_from_json(text);
  CHECK(ck.seed == 77);
  CHECK(ck.solver.rtol == 1e-4);
  CHECK(to_string(ck.params.variant) == "peng");
  std::vector<NamedParam> a = collect_parameters(params);
  std::vector<NamedParam> b = collect_parameters(ck.params);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(max_abs_diff(*a[i].tensor, *b[i].tensor) == 0.0);
  }
}

// ---------------------------------------------------------------------------
// losses and optimizer
// ---------------------------------------------------------------------------

TEST_CASE("loss values") {
  Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(mse(p, p).value() == 0.0);

  CHECK(bce_logits(Tensor::scalar(0.0), Tensor::scalar(1.0)).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // masked mse equals the unmasked mse of the selected snapshots
  std::vector<Tensor> preds = {Tensor::from({2}, {1, 1}), Tensor::from({2}, {2, 2}),
                               Tensor::from({2}, {5, 5})};
  std::vector<Tensor> targets = {Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 1}),
                                 Tensor::from({2}, {1, 1})};
  std::vector<std::size_t> mask = {0, 2};
  const double masked = masked_mse(preds, targets, mask).value();
  const double direct = (1.0 + 1.0 + 16.0 + 16.0) / 4.0;
  CHECK(masked == doctest::Approx(direct).epsilon(1e-14));

  CHECK_THROWS_AS(masked_mse(preds, targets, std::vector<std::size_t>{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(mse(p, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("bce gradient is sigmoid minus target") {
  Tensor logits = Tensor::from({3}, {0.5, -1.0, 2.0});
  Tensor targets = Tensor::from({3}, {1.0, 0.0, 1.0});
  auto loss = [&]() { return bce_logits(logits, targets); };
  Tensor* params[] = {&logits};
  CHECK(gradcheck(loss, params, 1e-6).max_rel_error < 1e-7);
}

TEST_CASE("adam single step against hand computation") {
  Tensor p = Tensor::scalar(1.0);
  std::vector<NamedParam> params = {{"p", &p}};
  std::vector<Tensor> grads = {Tensor::scalar(0.5)};
  OptimState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  adam_step(params, grads, state, cfg);
  // m = 0.05, v = 2.5e-4; mhat = 0.5, vhat = 0.25
  const double expected = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  CHECK(p.value() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(state.step == 1);

  // first-step displacement is O(lr): |delta| <= lr within epsilon
  CHECK(std::abs(1.0 - p.value()) <= cfg.lr * 1.000001);
}

TEST_CASE("zero gradient with no decay leaves parameters unchanged") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
  Tensor before = p.clone();
  std::vector<NamedParam> params = {{"p", &p}};
  std::vector<Tensor> grads = {Tensor::zeros({3})};
  OptimState state;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step(params, grads, state, cfg);
  CHECK(max_abs_diff(p, before) == 0.0);
}

TEST_CASE("decoupled decay shrinks before the update") {
  Tensor p = Tensor::scalar(2.0);
  std::vector<NamedParam> params = {{"p", &p}};
  std::vector<Tensor> grads = {Tensor()};  // absent gradient
  OptimState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  adam_step(params, grads, state, cfg);
  CHECK(p.value() == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));

  // coupled mode routes decay through the moments instead
  Tensor q = Tensor::scalar(2.0);
  std::vector<NamedParam> qparams = {{"q", &q}};
  OptimState qstate;
  AdamConfig coupled = cfg;
  coupled.decoupled = false;
  adam_step(qparams, grads, qstate, coupled);
  CHECK(q.value() < 2.0);
  CHECK(q.value() != doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

std::vector<DynamicGraphSeries> tiny_heat_batch(std::size_t count, std::uint64_t seed) {
  std::vector<DynamicGraphSeries> batch;
  for (std::size_t b = 0; b < count; ++b) {
    batch.push_back(heat_series(6, 12, derive_seed(seed, "batch", b)));
  }
  return batch;
}

}  // namespace

TEST_CASE("constant-variant regression drives the loss down on constant data") {
  // constant features: an affine-in-time model family contains the optimum
  DynamicGraphSeries series = heat_series(5, 12, 31);
  for (Tensor& x : series.features) x = Tensor::full({5, 1}, 2.0);
  std::vector<DynamicGraphSeries> batch = {series};

  ModelParams params = init_params(Variant::Constant, 5, 4, 0, 1, 2, 31);
  TrainConfig config;
  config.epochs = 200;
  config.min_epochs = 200;
  config.patience = 200;
  config.adam.lr = 1e-1;
  config.adam.weight_decay = 0.0;
  config.grid_substeps = 1;
  TrainResult result = train(params, batch, config);
  REQUIRE(!result.history.empty());
  double best = result.history.front().train;
  for (const EpochRecord& r : result.history) best = std::min(best, r.train);
  CHECK(best < 1e-6);
  CHECK(result.history.back().train < result.history.front().train);
}

TEST_CASE("plateaued training stops at exactly min-epochs plus patience") {
  std::vector<DynamicGraphSeries> batch = tiny_heat_batch(1, 32);
  ModelParams params = init_params(Variant::Constant, 6, 4, 0, 1, 2, 32);
  TrainConfig config;
  config.epochs = 100;
  config.min_epochs = 10;
  config.patience = 5;
  config.adam.lr = 1e-300;  // updates vanish, so the validation loss plateaus
  config.grid_substeps = 1;
  TrainResult result = train(params, batch, config);
  CHECK(result.epochs_run == 15);
}

TEST_CASE("training is deterministic and never returns a worse-than-best snapshot") {
  std::vector<DynamicGraphSeries> batch = tiny_heat_batch(2, 33);
  ModelParams params = init_params(Variant::Peng, 6, 4, 0, 1, 2, 33);
  TrainConfig config;
  config.epochs = 8;
  config.min_epochs = 8;
  config.patience = 8;
  config.grid_substeps = 1;
  TrainResult a = train(params, batch, config);
  TrainResult b = train(params, batch, config);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t k = 0; k < a.history.size(); ++k) {
    CHECK(a.history[k].train == b.history[k].train);
    CHECK(a.history[k].interp_val == b.history[k].interp_val);
  }
  double min_val = a.history.front().interp_val;
  for (const EpochRecord& r : a.history) min_val = std::min(min_val, r.interp_val);
  CHECK(a.best_val == min_val);
}

TEST_CASE("evaluation splits and per-snapshot rows") {
  DynamicGraphSeries series = heat_series(6, 12, 34);
  ModelParams params = init_params(Variant::Original, 6, 4, 0, 1, 2, 34);
  TrainConfig config;
  config.grid_substeps = 1;
  EvalMetrics m = evaluate(params, series, config);
  CHECK(m.per_snapshot.size() == series.num_times());
  CHECK(m.train_mse > 0.0);
  // the full-series loss interleaves the split losses
  const double lo = std::min({m.train_mse, m.interp_mse, m.extrap_mse});
  const double hi = std::max({m.train_mse, m.interp_mse, m.extrap_mse});
  CHECK(m.full_mse >= lo * 0.99);
  CHECK(m.full_mse <= hi * 1.01);
  std::size_t extrap_rows = 0;
  for (const SnapshotLoss& row : m.per_snapshot) extrap_rows += row.phase == "extrap_val";
  CHECK(extrap_rows == series.split.extrap_val.size());
}

TEST_CASE("perfect predictor scores zero") {
  DynamicGraphSeries series = heat_series(5, 10, 35);
  // readout of a zero const-field model with zero weights predicts bias only
  ModelParams params = init_params(Variant::Constant, 5, 4, 0, 1, 2, 35);
  for (const NamedParam& np : collect_parameters(params)) {
    for (std::size_t i = 0; i < np.tensor->size(); ++i) np.tensor->data()[i] = 0.0;
  }
  params.readout_b.at(0) = 3.25;
  for (Tensor& x : series.features) x = Tensor::full({5, 1}, 3.25);
  TrainConfig config;
  config.grid_substeps = 1;
  EvalMetrics m = evaluate(params, series, config);
  CHECK(m.full_mse < 1e-24);
  CHECK(m.train_mse < 1e-24);
  CHECK(m.extrap_mse < 1e-24);
}

TEST_CASE("sir trajectory classification learns the training set") {
  std::vector<DynamicGraphSeries> train_batch, val_batch;
  for (std::size_t s = 0; s < 6; ++s) {
    SystemSpec regime = default_system(SystemKind::Sir, 9, s);
    if (s % 2 == 0) {
      regime.sir_beta = 0.3;
      regime.sir_gamma = 0.3;
    } else {
      regime.sir_beta = 0.25;
      regime.sir_gamma = 0.7;
    }
    SeriesParams sp;
    sp.t_end = 1.0;
    sp.num_times = 10;
    sp.num_changes = 1;
    DynamicGraphSeries series = build_series(GraphKind::Grid, 9, 900 + s, sp);
    series.times = gamma_times(10, 5.0, 1.0, 900 + s);
    series.features = simulate(regime, series, sample_x0(regime, 9, 900 + s));
    series.label = static_cast<int>(sir_label(regime));
    series.meta.task = "sir";
    (s < 4 ? train_batch : val_batch).push_back(std::move(series));
  }
  ModelParams params = init_params(Variant::PengFeatures, 9, 6, 3, 1, 2, 77);
  TrainConfig config;
  config.epochs = 60;
  config.min_epochs = 30;
  config.patience = 30;
  config.grid_substeps = 1;
  config.adam.lr = 2e-2;
  TrainResult result = train_classifier(params, train_batch, val_batch, config);
  CHECK(result.epochs_run > 0);
  CHECK(classification_accuracy(result.best, train_batch, config) >= 0.75);
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

TEST_CASE("confidence intervals over seeds") {
  const double vals[] = {1.0, 2.0, 3.0, 4.0};
  ConfidenceInterval ci = confidence_interval(vals);
  CHECK(ci.mean == doctest::Approx(2.5).epsilon(1e-14));
  // sample std = sqrt(5/3); halfwidth = 1.96 * std / 2
  CHECK(ci.halfwidth == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(confidence_interval(std::vector<double>{7.0}).halfwidth == 0.0);
  CHECK_THROWS_AS(confidence_interval(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("fresh fusion ablation shows the identity initialization") {
  ModelParams params = init_params(Variant::Peng, 10, 8, 0, 1, 2, 5);
  auto rows = ablate_fusion(params);
  CHECK(rows.size() == 15 * 2);  // shared fusion: one layer set, two channels
  for (const AblationRow& row : rows) {
    if (row.operation == "identity") {
      CHECK(row.weight == 1.0);
      CHECK(row.dominant);
    } else {
      CHECK(row.weight == 0.0);
      CHECK_FALSE(row.dominant);
    }
  }
  const std::string csv = ablation_csv(rows);
  CHECK(csv.find("operation,layer,channel,weight,dominant") == 0);

  ModelParams per_layer = init_params(Variant::Peng, 10, 8, 0, 1, 2, 5, true);
  CHECK(ablate_fusion(per_layer).size() == 15 * 2 * 2);

  ModelParams pre = init_params(Variant::PreMult, 10, 8, 0, 1, 2, 5);
  CHECK_THROWS_AS(ablate_fusion(pre), std::invalid_argument);
}
