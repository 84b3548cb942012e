#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pengcde/model.hpp"
#include "pengcde/series.hpp"
#include "pengcde/tensor.hpp"

namespace pengcde {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean squared error over all entries.
Tensor mse(const Tensor& pred, const Tensor& target);

/// Mean squared error over the masked snapshots of a prediction sequence.
Tensor masked_mse(std::span<const Tensor> preds, std::span<const Tensor> targets,
                  std::span<const std::size_t> mask);

/// Numerically stable mean logistic cross-entropy on raw logits.
Tensor bce_logits(const Tensor& logits, const Tensor& targets);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
};

struct AdamConfig {
  double lr = 1e-2;
  double weight_decay = 1e-4;
  bool decoupled = true;  // p *= (1 - lr*wd) before the update; coupled adds wd*p to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update in place. `grads` aligns with `params`;
/// undefined gradients count as zero.
void adam_step(std::span<const NamedParam> params, std::span<const Tensor> grads,
               OptimState& state, const AdamConfig& config);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainSolver {
  SnapshotGrid,  // fixed-step RK4 on the refined snapshot grid (deterministic)
  Config,        // whatever SolverConfig says (Tsit5 by default)
};

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t min_epochs = 100;
  std::size_t patience = 80;
  AdamConfig adam;
  TrainSolver train_solver = TrainSolver::SnapshotGrid;
  std::size_t grid_substeps = 3;
  SolverConfig solver;  // used by TrainSolver::Config and stored in checkpoints
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train = 0, interp_val = 0, extrap_val = 0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochRecord> history;
  std::size_t epochs_run = 0;
  double best_val = 0;
  bool aborted_non_finite = false;
  double wall_seconds = 0;
};

/// Regression training over a batch of series: per epoch, the train-masked
/// MSE of every series is averaged into one batch gradient, the
/// interpolation-validation mask drives early stopping and best-snapshot
/// selection, and the extrapolation mask is recorded for the history.
TrainResult train(const ModelParams& init, const std::vector<DynamicGraphSeries>& batch,
                  const TrainConfig& config);

/// Binary trajectory classification (mean node logit at the final snapshot,
/// logistic loss against the series label).
TrainResult train_classifier(const ModelParams& init,
                             const std::vector<DynamicGraphSeries>& train_batch,
                             const std::vector<DynamicGraphSeries>& val_batch,
                             const TrainConfig& config);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SnapshotLoss {
  double time = 0;
  double loss = 0;
  std::string phase;  // train / interp_val / extrap_val
};

struct EvalMetrics {
  double train_mse = 0, interp_mse = 0, extrap_mse = 0, full_mse = 0;
  std::vector<SnapshotLoss> per_snapshot;
};

/// Per-split MSE of one series plus its per-snapshot loss trajectory.
EvalMetrics evaluate(const ModelParams& params, const DynamicGraphSeries& series,
                     const TrainConfig& config);

/// Mean metrics over a batch of series.
EvalMetrics evaluate_batch(const ModelParams& params,
                           const std::vector<DynamicGraphSeries>& batch,
                           const TrainConfig& config);

/// Classification accuracy over a batch of labelled series.
double classification_accuracy(const ModelParams& params,
                               const std::vector<DynamicGraphSeries>& batch,
                               const TrainConfig& config);

// ---------------------------------------------------------------------------
// Fusion ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string operation;
  std::size_t layer = 1;
  std::string channel;  // "A" or "dA"
  double weight = 0;
  bool dominant = false;  // |weight| > 0.1
};

/// Table of learned fusion coefficients, one row per basis operation per
/// (layer, channel). Only meaningful for the equivariant-fusion variants.
std::vector<AblationRow> ablate_fusion(const ModelParams& params);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

/// Mean with a 95% normal-approximation halfwidth (1.96 sigma / sqrt(runs)),
/// the convention used when reporting metrics over seeds.
struct ConfidenceInterval {
  double mean = 0;
  double halfwidth = 0;
};
ConfidenceInterval confidence_interval(std::span<const double> values);

std::string history_csv(const std::vector<EpochRecord>& history);

struct MetricsRow {
  std::uint64_t seed = 0;
  std::string variant, task, graph_kind, split;
  double value = 0;
  std::size_t epochs_run = 0;
  double wall_seconds = 0;
};
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string per_snapshot_csv(const std::vector<SnapshotLoss>& rows);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace pengcde
