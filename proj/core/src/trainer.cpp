#include "pengcde/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pengcde {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  Tensor diff = sub(pred, target);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(pred.size()));
}

Tensor masked_mse(std::span<const Tensor> preds, std::span<const Tensor> targets,
                  std::span<const std::size_t> mask) {
  if (preds.size() != targets.size()) {
    throw std::invalid_argument("masked_mse: prediction/target count mismatch");
  }
  if (mask.empty()) throw std::invalid_argument("masked_mse: empty mask");
  Tensor total;
  std::size_t entries = 0;
  for (std::size_t k : mask) {
    if (k >= preds.size()) throw std::invalid_argument("masked_mse: mask index out of range");
    Tensor diff = sub(preds[k], targets[k]);
    Tensor sq = sum(mul(diff, diff));
    total = total.defined() ? add(total, sq) : sq;
    entries += preds[k].size();
  }
  return scale(total, 1.0 / static_cast<double>(entries));
}

Tensor bce_logits(const Tensor& logits, const Tensor& targets) {
  if (!logits.same_shape(targets)) throw std::invalid_argument("bce_logits: shape mismatch");
  const std::size_t n = logits.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.data()[i];
    const double z = targets.data()[i];
    acc += std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (debug_checks_enabled()) check_finite(out, "bce_logits");

  if (Tape* tape = active_tape(); tape && tracked(logits)) {
    const int ix = logits.node;
    Tensor sx = logits, sz = targets;
    tape->record({ix}, out, [ix, sx, sz](const Tensor& g, std::vector<Tensor>& grad_of) {
      const std::size_t n = sx.size();
      Tensor dx = Tensor::zeros(sx.shape());
      const double gv = g.value() / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-sx.data()[i]));
        dx.data()[i] = gv * (s - sz.data()[i]);
      }
      accumulate_grad(grad_of[static_cast<std::size_t>(ix)], dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void adam_step(std::span<const NamedParam> params, std::span<const Tensor> grads,
               OptimState& state, const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  if (state.first_moment.empty()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i] = Tensor::zeros(params[i].tensor->shape());
      state.second_moment[i] = Tensor::zeros(params[i].tensor->shape());
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const bool has_grad = grads[i].defined();
    if (has_grad && !grads[i].same_shape(p)) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + params[i].name);
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      double g = has_grad ? grads[i].data()[k] : 0.0;
      if (config.weight_decay != 0.0) {
        if (config.decoupled) {
          p.data()[k] *= 1.0 - config.lr * config.weight_decay;
        } else {
          g += config.weight_decay * p.data()[k];
        }
      }
      m.data()[k] = config.beta1 * m.data()[k] + (1.0 - config.beta1) * g;
      v.data()[k] = config.beta2 * v.data()[k] + (1.0 - config.beta2) * g * g;
      const double mhat = m.data()[k] / bc1;
      const double vhat = v.data()[k] / bc2;
      p.data()[k] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

ForwardResult run_forward(const ModelParams& params, const ControlPaths& paths,
                          const DynamicGraphSeries& series, std::vector<double> save_times,
                          const TrainConfig& config) {
  if (config.train_solver == TrainSolver::SnapshotGrid) {
    const double t0 = paths.t_begin();
    Tensor z0 = init_state(params, paths, t0);
    VectorField field = [&params, &paths](double t, const Tensor& z) {
      return vector_field(params, t, z, paths);
    };
    LatentPath latent = rk4_solve_grid(field, z0, refine_grid(series.times, config.grid_substeps),
                                       std::move(save_times));
    ForwardResult result;
    result.times = latent.times;
    result.stats = latent.stats;
    result.latents = std::move(latent.states);
    result.predictions.reserve(result.latents.size());
    for (const Tensor& z : result.latents) result.predictions.push_back(readout(params, z));
    return result;
  }
  return forward(params, paths, std::move(save_times), config.solver);
}

double unmasked_split_mse(const ForwardResult& fwd, const DynamicGraphSeries& series,
                          std::span<const std::size_t> mask) {
  if (mask.empty()) return 0.0;
  double acc = 0.0;
  std::size_t entries = 0;
  for (std::size_t k : mask) {
    const Tensor& p = fwd.predictions[k];
    const Tensor& y = series.features[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p.data()[i] - y.data()[i];
      acc += d * d;
    }
    entries += p.size();
  }
  return acc / static_cast<double>(entries);
}

ModelParams clone_params(const ModelParams& src) {
  ModelParams copy = src;
  for (const NamedParam& np : collect_parameters(copy)) *np.tensor = np.tensor->clone();
  return copy;
}

bool needs_features(Variant v) { return v == Variant::PengFeatures; }

}  // namespace

TrainResult train(const ModelParams& init, const std::vector<DynamicGraphSeries>& batch,
                  const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("train: empty batch");
  for (const DynamicGraphSeries& s : batch) {
    if (s.features.empty()) throw std::invalid_argument("train: series without features");
  }
  const auto start = std::chrono::steady_clock::now();

  ModelParams model = clone_params(init);
  std::vector<NamedParam> params = collect_parameters(model);
  OptimState optim;

  std::vector<ControlPaths> paths;
  paths.reserve(batch.size());
  for (const DynamicGraphSeries& s : batch) {
    paths.push_back(build_paths(s, needs_features(model.variant)));
  }

  TrainResult result;
  result.best = clone_params(model);
  result.best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    std::vector<Tensor> batch_grads(params.size());
    bool finite = true;

    for (std::size_t b = 0; b < batch.size() && finite; ++b) {
      const DynamicGraphSeries& series = batch[b];
      ForwardResult fwd;
      Tape tape;
      {
        TapeScope scope(tape);
        for (const NamedParam& np : params) tape.watch(*np.tensor);
        fwd = run_forward(model, paths[b], series, series.times, config);
        Tensor loss = masked_mse(fwd.predictions, series.features, series.split.train);
        const double loss_value = loss.value();
        if (!std::isfinite(loss_value)) {
          finite = false;
          break;
        }
        record.train += loss_value * inv_batch;
        auto grads = tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (auto it = grads.find(params[i].tensor->node); it != grads.end()) {
            Tensor scaled_grad = it->second;
            double* g = scaled_grad.data();
            for (std::size_t k = 0; k < scaled_grad.size(); ++k) g[k] *= inv_batch;
            accumulate_grad(batch_grads[i], scaled_grad);
          }
        }
      }
      record.interp_val +=
          unmasked_split_mse(fwd, series, series.split.interp_val) * inv_batch;
      record.extrap_val +=
          unmasked_split_mse(fwd, series, series.split.extrap_val) * inv_batch;
    }

    if (!finite) {
      result.aborted_non_finite = true;
      break;
    }

    result.history.push_back(record);
    ++result.epochs_run;
    if (config.verbose && epoch % 25 == 0) {
      std::fprintf(stderr, "epoch %zu train %.6f val %.6f\n", epoch, record.train,
                   record.interp_val);
    }

    if (record.interp_val < result.best_val) {
      result.best_val = record.interp_val;
      result.best = clone_params(model);
      best_epoch = epoch;
    }
    // Patience only starts counting once min_epochs is reached, so a plateau
    // from the start runs exactly min_epochs + patience epochs.
    const std::size_t anchor = std::max(best_epoch, config.min_epochs - 1);
    if (epoch + 1 >= config.min_epochs && epoch - anchor >= config.patience) break;

    adam_step(params, batch_grads, optim, config.adam);
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

namespace {

Tensor trajectory_logit(const ModelParams& model, const ControlPaths& paths,
                        const DynamicGraphSeries& series, const TrainConfig& config) {
  ForwardResult fwd = run_forward(model, paths, series, {series.times.back()}, config);
  // Permutation-invariant pooling: mean node logit at the final snapshot.
  return scale(sum(fwd.predictions.back()), 1.0 / static_cast<double>(series.num_nodes()));
}

}  // namespace

TrainResult train_classifier(const ModelParams& init,
                             const std::vector<DynamicGraphSeries>& train_batch,
                             const std::vector<DynamicGraphSeries>& val_batch,
                             const TrainConfig& config) {
  if (train_batch.empty()) throw std::invalid_argument("train_classifier: empty batch");
  for (const DynamicGraphSeries& s : train_batch) {
    if (!s.label.has_value()) throw std::invalid_argument("train_classifier: unlabelled series");
  }
  const auto start = std::chrono::steady_clock::now();

  ModelParams model = clone_params(init);
  std::vector<NamedParam> params = collect_parameters(model);
  OptimState optim;

  std::vector<ControlPaths> train_paths, val_paths;
  for (const DynamicGraphSeries& s : train_batch) {
    train_paths.push_back(build_paths(s, needs_features(model.variant)));
  }
  for (const DynamicGraphSeries& s : val_batch) {
    val_paths.push_back(build_paths(s, needs_features(model.variant)));
  }

  TrainResult result;
  result.best = clone_params(model);
  result.best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  const double inv_batch = 1.0 / static_cast<double>(train_batch.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    std::vector<Tensor> batch_grads(params.size());
    bool finite = true;

    for (std::size_t b = 0; b < train_batch.size() && finite; ++b) {
      Tape tape;
      TapeScope scope(tape);
      for (const NamedParam& np : params) tape.watch(*np.tensor);
      Tensor logit = trajectory_logit(model, train_paths[b], train_batch[b], config);
      Tensor loss =
          bce_logits(logit, Tensor::scalar(static_cast<double>(*train_batch[b].label)));
      const double loss_value = loss.value();
      if (!std::isfinite(loss_value)) {
        finite = false;
        break;
      }
      record.train += loss_value * inv_batch;
      auto grads = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (auto it = grads.find(params[i].tensor->node); it != grads.end()) {
          Tensor scaled_grad = it->second;
          for (std::size_t k = 0; k < scaled_grad.size(); ++k) {
            scaled_grad.data()[k] *= inv_batch;
          }
          accumulate_grad(batch_grads[i], scaled_grad);
        }
      }
    }
    if (!finite) {
      result.aborted_non_finite = true;
      break;
    }

    double val_loss = 0.0;
    if (!val_batch.empty()) {
      for (std::size_t b = 0; b < val_batch.size(); ++b) {
        Tensor logit = trajectory_logit(model, val_paths[b], val_batch[b], config);
        val_loss += bce_logits(logit, Tensor::scalar(static_cast<double>(*val_batch[b].label)))
                        .value() /
                    static_cast<double>(val_batch.size());
      }
    } else {
      val_loss = record.train;
    }
    record.interp_val = val_loss;
    result.history.push_back(record);
    ++result.epochs_run;

    if (val_loss < result.best_val) {
      result.best_val = val_loss;
      result.best = clone_params(model);
      best_epoch = epoch;
    }
    const std::size_t anchor = std::max(best_epoch, config.min_epochs - 1);
    if (epoch + 1 >= config.min_epochs && epoch - anchor >= config.patience) break;

    adam_step(params, batch_grads, optim, config.adam);
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalMetrics evaluate(const ModelParams& params, const DynamicGraphSeries& series,
                     const TrainConfig& config) {
  if (series.features.empty()) throw std::invalid_argument("evaluate: series without features");
  ControlPaths paths = build_paths(series, needs_features(params.variant));
  ForwardResult fwd = run_forward(params, paths, series, series.times, config);

  EvalMetrics m;
  m.train_mse = unmasked_split_mse(fwd, series, series.split.train);
  m.interp_mse = unmasked_split_mse(fwd, series, series.split.interp_val);
  m.extrap_mse = unmasked_split_mse(fwd, series, series.split.extrap_val);
  std::vector<std::size_t> all(series.num_times());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  m.full_mse = unmasked_split_mse(fwd, series, all);

  std::vector<std::string> phase(series.num_times(), "train");
  for (std::size_t k : series.split.interp_val) phase[k] = "interp_val";
  for (std::size_t k : series.split.extrap_val) phase[k] = "extrap_val";
  for (std::size_t k = 0; k < series.num_times(); ++k) {
    const std::size_t single[] = {k};
    m.per_snapshot.push_back(
        {series.times[k], unmasked_split_mse(fwd, series, single), phase[k]});
  }
  return m;
}

EvalMetrics evaluate_batch(const ModelParams& params,
                           const std::vector<DynamicGraphSeries>& batch,
                           const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("evaluate_batch: empty batch");
  EvalMetrics mean;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const DynamicGraphSeries& s : batch) {
    EvalMetrics m = evaluate(params, s, config);
    mean.train_mse += m.train_mse * inv;
    mean.interp_mse += m.interp_mse * inv;
    mean.extrap_mse += m.extrap_mse * inv;
    mean.full_mse += m.full_mse * inv;
    if (mean.per_snapshot.empty()) {
      mean.per_snapshot = m.per_snapshot;
      for (SnapshotLoss& row : mean.per_snapshot) row.loss *= inv;
    } else {
      for (std::size_t k = 0; k < mean.per_snapshot.size(); ++k) {
        mean.per_snapshot[k].loss += m.per_snapshot[k].loss * inv;
      }
    }
  }
  return mean;
}

double classification_accuracy(const ModelParams& params,
                               const std::vector<DynamicGraphSeries>& batch,
                               const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("classification_accuracy: empty batch");
  std::size_t correct = 0;
  for (const DynamicGraphSeries& s : batch) {
    ControlPaths paths = build_paths(s, needs_features(params.variant));
    const double logit = trajectory_logit(params, paths, s, config).value();
    const int predicted = logit >= 0.0 ? 1 : 0;
    if (s.label.has_value() && predicted == *s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Fusion ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> ablate_fusion(const ModelParams& params) {
  if (params.fusion_a.empty()) {
    throw std::invalid_argument("ablate_fusion: model has no equivariant fusion weights");
  }
  std::vector<AblationRow> rows;
  const auto& names = basis_names();
  for (std::size_t set = 0; set < params.fusion_a.size(); ++set) {
    for (const char* channel : {"A", "dA"}) {
      const Tensor& w =
          std::string(channel) == "A" ? params.fusion_a[set] : params.fusion_da[set];
      for (std::size_t k = 0; k < kEquivBasisSize; ++k) {
        AblationRow row;
        row.operation = names[k];
        row.layer = set + 1;
        row.channel = channel;
        row.weight = w.data()[k];
        row.dominant = std::abs(row.weight) > 0.1;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "operation,layer,channel,weight,dominant\n";
  for (const AblationRow& r : rows) {
    os << r.operation << ',' << r.layer << ',' << r.channel << ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", r.weight);
    os << buf << ',' << (r.dominant ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("confidence_interval: no values");
  ConfidenceInterval ci;
  for (double v : values) ci.mean += v / static_cast<double>(values.size());
  if (values.size() > 1) {
    double var = 0.0;
    for (double v : values) var += (v - ci.mean) * (v - ci.mean);
    var /= static_cast<double>(values.size() - 1);
    ci.halfwidth = 1.96 * std::sqrt(var / static_cast<double>(values.size()));
  }
  return ci;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,train,interp_val,extrap_val\n";
  for (const EpochRecord& r : history) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g\n", r.epoch, r.train, r.interp_val,
                  r.extrap_val);
    os << buf;
  }
  return os.str();
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "seed,variant,task,graph_kind,split,value,epochs_run,wall_seconds\n";
  for (const MetricsRow& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", r.value);
    os << r.seed << ',' << r.variant << ',' << r.task << ',' << r.graph_kind << ',' << r.split
       << ',' << buf << ',' << r.epochs_run << ',';
    std::snprintf(buf, sizeof buf, "%.3f", r.wall_seconds);
    os << buf << '\n';
  }
  return os.str();
}

std::string per_snapshot_csv(const std::vector<SnapshotLoss>& rows) {
  std::ostringstream os;
  os << "time,loss,phase\n";
  for (const SnapshotLoss& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g,%.10g", r.time, r.loss);
    os << buf << ',' << r.phase << '\n';
  }
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_text_file: cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write_text_file: write failed for " + path);
}

}  // namespace pengcde
