// Command line for dynamic-graph CDE experiments: dataset generation,
// training, evaluation, property checks, fusion ablation, and the scaling
// bench. Every command prints its resolved configuration and is a pure
// function of that configuration plus its input files.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include "pengcde/dynamics.hpp"
#include "pengcde/graphgen.hpp"
#include "pengcde/model.hpp"
#include "pengcde/rng.hpp"
#include "pengcde/series.hpp"
#include "pengcde/trainer.hpp"
#include "pengcde/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pengcde;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct RunConfig {
  std::string command;
  std::string task = "heat";
  std::string graph = "community";
  std::string variant = "peng";
  std::string scale = "desk";
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::string checkpoint = "checkpoint.json";
  std::string config_file;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;

  // expanded by the scale preset, overridable from file/flags
  std::size_t nodes = 50;
  double t_end = 5.0;
  std::size_t num_times = 60;
  std::size_t num_changes = 6;
  double flip_rate = 0.01;
  std::size_t epochs = 300;
  std::size_t min_epochs = 100;
  std::size_t patience = 80;
  double lr = 1e-2;
  double weight_decay = 1e-4;
  std::size_t dz = 16;
  std::size_t layers = 2;
  std::size_t substeps = 3;
  bool per_layer_fusion = false;
  bool coupled_decay = false;
  double gamma_shape = 5.0;   // sir observation-time irregularity
  std::size_t sir_obs = 20;   // sir observations per trajectory
  std::size_t sir_per_regime = 10;

  std::string which = "all";                       // check
  std::vector<std::size_t> sizes = {128, 256, 512};  // bench
};

void apply_scale_preset(RunConfig& c) {
  if (c.scale == "desk") return;  // struct defaults are the desk preset
  if (c.scale == "paper") {
    c.nodes = 400;
    c.num_times = 120;
    c.num_changes = 12;
    c.epochs = 2000;
    c.min_epochs = 200;
    c.patience = 200;
    c.sir_per_regime = 50;
    c.sir_obs = 20;
    return;
  }
  throw std::invalid_argument("unknown scale preset: " + c.scale);
}

json config_json(const RunConfig& c) {
  return json{{"command", c.command},
              {"task", c.task},
              {"graph", c.graph},
              {"variant", c.variant},
              {"scale", c.scale},
              {"data_dir", c.data_dir},
              {"out_dir", c.out_dir},
              {"checkpoint", c.checkpoint},
              {"seed", c.seed},
              {"seeds", c.seeds},
              {"nodes", c.nodes},
              {"t_end", c.t_end},
              {"num_times", c.num_times},
              {"num_changes", c.num_changes},
              {"flip_rate", c.flip_rate},
              {"epochs", c.epochs},
              {"min_epochs", c.min_epochs},
              {"patience", c.patience},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"dz", c.dz},
              {"layers", c.layers},
              {"substeps", c.substeps},
              {"per_layer_fusion", c.per_layer_fusion},
              {"coupled_decay", c.coupled_decay},
              {"gamma_shape", c.gamma_shape},
              {"sir_obs", c.sir_obs},
              {"sir_per_regime", c.sir_per_regime},
              {"which", c.which},
              {"sizes", c.sizes}};
}

/// File settings fill any slot the command line left untouched.
void merge_config_file(RunConfig& c, const CLI::App& app) {
  if (c.config_file.empty()) return;
  std::ifstream in(c.config_file);
  if (!in) throw std::invalid_argument("cannot read config file " + c.config_file);
  const json j = json::parse(in);
  auto take = [&](const char* flag, const char* key, auto& slot) {
    const CLI::Option* opt = app.get_option_no_throw(flag);
    const bool flag_given = opt != nullptr && opt->count() > 0;
    if (!flag_given && j.contains(key)) {
      j.at(key).get_to(slot);
    }
  };
  take("--nodes", "nodes", c.nodes);
  take("--t-end", "t_end", c.t_end);
  take("--times", "num_times", c.num_times);
  take("--changes", "num_changes", c.num_changes);
  take("--flip-rate", "flip_rate", c.flip_rate);
  take("--epochs", "epochs", c.epochs);
  take("--min-epochs", "min_epochs", c.min_epochs);
  take("--patience", "patience", c.patience);
  take("--lr", "lr", c.lr);
  take("--weight-decay", "weight_decay", c.weight_decay);
  take("--dz", "dz", c.dz);
  take("--layers", "layers", c.layers);
  take("--substeps", "substeps", c.substeps);
  take("--gamma-shape", "gamma_shape", c.gamma_shape);
}

TrainConfig make_train_config(const RunConfig& c) {
  TrainConfig tc;
  tc.epochs = c.epochs;
  tc.min_epochs = std::min(c.min_epochs, c.epochs);
  tc.patience = c.patience;
  tc.adam.lr = c.lr;
  tc.adam.weight_decay = c.weight_decay;
  tc.adam.decoupled = !c.coupled_decay;
  tc.grid_substeps = c.substeps;
  tc.seed = c.seed;
  return tc;
}

std::string series_filename(const RunConfig& c, const std::string& role, std::size_t index) {
  return c.task + "_" + c.graph + "_" + role + "_" + std::to_string(index) + ".json";
}

DynamicGraphSeries generate_one(const RunConfig& c, const std::string& role,
                                std::size_t index) {
  const std::uint64_t seed = derive_seed(c.seed + index, role);
  const GraphKind kind = graph_kind_from_string(c.graph);
  const SystemKind system = system_kind_from_string(c.task);

  SeriesParams sp;
  sp.t_end = system == SystemKind::Sir ? 1.0 : c.t_end;
  sp.num_times = system == SystemKind::Sir ? c.sir_obs : c.num_times;
  sp.num_changes = std::min(c.num_changes, sp.num_times - 1);
  sp.flip_rate = c.flip_rate;
  DynamicGraphSeries series = build_series(kind, c.nodes, seed, sp);
  series.meta.task = c.task;

  SystemSpec spec = default_system(system, c.nodes, seed);
  if (system == SystemKind::Sir) {
    // alternate generating regimes so each role carries both classes
    if (index % 2 == 0) {
      spec.sir_beta = 0.3;
      spec.sir_gamma = 0.3;
    } else {
      spec.sir_beta = 0.25;
      spec.sir_gamma = 0.7;
    }
    series.times = gamma_times(sp.num_times, c.gamma_shape, 1.0, seed);
    series.label = static_cast<int>(sir_label(spec));
    series.meta.params["beta"] = spec.sir_beta;
    series.meta.params["gamma"] = spec.sir_gamma;
    series.meta.params["gamma_shape"] = c.gamma_shape;
  }
  series.features = simulate(spec, series, sample_x0(spec, c.nodes, seed));
  return series;
}

int cmd_gen(const RunConfig& c) {
  fs::create_directories(c.out_dir);
  const bool sir = system_kind_from_string(c.task) == SystemKind::Sir;
  const std::size_t per_role = sir ? 2 * c.sir_per_regime : c.seeds;
  for (const std::string role : {"train", "val", "test"}) {
    for (std::size_t i = 0; i < per_role; ++i) {
      RunConfig local = c;
      local.seed = derive_seed(c.seed, role + "-batch") + i;
      DynamicGraphSeries series = generate_one(local, role, i);
      const fs::path path = fs::path(c.out_dir) / series_filename(c, role, i);
      save_series_json(series, path.string());
      std::printf("wrote %s (n=%zu, %zu snapshots)\n", path.string().c_str(),
                  series.num_nodes(), series.num_times());
    }
  }
  return kExitOk;
}

std::vector<DynamicGraphSeries> load_role(const RunConfig& c, const std::string& role) {
  std::vector<DynamicGraphSeries> out;
  for (std::size_t i = 0;; ++i) {
    const fs::path path = fs::path(c.data_dir) / series_filename(c, role, i);
    if (!fs::exists(path)) break;
    out.push_back(load_series_json(path.string()));
  }
  if (out.empty()) {
    throw std::invalid_argument("no " + role + " series found under " + c.data_dir +
                                " for task=" + c.task + " graph=" + c.graph);
  }
  return out;
}

struct SeedRun {
  std::uint64_t seed = 0;
  TrainResult result;
  std::string checkpoint_path;
};

int cmd_train(const RunConfig& c) {
  const auto train_batch = load_role(c, "train");
  const bool classification = system_kind_from_string(c.task) == SystemKind::Sir;
  std::vector<DynamicGraphSeries> val_batch;
  if (classification) val_batch = load_role(c, "val");

  const Variant variant = variant_from_string(c.variant);
  const std::size_t n = train_batch.front().num_nodes();
  const std::size_t dx = classification ? train_batch.front().feature_dim() : 0;
  fs::create_directories(c.out_dir);

  std::vector<SeedRun> runs(c.seeds);
  auto run_one = [&](std::size_t i) {
    const std::uint64_t seed = c.seed + i;
    ModelParams init = init_params(classification ? Variant::PengFeatures : variant, n, c.dz,
                                   dx, 1, c.layers, seed, c.per_layer_fusion);
    if (!classification) init.variant = variant;
    TrainConfig tc = make_train_config(c);
    tc.seed = seed;
    runs[i].seed = seed;
    runs[i].result = classification ? train_classifier(init, train_batch, val_batch, tc)
                                    : train(init, train_batch, tc);
    const fs::path ck =
        fs::path(c.out_dir) / (c.task + "_" + c.variant + "_seed" + std::to_string(seed) +
                               ".json");
    save_checkpoint(runs[i].result.best, tc.solver, seed, ck.string());
    runs[i].checkpoint_path = ck.string();
    write_text_file((fs::path(c.out_dir) /
                     ("history_" + c.variant + "_seed" + std::to_string(seed) + ".csv"))
                        .string(),
                    history_csv(runs[i].result.history));
  };

  // Fan independent seeds across worker threads; results land in seed order.
  const std::size_t workers =
      std::min<std::size_t>(c.seeds, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  std::size_t next = 0;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < c.seeds; i += workers) run_one(i);
    });
  }
  for (std::thread& t : pool) t.join();

  std::vector<MetricsRow> rows;
  bool any_aborted = false;
  for (const SeedRun& run : runs) {
    any_aborted = any_aborted || run.result.aborted_non_finite;
    MetricsRow row;
    row.seed = run.seed;
    row.variant = c.variant;
    row.task = c.task;
    row.graph_kind = c.graph;
    row.split = "interp_val";
    row.value = run.result.best_val;
    row.epochs_run = run.result.epochs_run;
    row.wall_seconds = run.result.wall_seconds;
    rows.push_back(row);
    std::printf("seed %llu: best validation %.6f after %zu epochs -> %s\n",
                static_cast<unsigned long long>(run.seed), run.result.best_val,
                run.result.epochs_run, run.checkpoint_path.c_str());
  }
  write_text_file((fs::path(c.out_dir) / ("train_metrics_" + c.variant + ".csv")).string(),
                  metrics_csv(rows));
  if (runs.size() > 1) {
    std::vector<double> vals;
    for (const SeedRun& run : runs) vals.push_back(run.result.best_val);
    const ConfidenceInterval ci = confidence_interval(vals);
    std::printf("validation over %zu seeds: %.6f +/- %.6f\n", runs.size(), ci.mean,
                ci.halfwidth);
  }
  return any_aborted ? kExitNumerical : kExitOk;
}

int cmd_eval(const RunConfig& c) {
  Checkpoint ck = load_checkpoint(c.checkpoint);
  const bool classification = system_kind_from_string(c.task) == SystemKind::Sir;
  fs::create_directories(c.out_dir);
  TrainConfig tc = make_train_config(c);

  std::vector<MetricsRow> rows;
  if (classification) {
    const auto test_batch = load_role(c, "test");
    MetricsRow row;
    row.seed = ck.seed;
    row.variant = to_string(ck.params.variant);
    row.task = c.task;
    row.graph_kind = c.graph;
    row.split = "test";
    row.value = classification_accuracy(ck.params, test_batch, tc);
    rows.push_back(row);
    std::printf("test accuracy %.4f\n", rows.back().value);
  } else {
    for (const std::string role : {"train", "val", "test"}) {
      const auto batch = load_role(c, role);
      EvalMetrics m = evaluate_batch(ck.params, batch, tc);
      for (const auto& [split, value] :
           std::initializer_list<std::pair<const char*, double>>{{"train", m.train_mse},
                                                                 {"interp_val", m.interp_mse},
                                                                 {"extrap_val", m.extrap_mse},
                                                                 {"full", m.full_mse}}) {
        MetricsRow row;
        row.seed = ck.seed;
        row.variant = to_string(ck.params.variant);
        row.task = c.task;
        row.graph_kind = c.graph;
        row.split = std::string(role) + ":" + split;
        row.value = value;
        rows.push_back(row);
      }
      if (role == "test") {
        write_text_file((fs::path(c.out_dir) / "per_snapshot_test.csv").string(),
                        per_snapshot_csv(m.per_snapshot));
      }
      std::printf("%s: train %.6f interp %.6f extrap %.6f full %.6f\n", role.c_str(),
                  m.train_mse, m.interp_mse, m.extrap_mse, m.full_mse);
    }
  }
  write_text_file((fs::path(c.out_dir) / "eval_metrics.csv").string(), metrics_csv(rows));
  return kExitOk;
}

int cmd_check(const RunConfig& c) {
  std::vector<std::string> suites;
  if (c.which == "all") {
    suites = {"equivariance", "timewarp", "projection", "gradients", "solver-order"};
  } else {
    suites = {c.which};
  }
  bool all_pass = true;
  for (const std::string& name : suites) {
    CheckReport report = run_check(name);
    std::printf("== %s ==\n%s", report.suite.c_str(), format_report(report).c_str());
    all_pass = all_pass && report.pass();
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

int cmd_ablate(const RunConfig& c) {
  Checkpoint ck = load_checkpoint(c.checkpoint);
  const std::string csv = ablation_csv(ablate_fusion(ck.params));
  if (c.out_dir.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    fs::create_directories(c.out_dir);
    const fs::path path = fs::path(c.out_dir) / "fusion_ablation.csv";
    write_text_file(path.string(), csv);
    std::printf("wrote %s\n", path.string().c_str());
  }
  return kExitOk;
}

int cmd_bench(const RunConfig& c) {
  const auto points = scaling_bench(c.sizes, c.seed);
  const std::string csv = scaling_csv(points);
  std::fputs(csv.c_str(), stdout);
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    write_text_file((fs::path(c.out_dir) / "scaling.csv").string(), csv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic-graph neural CDE toolkit"};
  app.require_subcommand(1);
  RunConfig c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--task", c.task, "heat|gene|wealth|opinion|sir");
    sub->add_option("--graph", c.graph, "grid|small-world|power-law|community");
    sub->add_option("--scale", c.scale, "desk|paper preset");
    sub->add_option("--seed", c.seed, "base seed");
    sub->add_option("--config", c.config_file, "JSON config file (flags win)");
    sub->add_option("--nodes", c.nodes);
    sub->add_option("--t-end", c.t_end);
    sub->add_option("--times", c.num_times);
    sub->add_option("--changes", c.num_changes);
    sub->add_option("--flip-rate", c.flip_rate);
    sub->add_option("--epochs", c.epochs);
    sub->add_option("--min-epochs", c.min_epochs);
    sub->add_option("--patience", c.patience);
    sub->add_option("--lr", c.lr);
    sub->add_option("--weight-decay", c.weight_decay);
    sub->add_option("--dz", c.dz);
    sub->add_option("--layers", c.layers);
    sub->add_option("--substeps", c.substeps);
    sub->add_option("--gamma-shape", c.gamma_shape);
    sub->add_flag("--per-layer-fusion", c.per_layer_fusion);
    sub->add_flag("--coupled-decay", c.coupled_decay);
    return sub;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen", "generate dataset files"));
  gen->add_option("--seeds", c.seeds, "series per batch role");
  gen->add_option("--out", c.out_dir, "output directory");
  gen->add_option("--sir-per-regime", c.sir_per_regime);
  gen->add_option("--sir-obs", c.sir_obs);

  CLI::App* train_cmd = add_common(app.add_subcommand("train", "train a model"));
  train_cmd->add_option("--data", c.data_dir, "dataset directory");
  train_cmd->add_option("--variant", c.variant,
                        "constant|gnode|adjacency|premult|original|peng|peng-features");
  train_cmd->add_option("--seeds", c.seeds, "independent runs fanned over threads");
  train_cmd->add_option("--out", c.out_dir, "checkpoint/metrics directory");

  CLI::App* eval_cmd = add_common(app.add_subcommand("eval", "evaluate a checkpoint"));
  eval_cmd->add_option("--data", c.data_dir);
  eval_cmd->add_option("--checkpoint", c.checkpoint)->required();
  eval_cmd->add_option("--out", c.out_dir);

  CLI::App* check_cmd = app.add_subcommand("check", "run property suites");
  check_cmd->add_option("which", c.which,
                        "equivariance|timewarp|projection|gradients|solver-order|all");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "dump learned fusion weights");
  ablate_cmd->add_option("--checkpoint", c.checkpoint)->required();
  ablate_cmd->add_option("--out", c.out_dir)->default_val("");

  CLI::App* bench_cmd = app.add_subcommand("bench", "per-epoch scaling comparison");
  bench_cmd->add_option("--sizes", c.sizes, "node counts");
  bench_cmd->add_option("--out", c.out_dir)->default_val("");
  bench_cmd->add_option("--seed", c.seed);

  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    c.command = sub->get_name();

    if (c.command == "gen" || c.command == "train" || c.command == "eval") {
      // precedence: flags > config file > preset
      const CLI::Option* scale_opt = sub->get_option_no_throw("--scale");
      RunConfig presets = c;
      apply_scale_preset(presets);
      auto adopt = [&](const char* flag, auto RunConfig::* member) {
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        if (opt == nullptr || opt->count() == 0) c.*member = presets.*member;
      };
      (void)scale_opt;
      adopt("--nodes", &RunConfig::nodes);
      adopt("--times", &RunConfig::num_times);
      adopt("--changes", &RunConfig::num_changes);
      adopt("--epochs", &RunConfig::epochs);
      adopt("--min-epochs", &RunConfig::min_epochs);
      adopt("--patience", &RunConfig::patience);
      adopt("--sir-per-regime", &RunConfig::sir_per_regime);
      adopt("--sir-obs", &RunConfig::sir_obs);
      merge_config_file(c, *sub);
    }

    std::printf("resolved config: %s\n", config_json(c).dump().c_str());

    if (c.command == "gen") return cmd_gen(c);
    if (c.command == "train") return cmd_train(c);
    if (c.command == "eval") return cmd_eval(c);
    if (c.command == "check") return cmd_check(c);
    if (c.command == "ablate") return cmd_ablate(c);
    if (c.command == "bench") return cmd_bench(c);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
}
