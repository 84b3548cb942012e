// Acceptance suite: one pass/fail line per criterion, non-zero exit if any
// fails. Criteria 8, 9 and 11 share a single desk-scale training experiment
// (heat diffusion, community graphs, four seeds, four model variants).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "pengcde/dynamics.hpp"
#include "pengcde/graphgen.hpp"
#include "pengcde/model.hpp"
#include "pengcde/rng.hpp"
#include "pengcde/trainer.hpp"
#include "pengcde/verify.hpp"

using namespace pengcde;

namespace {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string summarize(const CheckReport& report) {
  std::string out;
  for (const CheckItem& item : report.items) {
    if (!out.empty()) out += "; ";
    out += item.name + " " + fmt(item.value) + (item.less_than ? " < " : " > ") +
           fmt(item.threshold);
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Desk-scale experiment shared by criteria 8, 9 and 11
// ---------------------------------------------------------------------------

struct DeskRun {
  double test_mse = 0;             // mean over the test batch, all snapshots
  double extrap_factor = 0;        // last / first extrapolation-snapshot loss
  bool identity_dominant = false;  // largest |fusion weight| in both channels
  std::size_t epochs_run = 0;
  double wall_seconds = 0;
  std::size_t ablation_rows = 0;
};

struct DeskExperiment {
  // indexed [variant][seed]
  std::vector<std::string> variants{"peng", "original", "premult", "constant"};
  std::vector<std::vector<DeskRun>> runs;
};

DeskRun run_desk(const std::string& variant_name, std::uint64_t seed) {
  const std::size_t n = 50;
  SeriesParams sp;
  sp.t_end = 5.0;
  sp.num_times = 60;
  sp.num_changes = 6;
  sp.flip_rate = 0.01;

  auto make_batch = [&](const char* role) {
    std::vector<DynamicGraphSeries> batch;
    for (std::size_t b = 0; b < 4; ++b) {
      const std::uint64_t s = derive_seed(seed, role, b);
      DynamicGraphSeries series = build_series(GraphKind::Community, n, s, sp);
      SystemSpec spec = default_system(SystemKind::Heat, n, s);
      series.features = simulate(spec, series, sample_x0(spec, n, s));
      batch.push_back(std::move(series));
    }
    return batch;
  };
  const auto train_batch = make_batch("train");
  const auto test_batch = make_batch("test");

  ModelParams init = init_params(variant_from_string(variant_name), n, 16, 0, 1, 2,
                                 derive_seed(seed, "model"));
  TrainConfig config;
  config.epochs = 300;
  config.min_epochs = 100;
  config.patience = 80;
  config.adam.lr = 1e-2;
  config.adam.weight_decay = 1e-4;
  config.grid_substeps = 2;

  TrainResult trained = train(init, train_batch, config);
  EvalMetrics metrics = evaluate_batch(trained.best, test_batch, config);

  DeskRun run;
  run.test_mse = metrics.full_mse;
  run.epochs_run = trained.epochs_run;
  run.wall_seconds = trained.wall_seconds;

  // growth of the extrapolation-phase loss: last over first extrapolation
  // snapshot of the mean test per-snapshot trajectory
  std::vector<double> extrap_losses;
  for (const SnapshotLoss& row : metrics.per_snapshot) {
    if (row.phase == "extrap_val") extrap_losses.push_back(row.loss);
  }
  run.extrap_factor = extrap_losses.empty()
                          ? 0.0
                          : extrap_losses.back() / std::max(extrap_losses.front(), 1e-300);

  if (!trained.best.fusion_a.empty()) {
    const auto rows = ablate_fusion(trained.best);
    run.ablation_rows = rows.size();
    bool dominant = true;
    for (const char* channel : {"A", "dA"}) {
      double identity_w = 0.0, best_other = 0.0;
      for (const AblationRow& row : rows) {
        if (row.channel != channel) continue;
        if (row.operation == "identity") {
          identity_w = std::abs(row.weight);
        } else {
          best_other = std::max(best_other, std::abs(row.weight));
        }
      }
      dominant = dominant && identity_w > best_other;
    }
    run.identity_dominant = dominant;
  }
  std::fprintf(stderr,
               "  desk %-9s seed %llu: test mse %.4f, extrap factor %.3f, %zu epochs (%.0fs)\n",
               variant_name.c_str(), static_cast<unsigned long long>(seed), run.test_mse,
               run.extrap_factor, run.epochs_run, run.wall_seconds);
  return run;
}

DeskExperiment run_desk_experiment() {
  DeskExperiment exp;
  const std::size_t seeds = 4;
  exp.runs.assign(exp.variants.size(), std::vector<DeskRun>(seeds));

  struct Job {
    std::size_t variant, seed;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < exp.variants.size(); ++v)
    for (std::size_t s = 0; s < seeds; ++s) jobs.push_back({v, s});

  const std::size_t workers = std::max<std::size_t>(
      1, std::min<std::size_t>(jobs.size(), std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t j = w; j < jobs.size(); j += workers) {
        exp.runs[jobs[j].variant][jobs[j].seed] =
            run_desk(exp.variants[jobs[j].variant], 1000 + jobs[j].seed);
      }
    });
  }
  for (std::thread& t : pool) t.join();
  return exp;
}

std::vector<double> column(const DeskExperiment& exp, const std::string& variant,
                           double DeskRun::* field) {
  std::vector<double> out;
  for (std::size_t v = 0; v < exp.variants.size(); ++v) {
    if (exp.variants[v] != variant) continue;
    for (const DeskRun& run : exp.runs[v]) out.push_back(run.*field);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);
  }

  std::vector<CriterionResult> results;
  auto timed = [&](int id, const std::string& name, auto fn) {
    if (only != 0 && only != id) return;
    CriterionResult r;
    r.id = id;
    r.name = name;
    const auto start = std::chrono::steady_clock::now();
    try {
      auto [pass, detail] = fn();
      r.pass = pass;
      r.detail = std::move(detail);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %2d %-24s %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id,
                r.name.c_str(), r.detail.c_str(), r.seconds);
    std::fflush(stdout);
    results.push_back(std::move(r));
  };

  timed(1, "equivariance", [] {
    CheckReport report = check_equivariance();
    return std::make_pair(report.pass(), summarize(report));
  });

  timed(2, "time warp", [] {
    CheckReport report = check_timewarp();
    return std::make_pair(report.pass(), summarize(report));
  });

  // criteria 3 and 4 both come from the projection suite
  CheckReport projection;
  timed(3, "linear-case projection", [&projection] {
    projection = check_projection();
    CheckReport theorem;
    theorem.suite = projection.suite;
    for (const CheckItem& item : projection.items) {
      if (item.name.find("rank") == std::string::npos) theorem.items.push_back(item);
    }
    return std::make_pair(theorem.pass(), summarize(theorem));
  });

  timed(4, "basis rank", [&projection] {
    if (projection.items.empty()) projection = check_projection();
    CheckReport rank;
    rank.suite = projection.suite;
    for (const CheckItem& item : projection.items) {
      if (item.name.find("rank") != std::string::npos) rank.items.push_back(item);
    }
    return std::make_pair(rank.pass(), summarize(rank));
  });

  timed(5, "gradients", [] {
    CheckReport report = check_gradients();
    return std::make_pair(report.pass(), summarize(report));
  });

  timed(6, "solver accuracy", [] {
    CheckReport report = check_solver_order();
    return std::make_pair(report.pass(), summarize(report));
  });

  timed(7, "dynamics properties", [] {
    CheckReport report = check_dynamics();
    return std::make_pair(report.pass(), summarize(report));
  });

  // ---------------------------------------------------------------------
  // Shared desk-scale experiment
  // ---------------------------------------------------------------------
  DeskExperiment desk;
  const bool need_desk = only == 0 || only == 8 || only == 9 || only == 11;
  if (need_desk) {
    std::fprintf(stderr, "running desk-scale experiment (4 variants x 4 seeds)...\n");
    desk = run_desk_experiment();
  }

  timed(8, "desk-scale ordering", [&desk] {
    const double peng = median(column(desk, "peng", &DeskRun::test_mse));
    const double original = median(column(desk, "original", &DeskRun::test_mse));
    const double premult = median(column(desk, "premult", &DeskRun::test_mse));
    const double constant = median(column(desk, "constant", &DeskRun::test_mse));
    const bool pass = peng < original && original < premult && peng < constant;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "median test mse: peng %.4f < original %.4f < premult %.4f; constant %.4f",
                  peng, original, premult, constant);
    return std::make_pair(pass, std::string(buf));
  });

  timed(9, "extrapolation growth", [&desk] {
    const double peng = median(column(desk, "peng", &DeskRun::extrap_factor));
    const double premult = median(column(desk, "premult", &DeskRun::extrap_factor));
    char buf[160];
    std::snprintf(buf, sizeof buf, "median last/first extrap loss: peng %.3f vs premult %.3f",
                  peng, premult);
    return std::make_pair(peng < premult, std::string(buf));
  });

  timed(10, "scaling bench", [] {
    const auto points = scaling_bench({128, 256, 512});
    bool pass = points.size() == 3;
    std::string detail;
    if (pass) {
      const double base_peng = points[0].peng_epoch_seconds;
      const double base_pre = points[0].premult_epoch_seconds;
      for (std::size_t k = 1; k < points.size(); ++k) {
        const double r_peng = points[k].peng_epoch_seconds / base_peng;
        const double r_pre = points[k].premult_epoch_seconds / base_pre;
        pass = pass && r_peng < r_pre;
        detail += "n=" + std::to_string(points[k].nodes) + " ratio " + fmt(r_peng) + " vs " +
                  fmt(r_pre) + "; ";
      }
      for (const ScalingPoint& p : points) {
        pass = pass && p.peng_fusion_params == 30 &&
               p.premult_fusion_params == 2 * p.nodes * p.nodes;
      }
      detail += "fusion params 30 vs 2n^2";
    }
    return std::make_pair(pass, detail);
  });

  timed(11, "fusion ablation", [&desk] {
    std::size_t dominant_seeds = 0, rows = 0;
    for (std::size_t v = 0; v < desk.variants.size(); ++v) {
      if (desk.variants[v] != "peng") continue;
      for (const DeskRun& run : desk.runs[v]) {
        dominant_seeds += run.identity_dominant ? 1 : 0;
        rows = run.ablation_rows;
      }
    }
    const bool pass = dominant_seeds >= 3 && rows == 30;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "identity weights dominant in %zu/4 seeds; %zu csv rows per model",
                  dominant_seeds, rows);
    return std::make_pair(pass, std::string(buf));
  });

  bool all_pass = !results.empty();
  for (const CriterionResult& r : results) all_pass = all_pass && r.pass;
  std::printf("%s: %zu criteria checked\n",
              all_pass ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED", results.size());
  return all_pass ? 0 : 1;
}
