#include "pengcde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pengcde {

namespace {

// Tsitouras 5(4) tableau (7 stages, FSAL).
constexpr double kC[7] = {0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0};
constexpr double kA21 = 0.161;
constexpr double kA31 = -0.008480655492356989, kA32 = 0.335480655492357;
constexpr double kA41 = 2.8971530571054935, kA42 = -6.359448489975075,
                 kA43 = 4.3622954328695815;
constexpr double kA51 = 5.325864828439257, kA52 = -11.748883564062828,
                 kA53 = 7.4955393428898365, kA54 = -0.09249506636175525;
constexpr double kA61 = 5.86145544294642, kA62 = -12.92096931784711, kA63 = 8.159367898576159,
                 kA64 = -0.071584973281401, kA65 = -0.028269050394068383;
constexpr double kB[7] = {0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742,
                          -3.290069515436081, 2.324710524099774, 0.0};
// b - bhat: weights of the embedded 4th-order error estimate.
constexpr double kE[7] = {-0.00178001105222577714, -0.0008164344596567469,
                          0.007880878010261995,    -0.1447110071732629,
                          0.5823571654525552,      -0.45808210592918697,
                          0.015151515151515152};

double error_norm(const Tensor& err, const Tensor& z0, const Tensor& z1, double rtol,
                  double atol) {
  const double* pe = err.data();
  const double* p0 = z0.data();
  const double* p1 = z1.data();
  double acc = 0.0;
  const std::size_t n = err.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double scale = atol + rtol * std::max(std::abs(p0[i]), std::abs(p1[i]));
    const double r = pe[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

std::vector<double> checked_save_times(std::vector<double> save_times, double t0, double t1) {
  std::sort(save_times.begin(), save_times.end());
  const double tol = 1e-9 * std::max(1.0, std::abs(t1 - t0));
  for (double s : save_times) {
    if (s < t0 - tol || s > t1 + tol) {
      throw std::invalid_argument("solve: save time " + std::to_string(s) + " outside [" +
                                  std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
  }
  return save_times;
}

/// Fourth-order Hermite interpolant on one accepted step.
Tensor hermite(double theta, double h, const Tensor& z0, const Tensor& f0, const Tensor& z1,
               const Tensor& f1) {
  const double t2 = theta * theta;
  const double t3 = t2 * theta;
  const double c0 = 2.0 * t3 - 3.0 * t2 + 1.0;
  const double c1 = (t3 - 2.0 * t2 + theta) * h;
  const double c2 = -2.0 * t3 + 3.0 * t2;
  const double c3 = (t3 - t2) * h;
  const double coeffs[] = {c0, c1, c2, c3};
  const Tensor* xs[] = {&z0, &f0, &z1, &f1};
  return lincomb(coeffs, xs);
}

}  // namespace

std::vector<double> refine_grid(const std::vector<double>& knots, std::size_t substeps) {
  if (knots.size() < 2 || substeps == 0) {
    throw std::invalid_argument("refine_grid: need >= 2 knots and substeps >= 1");
  }
  std::vector<double> grid;
  grid.reserve((knots.size() - 1) * substeps + 1);
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    for (std::size_t s = 0; s < substeps; ++s) {
      grid.push_back(knots[k] +
                     (knots[k + 1] - knots[k]) * static_cast<double>(s) /
                         static_cast<double>(substeps));
    }
  }
  grid.push_back(knots.back());
  return grid;
}

LatentPath tsit5_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                       std::vector<double> save_times, double rtol, double atol, double dt0) {
  if (!(t0 < t1)) throw std::invalid_argument("tsit5_solve: t0 must precede t1");
  const double span = t1 - t0;
  save_times = checked_save_times(std::move(save_times), t0, t1);

  LatentPath path;
  std::size_t next_save = 0;
  auto save_leq = [&](double t, const std::function<Tensor(double)>& state_at) {
    while (next_save < save_times.size() && save_times[next_save] <= t + 1e-12 * span) {
      path.times.push_back(save_times[next_save]);
      path.states.push_back(state_at(save_times[next_save]));
      ++next_save;
    }
  };

  Tensor z = z0;
  double t = t0;
  save_leq(t0, [&](double) { return z; });

  double dt = dt0 > 0.0 ? dt0 : span / 100.0;
  dt = std::min(dt, span);

  Tensor k1 = field(t, z);  // FSAL
  ++path.stats.field_evals;

  // PI controller in the Hairer style for a 5(4) pair.
  const double beta = 0.04;
  const double expo = 0.2 - 0.75 * beta;
  const double safe = 0.9;
  const double max_growth = 5.0, max_shrink = 0.1;
  double err_old = 1e-4;

  while (t < t1 - 1e-12 * span) {
    if (dt < 1e-12 * span) {
      throw SolverError("tsit5: step size underflow at t=" + std::to_string(t) +
                        " (dt=" + std::to_string(dt) + ", accepted=" +
                        std::to_string(path.stats.accepted) + ", rejected=" +
                        std::to_string(path.stats.rejected) + ")");
    }
    if (t + dt > t1) dt = t1 - t;
    const double h = dt;
    auto stage_t = [&](double c) { return std::min(t + c * h, t1); };

    const double c21[] = {1.0, h * kA21};
    const Tensor* x21[] = {&z, &k1};
    Tensor y2 = lincomb(c21, x21);
    Tensor k2 = field(stage_t(kC[1]), y2);

    const double c3[] = {1.0, h * kA31, h * kA32};
    const Tensor* x3[] = {&z, &k1, &k2};
    Tensor k3 = field(stage_t(kC[2]), lincomb(c3, x3));

    const double c4[] = {1.0, h * kA41, h * kA42, h * kA43};
    const Tensor* x4[] = {&z, &k1, &k2, &k3};
    Tensor k4 = field(stage_t(kC[3]), lincomb(c4, x4));

    const double c5[] = {1.0, h * kA51, h * kA52, h * kA53, h * kA54};
    const Tensor* x5[] = {&z, &k1, &k2, &k3, &k4};
    Tensor k5 = field(stage_t(kC[4]), lincomb(c5, x5));

    const double c6[] = {1.0, h * kA61, h * kA62, h * kA63, h * kA64, h * kA65};
    const Tensor* x6[] = {&z, &k1, &k2, &k3, &k4, &k5};
    Tensor k6 = field(stage_t(kC[5]), lincomb(c6, x6));

    const double cz[] = {1.0, h * kB[0], h * kB[1], h * kB[2], h * kB[3], h * kB[4], h * kB[5]};
    const Tensor* xz[] = {&z, &k1, &k2, &k3, &k4, &k5, &k6};
    Tensor z_new = lincomb(cz, xz);

    Tensor k7 = field(stage_t(kC[6]), z_new);
    path.stats.field_evals += 6;

    // Error estimate on detached values.
    Tensor err = Tensor::zeros(z.shape());
    {
      const Tensor* ks[7] = {&k1, &k2, &k3, &k4, &k5, &k6, &k7};
      double* pe = err.data();
      for (std::size_t s = 0; s < 7; ++s) {
        const double* pk = ks[s]->data();
        const double w = h * kE[s];
        for (std::size_t i = 0; i < err.size(); ++i) pe[i] += w * pk[i];
      }
    }
    const double err_norm = error_norm(err, z, z_new, rtol, atol);

    if (err_norm <= 1.0 || !std::isfinite(err_norm)) {
      if (!std::isfinite(err_norm)) {
        throw SolverError("tsit5: non-finite error estimate at t=" + std::to_string(t));
      }
      // Accept; emit dense output for save times inside (t, t+h].
      const double t_new = (t + h >= t1 - 1e-12 * span) ? t1 : t + h;
      save_leq(t_new, [&](double s) {
        if (s >= t_new - 1e-12 * span) return z_new;
        return hermite((s - t) / h, h, z, k1, z_new, k7);
      });
      t = t_new;
      z = z_new;
      k1 = k7;
      ++path.stats.accepted;

      const double e = std::max(err_norm, 1e-10);
      double factor = safe * std::pow(e, -expo) * std::pow(err_old, beta);
      factor = std::clamp(factor, max_shrink, max_growth);
      dt = h * factor;
      err_old = e;
    } else {
      ++path.stats.rejected;
      dt = h * std::max(max_shrink, safe * std::pow(err_norm, -expo));
    }
  }
  // Floating-point slack can leave the final save just past the loop.
  save_leq(t1, [&](double) { return z; });
  return path;
}

namespace {

LatentPath rk4_over_grid(const VectorField& field, const Tensor& z0,
                         const std::vector<double>& grid, std::vector<double> save_times) {
  const double t0 = grid.front();
  const double t1 = grid.back();
  const double span = t1 - t0;
  const double tol = 1e-9 * std::max(1.0, std::abs(span));
  save_times = checked_save_times(std::move(save_times), t0, t1);

  LatentPath path;
  std::size_t next_save = 0;
  auto maybe_save = [&](double t, const Tensor& z) {
    while (next_save < save_times.size() && save_times[next_save] <= t + tol) {
      if (std::abs(save_times[next_save] - t) > tol) {
        throw std::invalid_argument("rk4: save time " + std::to_string(save_times[next_save]) +
                                    " does not lie on the step grid");
      }
      path.times.push_back(save_times[next_save]);
      path.states.push_back(z);
      ++next_save;
    }
  };

  Tensor z = z0;
  maybe_save(t0, z);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double t = grid[k];
    const double h = grid[k + 1] - grid[k];
    Tensor k1 = field(t, z);
    const double ch[] = {1.0, h / 2.0};
    const Tensor* x2[] = {&z, &k1};
    Tensor k2 = field(t + h / 2.0, lincomb(ch, x2));
    const Tensor* x3[] = {&z, &k2};
    Tensor k3 = field(t + h / 2.0, lincomb(ch, x3));
    const double cf[] = {1.0, h};
    const Tensor* x4[] = {&z, &k3};
    Tensor k4 = field(std::min(t + h, t1), lincomb(cf, x4));
    const double cu[] = {1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0};
    const Tensor* xu[] = {&z, &k1, &k2, &k3, &k4};
    z = lincomb(cu, xu);
    path.stats.field_evals += 4;
    ++path.stats.accepted;
    maybe_save(grid[k + 1], z);
  }
  if (next_save < save_times.size()) {
    throw std::invalid_argument("rk4: save time " + std::to_string(save_times[next_save]) +
                                " beyond the integration grid");
  }
  return path;
}

}  // namespace

LatentPath rk4_solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                     std::size_t num_steps, std::vector<double> save_times) {
  if (!(t0 < t1)) throw std::invalid_argument("rk4_solve: t0 must precede t1");
  if (num_steps < 1) throw std::invalid_argument("rk4_solve: num_steps must be >= 1");
  std::vector<double> grid(num_steps + 1);
  for (std::size_t k = 0; k <= num_steps; ++k) {
    grid[k] = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(num_steps);
  }
  grid.back() = t1;
  return rk4_over_grid(field, z0, grid, std::move(save_times));
}

LatentPath rk4_solve_grid(const VectorField& field, const Tensor& z0, std::vector<double> grid,
                          std::vector<double> save_times) {
  if (grid.size() < 2) throw std::invalid_argument("rk4_solve_grid: need >= 2 grid points");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) {
      throw std::invalid_argument("rk4_solve_grid: grid must be strictly increasing");
    }
  }
  return rk4_over_grid(field, z0, grid, std::move(save_times));
}

LatentPath solve(const VectorField& field, const Tensor& z0, double t0, double t1,
                 std::vector<double> save_times, const SolverConfig& config) {
  switch (config.method) {
    case SolverMethod::Tsit5:
      return tsit5_solve(field, z0, t0, t1, std::move(save_times), config.rtol, config.atol,
                         config.dt0);
    case SolverMethod::RK4:
      return rk4_solve(field, z0, t0, t1, config.rk4_steps, std::move(save_times));
  }
  throw std::invalid_argument("solve: unknown method");
}

}  // namespace pengcde
