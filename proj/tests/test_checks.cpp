#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "pengcde/verify.hpp"

using namespace pengcde;

namespace {

void require_pass(const CheckReport& report) {
  INFO(format_report(report));
  for (const CheckItem& item : report.items) {
    CAPTURE(item.name);
    CHECK(item.pass);
  }
  CHECK(report.pass());
}

}  // namespace

TEST_CASE("equivariance suite") { require_pass(check_equivariance()); }

TEST_CASE("time-warp suite") { require_pass(check_timewarp()); }

TEST_CASE("projection and linear-case suite") { require_pass(check_projection()); }

TEST_CASE("gradient suite") { require_pass(check_gradients()); }

TEST_CASE("solver order suite") { require_pass(check_solver_order()); }

TEST_CASE("dynamics suite") { require_pass(check_dynamics()); }

TEST_CASE("warp helper is monotone and invertible") {
  CubicWarp warp(0.0, 2.0);
  CHECK(warp(0.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(warp(2.0) == doctest::Approx(2.0).epsilon(1e-14));
  double prev = -1e-9;
  for (double t = 0.0; t <= 2.0; t += 0.01) {
    const double w = warp(t);
    CHECK(w > prev);
    prev = w;
    CHECK(std::abs(warp.inverse(w) - t) < 1e-10);
  }
  CHECK_THROWS_AS(CubicWarp(0.0, 1.0, 25.0), std::invalid_argument);
}

TEST_CASE("run_check dispatch") {
  CHECK(run_check("solver-order").pass());
  CHECK_THROWS_AS(run_check("nonsense"), std::invalid_argument);
}
