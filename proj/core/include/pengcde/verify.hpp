#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pengcde/model.hpp"
#include "pengcde/tensor.hpp"

namespace pengcde {

/// One measured quantity with its pass threshold.
struct CheckItem {
  std::string name;
  double value = 0;
  double threshold = 0;
  bool less_than = true;  // pass iff value < threshold (else value > threshold)
  bool pass = false;
};

struct CheckReport {
  std::string suite;
  std::vector<CheckItem> items;
  bool pass() const {
    for (const CheckItem& item : items) {
      if (!item.pass) return false;
    }
    return !items.empty();
  }
};

std::string format_report(const CheckReport& report);

/// Exhaustive basis-map equivariance over S2..S4 on integer matrices plus
/// forward-pass equivariance of the equivariant variants at n = 8 (and the
/// premultiplication variant's violation of it).
CheckReport check_equivariance(std::uint64_t seed = 7);

/// Reparametrization: solving in warped time with the control-derivative
/// form reproduces unwarped outputs at corresponding times.
CheckReport check_timewarp(std::uint64_t seed = 7);

/// Group-average projection properties, basis rank at n = 3 and 4, and the
/// linear-case flow identity: the Haar-averaged premultiplication field
/// decomposes exactly onto the 15-map span, and its flow matches the flow of
/// the decomposed equivariant model.
CheckReport check_projection(std::uint64_t seed = 7);

/// Reverse-mode gradients of a full forward + loss against central finite
/// differences, all parameters.
CheckReport check_gradients(std::uint64_t seed = 7);

/// Adaptive-solver accuracy on a closed-form problem and the fixed-step
/// solver's fourth-order convergence slope.
CheckReport check_solver_order();

/// Conservation, fixed-point, and permutation-covariance properties of the
/// simulated dynamical systems.
CheckReport check_dynamics(std::uint64_t seed = 7);

CheckReport run_check(const std::string& which);

/// Strictly monotone cubic time warp fixing both endpoints.
class CubicWarp {
 public:
  CubicWarp(double t0, double t1, double strength = 0.9, double center = 0.5);
  double operator()(double t) const;
  double deriv(double t) const;
  double inverse(double target) const;

 private:
  double t0_, t1_, a_, c_;
};

/// Per-epoch wall time of the equivariant-fusion model against the dense
/// premultiplication model across node counts, with fusion parameter counts.
struct ScalingPoint {
  std::size_t nodes = 0;
  double peng_epoch_seconds = 0;
  double premult_epoch_seconds = 0;
  std::size_t peng_fusion_params = 0;
  std::size_t premult_fusion_params = 0;
};
std::vector<ScalingPoint> scaling_bench(const std::vector<std::size_t>& sizes,
                                        std::uint64_t seed = 7, std::size_t snapshots = 12,
                                        std::size_t timed_epochs = 2);
std::string scaling_csv(const std::vector<ScalingPoint>& points);

}  // namespace pengcde
