#pragma once

#include <vector>

#include "pengcde/tensor.hpp"

namespace pengcde {

/// How a time channel is attached to a sequence of samples.
enum class TimeAugment {
  NewAxis,         // n x n        -> n x n x 2   (channel 0 holds t)
  ExtendChannels,  // n x d        -> n x (d+1)   (channel 0 holds t)
};

/// Piecewise-cubic natural spline through tensor-valued samples, fitted
/// channel by channel. Values, first and second derivatives are continuous
/// at interior knots and the second derivative vanishes at both ends.
/// Immutable after fit; safe to share across threads.
class CubicPath {
 public:
  /// Requires at least two samples with strictly increasing times and one
  /// common shape.
  static CubicPath fit(std::vector<double> times, const std::vector<Tensor>& samples);

  Tensor eval(double t) const;
  Tensor deriv(double t) const;

  double t_begin() const { return knots_.front(); }
  double t_end() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }
  const Shape& channel_shape() const { return shape_; }

 private:
  std::size_t interval_of(double t) const;

  std::vector<double> knots_;
  Shape shape_;
  std::vector<Tensor> values_;   // the samples, one per knot
  std::vector<Tensor> second_;   // second derivatives at knots, per channel
};

/// Prepends a time channel holding t_k to each sample, so the fitted path
/// carries (t, value) with d(time channel)/dt == 1.
std::vector<Tensor> augment_time(const std::vector<Tensor>& samples,
                                 const std::vector<double>& times, TimeAugment mode);

}  // namespace pengcde
