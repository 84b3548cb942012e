#include "pengcde/spline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pengcde {

CubicPath CubicPath::fit(std::vector<double> times, const std::vector<Tensor>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("CubicPath::fit: need at least 2 samples");
  if (times.size() != samples.size()) {
    throw std::invalid_argument("CubicPath::fit: times/samples length mismatch");
  }
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) {
      throw std::invalid_argument("CubicPath::fit: times must be strictly increasing");
    }
  }
  const Shape& shape = samples.front().shape();
  for (const Tensor& s : samples) {
    if (s.shape() != shape) throw std::invalid_argument("CubicPath::fit: ragged sample shapes");
  }

  const std::size_t n = times.size();
  const std::size_t channels = shape_size(shape);

  CubicPath path;
  path.knots_ = std::move(times);
  path.shape_ = shape;
  path.values_.reserve(n);
  for (const Tensor& s : samples) path.values_.push_back(s.clone());
  path.second_.assign(n, Tensor::zeros(shape));
  for (auto& m : path.second_) m = Tensor::zeros(shape);

  if (n == 2) return path;  // natural cubic through two points is the chord

  // Tridiagonal system for interior second derivatives, natural ends.
  // Solved once with the Thomas algorithm; the right-hand side is per
  // channel, the matrix is shared.
  const std::size_t interior = n - 2;
  std::vector<double> h(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) h[k] = path.knots_[k + 1] - path.knots_[k];

  std::vector<double> diag(interior), upper(interior), lower(interior);
  for (std::size_t i = 0; i < interior; ++i) {
    diag[i] = 2.0 * (h[i] + h[i + 1]);
    lower[i] = h[i];
    upper[i] = h[i + 1];
  }
  // Forward elimination factors are channel independent.
  std::vector<double> cprime(interior);
  cprime[0] = upper[0] / diag[0];
  for (std::size_t i = 1; i < interior; ++i) {
    cprime[i] = upper[i] / (diag[i] - lower[i] * cprime[i - 1]);
  }

  std::vector<double> rhs(interior), sol(interior);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < interior; ++i) {
      const double y0 = path.values_[i].data()[c];
      const double y1 = path.values_[i + 1].data()[c];
      const double y2 = path.values_[i + 2].data()[c];
      rhs[i] = 6.0 * ((y2 - y1) / h[i + 1] - (y1 - y0) / h[i]);
    }
    double prev = rhs[0] / diag[0];
    sol[0] = prev;
    for (std::size_t i = 1; i < interior; ++i) {
      prev = (rhs[i] - lower[i] * prev) / (diag[i] - lower[i] * cprime[i - 1]);
      sol[i] = prev;
    }
    for (std::size_t i = interior; i-- > 1;) {
      sol[i - 1] -= cprime[i - 1] * sol[i];
    }
    for (std::size_t i = 0; i < interior; ++i) path.second_[i + 1].data()[c] = sol[i];
  }
  return path;
}

std::size_t CubicPath::interval_of(double t) const {
  if (t < knots_.front() || t > knots_.back()) {
    throw std::out_of_range("CubicPath: t=" + std::to_string(t) + " outside [" +
                            std::to_string(knots_.front()) + ", " +
                            std::to_string(knots_.back()) + "]");
  }
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  std::size_t k = static_cast<std::size_t>(it - knots_.begin());
  if (k == 0) return 0;
  if (k >= knots_.size()) return knots_.size() - 2;
  return k - 1;
}

Tensor CubicPath::eval(double t) const {
  const std::size_t k = interval_of(t);
  const double h = knots_[k + 1] - knots_[k];
  const double a = (knots_[k + 1] - t) / h;
  const double b = (t - knots_[k]) / h;
  const double qa = (a * a * a - a) * h * h / 6.0;
  const double qb = (b * b * b - b) * h * h / 6.0;
  Tensor out = Tensor::zeros(shape_);
  const double* y0 = values_[k].data();
  const double* y1 = values_[k + 1].data();
  const double* m0 = second_[k].data();
  const double* m1 = second_[k + 1].data();
  double* o = out.data();
  for (std::size_t c = 0; c < out.size(); ++c) {
    o[c] = a * y0[c] + b * y1[c] + qa * m0[c] + qb * m1[c];
  }
  return out;
}

Tensor CubicPath::deriv(double t) const {
  const std::size_t k = interval_of(t);
  const double h = knots_[k + 1] - knots_[k];
  const double a = (knots_[k + 1] - t) / h;
  const double b = (t - knots_[k]) / h;
  const double da = -(3.0 * a * a - 1.0) * h / 6.0;
  const double db = (3.0 * b * b - 1.0) * h / 6.0;
  Tensor out = Tensor::zeros(shape_);
  const double* y0 = values_[k].data();
  const double* y1 = values_[k + 1].data();
  const double* m0 = second_[k].data();
  const double* m1 = second_[k + 1].data();
  double* o = out.data();
  for (std::size_t c = 0; c < out.size(); ++c) {
    o[c] = (y1[c] - y0[c]) / h + da * m0[c] + db * m1[c];
  }
  return out;
}

std::vector<Tensor> augment_time(const std::vector<Tensor>& samples,
                                 const std::vector<double>& times, TimeAugment mode) {
  if (samples.size() != times.size()) {
    throw std::invalid_argument("augment_time: times/samples length mismatch");
  }
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Tensor& s = samples[k];
    const double t = times[k];
    if (mode == TimeAugment::NewAxis) {
      Shape shape = s.shape();
      shape.push_back(2);
      Tensor a = Tensor::zeros(shape);
      const double* p = s.data();
      double* o = a.data();
      for (std::size_t i = 0; i < s.size(); ++i) {
        o[2 * i] = t;
        o[2 * i + 1] = p[i];
      }
      out.push_back(std::move(a));
    } else {
      if (s.rank() != 2) {
        throw std::invalid_argument("augment_time: ExtendChannels expects rank-2 samples");
      }
      const std::size_t n = s.dim(0), d = s.dim(1);
      Tensor a = Tensor::zeros({n, d + 1});
      for (std::size_t i = 0; i < n; ++i) {
        a.at(i, 0) = t;
        for (std::size_t j = 0; j < d; ++j) a.at(i, j + 1) = s.at(i, j);
      }
      out.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace pengcde
