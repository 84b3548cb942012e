#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace pengcde {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when a tensor acquires a NaN/Inf entry while debug checks are on,
/// or when a numeric routine cannot continue.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit reals. Copies share the underlying
/// buffer; use clone() for an independent copy. A tensor may carry a node id
/// linking it into the currently active Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);  // rank-0
  static Tensor eye(std::size_t n);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  std::span<const double> values() const { return {data_->data(), data_->size()}; }

  double value() const;  // single-element extraction
  double& at(std::size_t i) { return (*data_)[i]; }
  double at(std::size_t i) const { return (*data_)[i]; }
  double& at(std::size_t i, std::size_t j) { return (*data_)[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }

  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // same buffer, new extents

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Identity of the recording this tensor participates in (0 = none).
  std::uint64_t tape_serial = 0;
  int node = -1;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

/// When enabled, every operation validates that its result is finite.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();
void check_finite(const Tensor& t, const char* what);

// ---------------------------------------------------------------------------
// Recording (reverse-mode differentiation)
// ---------------------------------------------------------------------------

/// Accumulates `delta` into `dst`, allocating zeros first if `dst` is empty.
void accumulate_grad(Tensor& dst, const Tensor& delta);

/// An ordered record of operations. Each recorded node knows how to pull the
/// gradient of its output back to its inputs. Nodes are appended in execution
/// order, so the record is always topologically sorted; a backward pass walks
/// it once in reverse.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t serial() const { return serial_; }

  /// Marks `t` as a leaf of this record. Parameters are the leaves reported
  /// by backward().
  void watch(Tensor& t, bool parameter = true);

  /// Appends an operation node. `pull` receives the output gradient and a
  /// per-node gradient table it should accumulate input gradients into.
  using PullFn = std::function<void(const Tensor& grad, std::vector<Tensor>& grad_of)>;
  int record(std::span<const int> input_nodes, Tensor& out, PullFn pull);
  int record(std::initializer_list<int> input_nodes, Tensor& out, PullFn pull);

  /// Exact reverse-mode gradients of a scalar `loss` for every parameter
  /// leaf, keyed by node id. May be called repeatedly on the same record.
  std::unordered_map<int, Tensor> backward(const Tensor& loss) const;

  std::size_t num_nodes() const { return nodes_.size(); }
  bool is_parameter(int node) const;

 private:
  struct OpNode {
    std::array<int, 8> inputs{-1, -1, -1, -1, -1, -1, -1, -1};
    std::uint8_t num_inputs = 0;
    bool parameter = false;
    PullFn pull;  // empty for leaves
  };
  std::uint64_t serial_;
  std::vector<OpNode> nodes_;
};

/// RAII activation of a tape on the current thread. Operations executed in
/// scope record themselves when their inputs are tracked. One record may be
/// active per thread at a time; independent threads may each run their own.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// True when `t` belongs to the active record on this thread.
bool tracked(const Tensor& t);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

enum class OpKind { Add, Sub, Mul, Scale, Tanh, Relu, Sigmoid };

Tensor matmul(const Tensor& a, const Tensor& b);

/// Entrywise arithmetic with trailing-dimension broadcasting: the shape of
/// the smaller operand must be a suffix of the larger one's (rank-0 tensors
/// broadcast with everything).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Uniform dispatcher over the supported entrywise kinds. Binary kinds need
/// `b`; Scale needs `c`.
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b = nullptr, double c = 0.0);

Tensor sum(const Tensor& a);  // rank-0 total

/// Fused linear combination sum_i coeffs[i] * xs[i] of same-shaped tensors.
/// Records as a single node, which keeps solver steps compact.
Tensor lincomb(std::span<const double> coeffs, std::span<const Tensor* const> xs);

/// Row-wise contraction used when a vector field is driven by per-node
/// controls: `flat` is n x (channels*m), `control` is n x m, and entry (i,c)
/// of the result is sum_j flat[i, c*m+j] * control[i, j].
Tensor node_contract(const Tensor& flat, const Tensor& control, std::size_t channels);

/// Per-row normalization over the last axis with learnable gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t params_checked = 0;
  std::string worst;  // "param#/index" of the largest deviation
};

/// Compares reverse-mode gradients of the scalar produced by `build_loss`
/// against central finite differences of step `h`, entry by entry over every
/// tensor in `params`. `build_loss` must be deterministic and must re-read
/// the parameter tensors on every call.
GradCheckReport gradcheck(const std::function<Tensor()>& build_loss,
                          std::span<Tensor* const> params, double h);

}  // namespace pengcde
