#include "pengcde/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace pengcde {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::atomic<bool> g_debug_checks{false};
std::atomic<std::uint64_t> g_tape_serial{1};
thread_local Tape* g_active_tape = nullptr;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks_enabled() { return g_debug_checks; }

void check_finite(const Tensor& t, const char* what) {
  const double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(p[i])) {
      throw NonFiniteError(std::string(what) + ": non-finite entry at flat index " +
                           std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t;
  const std::size_t n = shape_size(shape);
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(n, value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: " + shape_str(shape) + " holds " +
                                std::to_string(shape_size(shape)) + " entries, got " +
                                std::to_string(values.size()));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  if (debug_checks_enabled()) check_finite(t, "Tensor::from");
  return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::eye(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::value() const {
  if (size() != 1) {
    throw std::invalid_argument("Tensor::value: expected a single element, shape " +
                                shape_str(shape_));
  }
  return (*data_)[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (data_) t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw std::invalid_argument("Tensor::reshaped: size mismatch " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)) {}

void Tape::watch(Tensor& t, bool parameter) {
  if (!t.defined()) throw std::invalid_argument("Tape::watch: undefined tensor");
  OpNode node;
  node.parameter = parameter;
  t.tape_serial = serial_;
  t.node = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
}

int Tape::record(std::span<const int> input_nodes, Tensor& out, PullFn pull) {
  OpNode node;
  if (input_nodes.size() > node.inputs.size()) {
    throw std::invalid_argument("Tape::record: too many inputs");
  }
  for (int id : input_nodes) node.inputs[node.num_inputs++] = id;
  node.pull = std::move(pull);
  out.tape_serial = serial_;
  out.node = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  return out.node;
}

int Tape::record(std::initializer_list<int> input_nodes, Tensor& out, PullFn pull) {
  return record(std::span<const int>(input_nodes.begin(), input_nodes.size()), out,
                std::move(pull));
}

bool Tape::is_parameter(int node) const {
  return node >= 0 && node < static_cast<int>(nodes_.size()) &&
         nodes_[static_cast<std::size_t>(node)].parameter;
}

std::unordered_map<int, Tensor> Tape::backward(const Tensor& loss) const {
  if (loss.tape_serial != serial_ || loss.node < 0) {
    throw std::invalid_argument("backward: loss was not produced within this record");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, shape " +
                                shape_str(loss.shape()));
  }

  // Restrict the sweep to nodes the loss actually depends on.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<int> stack{loss.node};
  reachable[static_cast<std::size_t>(loss.node)] = 1;
  while (!stack.empty()) {
    const OpNode& n = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    for (std::uint8_t i = 0; i < n.num_inputs; ++i) {
      int in = n.inputs[i];
      if (in >= 0 && !reachable[static_cast<std::size_t>(in)]) {
        reachable[static_cast<std::size_t>(in)] = 1;
        stack.push_back(in);
      }
    }
  }

  std::vector<Tensor> grad_of(nodes_.size());
  grad_of[static_cast<std::size_t>(loss.node)] = Tensor::scalar(1.0);

  for (int id = loss.node; id >= 0; --id) {
    const std::size_t i = static_cast<std::size_t>(id);
    if (!reachable[i] || !grad_of[i].defined() || !nodes_[i].pull) continue;
    nodes_[i].pull(grad_of[i], grad_of);
  }

  std::unordered_map<int, Tensor> grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].parameter && grad_of[i].defined()) {
      if (debug_checks_enabled()) check_finite(grad_of[i], "backward");
      grads.emplace(static_cast<int>(i), std::move(grad_of[i]));
    }
  }
  return grads;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

bool tracked(const Tensor& t) {
  Tape* tape = g_active_tape;
  return tape && t.node >= 0 && t.tape_serial == tape->serial();
}

void accumulate_grad(Tensor& dst, const Tensor& delta) {
  if (!dst.defined()) {
    dst = delta.clone();
    return;
  }
  if (!dst.same_shape(delta)) {
    throw std::invalid_argument("accumulate_grad: shape mismatch " + shape_str(dst.shape()) +
                                " vs " + shape_str(delta.shape()));
  }
  double* d = dst.data();
  const double* s = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

namespace {

/// Gradient of a broadcast operand: fold the leading axes of `grad` back down
/// to `shape` by summation.
Tensor reduce_to_shape(const Tensor& grad, const Shape& shape) {
  const std::size_t inner = shape_size(shape);
  if (grad.size() == inner && grad.shape() == shape) return grad;
  Tensor out = Tensor::zeros(shape);
  const double* g = grad.data();
  double* o = out.data();
  const std::size_t total = grad.size();
  for (std::size_t i = 0; i < total; ++i) o[i % inner] += g[i];
  return out;
}

/// Validates the trailing-dimension rule and returns the output shape.
const Shape& broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& big = a.rank() >= b.rank() ? a.shape() : b.shape();
  const Shape& small = a.rank() >= b.rank() ? b.shape() : a.shape();
  const std::size_t offset = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[offset + i]) shape_error(op, a, b);
  }
  return big;
}

template <typename F>
Tensor binary_broadcast(const char* op, const Tensor& a, const Tensor& b, F f) {
  const Shape& out_shape = broadcast_shape(op, a, b);
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t total = out.size();
  const std::size_t na = a.size(), nb = b.size();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (na == total && nb == total) {
    for (std::size_t i = 0; i < total; ++i) po[i] = f(pa[i], pb[i]);
  } else if (na == total) {
    for (std::size_t i = 0; i < total; ++i) po[i] = f(pa[i], pb[i % nb]);
  } else {
    for (std::size_t i = 0; i < total; ++i) po[i] = f(pa[i % na], pb[i]);
  }
  return out;
}

void maybe_check(const Tensor& t, const char* op) {
  if (debug_checks_enabled()) check_finite(t, op);
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  maybe_check(out, "matmul");

  if (Tape* tape = active_tape(); tape && (tracked(a) || tracked(b))) {
    const int ia = tracked(a) ? a.node : -1;
    const int ib = tracked(b) ? b.node : -1;
    Tensor sa = a, sb = b;
    tape->record({ia, ib}, out, [ia, ib, sa, sb](const Tensor& g, std::vector<Tensor>& grad_of) {
      const std::size_t m = sa.dim(0), k = sa.dim(1), n = sb.dim(1);
      if (ia >= 0) {  // dA = G B^T
        Tensor da = Tensor::zeros({m, k});
        const double* pg = g.data();
        const double* pb = sb.data();
        double* pd = da.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            const double* grow = pg + i * n;
            const double* brow = pb + l * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            pd[i * k + l] = acc;
          }
        accumulate_grad(grad_of[static_cast<std::size_t>(ia)], da);
      }
      if (ib >= 0) {  // dB = A^T G
        Tensor db = Tensor::zeros({k, n});
        const double* pg = g.data();
        const double* pa = sa.data();
        double* pd = db.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = pg + i * n;
          for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            double* drow = pd + l * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
          }
        }
        accumulate_grad(grad_of[static_cast<std::size_t>(ib)], db);
      }
    });
  }
  return out;
}

namespace {

/// Shared recording logic for add/sub/mul.
template <typename Fwd, typename PullA, typename PullB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, PullA pull_a,
                 PullB pull_b) {
  Tensor out = binary_broadcast(name, a, b, fwd);
  maybe_check(out, name);
  if (Tape* tape = active_tape(); tape && (tracked(a) || tracked(b))) {
    const int ia = tracked(a) ? a.node : -1;
    const int ib = tracked(b) ? b.node : -1;
    Tensor sa = a, sb = b;
    tape->record({ia, ib},
                 out, [ia, ib, sa, sb, pull_a, pull_b](const Tensor& g, std::vector<Tensor>& grad_of) {
                   if (ia >= 0) accumulate_grad(grad_of[static_cast<std::size_t>(ia)],
                                                reduce_to_shape(pull_a(g, sa, sb), sa.shape()));
                   if (ib >= 0) accumulate_grad(grad_of[static_cast<std::size_t>(ib)],
                                                reduce_to_shape(pull_b(g, sa, sb), sb.shape()));
                 });
  }
  return out;
}

Tensor broadcast_mul(const Tensor& g, const Tensor& other) {
  return binary_broadcast("mul", g, other, [](double x, double y) { return x * y; });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return g; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return g; },
      [](const Tensor& g, const Tensor&, const Tensor&) {
        Tensor neg = g.clone();
        double* p = neg.data();
        for (std::size_t i = 0; i < neg.size(); ++i) p[i] = -p[i];
        return neg;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](const Tensor& g, const Tensor&, const Tensor& sb) { return broadcast_mul(g, sb); },
      [](const Tensor& g, const Tensor& sa, const Tensor&) { return broadcast_mul(g, sa); });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a.clone();
  double* p = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) p[i] *= c;
  maybe_check(out, "scale");
  if (Tape* tape = active_tape(); tape && tracked(a)) {
    const int ia = a.node;
    tape->record({ia}, out, [ia, c](const Tensor& g, std::vector<Tensor>& grad_of) {
      Tensor da = g.clone();
      double* p = da.data();
      for (std::size_t i = 0; i < da.size(); ++i) p[i] *= c;
      accumulate_grad(grad_of[static_cast<std::size_t>(ia)], da);
    });
  }
  return out;
}

namespace {

/// Unary entrywise op whose gradient is a function of the op's output.
template <typename Fwd, typename Dout>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Dout dout) {
  Tensor out = a.clone();
  double* p = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) p[i] = fwd(p[i]);
  maybe_check(out, name);
  if (Tape* tape = active_tape(); tape && tracked(a)) {
    const int ia = a.node;
    Tensor saved = out;
    tape->record({ia}, out, [ia, saved, dout](const Tensor& g, std::vector<Tensor>& grad_of) {
      Tensor da = g.clone();
      double* pd = da.data();
      const double* py = saved.data();
      for (std::size_t i = 0; i < da.size(); ++i) pd[i] *= dout(py[i]);
      accumulate_grad(grad_of[static_cast<std::size_t>(ia)], da);
    });
  }
  return out;
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y) { return y * (1.0 - y); });
}

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b, double c) {
  const bool needs_b = kind == OpKind::Add || kind == OpKind::Sub || kind == OpKind::Mul;
  if (needs_b && b == nullptr) {
    throw std::invalid_argument("elementwise: binary kind requires a second operand");
  }
  if (!needs_b && b != nullptr) {
    throw std::invalid_argument("elementwise: unary kind takes no second operand");
  }
  switch (kind) {
    case OpKind::Add: return add(a, *b);
    case OpKind::Sub: return sub(a, *b);
    case OpKind::Mul: return mul(a, *b);
    case OpKind::Scale: return scale(a, c);
    case OpKind::Tanh: return tanh(a);
    case OpKind::Relu: return relu(a);
    case OpKind::Sigmoid: return sigmoid(a);
  }
  throw std::invalid_argument("elementwise: unknown op kind");
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  const double* p = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += p[i];
  Tensor out = Tensor::scalar(acc);
  maybe_check(out, "sum");
  if (Tape* tape = active_tape(); tape && tracked(a)) {
    const int ia = a.node;
    Shape in_shape = a.shape();
    tape->record({ia}, out, [ia, in_shape](const Tensor& g, std::vector<Tensor>& grad_of) {
      accumulate_grad(grad_of[static_cast<std::size_t>(ia)],
                      Tensor::full(in_shape, g.value()));
    });
  }
  return out;
}

Tensor lincomb(std::span<const double> coeffs, std::span<const Tensor* const> xs) {
  if (coeffs.size() != xs.size() || xs.empty()) {
    throw std::invalid_argument("lincomb: needs matching, non-empty coefficient/tensor lists");
  }
  const Shape& shape = xs[0]->shape();
  Tensor out = Tensor::zeros(shape);
  double* po = out.data();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (xs[k]->shape() != shape) shape_error("lincomb", *xs[0], *xs[k]);
    const double c = coeffs[k];
    const double* p = xs[k]->data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += c * p[i];
  }
  maybe_check(out, "lincomb");

  if (Tape* tape = active_tape()) {
    std::vector<int> ids;
    std::vector<double> cs;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (tracked(*xs[k])) {
        ids.push_back(xs[k]->node);
        cs.push_back(coeffs[k]);
      }
    }
    if (!ids.empty()) {
      tape->record(std::span<const int>(ids.data(), ids.size()), out,
                   [ids, cs](const Tensor& g, std::vector<Tensor>& grad_of) {
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       Tensor d = g.clone();
                       double* p = d.data();
                       for (std::size_t i = 0; i < d.size(); ++i) p[i] *= cs[k];
                       accumulate_grad(grad_of[static_cast<std::size_t>(ids[k])], d);
                     }
                   });
    }
  }
  return out;
}

Tensor node_contract(const Tensor& flat, const Tensor& control, std::size_t channels) {
  if (flat.rank() != 2 || control.rank() != 2 || flat.dim(0) != control.dim(0) ||
      flat.dim(1) != channels * control.dim(1)) {
    shape_error("node_contract", flat, control);
  }
  const std::size_t n = flat.dim(0), m = control.dim(1);
  Tensor out = Tensor::zeros({n, channels});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += flat.at(i, c * m + j) * control.at(i, j);
      out.at(i, c) = acc;
    }
  maybe_check(out, "node_contract");

  if (Tape* tape = active_tape(); tape && (tracked(flat) || tracked(control))) {
    const int ifl = tracked(flat) ? flat.node : -1;
    const int ic = tracked(control) ? control.node : -1;
    Tensor sf = flat, sc = control;
    tape->record({ifl, ic}, out,
                 [ifl, ic, sf, sc, channels](const Tensor& g, std::vector<Tensor>& grad_of) {
                   const std::size_t n = sf.dim(0), m = sc.dim(1);
                   if (ifl >= 0) {
                     Tensor df = Tensor::zeros(sf.shape());
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t c = 0; c < channels; ++c)
                         for (std::size_t j = 0; j < m; ++j)
                           df.at(i, c * m + j) = g.at(i, c) * sc.at(i, j);
                     accumulate_grad(grad_of[static_cast<std::size_t>(ifl)], df);
                   }
                   if (ic >= 0) {
                     Tensor dc = Tensor::zeros(sc.shape());
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < m; ++j) {
                         double acc = 0.0;
                         for (std::size_t c = 0; c < channels; ++c)
                           acc += g.at(i, c) * sf.at(i, c * m + j);
                         dc.at(i, j) = acc;
                       }
                     accumulate_grad(grad_of[static_cast<std::size_t>(ic)], dc);
                   }
                 });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1)) {
    shape_error("layer_norm", x, gain);
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d});
  Tensor xhat = Tensor::zeros({n, d});
  Tensor inv_std = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(i) = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x.at(i, j) - mean) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = gain.at(j) * h + bias.at(j);
    }
  }
  maybe_check(out, "layer_norm");

  if (Tape* tape = active_tape(); tape && (tracked(x) || tracked(gain) || tracked(bias))) {
    const int ix = tracked(x) ? x.node : -1;
    const int ig = tracked(gain) ? gain.node : -1;
    const int ib = tracked(bias) ? bias.node : -1;
    Tensor sgain = gain;
    tape->record(
        {ix, ig, ib}, out,
        [ix, ig, ib, xhat, inv_std, sgain](const Tensor& g, std::vector<Tensor>& grad_of) {
          const std::size_t n = xhat.dim(0), d = xhat.dim(1);
          if (ig >= 0) {
            Tensor dg = Tensor::zeros({d});
            for (std::size_t j = 0; j < d; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < n; ++i) acc += g.at(i, j) * xhat.at(i, j);
              dg.at(j) = acc;
            }
            accumulate_grad(grad_of[static_cast<std::size_t>(ig)], dg);
          }
          if (ib >= 0) {
            Tensor db = Tensor::zeros({d});
            for (std::size_t j = 0; j < d; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < n; ++i) acc += g.at(i, j);
              db.at(j) = acc;
            }
            accumulate_grad(grad_of[static_cast<std::size_t>(ib)], db);
          }
          if (ix >= 0) {
            Tensor dx = Tensor::zeros({n, d});
            for (std::size_t i = 0; i < n; ++i) {
              double mean_dh = 0.0, mean_dh_xhat = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                const double dh = g.at(i, j) * sgain.at(j);
                mean_dh += dh;
                mean_dh_xhat += dh * xhat.at(i, j);
              }
              mean_dh /= static_cast<double>(d);
              mean_dh_xhat /= static_cast<double>(d);
              for (std::size_t j = 0; j < d; ++j) {
                const double dh = g.at(i, j) * sgain.at(j);
                dx.at(i, j) = inv_std.at(i) * (dh - mean_dh - xhat.at(i, j) * mean_dh_xhat);
              }
            }
            accumulate_grad(grad_of[static_cast<std::size_t>(ix)], dx);
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckReport gradcheck(const std::function<Tensor()>& build_loss,
                          std::span<Tensor* const> params, double h) {
  if (h <= 0.0) throw std::invalid_argument("gradcheck: h must be positive");

  Tape tape;
  std::unordered_map<int, Tensor> grads;
  {
    TapeScope scope(tape);
    for (Tensor* p : params) tape.watch(*p);
    Tensor loss = build_loss();
    if (!std::isfinite(loss.value())) throw NonFiniteError("gradcheck: non-finite loss");
    grads = tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const Tensor* ad = nullptr;
    if (auto it = grads.find(p.node); it != grads.end()) ad = &it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double up = build_loss().value();
      p.data()[i] = saved - h;
      const double down = build_loss().value();
      p.data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("gradcheck: non-finite loss during finite differences");
      }
      const double fd = (up - down) / (2.0 * h);
      const double adv = ad ? ad->data()[i] : 0.0;
      const double rel = std::abs(adv - fd) / (std::abs(fd) + 1e-12);
      ++report.params_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "param" + std::to_string(pi) + "/" + std::to_string(i);
      }
    }
  }
  return report;
}

}  // namespace pengcde
