#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pengcde/equivariant.hpp"
#include "pengcde/rng.hpp"
#include "pengcde/solver.hpp"
#include "pengcde/spline.hpp"
#include "pengcde/tensor.hpp"

using namespace pengcde;

namespace {

Tensor rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// tensor: forward semantics
// ---------------------------------------------------------------------------

TEST_CASE("matmul identity and zero") {
  Tensor b = rand_tensor({3, 4}, 1);
  CHECK(max_abs_diff(matmul(Tensor::eye(3), b), b) == 0.0);

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor z = Tensor::zeros({2, 2});
  Tensor prod = matmul(a, z);
  for (std::size_t i = 0; i < prod.size(); ++i) CHECK(prod.data()[i] == 0.0);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("elementwise basics and broadcast") {
  Tensor a = rand_tensor({4, 3}, 2);
  CHECK(tanh(Tensor::scalar(0.0)).value() == 0.0);
  CHECK(max_abs_diff(mul(a, Tensor::ones({4, 3})), a) == 0.0);

  // trailing-dimension broadcast: (4x3) + (3)
  Tensor row = Tensor::from({3}, {1, 2, 3});
  Tensor s = add(a, row);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(s.at(i, j) == a.at(i, j) + row.at(j));

  CHECK_THROWS_AS(add(a, Tensor::from({2}, {1, 2})), std::invalid_argument);

  // dispatcher arity errors
  CHECK_THROWS_AS(elementwise(OpKind::Add, a), std::invalid_argument);
  Tensor b = Tensor::ones({4, 3});
  CHECK_THROWS_AS(elementwise(OpKind::Tanh, a, &b), std::invalid_argument);
  CHECK(max_abs_diff(elementwise(OpKind::Scale, a, nullptr, 2.0), scale(a, 2.0)) == 0.0);
}

TEST_CASE("debug checks reject non-finite values") {
  set_debug_checks(true);
  CHECK_THROWS_AS(Tensor::from({1}, {std::numeric_limits<double>::infinity()}), NonFiniteError);
  set_debug_checks(false);
}

// ---------------------------------------------------------------------------
// tensor: reverse mode
// ---------------------------------------------------------------------------

TEST_CASE("backward of x^2 and of sum(Wv)") {
  Tensor x = Tensor::scalar(3.0);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.watch(x);
    Tensor loss = mul(x, x);
    auto grads = tape.backward(loss);
    CHECK(grads.at(x.node).value() == doctest::Approx(6.0).epsilon(1e-14));
  }

  Tensor w = rand_tensor({3, 2}, 4);
  Tensor v = rand_tensor({2, 1}, 5);
  Tape tape2;
  {
    TapeScope scope(tape2);
    tape2.watch(w);
    Tensor loss = sum(matmul(w, v));
    auto grads = tape2.backward(loss);
    const Tensor& gw = grads.at(w.node);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(gw.at(i, j) == doctest::Approx(v.at(j, 0)).epsilon(1e-14));
      }
  }
}

TEST_CASE("relu gradient is the step function") {
  Tensor x = Tensor::from({2}, {1.5, -0.5});
  Tape tape;
  TapeScope scope(tape);
  tape.watch(x);
  Tensor loss = sum(relu(x));
  auto grads = tape.backward(loss);
  CHECK(grads.at(x.node).at(0) == 1.0);
  CHECK(grads.at(x.node).at(1) == 0.0);
}

TEST_CASE("backward validates the loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  Tape tape;
  TapeScope scope(tape);
  tape.watch(x);
  Tensor vec = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(vec), std::invalid_argument);  // not scalar
  Tensor outside = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(outside), std::invalid_argument);  // not recorded
}

TEST_CASE("backward is linear in the loss") {
  Tensor x = rand_tensor({3, 3}, 6);
  Tape tape;
  TapeScope scope(tape);
  tape.watch(x);
  Tensor l1 = sum(mul(x, x));
  Tensor l2 = sum(tanh(x));
  const double alpha = 0.37, beta = -1.21;
  Tensor combined = add(scale(l1, alpha), scale(l2, beta));
  auto g1 = tape.backward(l1);
  auto g2 = tape.backward(l2);
  auto gc = tape.backward(combined);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double expected = alpha * g1.at(x.node).data()[i] + beta * g2.at(x.node).data()[i];
    worst = std::max(worst, std::abs(gc.at(x.node).data()[i] - expected));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("replaying a record is bit-identical") {
  auto run = [] {
    Tensor w = rand_tensor({4, 4}, 7);
    Tensor v = rand_tensor({4, 1}, 8);
    Tape tape;
    TapeScope scope(tape);
    tape.watch(w);
    Tensor loss = sum(tanh(matmul(w, v)));
    auto grads = tape.backward(loss);
    return std::make_pair(loss.value(), grads.at(w.node).clone());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("gradcheck: quadratic, tanh mlp, unrolled rk4") {
  // quadratic form is exact for central differences up to roundoff
  Tensor q = rand_tensor({4, 1}, 9);
  Tensor h = rand_tensor({4, 4}, 10);
  auto quad_loss = [&]() { return sum(mul(matmul(h, q), q)); };
  {
    Tensor* params[] = {&q};
    CHECK(gradcheck(quad_loss, params, 1e-5).max_rel_error < 1e-9);
  }

  Tensor w1 = rand_tensor({5, 4}, 11), w2 = rand_tensor({1, 5}, 12);
  Tensor input = rand_tensor({4, 1}, 13);
  auto mlp_loss = [&]() { return sum(tanh(matmul(w2, tanh(matmul(w1, input))))); };
  {
    Tensor* params[] = {&w1, &w2};
    CHECK(gradcheck(mlp_loss, params, 1e-5).max_rel_error < 1e-6);
  }

  // linear field dz/dt = M z unrolled through fixed RK4 steps
  Tensor m = rand_tensor({3, 3}, 14, -0.5, 0.5);
  Tensor z0 = rand_tensor({3, 1}, 15);
  auto rk4_loss = [&]() {
    VectorField field = [&](double, const Tensor& z) { return matmul(m, z); };
    LatentPath path = rk4_solve(field, z0, 0.0, 1.0, 8, {1.0});
    return sum(mul(path.states.back(), path.states.back()));
  };
  {
    Tensor* params[] = {&m};
    CHECK(gradcheck(rk4_loss, params, 1e-5).max_rel_error < 1e-5);
  }
}

TEST_CASE("sum(AB) gradient matches central differences") {
  Tensor a = rand_tensor({3, 4}, 16);
  Tensor b = rand_tensor({4, 2}, 17);
  auto loss = [&]() { return sum(matmul(a, b)); };
  Tensor* params[] = {&a};
  CHECK(gradcheck(loss, params, 1e-5).max_rel_error < 1e-9);
}

// ---------------------------------------------------------------------------
// spline
// ---------------------------------------------------------------------------

TEST_CASE("two samples give the chord") {
  std::vector<double> times = {0.0, 2.0};
  std::vector<Tensor> samples = {Tensor::from({2}, {1.0, -1.0}), Tensor::from({2}, {3.0, 5.0})};
  CubicPath path = CubicPath::fit(times, samples);
  for (double t : {0.0, 0.5, 1.1, 2.0}) {
    Tensor v = path.eval(t);
    CHECK(v.at(0) == doctest::Approx(1.0 + t).epsilon(1e-14));
    CHECK(v.at(1) == doctest::Approx(-1.0 + 3.0 * t).epsilon(1e-14));
    Tensor d = path.deriv(t);
    CHECK(d.at(0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(d.at(1) == doctest::Approx(3.0).epsilon(1e-14));
  }
}

TEST_CASE("linear data reproduced exactly") {
  std::vector<double> times = {0.0, 0.3, 1.1, 1.4, 2.0};
  std::vector<Tensor> samples;
  for (double t : times) samples.push_back(Tensor::scalar(t));
  CubicPath path = CubicPath::fit(times, samples);
  for (double t = 0.0; t <= 2.0; t += 0.07) {
    CHECK(std::abs(path.eval(t).value() - t) < 1e-13);
    CHECK(std::abs(path.deriv(t).value() - 1.0) < 1e-13);
  }
}

TEST_CASE("cubic data error bound") {
  std::vector<double> times = {0.0, 0.21, 0.55, 0.78, 1.0};
  std::vector<Tensor> samples;
  for (double t : times) samples.push_back(Tensor::scalar(t * t * t));
  CubicPath path = CubicPath::fit(times, samples);
  double max_gap = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) max_gap = std::max(max_gap, times[k] - times[k - 1]);
  double worst = 0.0;
  for (double t = times[1]; t <= times[3]; t += 0.004) {
    worst = std::max(worst, std::abs(path.eval(t).value() - t * t * t));
  }
  CHECK(worst < std::pow(max_gap, 4) * 10.0);
}

TEST_CASE("knot exactness and C2 continuity") {
  std::vector<double> times = {0.0, 0.4, 0.9, 1.7, 2.2, 3.0};
  std::vector<Tensor> samples;
  for (std::size_t k = 0; k < times.size(); ++k) samples.push_back(rand_tensor({3, 3}, 20 + k));
  CubicPath path = CubicPath::fit(times, samples);
  for (std::size_t k = 0; k < times.size(); ++k) {
    CHECK(max_abs_diff(path.eval(times[k]), samples[k]) < 1e-12);
  }
  // one-sided second derivatives probed by finite differences on deriv
  const double h = 1e-6;
  for (std::size_t k = 1; k + 1 < times.size(); ++k) {
    const double t = times[k];
    Tensor left = scale(sub(path.deriv(t), path.deriv(t - h)), 1.0 / h);
    Tensor right = scale(sub(path.deriv(t + h), path.deriv(t)), 1.0 / h);
    double rel = 0.0;
    for (std::size_t i = 0; i < left.size(); ++i) {
      rel = std::max(rel, std::abs(left.data()[i] - right.data()[i]) /
                              (std::abs(left.data()[i]) + 1.0));
    }
    CHECK(rel < 1e-4);  // probe itself is O(h) accurate
  }
  CHECK_THROWS_AS(path.eval(-0.1), std::out_of_range);
  CHECK_THROWS_AS(path.deriv(3.2), std::out_of_range);
  CHECK_THROWS_AS(CubicPath::fit({0.0, 0.0}, {samples[0], samples[1]}), std::invalid_argument);
  CHECK_THROWS_AS(CubicPath::fit({0.0}, {samples[0]}), std::invalid_argument);
}

TEST_CASE("time augmentation carries a unit-derivative channel") {
  std::vector<double> times = {0.0, 0.5, 1.3, 2.0};
  std::vector<Tensor> adj;
  for (std::size_t k = 0; k < times.size(); ++k) adj.push_back(rand_tensor({3, 3}, 30 + k));

  auto augmented = augment_time(adj, times, TimeAugment::NewAxis);
  CHECK(augmented[1].shape() == Shape{3, 3, 2});
  for (std::size_t i = 0; i < 9; ++i) CHECK(augmented[1].data()[2 * i] == 0.5);

  CubicPath path = CubicPath::fit(times, augmented);
  for (double t = 0.0; t <= 2.0; t += 0.09) {
    Tensor d = path.deriv(t);
    Tensor v = path.eval(t);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(std::abs(d.data()[2 * i] - 1.0) < 1e-10);
      CHECK(std::abs(v.data()[2 * i] - t) < 1e-12);
    }
  }

  std::vector<Tensor> feats = {rand_tensor({4, 2}, 40), rand_tensor({4, 2}, 41)};
  auto ext = augment_time(feats, {0.0, 1.0}, TimeAugment::ExtendChannels);
  CHECK(ext[0].shape() == Shape{4, 3});
  CHECK(ext[1].at(2, 0) == 1.0);
  CHECK(ext[1].at(2, 1) == feats[1].at(2, 0));
}

TEST_CASE("spline fitting commutes with node relabelling, exactly") {
  std::vector<double> times = {0.0, 0.7, 1.5, 2.0};
  std::vector<Tensor> samples;
  for (std::size_t k = 0; k < times.size(); ++k) samples.push_back(rand_tensor({4, 4}, 50 + k));
  const Permutation p = Permutation::random(4, 99);
  std::vector<Tensor> conjugated;
  for (const Tensor& s : samples) conjugated.push_back(conjugate(p, s));
  CubicPath base = CubicPath::fit(times, samples);
  CubicPath perm = CubicPath::fit(times, conjugated);
  for (double t = 0.0; t <= 2.0; t += 0.13) {
    CHECK(max_abs_diff(perm.eval(t), conjugate(p, base.eval(t))) == 0.0);
    CHECK(max_abs_diff(perm.deriv(t), conjugate(p, base.deriv(t))) == 0.0);
  }
}

// ---------------------------------------------------------------------------
// equivariant basis
// ---------------------------------------------------------------------------

namespace {

/// Independent oracle: the fifteen maps written as literal matrix algebra
/// with an explicit all-ones matrix, no shared code with the closed forms.
Tensor naive_basis(std::size_t index, const Tensor& a) {
  const std::size_t n = a.dim(0);
  Tensor J = Tensor::ones({n, n});
  Tensor I = Tensor::eye(n);
  Tensor ones_col = Tensor::ones({n, 1});
  Tensor ones_row = Tensor::ones({1, n});
  auto diag_vec = [&](const Tensor& m) {
    Tensor d = Tensor::zeros({n, 1});
    for (std::size_t i = 0; i < n; ++i) d.at(i, 0) = m.at(i, i);
    return d;
  };
  auto vec_to_diag = [&](const Tensor& v) {
    Tensor d = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) d.at(i, i) = v.at(i, 0);
    return d;
  };
  auto transpose = [&](const Tensor& m) {
    Tensor t = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) t.at(i, j) = m.at(j, i);
    return t;
  };
  const Tensor r = matmul(a, ones_col);             // row sums
  const Tensor c = matmul(transpose(a), ones_col);  // column sums
  const double total = sum(a).value();
  const double trace = sum(diag_vec(a)).value();
  switch (index) {
    case 1: return a.clone();
    case 2: return transpose(a);
    case 3: return vec_to_diag(diag_vec(a));
    case 4: return matmul(r, ones_row);
    case 5: return transpose(matmul(r, ones_row));
    case 6: return vec_to_diag(r);
    case 7: return matmul(c, ones_row);
    case 8: return transpose(matmul(c, ones_row));
    case 9: return vec_to_diag(c);
    case 10: return scale(J, total);
    case 11: return scale(I, total);
    case 12: return scale(J, trace);
    case 13: return scale(I, trace);
    case 14: return matmul(diag_vec(a), ones_row);
    case 15: return transpose(matmul(diag_vec(a), ones_row));
  }
  REQUIRE(false);
  return a;
}

}  // namespace

TEST_CASE("basis hand cases") {
  Tensor a = rand_tensor({3, 3}, 60);
  CHECK(max_abs_diff(basis_apply(1, a), a) == 0.0);

  Tensor expect10 = Tensor::full({2, 2}, 2.0);
  CHECK(max_abs_diff(basis_apply(10, Tensor::eye(2)), expect10) == 0.0);

  Tensor swap = Tensor::from({2, 2}, {0, 1, 1, 0});
  CHECK(max_abs_diff(basis_apply(6, swap), Tensor::eye(2)) == 0.0);

  CHECK_THROWS_AS(basis_apply(0, a), std::invalid_argument);
  CHECK_THROWS_AS(basis_apply(16, a), std::invalid_argument);
  CHECK_THROWS_AS(basis_apply(1, Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("every basis map matches the naive oracle") {
  for (std::size_t n : {2u, 3u, 5u}) {
    Tensor a = rand_tensor({n, n}, 61 + n);
    for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
      CHECK(max_abs_diff(basis_apply(k, a), naive_basis(k, a)) < 1e-12);
    }
  }
}

TEST_CASE("weighted combination matches the materialized dense map") {
  const std::size_t n = 4;
  Tensor w = rand_tensor({kEquivBasisSize}, 70);
  Tensor a = rand_tensor({n, n}, 71);
  Tensor expected = Tensor::zeros({n, n});
  for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
    Tensor bk = naive_basis(k, a);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      expected.data()[i] += w.data()[k - 1] * bk.data()[i];
    }
  }
  CHECK(max_abs_diff(equiv_apply(w, a), expected) < 1e-12);

  CHECK(max_abs_diff(equiv_apply(identity_weights(), a), a) == 0.0);
  CHECK(max_abs_diff(equiv_apply(Tensor::zeros({15}), a), Tensor::zeros({n, n})) == 0.0);
}

TEST_CASE("adjoint index pairs satisfy the inner-product identity") {
  const std::size_t n = 5;
  Tensor a = rand_tensor({n, n}, 72);
  Tensor g = rand_tensor({n, n}, 73);
  auto inner = [](const Tensor& x, const Tensor& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i] * y.data()[i];
    return acc;
  };
  for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
    const double lhs = inner(basis_apply(k, a), g);
    const double rhs = inner(a, basis_apply(basis_adjoint_index(k), g));
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("fusion reductions and linearity") {
  const std::size_t n = 4;
  Tensor a = rand_tensor({n, n}, 74), da = rand_tensor({n, n}, 75);
  Tensor e1 = identity_weights();

  CHECK(max_abs_diff(fuse(e1, e1, a, da), add(a, da)) == 0.0);
  CHECK(max_abs_diff(fuse(e1, Tensor::zeros({15}), a, da), a) == 0.0);

  Tensor w1 = rand_tensor({15}, 76), w2 = rand_tensor({15}, 77);
  // linear in (a, da)
  Tensor lhs = fuse(w1, w2, add(a, a), add(da, da));
  Tensor rhs = scale(fuse(w1, w2, a, da), 2.0);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  // linear in the weights
  Tensor ws = add(w1, w2);
  CHECK(max_abs_diff(fuse(ws, ws, a, da),
                     add(fuse(w1, w1, a, da), fuse(w2, w2, a, da))) < 1e-12);
}

TEST_CASE("fusion weights are differentiable") {
  const std::size_t n = 4;
  Tensor a = rand_tensor({n, n}, 78), da = rand_tensor({n, n}, 79);
  Tensor w1 = rand_tensor({15}, 80), w2 = rand_tensor({15}, 81);
  auto loss = [&]() {
    Tensor fused = fuse(w1, w2, a, da);
    return sum(mul(fused, fused));
  };
  Tensor* params[] = {&w1, &w2};
  CHECK(gradcheck(loss, params, 1e-5).max_rel_error < 1e-7);
}

TEST_CASE("gradients flow through the matrix argument of equiv_apply") {
  const std::size_t n = 4;
  Tensor w = rand_tensor({15}, 82);
  Tensor a = rand_tensor({n, n}, 83);
  auto loss = [&]() {
    Tensor y = equiv_apply(w, tanh(a));
    return sum(mul(y, y));
  };
  Tensor* params[] = {&a};
  CHECK(gradcheck(loss, params, 1e-5).max_rel_error < 1e-7);
}

TEST_CASE("conjugation basics") {
  Tensor a = Tensor::from({2, 2}, {0, 1, 0, 0});
  const Permutation id = Permutation::identity(2);
  CHECK(max_abs_diff(conjugate(id, a), a) == 0.0);

  const Permutation swap({1, 0});
  Tensor expect = Tensor::from({2, 2}, {0, 0, 1, 0});
  CHECK(max_abs_diff(conjugate(swap, a), expect) == 0.0);

  Tensor b = rand_tensor({5, 5}, 84);
  const Permutation p = Permutation::random(5, 85);
  CHECK(max_abs_diff(conjugate(p.inverse(), conjugate(p, b)), b) == 0.0);

  CHECK_THROWS_AS(Permutation({0, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(conjugate(p, Tensor::zeros({4, 4})), std::invalid_argument);
}

TEST_CASE("group averaging projects onto the equivariant subspace") {
  const std::size_t n = 4;
  Tensor w = rand_tensor({n, n}, 86);
  Tensor m = materialize_premult(w);
  Tensor pm = project_group_average(m, n);

  LsqDecomposition d = lsq_decompose(pm, n);
  CHECK(d.residual < 1e-10);
  CHECK(d.rank == 15);

  CHECK(max_abs_diff(project_group_average(pm, n), pm) < 1e-12);
  CHECK_THROWS_AS(project_group_average(materialize_basis(1, 6), 6), std::invalid_argument);
}

TEST_CASE("lsq identifies single basis maps and reports deficiency") {
  LsqDecomposition d7 = lsq_decompose(materialize_basis(7, 4), 4);
  CHECK(d7.residual < 1e-12);
  for (std::size_t k = 0; k < kEquivBasisSize; ++k) {
    CHECK(std::abs(d7.weights.data()[k] - (k == 6 ? 1.0 : 0.0)) < 1e-10);
  }
  CHECK(basis_rank(4) == 15);
  CHECK(basis_rank(3) < 15);
}

// ---------------------------------------------------------------------------
// solvers
// ---------------------------------------------------------------------------

TEST_CASE("tsit5 matches exponential decay") {
  VectorField decay = [](double, const Tensor& z) { return scale(z, -1.0); };
  LatentPath path = tsit5_solve(decay, Tensor::ones({1, 1}), 0.0, 1.0, {0.25, 0.5, 1.0}, 1e-8,
                                1e-8, 0.0);
  REQUIRE(path.states.size() == 3);
  CHECK(std::abs(path.states[2].value() - std::exp(-1.0)) / std::exp(-1.0) < 1e-8);
  // dense-output saves stay accurate too
  CHECK(std::abs(path.states[0].value() - std::exp(-0.25)) < 1e-6);
  CHECK(std::abs(path.states[1].value() - std::exp(-0.5)) < 1e-6);
  CHECK(path.stats.accepted > 0);
  CHECK(path.stats.field_evals >= 6 * path.stats.accepted);
}

TEST_CASE("tsit5 takes one step on a zero field") {
  VectorField zero = [](double, const Tensor& z) { return Tensor::zeros(z.shape()); };
  Tensor z0 = rand_tensor({2, 2}, 90);
  LatentPath path = tsit5_solve(zero, z0, 0.0, 1.0, {1.0}, 1e-6, 1e-6, 1.0);
  CHECK(path.stats.accepted == 1);
  CHECK(max_abs_diff(path.states.back(), z0) == 0.0);
}

TEST_CASE("halving tolerances never hurts on the linear test") {
  VectorField decay = [](double, const Tensor& z) { return scale(z, -1.0); };
  double last = std::numeric_limits<double>::infinity();
  for (double tol : {1e-5, 5e-6, 2.5e-6, 1.25e-6, 6.25e-7, 1e-7, 1e-8}) {
    LatentPath path = tsit5_solve(decay, Tensor::ones({1, 1}), 0.0, 1.0, {1.0}, tol, tol, 0.0);
    const double err = std::abs(path.states.back().value() - std::exp(-1.0));
    CHECK(err <= last + 1e-14);
    last = err;
  }
}

TEST_CASE("tsit5 surfaces non-finite fields") {
  VectorField bad = [](double t, const Tensor& z) {
    return t > 0.1 ? Tensor::full(z.shape(), std::numeric_limits<double>::quiet_NaN())
                   : scale(z, -1.0);
  };
  CHECK_THROWS_AS(tsit5_solve(bad, Tensor::ones({1, 1}), 0.0, 1.0, {1.0}, 1e-6, 1e-6, 0.0),
                  SolverError);
}

TEST_CASE("rk4 order, determinism, and save-time validation") {
  VectorField decay = [](double, const Tensor& z) { return scale(z, -1.0); };
  auto err_at = [&](std::size_t steps) {
    LatentPath path = rk4_solve(decay, Tensor::ones({1, 1}), 0.0, 1.0, steps, {1.0});
    return std::abs(path.states.back().value() - std::exp(-1.0));
  };
  const double slope1 = std::log2(err_at(16) / err_at(32));
  const double slope2 = std::log2(err_at(32) / err_at(64));
  CHECK(slope1 > 3.8);
  CHECK(slope1 < 4.2);
  CHECK(slope2 > 3.8);
  CHECK(slope2 < 4.2);

  VectorField zero = [](double, const Tensor& z) { return Tensor::zeros(z.shape()); };
  Tensor z0 = rand_tensor({3, 2}, 91);
  LatentPath path = rk4_solve(zero, z0, 0.0, 1.0, 4, {0.25, 1.0});
  CHECK(max_abs_diff(path.states[0], z0) == 0.0);
  CHECK(max_abs_diff(path.states[1], z0) == 0.0);

  LatentPath a = rk4_solve(decay, Tensor::ones({1, 1}), 0.0, 1.0, 32, {0.5, 1.0});
  LatentPath b = rk4_solve(decay, Tensor::ones({1, 1}), 0.0, 1.0, 32, {0.5, 1.0});
  CHECK(a.states[0].value() == b.states[0].value());
  CHECK(a.states[1].value() == b.states[1].value());
  CHECK(a.stats.field_evals == 32 * 4);

  CHECK_THROWS_AS(rk4_solve(decay, Tensor::ones({1, 1}), 0.0, 1.0, 4, {0.3}),
                  std::invalid_argument);
}

TEST_CASE("grid solver rejects bad grids") {
  VectorField decay = [](double, const Tensor& z) { return scale(z, -1.0); };
  CHECK_THROWS_AS(rk4_solve_grid(decay, Tensor::ones({1, 1}), {0.0, 0.0, 1.0}, {1.0}),
                  std::invalid_argument);
  LatentPath path = rk4_solve_grid(decay, Tensor::ones({1, 1}), {0.0, 0.3, 0.55, 1.0}, {0.55});
  CHECK(std::abs(path.states[0].value() - std::exp(-0.55)) < 1e-4);
}
