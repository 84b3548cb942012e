#include "pengcde/equivariant.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "pengcde/rng.hpp"

namespace pengcde {

namespace {

void require_square(const Tensor& a, const char* op) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw std::invalid_argument(std::string(op) + ": expected a square matrix, got " +
                                shape_str(a.shape()));
  }
}

struct Sums {
  std::vector<double> row, col;
  double total = 0.0, trace = 0.0;
};

Sums compute_sums(const Tensor& a) {
  const std::size_t n = a.dim(0);
  Sums s;
  s.row.assign(n, 0.0);
  s.col.assign(n, 0.0);
  const double* p = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = p + i * n;
    double r = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      r += row[j];
      s.col[j] += row[j];
    }
    s.row[i] = r;
    s.total += r;
    s.trace += row[i];
  }
  return s;
}

Tensor basis_apply_impl(std::size_t index, const Tensor& a, const Sums& s) {
  const std::size_t n = a.dim(0);
  Tensor out = Tensor::zeros({n, n});
  switch (index) {
    case 1:
      return a.clone();
    case 2:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(j, i);
      return out;
    case 3:
      for (std::size_t i = 0; i < n; ++i) out.at(i, i) = a.at(i, i);
      return out;
    case 4:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = s.row[i];
      return out;
    case 5:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = s.row[j];
      return out;
    case 6:
      for (std::size_t i = 0; i < n; ++i) out.at(i, i) = s.row[i];
      return out;
    case 7:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = s.col[i];
      return out;
    case 8:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = s.col[j];
      return out;
    case 9:
      for (std::size_t i = 0; i < n; ++i) out.at(i, i) = s.col[i];
      return out;
    case 10:
      for (std::size_t i = 0; i < n * n; ++i) out.data()[i] = s.total;
      return out;
    case 11:
      for (std::size_t i = 0; i < n; ++i) out.at(i, i) = s.total;
      return out;
    case 12:
      for (std::size_t i = 0; i < n * n; ++i) out.data()[i] = s.trace;
      return out;
    case 13:
      for (std::size_t i = 0; i < n; ++i) out.at(i, i) = s.trace;
      return out;
    case 14:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, i);
      return out;
    case 15:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(j, j);
      return out;
    default:
      throw std::invalid_argument("basis_apply: index must be in 1..15, got " +
                                  std::to_string(index));
  }
}

/// Fused sum_k w_k B_k(A) in a single O(n^2) pass.
Tensor equiv_apply_value(const double* w, const Tensor& a) {
  const std::size_t n = a.dim(0);
  const Sums s = compute_sums(a);
  Tensor out = Tensor::zeros({n, n});
  const double w_all = w[9] * s.total + w[11] * s.trace;   // constant on all entries
  const double w_diag = w[10] * s.total + w[12] * s.trace; // extra constant on diagonal
  for (std::size_t i = 0; i < n; ++i) {
    const double ri = w[3] * s.row[i] + w[6] * s.col[i] + w[13] * a.at(i, i);
    for (std::size_t j = 0; j < n; ++j) {
      double v = w[0] * a.at(i, j) + w[1] * a.at(j, i) + ri + w[4] * s.row[j] +
                 w[7] * s.col[j] + w[14] * a.at(j, j) + w_all;
      out.at(i, j) = v;
    }
    out.at(i, i) += w[2] * a.at(i, i) + w[5] * s.row[i] + w[8] * s.col[i] + w_diag;
  }
  return out;
}

}  // namespace

Tensor basis_apply(std::size_t index, const Tensor& a) {
  require_square(a, "basis_apply");
  return basis_apply_impl(index, a, compute_sums(a));
}

const std::array<std::string, kEquivBasisSize>& basis_names() {
  static const std::array<std::string, kEquivBasisSize> names = {
      "identity",
      "transpose",
      "diagonalisation",
      "sum_rows_on_rows",
      "sum_rows_on_columns",
      "sum_rows_on_diagonal",
      "sum_columns_on_rows",
      "sum_columns_on_columns",
      "sum_columns_on_diagonal",
      "sum_all_on_all",
      "sum_all_on_diagonal",
      "sum_diagonal_on_all",
      "sum_diagonal_on_diagonal",
      "diagonal_on_rows",
      "diagonal_on_columns",
  };
  return names;
}

std::size_t basis_adjoint_index(std::size_t index) {
  // Self-adjoint maps map to themselves; the rest swap in pairs.
  static constexpr std::size_t adj[kEquivBasisSize + 1] = {0,  1,  2, 3,  4, 7,  14, 5,
                                                           8,  15, 10, 12, 11, 13, 6,  9};
  if (index < 1 || index > kEquivBasisSize) {
    throw std::invalid_argument("basis_adjoint_index: bad index");
  }
  return adj[index];
}

Tensor equiv_apply(const Tensor& weights, const Tensor& a) {
  require_square(a, "equiv_apply");
  if (weights.size() != kEquivBasisSize) {
    throw std::invalid_argument("equiv_apply: expected 15 coefficients, got " +
                                std::to_string(weights.size()));
  }
  Tensor out = equiv_apply_value(weights.data(), a);
  if (debug_checks_enabled()) check_finite(out, "equiv_apply");

  if (Tape* tape = active_tape(); tape && (tracked(weights) || tracked(a))) {
    const int iw = tracked(weights) ? weights.node : -1;
    const int ia = tracked(a) ? a.node : -1;
    Tensor sw = weights, sa = a;
    tape->record({iw, ia}, out, [iw, ia, sw, sa](const Tensor& g, std::vector<Tensor>& grad_of) {
      if (iw >= 0) {
        // dw_k = <B_k(A), G>, reduced to closed forms over the shared sums.
        const std::size_t n = sa.dim(0);
        const Sums a = compute_sums(sa);
        const Sums gs = compute_sums(g);
        double dot = 0.0, dot_t = 0.0, dot_diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            dot += sa.at(i, j) * g.at(i, j);
            dot_t += sa.at(j, i) * g.at(i, j);
          }
          dot_diag += sa.at(i, i) * g.at(i, i);
        }
        double rr = 0, rc = 0, rd = 0, cr = 0, cc = 0, cd = 0, dr = 0, dc = 0;
        for (std::size_t i = 0; i < n; ++i) {
          rr += a.row[i] * gs.row[i];
          rc += a.row[i] * gs.col[i];
          rd += a.row[i] * g.at(i, i);
          cr += a.col[i] * gs.row[i];
          cc += a.col[i] * gs.col[i];
          cd += a.col[i] * g.at(i, i);
          dr += sa.at(i, i) * gs.row[i];
          dc += sa.at(i, i) * gs.col[i];
        }
        Tensor dw = Tensor::zeros(sw.shape());
        double* d = dw.data();
        d[0] = dot;
        d[1] = dot_t;
        d[2] = dot_diag;
        d[3] = rr;
        d[4] = rc;
        d[5] = rd;
        d[6] = cr;
        d[7] = cc;
        d[8] = cd;
        d[9] = a.total * gs.total;
        d[10] = a.total * gs.trace;
        d[11] = a.trace * gs.total;
        d[12] = a.trace * gs.trace;
        d[13] = dr;
        d[14] = dc;
        accumulate_grad(grad_of[static_cast<std::size_t>(iw)], dw);
      }
      if (ia >= 0) {
        // dA = sum_k w_k B_adj(k)(G)
        double wadj[kEquivBasisSize];
        for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
          wadj[basis_adjoint_index(k) - 1] = sw.data()[k - 1];
        }
        accumulate_grad(grad_of[static_cast<std::size_t>(ia)], equiv_apply_value(wadj, g));
      }
    });
  }
  return out;
}

Tensor fuse(const Tensor& w_a, const Tensor& w_da, const Tensor& a, const Tensor& da) {
  if (!a.same_shape(da)) {
    throw std::invalid_argument("fuse: path value and derivative shapes differ");
  }
  return add(equiv_apply(w_a, a), equiv_apply(w_da, da));
}

Tensor identity_weights() {
  Tensor w = Tensor::zeros({kEquivBasisSize});
  w.at(0) = 1.0;
  return w;
}

// ---------------------------------------------------------------------------
// Permutations
// ---------------------------------------------------------------------------

Permutation::Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
  std::vector<std::size_t> sorted = map_;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != i) throw std::invalid_argument("Permutation: not a bijection on [n]");
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), 0);
  return Permutation(std::move(m));
}

Permutation Permutation::random(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), 0);
  auto rng = make_rng(seed);
  std::shuffle(m.begin(), m.end(), rng);
  return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> inv(map_.size());
  for (std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
  return Permutation(std::move(inv));
}

std::vector<Permutation> all_permutations(std::size_t n) {
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), 0);
  std::vector<Permutation> out;
  do {
    out.emplace_back(m);
  } while (std::next_permutation(m.begin(), m.end()));
  return out;
}

Tensor conjugate(const Permutation& p, const Tensor& a) {
  require_square(a, "conjugate");
  const std::size_t n = a.dim(0);
  if (p.size() != n) throw std::invalid_argument("conjugate: size mismatch");
  Tensor out = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(p(i), p(j));
  return out;
}

Tensor permute_rows(const Permutation& p, const Tensor& x) {
  if (x.rank() != 2 || p.size() != x.dim(0)) {
    throw std::invalid_argument("permute_rows: size mismatch");
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(p(i), j);
  return out;
}

// ---------------------------------------------------------------------------
// Materialized maps
// ---------------------------------------------------------------------------

Tensor materialize_basis(std::size_t index, std::size_t n) {
  const std::size_t n2 = n * n;
  Tensor m = Tensor::zeros({n2, n2});
  Tensor unit = Tensor::zeros({n, n});
  for (std::size_t col = 0; col < n2; ++col) {
    unit.data()[col] = 1.0;
    Tensor image = basis_apply(index, unit);
    for (std::size_t row = 0; row < n2; ++row) m.at(row, col) = image.data()[row];
    unit.data()[col] = 0.0;
  }
  return m;
}

Tensor materialize_premult(const Tensor& w) {
  require_square(w, "materialize_premult");
  const std::size_t n = w.dim(0);
  const std::size_t n2 = n * n;
  // vec(W E_{kl}) = column of the map; (W E_{kl})[i, j] = W[i, k] * [j == l].
  Tensor m = Tensor::zeros({n2, n2});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      const std::size_t col = k * n + l;
      for (std::size_t i = 0; i < n; ++i) m.at(i * n + l, col) = w.at(i, k);
    }
  return m;
}

Tensor project_group_average(const Tensor& m, std::size_t n) {
  const std::size_t n2 = n * n;
  if (m.rank() != 2 || m.dim(0) != n2 || m.dim(1) != n2) {
    throw std::invalid_argument("project_group_average: expected an n^2 x n^2 map");
  }
  if (n > 5) {
    throw std::invalid_argument("project_group_average: n! enumeration limited to n <= 5");
  }
  const auto perms = all_permutations(n);
  Tensor out = Tensor::zeros({n2, n2});
  // Conjugating the map by sigma permutes both vec-indices by
  // pi(i*n+j) = p(i)*n + p(j); the average is a plain index gather.
  std::vector<std::size_t> pi(n2);
  for (const Permutation& p : perms) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pi[i * n + j] = p(i) * n + p(j);
    for (std::size_t r = 0; r < n2; ++r)
      for (std::size_t c = 0; c < n2; ++c) out.at(r, c) += m.at(pi[r], pi[c]);
  }
  const double inv = 1.0 / static_cast<double>(perms.size());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= inv;
  return out;
}

namespace {

Eigen::MatrixXd basis_stack(std::size_t n) {
  const std::size_t n4 = n * n * n * n;
  Eigen::MatrixXd stack(n4, kEquivBasisSize);
  for (std::size_t k = 1; k <= kEquivBasisSize; ++k) {
    Tensor b = materialize_basis(k, n);
    for (std::size_t i = 0; i < n4; ++i) stack(static_cast<Eigen::Index>(i), k - 1) = b.data()[i];
  }
  return stack;
}

}  // namespace

LsqDecomposition lsq_decompose(const Tensor& m, std::size_t n) {
  const std::size_t n2 = n * n;
  if (m.rank() != 2 || m.dim(0) != n2 || m.dim(1) != n2) {
    throw std::invalid_argument("lsq_decompose: expected an n^2 x n^2 map");
  }
  const Eigen::MatrixXd stack = basis_stack(n);
  Eigen::VectorXd target(n2 * n2);
  for (std::size_t i = 0; i < n2 * n2; ++i) target(static_cast<Eigen::Index>(i)) = m.data()[i];

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stack, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-10);
  Eigen::VectorXd coeff = svd.solve(target);

  LsqDecomposition result;
  result.rank = static_cast<std::size_t>(svd.rank());
  result.weights = Tensor::zeros({kEquivBasisSize});
  for (std::size_t k = 0; k < kEquivBasisSize; ++k) {
    result.weights.data()[k] = coeff(static_cast<Eigen::Index>(k));
  }
  result.residual = (stack * coeff - target).norm();
  return result;
}

std::size_t basis_rank(std::size_t n) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis_stack(n));
  svd.setThreshold(1e-10);
  return static_cast<std::size_t>(svd.rank());
}

}  // namespace pengcde
