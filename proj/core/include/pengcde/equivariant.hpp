#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "pengcde/tensor.hpp"

namespace pengcde {

/// Number of linearly independent permutation-equivariant linear maps from
/// n x n matrices to n x n matrices (for n >= 4).
inline constexpr std::size_t kEquivBasisSize = 15;

/// Basis enumeration. Each map is realized by an O(n^2) closed form built
/// from row sums, column sums, the total sum, the trace, and the diagonal;
/// the dense n^2 x n^2 matrices exist only inside test oracles and the
/// decomposition routines below.
///
///  1 identity            A
///  2 transpose           A^T
///  3 diagonal part       diag(diag(A))
///  4 row sums on rows    (A1)1^T
///  5 row sums on cols    1(A1)^T
///  6 row sums on diag    diag(A1)
///  7 col sums on rows    (A^T 1)1^T
///  8 col sums on cols    1(A^T 1)^T
///  9 col sums on diag    diag(A^T 1)
/// 10 total sum on all    (1^T A 1) 11^T
/// 11 total sum on diag   (1^T A 1) I
/// 12 trace on all        (1^T diag(A)) 11^T
/// 13 trace on diag       (1^T diag(A)) I
/// 14 diagonal on rows    diag(A)1^T
/// 15 diagonal on cols    1 diag(A)^T
Tensor basis_apply(std::size_t index, const Tensor& a);

/// Human-readable labels following the grouping used in ablation reports.
const std::array<std::string, kEquivBasisSize>& basis_names();

/// Index of the adjoint map: <B_k(A), G> == <A, B_adj(k)(G)> for all A, G.
std::size_t basis_adjoint_index(std::size_t index);

/// Weighted combination sum_k w[k-1] * basis_apply(k, a). `weights` holds 15
/// coefficients. Differentiable in both arguments when recorded.
Tensor equiv_apply(const Tensor& weights, const Tensor& a);

/// Learnable fusion of a matrix path value and its derivative,
/// equiv_apply(w_a, a) + equiv_apply(w_da, da).
Tensor fuse(const Tensor& w_a, const Tensor& w_da, const Tensor& a, const Tensor& da);

/// Coefficients that make the fusion an identity on one channel.
Tensor identity_weights();

// ---------------------------------------------------------------------------
// Permutations
// ---------------------------------------------------------------------------

/// A bijection p on [0, n). The associated matrix P has P[i, p[i]] = 1, so
/// (P X)[i] = X[p[i]] and conjugation relabels node i as the old node p[i].
class Permutation {
 public:
  explicit Permutation(std::vector<std::size_t> map);
  static Permutation identity(std::size_t n);
  static Permutation random(std::size_t n, std::uint64_t seed);

  std::size_t size() const { return map_.size(); }
  std::size_t operator()(std::size_t i) const { return map_[i]; }
  Permutation inverse() const;

  const std::vector<std::size_t>& map() const { return map_; }

 private:
  std::vector<std::size_t> map_;
};

/// All n! permutations of [0, n), lexicographic.
std::vector<Permutation> all_permutations(std::size_t n);

/// P A P^T and P X computed by index moves, exactly.
Tensor conjugate(const Permutation& p, const Tensor& a);
Tensor permute_rows(const Permutation& p, const Tensor& x);

// ---------------------------------------------------------------------------
// Projection and decomposition on materialized maps
// ---------------------------------------------------------------------------

/// Linear map on n x n matrices materialized as an n^2 x n^2 matrix acting
/// on vec(A) (row-major).
Tensor materialize_basis(std::size_t index, std::size_t n);

/// Materializes A -> W A (premultiplication) as an n^2 x n^2 matrix.
Tensor materialize_premult(const Tensor& w);

/// Group average (1/n!) sum_sigma rho(sigma)^{-1} M rho(sigma) where rho is
/// conjugation on matrices. The result is the orthogonal projection of M
/// onto the equivariant subspace. Requires n <= 5.
Tensor project_group_average(const Tensor& m, std::size_t n);

struct LsqDecomposition {
  Tensor weights;       // 15 coefficients
  double residual = 0;  // Frobenius norm of the unexplained part
  std::size_t rank = 0; // numerical rank of the basis stack at this n
};

/// Least-squares coefficients of a materialized map over the 15 basis maps.
/// For n < 4 the stack is rank deficient, which is reported via `rank`.
LsqDecomposition lsq_decompose(const Tensor& m, std::size_t n);

/// Numerical rank of the 15 materialized basis maps at a given n.
std::size_t basis_rank(std::size_t n);

}  // namespace pengcde
