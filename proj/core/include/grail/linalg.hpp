#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "grail/tensor.hpp"

namespace grail {

/// C = A * B. Each output element sums over the inner index in ascending
/// order, so results are bit-reproducible regardless of thread count.
Tensor matmul(const Tensor& a, const Tensor& b);

/// C = A^T * B without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// (a ⊗ b): block (i, j) of the result equals a(i, j) * b.
Tensor kronecker(const Tensor& a, const Tensor& b);

/// Block-diagonal assembly blkdiag(blocks...).
Tensor block_diagonal(std::span<const Tensor> blocks);

/// Column j of the result is column cols[j] of a.
Tensor gather_columns(const Tensor& a, std::span<const std::size_t> cols);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

/// A symmetric K x K matrix with a K x m right-hand side.
class SpdSystem {
 public:
  /// Throws DimensionError on shape problems and ArgumentError if `a` is not
  /// symmetric within 1e-9 * max|a|.
  SpdSystem(Tensor a, Tensor rhs);

  [[nodiscard]] const Tensor& a() const { return a_; }
  [[nodiscard]] const Tensor& rhs() const { return rhs_; }

 private:
  Tensor a_;
  Tensor rhs_;
};

/// Solves (a + ridge * I) X = rhs through a Cholesky factorization.
/// Throws SingularError when the shifted matrix is not positive definite.
Tensor spd_solve(const SpdSystem& sys, double ridge);

struct KMeansResult {
  std::vector<std::size_t> assignment;  // cluster id per row, every id in [0, k) used
  Tensor centroids;                     // k x d
  std::vector<double> objective;        // within-cluster SSE after each iteration
};

/// Lloyd's algorithm from k-means++ seeding. Uses only `seed` for
/// randomness (raw mt19937_64 draws, no library distributions) so the
/// result is identical on every platform. Empty clusters are re-seeded with
/// the point farthest from its centroid.
KMeansResult kmeans(const Tensor& rows, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

/// Sum of squared distances of rows to the mean of their assigned cluster.
double clustering_objective(const Tensor& rows, std::span<const std::size_t> assignment, std::size_t k);

}  // namespace grail
