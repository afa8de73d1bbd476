#include "grail/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "grail/errors.hpp"
#include "grail/parallel.hpp"

namespace grail {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got shape " + shape_string(t.shape()));
  }
}

// Rows below this many multiply-adds are not worth a thread.
constexpr std::size_t kParallelWork = 1u << 18;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t n = a.rows();
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  Tensor c({n, m});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();

  auto row_kernel = [&](std::size_t i) {
    double* out = pc + i * m;
    const double* arow = pa + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = arow[k];
      const double* brow = pb + k * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += aik * brow[j];
    }
  };
  if (n * inner * m >= kParallelWork) {
    parallel_for(n, row_kernel);
  } else {
    for (std::size_t i = 0; i < n; ++i) row_kernel(i);
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: shape mismatch " + shape_string(a.shape()) + "^T x " +
                         shape_string(b.shape()));
  }
  const std::size_t n = a.rows();
  const std::size_t p = a.cols();
  const std::size_t m = b.cols();
  Tensor c({p, m});
  for (std::size_t r = 0; r < n; ++r) {
    const auto arow = a.row(r);
    const auto brow = b.row(r);
    for (std::size_t i = 0; i < p; ++i) {
      const double ai = arow[i];
      double* out = &c(i, 0);
      for (std::size_t j = 0; j < m; ++j) out[j] += ai * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor kronecker(const Tensor& a, const Tensor& b) {
  require_matrix(a, "kronecker");
  require_matrix(b, "kronecker");
  const std::size_t br = b.rows();
  const std::size_t bc = b.cols();
  Tensor out({a.rows() * br, a.cols() * bc});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t k = 0; k < br; ++k)
        for (std::size_t l = 0; l < bc; ++l) out(i * br + k, j * bc + l) = a(i, j) * b(k, l);
  return out;
}

Tensor block_diagonal(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw ArgumentError("block_diagonal needs at least one block");
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const auto& blk : blocks) {
    require_matrix(blk, "block_diagonal");
    rows += blk.rows();
    cols += blk.cols();
  }
  Tensor out({rows, cols});
  std::size_t r0 = 0;
  std::size_t c0 = 0;
  for (const auto& blk : blocks) {
    for (std::size_t i = 0; i < blk.rows(); ++i)
      for (std::size_t j = 0; j < blk.cols(); ++j) out(r0 + i, c0 + j) = blk(i, j);
    r0 += blk.rows();
    c0 += blk.cols();
  }
  return out;
}

Tensor gather_columns(const Tensor& a, std::span<const std::size_t> cols) {
  require_matrix(a, "gather_columns");
  Tensor out({a.rows(), cols.size()});
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= a.cols()) throw ArgumentError("column index " + std::to_string(cols[j]) + " out of range");
  }
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = a(i, cols[j]);
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.empty()) throw DimensionError("gather_rows on empty tensor");
  Shape shape = a.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  const std::size_t stride = a.size() / a.dim(0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.dim(0)) throw ArgumentError("row index " + std::to_string(rows[i]) + " out of range");
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

SpdSystem::SpdSystem(Tensor a, Tensor rhs) : a_(std::move(a)), rhs_(std::move(rhs)) {
  require_matrix(a_, "SpdSystem");
  require_matrix(rhs_, "SpdSystem");
  if (a_.rows() != a_.cols()) throw DimensionError("SpdSystem: matrix is not square " + shape_string(a_.shape()));
  if (rhs_.rows() != a_.rows()) {
    throw DimensionError("SpdSystem: rhs " + shape_string(rhs_.shape()) + " does not match " +
                         shape_string(a_.shape()));
  }
  const double tol = 1e-9 * max_abs(a_);
  for (std::size_t i = 0; i < a_.rows(); ++i)
    for (std::size_t j = i + 1; j < a_.cols(); ++j)
      if (std::abs(a_(i, j) - a_(j, i)) > tol) throw ArgumentError("SpdSystem: matrix is not symmetric");
}

Tensor spd_solve(const SpdSystem& sys, double ridge) {
  if (!(ridge >= 0.0)) throw ArgumentError("spd_solve: ridge must be nonnegative");
  const std::size_t n = sys.a().rows();
  const std::size_t m = sys.rhs().cols();

  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(sys.a()(i, i) + ridge));
  const double pivot_floor = 1e-14 * max_diag;

  // Lower-triangular factor, reading only the lower triangle of a.
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = sys.a()(j, j) + ridge;
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > pivot_floor) || !std::isfinite(d)) {
      throw SingularError("matrix is not positive definite after adding ridge " + std::to_string(ridge) +
                          " (pivot " + std::to_string(j) + "); use a larger ridge / alpha");
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = sys.a()(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }

  Tensor x = sys.rhs();
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  return x;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor centroids_of(const Tensor& rows, std::span<const std::size_t> assignment, std::size_t k) {
  const std::size_t d = rows.cols();
  Tensor c({k, d});
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const auto r = rows.row(i);
    auto dst = c.row(assignment[i]);
    for (std::size_t j = 0; j < d; ++j) dst[j] += r[j];
    ++counts[assignment[i]];
  }
  for (std::size_t q = 0; q < k; ++q) {
    if (counts[q] == 0) continue;
    for (auto& v : c.row(q)) v /= static_cast<double>(counts[q]);
  }
  return c;
}

}  // namespace

double clustering_objective(const Tensor& rows, std::span<const std::size_t> assignment, std::size_t k) {
  const Tensor c = centroids_of(rows, assignment, k);
  double obj = 0.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) obj += squared_distance(rows.row(i), c.row(assignment[i]));
  return obj;
}

KMeansResult kmeans(const Tensor& rows, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  require_matrix(rows, "kmeans");
  const std::size_t n = rows.rows();
  if (k == 0 || k > n) {
    throw ArgumentError("kmeans: k = " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  }
  if (max_iter == 0) throw ArgumentError("kmeans: max_iter must be positive");
  const std::size_t d = rows.cols();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> seeds;
  std::vector<bool> chosen(n, false);
  seeds.push_back(static_cast<std::size_t>(rng() % n));
  chosen[seeds[0]] = true;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    const auto last = rows.row(seeds.back());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(rows.row(i), last));
      if (!chosen[i]) total += nearest[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit_draw(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || nearest[i] == 0.0) continue;
        acc += nearest[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) {
      // All remaining points coincide with a seed.
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
    }
    chosen[pick] = true;
    seeds.push_back(pick);
  }

  KMeansResult result;
  result.centroids = Tensor({k, d});
  for (std::size_t q = 0; q < k; ++q) std::ranges::copy(rows.row(seeds[q]), result.centroids.row(q).begin());
  result.assignment.assign(n, 0);

  std::vector<std::size_t> previous;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    auto& assign = result.assignment;
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(rows.row(i), result.centroids.row(0));
      for (std::size_t q = 1; q < k; ++q) {
        const double dist = squared_distance(rows.row(i), result.centroids.row(q));
        if (dist < best_d) {
          best_d = dist;
          best = q;
        }
      }
      assign[i] = best;
      ++counts[best];
    }

    for (std::size_t q = 0; q < k; ++q) {
      if (counts[q] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        const double dist = squared_distance(rows.row(i), result.centroids.row(assign[i]));
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      --counts[assign[far]];
      assign[far] = q;
      counts[q] = 1;
      std::ranges::copy(rows.row(far), result.centroids.row(q).begin());
    }

    result.centroids = centroids_of(rows, assign, k);
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += squared_distance(rows.row(i), result.centroids.row(assign[i]));
    result.objective.push_back(obj);

    if (assign == previous) break;
    previous = assign;
  }
  return result;
}

}  // namespace grail
