#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "fgcam/cam.hpp"
#include "fgcam/error.hpp"

namespace fgcam {

template <typename Scalar>
struct SvdResult {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix u;                // rows x r, orthonormal columns
  Vector singular_values;  // r, non-increasing, >= 0
  Matrix v;                // cols x r, orthonormal columns

  Matrix reconstruct(Eigen::Index rank) const {
    return u.leftCols(rank) * singular_values.head(rank).asDiagonal() *
           v.leftCols(rank).transpose();
  }
  Matrix reconstruct() const { return reconstruct(singular_values.size()); }
};

namespace detail {

// Fills zero columns of `q` (flagged in `filled == false`) with unit vectors
// orthogonal to every other column, by Gram-Schmidt over the standard basis.
template <typename Matrix>
void complete_orthonormal(Matrix& q, const std::vector<bool>& filled) {
  using Scalar = typename Matrix::Scalar;
  const Eigen::Index m = q.rows();
  std::vector<bool> have = filled;
  Eigen::Index basis = 0;
  for (Eigen::Index col = 0; col < q.cols(); ++col) {
    if (have[static_cast<std::size_t>(col)]) continue;
    while (basis < m) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> candidate =
          Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Unit(m, basis++);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index other = 0; other < q.cols(); ++other) {
          if (!have[static_cast<std::size_t>(other)]) continue;
          candidate -= q.col(other).dot(candidate) * q.col(other);
        }
      }
      const Scalar norm = candidate.norm();
      if (norm > Scalar(1e-6)) {
        q.col(col) = candidate / norm;
        have[static_cast<std::size_t>(col)] = true;
        break;
      }
    }
  }
}

// One-sided (Hestenes) Jacobi for rows >= cols.
template <typename Derived>
SvdResult<typename Derived::Scalar> jacobi_tall(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  using Matrix = typename SvdResult<Scalar>::Matrix;
  const Eigen::Index n = a.cols();
  Matrix work = a;
  Matrix v = Matrix::Identity(n, n);
  const Scalar tol = std::numeric_limits<Scalar>::epsilon() * Scalar(4);

  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = work.col(p).squaredNorm();
        const Scalar beta = work.col(q).squaredNorm();
        const Scalar gamma = work.col(p).dot(work.col(q));
        if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Matrix* m : {&work, &v}) {
          for (Eigen::Index r = 0; r < m->rows(); ++r) {
            const Scalar xp = (*m)(r, p), xq = (*m)(r, q);
            (*m)(r, p) = c * xp - s * xq;
            (*m)(r, q) = s * xp + c * xq;
          }
        }
      }
    }
    if (!rotated) break;
  }

  typename SvdResult<Scalar>::Vector norms(n);
  for (Eigen::Index j = 0; j < n; ++j) norms(j) = work.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

  SvdResult<Scalar> out;
  out.u.resize(a.rows(), n);
  out.v.resize(n, n);
  out.singular_values.resize(n);
  const Scalar floor = (n > 0 ? norms(order[0]) : Scalar(0)) *
                       std::numeric_limits<Scalar>::epsilon() * Scalar(a.rows() + n);
  std::vector<bool> filled(static_cast<std::size_t>(n), false);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    const Scalar sigma = norms(src);
    out.singular_values(j) = sigma;
    out.v.col(j) = v.col(src);
    if (sigma > floor && sigma > Scalar(0)) {
      out.u.col(j) = work.col(src) / sigma;
      filled[static_cast<std::size_t>(j)] = true;
    } else {
      out.u.col(j).setZero();
    }
  }
  complete_orthonormal(out.u, filled);
  return out;
}

}  // namespace detail

/// Thin SVD by one-sided Jacobi rotations, run on the orientation whose column
/// count is min(rows, cols). Intended for small dense matrices.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd_small(const Eigen::MatrixBase<Derived>& a) {
  if (a.rows() < 1 || a.cols() < 1) {
    fail(ErrorCode::kShapeMismatch, "svd_small: empty matrix");
  }
  if (!a.allFinite()) fail(ErrorCode::kNonFinite, "svd_small: matrix has non-finite entries");
  if (a.rows() >= a.cols()) return detail::jacobi_tall(a.eval());
  auto t = detail::jacobi_tall(a.transpose().eval());
  std::swap(t.u, t.v);
  return t;
}

/// Number of singular values kept: max(1, round(fraction * min(rows, cols))).
inline Eigen::Index denoise_rank(Eigen::Index rows, Eigen::Index cols, double keep_fraction) {
  const double base = static_cast<double>(std::min(rows, cols));
  return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(keep_fraction * base)));
}

/// Low-rank reconstruction of [C,H,W] components as a C x (H*W) matrix with
/// row means removed before the SVD and restored afterwards.
RelevanceStack denoise_components(const RelevanceStack& components, double keep_fraction = 0.10);

}  // namespace fgcam
