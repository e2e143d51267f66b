#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "memlab/error.hpp"
#include "memlab/random.hpp"

namespace memlab::linalg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Thin SVD: m = U * diag(S) * V^T with k = min(rows, cols) columns in U and V.
template <typename Scalar>
struct Svd {
  Matrix<Scalar> U;
  Vector<Scalar> S;  // non-negative, descending
  Matrix<Scalar> V;
};

inline constexpr int kJacobiMaxSweeps = 80;

namespace detail {

// Gram-Schmidt (applied twice) of `candidate` against the first `filled`
// columns of q. Returns false when the candidate lies in their span.
template <typename Scalar>
bool orthonormalize_into(Matrix<Scalar>& q, Eigen::Index filled, Eigen::Index slot,
                         Vector<Scalar> candidate) {
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index j = 0; j < filled; ++j) {
      if (j == slot) continue;
      candidate -= q.col(j).dot(candidate) * q.col(j);
    }
  }
  const Scalar norm = candidate.norm();
  if (norm < Scalar(0.5)) return false;
  q.col(slot) = candidate / norm;
  return true;
}

// One-sided (Hestenes) Jacobi on a tall matrix (rows >= cols).
template <typename Scalar>
Svd<Scalar> jacobi_svd_tall(const Matrix<Scalar>& a) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  Matrix<Scalar> w = a;
  Matrix<Scalar> v = Matrix<Scalar>::Identity(n, n);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar tiny = std::numeric_limits<Scalar>::min() / eps;

  bool converged = (n < 2);
  for (int sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const Scalar alpha = w.col(i).squaredNorm();
        const Scalar beta = w.col(j).squaredNorm();
        const Scalar gamma = w.col(i).dot(w.col(j));
        if (alpha <= tiny || beta <= tiny) continue;
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        converged = false;
        // Rotation that zeroes the (i, j) entry of W^T W.
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = std::copysign(Scalar(1), zeta) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Eigen::Index r = 0; r < m; ++r) {
          const Scalar wi = w(r, i);
          const Scalar wj = w(r, j);
          w(r, i) = c * wi - s * wj;
          w(r, j) = s * wi + c * wj;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const Scalar vi = v(r, i);
          const Scalar vj = v(r, j);
          v(r, i) = c * vi - s * vj;
          v(r, j) = s * vi + c * vj;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("svd: one-sided Jacobi did not converge within " +
                         std::to_string(kJacobiMaxSweeps) + " sweeps");
  }

  Vector<Scalar> sigma(n);
  for (Eigen::Index j = 0; j < n; ++j) sigma(j) = w.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return sigma(x) > sigma(y); });

  Svd<Scalar> out{Matrix<Scalar>::Zero(m, n), Vector<Scalar>(n), Matrix<Scalar>(n, n)};
  const Scalar sigma_max = n > 0 ? sigma(order.front()) : Scalar(0);
  // Columns below this norm carry no usable direction; their U columns are
  // completed to an orthonormal set instead.
  const Scalar null_cut = sigma_max * eps * eps + tiny;
  std::vector<Eigen::Index> to_complete;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.S(k) = sigma(src);
    out.V.col(k) = v.col(src);
    if (sigma(src) > null_cut) {
      out.U.col(k) = w.col(src) / sigma(src);
    } else {
      to_complete.push_back(k);
    }
  }
  Eigen::Index basis = 0;
  for (Eigen::Index k : to_complete) {
    while (basis < m) {
      Vector<Scalar> e = Vector<Scalar>::Unit(m, basis++);
      if (orthonormalize_into<Scalar>(out.U, n, k, e)) break;
    }
  }
  return out;
}

}  // namespace detail

// Singular value decomposition by one-sided Jacobi rotations.
// Throws NumericalError on non-finite input or non-convergence.
template <typename Derived>
Svd<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("svd: empty matrix");
  }
  if (!m.allFinite()) throw NumericalError("svd: non-finite entries");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall<Scalar>(m.eval());
  Svd<Scalar> t = detail::jacobi_svd_tall<Scalar>(m.transpose().eval());
  return Svd<Scalar>{std::move(t.V), std::move(t.S), std::move(t.U)};
}

template <typename Scalar>
Scalar default_pinv_tolerance(Eigen::Index rows, Eigen::Index cols) {
  return std::numeric_limits<Scalar>::epsilon() * static_cast<Scalar>(std::max(rows, cols));
}

// Moore-Penrose pseudoinverse. Singular values at or below
// rel_tol * sigma_max are treated as zero; a negative rel_tol selects the
// default epsilon * max(rows, cols).
template <typename Derived>
Matrix<typename Derived::Scalar> pinv(const Eigen::MatrixBase<Derived>& m,
                                      typename Derived::Scalar rel_tol = -1) {
  using Scalar = typename Derived::Scalar;
  if (rel_tol < 0) rel_tol = default_pinv_tolerance<Scalar>(m.rows(), m.cols());
  const Svd<Scalar> f = svd(m);
  const Scalar cutoff = rel_tol * f.S(0);
  Vector<Scalar> inv_s = Vector<Scalar>::Zero(f.S.size());
  for (Eigen::Index k = 0; k < f.S.size(); ++k) {
    if (f.S(k) > cutoff && f.S(k) > Scalar(0)) inv_s(k) = Scalar(1) / f.S(k);
  }
  return f.V * inv_s.asDiagonal() * f.U.transpose();
}

// W1 distance between two weighted 1-D distributions, i.e. the area between
// their CDFs. Weights are normalized internally.
inline double wasserstein1d(std::span<const double> a_pos, std::span<const double> a_w,
                            std::span<const double> b_pos, std::span<const double> b_w) {
  if (a_pos.empty() || b_pos.empty()) {
    throw std::invalid_argument("wasserstein1d: empty distribution");
  }
  if (a_pos.size() != a_w.size() || b_pos.size() != b_w.size()) {
    throw std::invalid_argument("wasserstein1d: positions and weights differ in length");
  }
  struct Atom {
    double x;
    double w;
  };
  auto normalized = [](std::span<const double> pos, std::span<const double> w) {
    double total = 0.0;
    for (double wi : w) {
      if (!(wi >= 0.0) || !std::isfinite(wi)) {
        throw std::invalid_argument("wasserstein1d: weights must be finite and non-negative");
      }
      total += wi;
    }
    if (!(total > 0.0)) throw std::invalid_argument("wasserstein1d: zero total weight");
    std::vector<Atom> atoms(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) atoms[i] = {pos[i], w[i] / total};
    std::sort(atoms.begin(), atoms.end(), [](const Atom& l, const Atom& r) { return l.x < r.x; });
    return atoms;
  };
  const std::vector<Atom> a = normalized(a_pos, a_w);
  const std::vector<Atom> b = normalized(b_pos, b_w);

  // Sweep the merged breakpoints; between consecutive breakpoints both CDFs
  // are constant.
  double fa = 0.0, fb = 0.0, dist = 0.0;
  std::size_t i = 0, j = 0;
  double prev = std::min(a.front().x, b.front().x);
  while (i < a.size() || j < b.size()) {
    const double next = std::min(i < a.size() ? a[i].x : INFINITY, j < b.size() ? b[j].x : INFINITY);
    dist += std::abs(fa - fb) * (next - prev);
    while (i < a.size() && a[i].x == next) fa += a[i++].w;
    while (j < b.size() && b[j].x == next) fb += b[j++].w;
    prev = next;
  }
  return dist;
}

// W1 distance between two empirical sample sets with uniform weights.
inline double wasserstein1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1d: empty sample set");
  if (a.size() == b.size()) {
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < sa.size(); ++k) sum += std::abs(sa[k] - sb[k]);
    return sum / static_cast<double>(sa.size());
  }
  const std::vector<double> wa(a.size(), 1.0), wb(b.size(), 1.0);
  return wasserstein1d(a, wa, b, wb);
}

// Entries independently +1 or -1 with probability 1/2.
inline VectorXd rademacher(Eigen::Index dim, RandomStream& rng) {
  if (dim < 1) throw std::invalid_argument("rademacher: dim must be positive");
  VectorXd v(dim);
  std::uint64_t bits = 0;
  int left = 0;
  for (Eigen::Index k = 0; k < dim; ++k) {
    if (left == 0) {
      bits = rng.next_u64();
      left = 64;
    }
    v(k) = (bits & 1U) ? 1.0 : -1.0;
    bits >>= 1;
    --left;
  }
  return v;
}

}  // namespace memlab::linalg
