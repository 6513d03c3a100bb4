#pragma once

#include "apgl/types.hpp"

#include <cmath>
#include <iostream>

namespace apgl {

template <typename Scalar>
struct Projection2D {
  MatrixX<Scalar> coords;           // rows x 2
  MatrixX<Scalar> directions;       // d x 2, unit columns
  VectorX<Scalar> singular_values;  // 2
  bool converged = true;
};

namespace detail {

// Flips v so that its first entry with |v_i| > tol is positive.
template <typename Scalar>
void canonical_sign(VectorX<Scalar>& v) {
  const Scalar tol = Scalar(1e-12) * std::max(Scalar(1), v.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > tol) {
      if (v(i) < 0) v = -v;
      return;
    }
  }
}

}  // namespace detail

/// Projects the rows of `e` onto its top two right singular vectors, found by
/// power iteration on E^T E with deflation.
template <typename Derived>
Projection2D<typename Derived::Scalar> top2_svd_project(const Eigen::MatrixBase<Derived>& e,
                                                        int iters = 500) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index d = e.cols();
  if (d < 2) throw Error("top2_svd_project needs at least 2 columns, got " + shape_str(e));
  const MatrixX<Scalar> gram = e.transpose() * e;
  MatrixX<Scalar> deflated = gram;
  Projection2D<Scalar> out;
  out.directions = MatrixX<Scalar>::Zero(d, 2);
  out.singular_values = VectorX<Scalar>::Zero(2);
  const Scalar tol = std::is_same_v<Scalar, float> ? Scalar(1e-6) : Scalar(1e-13);
  const Scalar scale = std::max(gram.cwiseAbs().maxCoeff(), std::numeric_limits<Scalar>::min());

  for (int k = 0; k < 2; ++k) {
    // Deterministic start that is unlikely to be orthogonal to the top direction.
    VectorX<Scalar> v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = Scalar(1) + Scalar(i + 1) / Scalar(d + 7);
    for (int j = 0; j < k; ++j) v -= out.directions.col(j).dot(v) * out.directions.col(j);
    v.normalize();
    bool converged = false;
    Scalar lambda = 0;
    for (int it = 0; it < iters; ++it) {
      VectorX<Scalar> w = deflated * v;
      for (int j = 0; j < k; ++j) w -= out.directions.col(j).dot(w) * out.directions.col(j);
      const Scalar norm = w.norm();
      if (norm <= tol * scale) {
        // Remaining spectrum is numerically zero.
        lambda = 0;
        converged = true;
        break;
      }
      w /= norm;
      const Scalar change = std::min((w - v).norm(), (w + v).norm());
      v = w;
      lambda = norm;
      if (change < tol) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      out.converged = false;
      std::cerr << "warning: power iteration for singular direction " << k + 1
                << " did not converge in " << iters << " iterations\n";
    }
    detail::canonical_sign(v);
    out.directions.col(k) = v;
    out.singular_values(k) = std::sqrt(std::max(lambda, Scalar(0)));
    deflated -= lambda * v * v.transpose();
  }
  out.coords = e * out.directions;
  return out;
}

}  // namespace apgl
