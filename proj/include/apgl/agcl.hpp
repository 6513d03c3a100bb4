#pragma once

// Adaptive global collaborative learner: LightGCN propagation over the fixed
// graph, low-rank perturbed propagation over the refined graph, and the
// cosine InfoNCE loss tying the two representations together.

#include "apgl/autodiff.hpp"
#include "apgl/graph.hpp"
#include "apgl/types.hpp"

#include <span>

namespace apgl {

/// How layer outputs E^(0..L) are combined: averaged over L+1 terms, or the
/// same sum scaled by 1/L.
enum class LayerCombine { Mean, PaperLiteral };

struct GraphEncoderConfig {
  int layers = 2;
  LayerCombine combine = LayerCombine::Mean;
  double temperature = 0.2;
};

inline double combine_factor(int layers, LayerCombine combine) {
  return combine == LayerCombine::Mean ? 1.0 / (layers + 1) : 1.0 / layers;
}

namespace detail {
inline void check_propagation(const SparseGraph& a, Eigen::Index rows, int layers) {
  if (layers < 1) throw Error("LightGCN needs at least one layer");
  if (a.n() != rows) {
    throw Error("graph has " + std::to_string(a.n()) + " nodes but embeddings have " +
                std::to_string(rows) + " rows");
  }
}
}  // namespace detail

/// E^(l) = A E^(l-1), combined over l = 0..L.
template <typename Derived>
MatrixX<typename Derived::Scalar> lightgcn_propagate(const SparseGraph& a,
                                                     const Eigen::MatrixBase<Derived>& e0,
                                                     int layers, LayerCombine combine = LayerCombine::Mean) {
  using Scalar = typename Derived::Scalar;
  detail::check_propagation(a, e0.rows(), layers);
  MatrixX<Scalar> layer = e0;
  MatrixX<Scalar> total = layer;
  for (int l = 0; l < layers; ++l) {
    layer = spmm(a, layer);
    total += layer;
  }
  return total * static_cast<Scalar>(combine_factor(layers, combine));
}

/// Propagation over A + alpha (A W_us)(A W_v)^T, evaluated right to left so
/// no n x n matrix is formed.
template <typename DerivedE, typename DerivedU, typename DerivedV>
MatrixX<typename DerivedE::Scalar> perturbed_propagate(const SparseGraph& a,
                                                       const Eigen::MatrixBase<DerivedU>& w_us,
                                                       const Eigen::MatrixBase<DerivedV>& w_v,
                                                       double alpha,
                                                       const Eigen::MatrixBase<DerivedE>& e0, int layers,
                                                       LayerCombine combine = LayerCombine::Mean) {
  using Scalar = typename DerivedE::Scalar;
  detail::check_propagation(a, e0.rows(), layers);
  if (w_us.rows() != a.n() || w_v.rows() != a.n() || w_us.cols() != w_v.cols()) {
    throw Error("perturbation factors " + shape_str(w_us) + " and " + shape_str(w_v) +
                " do not match graph with " + std::to_string(a.n()) + " nodes");
  }
  const MatrixX<Scalar> left = spmm(a, w_us);
  const MatrixX<Scalar> right = spmm(a, w_v);
  MatrixX<Scalar> layer = e0;
  MatrixX<Scalar> total = layer;
  MatrixX<Scalar> inner(right.cols(), layer.cols());  // rank x d
  for (int l = 0; l < layers; ++l) {
    MatrixX<Scalar> next = spmm(a, layer);
    if (alpha != 0.0) {
      inner.noalias() = right.transpose() * layer;
      next.noalias() += static_cast<Scalar>(alpha) * left * inner;
    }
    layer = std::move(next);
    total += layer;
  }
  total *= static_cast<Scalar>(combine_factor(layers, combine));
  return total;
}

/// Differentiable counterparts used in training.
Var lightgcn_propagate(const SparseGraph& a, Var e0, int layers, LayerCombine combine);
Var perturbed_propagate(const SparseGraph& a, Var w_us, Var w_v, double alpha, Var e0, int layers,
                        LayerCombine combine);

/// -sum_i log softmax_j(cos(e_i, e_hat_j) / tau)[i] over `items`.
Var gce_loss(Var e_orig, Var e_refined, std::span<const int> items, double temperature);
double gce_loss(const Matrix& e_orig, const Matrix& e_refined, std::span<const int> items,
                double temperature);

}  // namespace apgl
