#include "apgl/agcl.hpp"

#include <set>

namespace apgl {

Var lightgcn_propagate(const SparseGraph& a, Var e0, int layers, LayerCombine combine) {
  detail::check_propagation(a, e0.rows(), layers);
  Var layer = e0;
  Var total = layer;
  for (int l = 0; l < layers; ++l) {
    layer = spmm(a, layer);
    total = add(total, layer);
  }
  return scale(total, combine_factor(layers, combine));
}

Var perturbed_propagate(const SparseGraph& a, Var w_us, Var w_v, double alpha, Var e0, int layers,
                        LayerCombine combine) {
  detail::check_propagation(a, e0.rows(), layers);
  if (w_us.rows() != a.n() || w_v.rows() != a.n() || w_us.cols() != w_v.cols()) {
    throw Error("perturbation factors " + shape_str(w_us.value()) + " and " +
                shape_str(w_v.value()) + " do not match graph with " + std::to_string(a.n()) +
                " nodes");
  }
  const Var left = spmm(a, w_us);
  const Var right = spmm(a, w_v);
  Var layer = e0;
  Var total = layer;
  for (int l = 0; l < layers; ++l) {
    Var next = spmm(a, layer);
    if (alpha != 0.0) {
      const Var inner = matmul_tn(right, layer);
      next = add(next, scale(matmul(left, inner), alpha));
    }
    layer = next;
    total = add(total, layer);
  }
  return scale(total, combine_factor(layers, combine));
}

Var gce_loss(Var e_orig, Var e_refined, std::span<const int> items, double temperature) {
  if (items.empty()) throw Error("gce_loss: empty item batch");
  if (!(temperature > 0.0)) throw Error("gce_loss: temperature must be positive");
  std::set<int> unique(items.begin(), items.end());
  if (unique.size() != items.size()) throw Error("gce_loss: duplicate items in batch");
  if (unique.contains(kPaddingItem)) throw Error("gce_loss: padding id in batch");
  const Var a = normalize_rows(gather_rows(e_orig, items));
  const Var b = normalize_rows(gather_rows(e_refined, items));
  const Var logits = scale(matmul_nt(a, b), 1.0 / temperature);
  std::vector<int> targets(items.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i);
  return softmax_cross_entropy(logits, targets);
}

double gce_loss(const Matrix& e_orig, const Matrix& e_refined, std::span<const int> items,
                double temperature) {
  Tape tape(false);
  return gce_loss(tape.constant(e_orig), tape.constant(e_refined), items, temperature).value()(0, 0);
}

}  // namespace apgl
