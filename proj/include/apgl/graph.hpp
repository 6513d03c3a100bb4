#pragma once

// Rule-based global item transition graph and per-sequence sub-graphs.

#include "apgl/container.hpp"
#include "apgl/dataio.hpp"
#include "apgl/types.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

namespace apgl {

struct GraphBuildConfig {
  int window = 2;
  double self_loop_weight = 1.0;
};

/// Sparse co-occurrence weights keyed by (row, col); ordered for
/// deterministic iteration.
struct CooccurrenceAccumulator {
  int num_items = 0;
  std::map<std::pair<ItemId, ItemId>, double> weights;
};

/// Square adjacency in compressed sparse row layout. Node 0 is the padding
/// node and has no edges.
class SparseGraph {
 public:
  SparseGraph() = default;
  SparseGraph(std::int64_t n, std::vector<std::uint64_t> row_offsets,
              std::vector<std::uint32_t> col_indices, std::vector<double> values);

  std::int64_t n() const { return n_; }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<std::uint64_t>& row_offsets() const { return row_offsets_; }
  const std::vector<std::uint32_t>& col_indices() const { return col_indices_; }
  const std::vector<double>& values() const { return values_; }

  /// Stored weight at (row, col), or 0 when absent.
  double value(std::int64_t row, std::int64_t col) const;
  bool is_symmetric() const;
  Matrix to_dense() const;

  GraphBuildConfig config;

  Container to_container() const;
  static SparseGraph from_container(const Container& c);

  /// Builds from (row, col, value) triplets; duplicates are summed.
  static SparseGraph from_triplets(std::int64_t n,
                                   std::vector<std::tuple<std::int64_t, std::int64_t, double>> t);

 private:
  std::int64_t n_ = 0;
  std::vector<std::uint64_t> row_offsets_{0};
  std::vector<std::uint32_t> col_indices_;
  std::vector<double> values_;
};

/// Adds 1/j to weight(s[t], s[t+j]) for every 1 <= j <= window.
void accumulate_cooccurrence(CooccurrenceAccumulator& acc, std::span<const ItemId> sequence,
                             int window);
CooccurrenceAccumulator accumulate_cooccurrence(const std::vector<std::vector<ItemId>>& sequences,
                                                int num_items, int window);

/// Scales every weight by 1/deg(i) + 1/deg(j), deg counting both directions.
CooccurrenceAccumulator normalize_degrees(const CooccurrenceAccumulator& acc);

/// A + A^T, diagonal overwritten with the self-loop weight for items 1..n.
SparseGraph finalize_graph(const CooccurrenceAccumulator& acc, const GraphBuildConfig& cfg);

/// Full pipeline over the train views of every user, in user-id order.
SparseGraph build_item_graph(const SequenceStore& sequences, int num_items,
                             const GraphBuildConfig& cfg = {});

/// Y = A X. Rows of X are graph nodes.
template <typename Derived>
MatrixX<typename Derived::Scalar> spmm(const SparseGraph& a, const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != a.n()) {
    throw Error("spmm: graph is " + shape_str(a.n(), a.n()) + " but operand is " + shape_str(x));
  }
  // Row-major and contiguous, so each update is a plain vectorisable loop.
  const Eigen::Ref<const MatrixX<Scalar>> xr(x);
  MatrixX<Scalar> y = MatrixX<Scalar>::Zero(x.rows(), x.cols());
  const Eigen::Index d = x.cols();
  const auto& offs = a.row_offsets();
  const auto& cols = a.col_indices();
  const auto& vals = a.values();
  for (Eigen::Index i = 0; i < a.n(); ++i) {
    Scalar* out = y.data() + i * d;
    for (auto k = offs[static_cast<std::size_t>(i)]; k < offs[static_cast<std::size_t>(i) + 1]; ++k) {
      const Scalar v = static_cast<Scalar>(vals[k]);
      const Scalar* in = xr.data() + static_cast<Eigen::Index>(cols[k]) * d;
      for (Eigen::Index c = 0; c < d; ++c) out[c] += v * in[c];
    }
  }
  return y;
}

/// Y = A^T X.
template <typename Derived>
MatrixX<typename Derived::Scalar> spmm_transposed(const SparseGraph& a,
                                                  const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != a.n()) {
    throw Error("spmm_transposed: graph is " + shape_str(a.n(), a.n()) + " but operand is " +
                shape_str(x));
  }
  const Eigen::Ref<const MatrixX<Scalar>> xr(x);
  MatrixX<Scalar> y = MatrixX<Scalar>::Zero(x.rows(), x.cols());
  const Eigen::Index d = x.cols();
  const auto& offs = a.row_offsets();
  const auto& cols = a.col_indices();
  const auto& vals = a.values();
  for (Eigen::Index i = 0; i < a.n(); ++i) {
    const Scalar* in = xr.data() + i * d;
    for (auto k = offs[static_cast<std::size_t>(i)]; k < offs[static_cast<std::size_t>(i) + 1]; ++k) {
      const Scalar v = static_cast<Scalar>(vals[k]);
      Scalar* out = y.data() + static_cast<Eigen::Index>(cols[k]) * d;
      for (Eigen::Index c = 0; c < d; ++c) out[c] += v * in[c];
    }
  }
  return y;
}

/// Low-rank learnable perturbation A' = (A W_us)(A W_v)^T.
struct LowRankPerturbation {
  Matrix w_us;  // (n) x rank
  Matrix w_v;   // (n) x rank
  double alpha = 0.05;

  Eigen::Index rank() const { return w_us.cols(); }
};

enum class SubgraphSource { Original, Refined };

/// Entries of A (or A + alpha A') gathered at the items of a padded sequence.
/// Padding positions, and ids outside the graph (mask tokens), give zero
/// rows and columns. A' is evaluated from its factors, never materialized.
Matrix extract_subgraph(const SparseGraph& graph, std::span<const ItemId> padded,
                        SubgraphSource source = SubgraphSource::Original,
                        const LowRankPerturbation* perturbation = nullptr);

}  // namespace apgl
