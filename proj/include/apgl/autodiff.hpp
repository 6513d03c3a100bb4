#pragma once

// Matrix-level reverse-mode differentiation.
//
// A Tape records every operation applied to Vars; backward() replays the
// recorded adjoints in reverse order. A non-recording tape evaluates values
// only, so inference and training share one forward code path.

#include "apgl/graph.hpp"
#include "apgl/types.hpp"

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace apgl {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Matrix value);
  /// A differentiable input; its gradient is available after backward().
  Var leaf(Matrix value);

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
  /// Gradient of the last backward() target w.r.t. v; zeros if unreached.
  Matrix grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates adjoints.
  void backward(Var loss);

  /// Records a result. `fn` is dropped unless recording and some input
  /// requires a gradient.
  Var push(Matrix value, bool requires_grad, Backward fn);
  void accumulate(Var v, const Matrix& g);
  template <typename Expr>
  void accumulate_rows(Var v, Eigen::Index row, const Eigen::MatrixBase<Expr>& g) {
    auto& node = nodes_[check(v)];
    if (!node.requires_grad) return;
    ensure_grad(node);
    node.grad.row(row) += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::size_t check(Var v) const;
  static void ensure_grad(Node& node);

  std::vector<Node> nodes_;
  bool recording_;
};

// Elementwise and linear-algebra primitives. Shape mismatches throw Error
// with both shapes in the message.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// a^T * b
Var matmul_tn(Var a, Var b);
/// Adds a 1 x cols row vector to every row.
Var add_row(Var a, Var row);
Var linear(Var x, Var weight, Var bias);
Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
/// log(1 + exp(a)), evaluated stably.
Var softplus(Var a);
Var sum(Var a);
/// Sum of a(i, 0) * weights[i].
Var weighted_sum(Var a, std::span<const double> weights);
Var transpose(Var a);

/// Rows of `table` at `ids`; backward scatter-adds.
Var gather_rows(Var table, std::span<const int> ids);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
/// Stacks `copies` copies of a.
Var tile_rows(Var a, Eigen::Index copies);
/// Row-wise dot products, n x 1.
Var row_dot(Var a, Var b);
/// Rows scaled to unit L2 norm; a zero row is fatal.
Var normalize_rows(Var a);
/// Row-wise softmax, shifted by the row maximum.
Var softmax_rows(Var a);
/// Sum over rows of -log softmax(logits.row(i))[targets[i]]. With
/// `exclude_self`, column i is removed from row i's softmax.
Var softmax_cross_entropy(Var logits, std::span<const int> targets, bool exclude_self = false);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-12);
/// Multiplies entries by a seeded Bernoulli keep-mask scaled by 1/(1-p).
Var dropout(Var a, double p, std::mt19937_64& rng);

/// Y = A X with a constant sparse A.
Var spmm(const SparseGraph& a, Var x);

/// Stacked per-block products: rows [b*block, (b+1)*block) of the result
/// are U_b V_b^T, giving a (B*block) x block matrix.
Var block_matmul_nt(Var u, Var v, Eigen::Index block);
/// Multiplies block b (rows [b*block, (b+1)*block)) by c(b, 0).
Var scale_blocks(Var m, Var c, Eigen::Index block);

/// Attention weights recorded for inspection, one N x N matrix per
/// (sequence, head), sequence-major.
struct AttentionProbe {
  std::vector<Matrix> weights;
};

/// Multi-head attention over stacked sequences of length `seq_len`.
/// Logits per head are q k^T / sqrt(d / heads) + bias; keys after the query
/// position or with key_valid == 0 are excluded. Queries with no admissible
/// key get all-zero weights. `bias` is (B*seq_len) x seq_len, shared across
/// heads, and may be invalid (no bias).
Var masked_attention(Var q, Var k, Var v, Var bias, std::span<const std::uint8_t> key_valid,
                     int heads, Eigen::Index seq_len, AttentionProbe* probe = nullptr);

}  // namespace apgl
