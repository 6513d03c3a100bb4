#include "apgl/autodiff.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace apgl {
namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape != &t) throw Error("operands belong to different tapes");
  return t;
}

bool needs(Var a) { return a.tape->requires_grad(a); }

}  // namespace

const Matrix& Var::value() const { return tape_of(*this).value(*this); }

std::size_t Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error("Var does not belong to this tape");
  }
  return static_cast<std::size_t>(v.id);
}

void Tape::ensure_grad(Node& node) {
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) { return push(std::move(value), recording_, nullptr); }

Var Tape::push(Matrix value, bool requires_grad, Backward fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = recording_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Matrix& g) {
  auto& node = nodes_[check(v)];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    require_same_shape("gradient accumulation", node.value, g);
    node.grad = g;
    return;
  }
  node.grad += g;
}

Matrix Tape::grad(Var v) const {
  const auto& node = nodes_[check(v)];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var loss) {
  const auto root = check(loss);
  if (nodes_[root].value.size() != 1) {
    throw Error("backward() needs a scalar loss, got " + shape_str(nodes_[root].value));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root].requires_grad) return;
  nodes_[root].grad = Matrix::Ones(1, 1);
  for (std::size_t i = root + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, node.grad);
  }
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  return t.push(a.value() + b.value(), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  return t.push(a.value() - b.value(), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.push(a.value() * s, needs(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("hadamard", a.value(), b.value());
  return t.push(a.value().cwiseProduct(b.value()), needs(a) || needs(b),
                [a, b](Tape& t, const Matrix& g) {
                  if (needs(a)) t.accumulate(a, g.cwiseProduct(b.value()));
                  if (needs(b)) t.accumulate(b, g.cwiseProduct(a.value()));
                });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw Error("matmul: shape mismatch " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) t.accumulate(a, g * b.value().transpose());
    if (needs(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.cols()) {
    throw Error("matmul_nt: shape mismatch " + shape_str(a.value()) + " * " +
                shape_str(b.value()) + "^T");
  }
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) t.accumulate(a, g * b.value());
    if (needs(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var matmul_tn(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.rows() != b.rows()) {
    throw Error("matmul_tn: shape mismatch " + shape_str(a.value()) + "^T * " +
                shape_str(b.value()));
  }
  Matrix out = a.value().transpose() * b.value();
  return t.push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) t.accumulate(a, b.value() * g.transpose());
    if (needs(b)) t.accumulate(b, a.value() * g);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error("add_row: cannot broadcast " + shape_str(row.value()) + " onto " +
                shape_str(a.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (needs(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  return t.push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = a.value().unaryExpr([&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return t.push(std::move(out), needs(a), [a, inv_sqrt2](Tape& t, const Matrix& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = a.value().unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * std::exp(-0.5 * x * x) * inv_sqrt_2pi;
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

namespace {
double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr(&sigmoid_scalar);
  auto y = std::make_shared<Matrix>(out);
  return t.push(std::move(out), needs(a), [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(y->cwiseProduct((1.0 - y->array()).matrix())));
  });
}

Var softplus(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return t.push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr(&sigmoid_scalar)));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var weighted_sum(Var a, std::span<const double> weights) {
  Tape& t = tape_of(a);
  if (a.cols() != 1 || static_cast<std::size_t>(a.rows()) != weights.size()) {
    throw Error("weighted_sum: operand " + shape_str(a.value()) + " vs " +
                std::to_string(weights.size()) + " weights");
  }
  const Eigen::Map<const Vector> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  Matrix out(1, 1);
  out(0, 0) = a.value().col(0).dot(w);
  Vector wc = w;
  return t.push(std::move(out), needs(a), [a, wc](Tape& t, const Matrix& g) {
    Matrix d = wc * g(0, 0);
    t.accumulate(a, d);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  return t.push(std::move(out), needs(a),
                [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& src = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), src.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= src.rows()) {
      throw Error("gather_rows: id " + std::to_string(ids[r]) + " outside table " + shape_str(src));
    }
    out.row(static_cast<Eigen::Index>(r)) = src.row(ids[r]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return t.push(std::move(out), needs(table), [table, idx](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) d.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(table, d);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw Error("slice_rows: rows [" + std::to_string(start) + ", " +
                std::to_string(start + count) + ") outside " + shape_str(a.value()));
  }
  Matrix out = a.value().middleRows(start, count);
  return t.push(std::move(out), needs(a), [a, start, count](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleRows(start, count) = g;
    t.accumulate(a, d);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no operands");
  Tape& t = tape_of(parts[0]);
  Eigen::Index rows = 0;
  bool grad = false;
  for (const auto& p : parts) {
    tape_of(parts[0], p);
    if (p.cols() != parts[0].cols()) {
      throw Error("concat_rows: shape mismatch " + shape_str(parts[0].value()) + " vs " +
                  shape_str(p.value()));
    }
    rows += p.rows();
    grad = grad || needs(p);
  }
  Matrix out(rows, parts[0].cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), grad, [ps](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (const auto& p : ps) {
      if (needs(p)) t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var tile_rows(Var a, Eigen::Index copies) {
  Tape& t = tape_of(a);
  const Eigen::Index n = a.rows();
  Matrix out(n * copies, a.cols());
  for (Eigen::Index c = 0; c < copies; ++c) out.middleRows(c * n, n) = a.value();
  return t.push(std::move(out), needs(a), [a, n, copies](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(n, a.cols());
    for (Eigen::Index c = 0; c < copies; ++c) d += g.middleRows(c * n, n);
    t.accumulate(a, d);
  });
}

Var row_dot(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("row_dot", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) t.accumulate(a, b.value().array().colwise() * g.col(0).array());
    if (needs(b)) t.accumulate(b, a.value().array().colwise() * g.col(0).array());
  });
}

Var normalize_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Vector norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) throw Error("normalize_rows: row " + std::to_string(i) + " has zero norm");
  }
  Matrix y = x.array().colwise() / norms.array();
  auto yc = std::make_shared<Matrix>(y);
  return t.push(std::move(y), needs(a), [a, yc, norms](Tape& t, const Matrix& g) {
    Vector proj = yc->cwiseProduct(g).rowwise().sum();
    Matrix d = (g - (yc->array().colwise() * proj.array()).matrix()).array().colwise() / norms.array();
    t.accumulate(a, d);
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i).array() -= out.row(i).maxCoeff();
    out.row(i) = out.row(i).array().exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  auto y = std::make_shared<Matrix>(out);
  return t.push(std::move(out), needs(a), [a, y](Tape& t, const Matrix& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(*y).rowwise().sum();
    Matrix dx = g;
    dx.colwise() -= dots;
    t.accumulate(a, dx.cwiseProduct(*y));
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, bool exclude_self) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  if (static_cast<std::size_t>(z.rows()) != targets.size()) {
    throw Error("softmax_cross_entropy: " + shape_str(z) + " logits vs " +
                std::to_string(targets.size()) + " targets");
  }
  auto probs = std::make_shared<Matrix>(Matrix::Zero(z.rows(), z.cols()));
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int target = targets[static_cast<std::size_t>(i)];
    if (target < 0 || target >= z.cols() || (exclude_self && target == i)) {
      throw Error("softmax_cross_entropy: invalid target " + std::to_string(target) + " in row " +
                  std::to_string(i));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (exclude_self && j == i) continue;
      mx = std::max(mx, z(i, j));
    }
    double denom = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (exclude_self && j == i) continue;
      const double e = std::exp(z(i, j) - mx);
      (*probs)(i, j) = e;
      denom += e;
    }
    probs->row(i) /= denom;
    loss += mx + std::log(denom) - z(i, target);
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  std::vector<int> tg(targets.begin(), targets.end());
  return t.push(std::move(out), needs(logits), [logits, probs, tg](Tape& t, const Matrix& g) {
    Matrix d = *probs;
    for (std::size_t i = 0; i < tg.size(); ++i) d(static_cast<Eigen::Index>(i), tg[i]) -= 1.0;
    t.accumulate(logits, d * g(0, 0));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x, gamma);
  tape_of(x, beta);
  const Matrix& in = x.value();
  const Eigen::Index cols = in.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols) {
    throw Error("layer_norm: input " + shape_str(in) + " with gamma " + shape_str(gamma.value()) +
                " and beta " + shape_str(beta.value()));
  }
  auto xhat = std::make_shared<Matrix>(in.rows(), cols);
  auto inv_std = std::make_shared<Vector>(in.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const double mean = in.row(i).mean();
    const double var = (in.row(i).array() - mean).square().mean();
    (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (in.row(i).array() - mean) * (*inv_std)(i);
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  const bool grad = needs(x) || needs(gamma) || needs(beta);
  return t.push(std::move(out), grad, [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
    if (needs(gamma)) t.accumulate(gamma, g.cwiseProduct(*xhat).colwise().sum());
    if (needs(beta)) t.accumulate(beta, g.colwise().sum());
    if (!needs(x)) return;
    const auto n = static_cast<double>(xhat->cols());
    Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
    Matrix dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
      const double m1 = dxhat.row(i).sum() / n;
      const double m2 = dxhat.row(i).dot(xhat->row(i)) / n;
      dx.row(i) = (*inv_std)(i) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
    }
    t.accumulate(x, dx);
  });
}

Var dropout(Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout probability must be < 1");
  Tape& t = tape_of(a);
  const auto threshold = static_cast<std::uint32_t>(p * 65536.0);
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
  double* m = mask->data();
  const Eigen::Index n = mask->size();
  for (Eigen::Index i = 0; i < n; i += 4) {
    std::uint64_t bits = rng();
    for (Eigen::Index k = i; k < std::min(n, i + 4); ++k) {
      m[k] = (bits & 0xFFFF) < threshold ? 0.0 : keep_scale;
      bits >>= 16;
    }
  }
  Matrix out = a.value().cwiseProduct(*mask);
  return t.push(std::move(out), needs(a),
                [a, mask](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(*mask)); });
}

Var spmm(const SparseGraph& a, Var x) {
  Tape& t = tape_of(x);
  Matrix out = spmm(a, x.value());
  return t.push(std::move(out), needs(x),
                [&a, x](Tape& t, const Matrix& g) { t.accumulate(x, spmm_transposed(a, g)); });
}

Var block_matmul_nt(Var u, Var v, Eigen::Index block) {
  Tape& t = tape_of(u, v);
  require_same_shape("block_matmul_nt", u.value(), v.value());
  if (block <= 0 || u.rows() % block != 0) {
    throw Error("block_matmul_nt: " + std::to_string(u.rows()) + " rows not divisible by block " +
                std::to_string(block));
  }
  const Eigen::Index blocks = u.rows() / block;
  Matrix out(u.rows(), block);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    out.middleRows(b * block, block).noalias() =
        u.value().middleRows(b * block, block) * v.value().middleRows(b * block, block).transpose();
  }
  return t.push(std::move(out), needs(u) || needs(v), [u, v, block, blocks](Tape& t, const Matrix& g) {
    Matrix du(u.rows(), u.cols()), dv(v.rows(), v.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const auto gb = g.middleRows(b * block, block);
      du.middleRows(b * block, block).noalias() = gb * v.value().middleRows(b * block, block);
      dv.middleRows(b * block, block).noalias() =
          gb.transpose() * u.value().middleRows(b * block, block);
    }
    t.accumulate(u, du);
    t.accumulate(v, dv);
  });
}

Var scale_blocks(Var m, Var c, Eigen::Index block) {
  Tape& t = tape_of(m, c);
  if (block <= 0 || m.rows() != c.rows() * block || c.cols() != 1) {
    throw Error("scale_blocks: matrix " + shape_str(m.value()) + " with scales " +
                shape_str(c.value()) + " and block " + std::to_string(block));
  }
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index b = 0; b < c.rows(); ++b) {
    out.middleRows(b * block, block) = c.value()(b, 0) * m.value().middleRows(b * block, block);
  }
  return t.push(std::move(out), needs(m) || needs(c), [m, c, block](Tape& t, const Matrix& g) {
    if (needs(m)) {
      Matrix dm(m.rows(), m.cols());
      for (Eigen::Index b = 0; b < c.rows(); ++b) {
        dm.middleRows(b * block, block) = c.value()(b, 0) * g.middleRows(b * block, block);
      }
      t.accumulate(m, dm);
    }
    if (needs(c)) {
      Matrix dc(c.rows(), 1);
      for (Eigen::Index b = 0; b < c.rows(); ++b) {
        dc(b, 0) = g.middleRows(b * block, block).cwiseProduct(m.value().middleRows(b * block, block)).sum();
      }
      t.accumulate(c, dc);
    }
  });
}

Var masked_attention(Var q, Var k, Var v, Var bias, std::span<const std::uint8_t> key_valid,
                     int heads, Eigen::Index seq_len, AttentionProbe* probe) {
  Tape& t = tape_of(q, k);
  tape_of(q, v);
  require_same_shape("masked_attention(q, k)", q.value(), k.value());
  require_same_shape("masked_attention(q, v)", q.value(), v.value());
  const Eigen::Index rows = q.rows();
  const Eigen::Index dim = q.cols();
  if (heads <= 0 || dim % heads != 0) {
    throw Error("masked_attention: width " + std::to_string(dim) + " not divisible by " +
                std::to_string(heads) + " heads");
  }
  if (seq_len <= 0 || rows % seq_len != 0 || static_cast<std::size_t>(rows) != key_valid.size()) {
    throw Error("masked_attention: " + std::to_string(rows) + " rows, sequence length " +
                std::to_string(seq_len) + ", " + std::to_string(key_valid.size()) + " mask entries");
  }
  const bool has_bias = bias.valid();
  if (has_bias) {
    tape_of(q, bias);
    if (bias.rows() != rows || bias.cols() != seq_len) {
      throw Error("masked_attention: bias " + shape_str(bias.value()) + " expected " +
                  shape_str(rows, seq_len));
    }
  }
  const Eigen::Index n = seq_len;
  const Eigen::Index batch = rows / n;
  const Eigen::Index dh = dim / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto weights = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(batch * heads));
  std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
  Matrix out = Matrix::Zero(rows, dim);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = q.value().block(b * n, h * dh, n, dh);
      const auto kb = k.value().block(b * n, h * dh, n, dh);
      const auto vb = v.value().block(b * n, h * dh, n, dh);
      Matrix logits = (qb * kb.transpose()) * inv_scale;
      if (has_bias) logits += bias.value().middleRows(b * n, n);
      Matrix w = Matrix::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) {
          if (valid[static_cast<std::size_t>(b * n + j)]) mx = std::max(mx, logits(i, j));
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;
        double denom = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          if (!valid[static_cast<std::size_t>(b * n + j)]) continue;
          w(i, j) = std::exp(logits(i, j) - mx);
          denom += w(i, j);
        }
        w.row(i) /= denom;
      }
      out.block(b * n, h * dh, n, dh).noalias() = w * vb;
      (*weights)[static_cast<std::size_t>(b * heads + h)] = std::move(w);
    }
  }
  if (probe != nullptr) probe->weights = *weights;

  const bool grad = needs(q) || needs(k) || needs(v) || (has_bias && needs(bias));
  return t.push(std::move(out), grad,
                [q, k, v, bias, has_bias, weights, heads, n, batch, dh, inv_scale](Tape& t,
                                                                                   const Matrix& g) {
                  const Eigen::Index rows = q.rows();
                  Matrix dq = Matrix::Zero(rows, q.cols());
                  Matrix dk = Matrix::Zero(rows, q.cols());
                  Matrix dv = Matrix::Zero(rows, q.cols());
                  Matrix dbias;
                  if (has_bias) dbias = Matrix::Zero(rows, n);
                  for (Eigen::Index b = 0; b < batch; ++b) {
                    for (int h = 0; h < heads; ++h) {
                      const Matrix& w = (*weights)[static_cast<std::size_t>(b * heads + h)];
                      const auto qb = q.value().block(b * n, h * dh, n, dh);
                      const auto kb = k.value().block(b * n, h * dh, n, dh);
                      const auto vb = v.value().block(b * n, h * dh, n, dh);
                      const auto gb = g.block(b * n, h * dh, n, dh);
                      dv.block(b * n, h * dh, n, dh).noalias() += w.transpose() * gb;
                      Matrix dw = gb * vb.transpose();
                      Vector rowdot = w.cwiseProduct(dw).rowwise().sum();
                      Matrix dl = w.cwiseProduct((dw.colwise() - rowdot));
                      dq.block(b * n, h * dh, n, dh).noalias() += (dl * kb) * inv_scale;
                      dk.block(b * n, h * dh, n, dh).noalias() += (dl.transpose() * qb) * inv_scale;
                      if (has_bias) dbias.middleRows(b * n, n) += dl;
                    }
                  }
                  t.accumulate(q, dq);
                  t.accumulate(k, dk);
                  t.accumulate(v, dv);
                  if (has_bias) t.accumulate(bias, dbias);
                });
}

}  // namespace apgl
