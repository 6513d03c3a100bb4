#include "apgl/seqenc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace apgl {
namespace {

constexpr double kInitStd = 0.02;

std::string layer_name(int l, const char* part) { return "enc." + std::to_string(l) + "." + part; }

constexpr const char* kLayerParts[] = {"wq",     "bq",     "wk",     "bk",     "wv",    "bv",
                                       "wo",     "bo",     "ln1.g",  "ln1.b",  "ffn.w1", "ffn.b1",
                                       "ffn.w2", "ffn.b2", "ln2.g",  "ln2.b"};

int hidden_width(int dim) { return (dim + 1) / 2; }

}  // namespace

void init_encoder_params(ParamRegistry& registry, const EncoderConfig& cfg, int num_items,
                         std::mt19937_64& rng) {
  if (cfg.dim % cfg.heads != 0) {
    throw Error("embedding width " + std::to_string(cfg.dim) + " not divisible by " +
                std::to_string(cfg.heads) + " heads");
  }
  const Eigen::Index d = cfg.dim;
  registry.add("item_emb", normal_init(num_items + 2, d, kInitStd, rng), {0});
  registry.add("pos_emb", normal_init(cfg.max_len, d, kInitStd, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      registry.add(layer_name(l, w), normal_init(d, d, kInitStd, rng));
      const std::string bias = std::string("b") + (w + 1);
      registry.add(layer_name(l, bias.c_str()), Matrix::Zero(1, d));
    }
    registry.add(layer_name(l, "ln1.g"), Matrix::Ones(1, d));
    registry.add(layer_name(l, "ln1.b"), Matrix::Zero(1, d));
    registry.add(layer_name(l, "ffn.w1"), normal_init(d, 4 * d, kInitStd, rng));
    registry.add(layer_name(l, "ffn.b1"), Matrix::Zero(1, 4 * d));
    registry.add(layer_name(l, "ffn.w2"), normal_init(4 * d, d, kInitStd, rng));
    registry.add(layer_name(l, "ffn.b2"), Matrix::Zero(1, d));
    registry.add(layer_name(l, "ln2.g"), Matrix::Ones(1, d));
    registry.add(layer_name(l, "ln2.b"), Matrix::Zero(1, d));
  }
}

void init_extractor_params(ParamRegistry& registry, int dim, int num_users, std::mt19937_64& rng) {
  const int hidden = hidden_width(dim);
  registry.add("user_emb", normal_init(num_users + 1, dim, kInitStd, rng), {0});
  registry.add("pge.w1", normal_init(dim, hidden, kInitStd, rng));
  registry.add("pge.b1", Matrix::Zero(1, hidden));
  registry.add("pge.w2", normal_init(hidden, 1, kInitStd, rng));
  registry.add("pge.b2", Matrix::Zero(1, 1));
}

std::vector<std::string> encoder_param_names(const EncoderConfig& cfg) {
  std::vector<std::string> names = {"item_emb", "pos_emb"};
  for (int l = 0; l < cfg.layers; ++l) {
    for (const char* part : kLayerParts) names.push_back(layer_name(l, part));
  }
  return names;
}

std::vector<std::string> extractor_param_names() {
  return {"user_emb", "pge.w1", "pge.b1", "pge.w2", "pge.b2"};
}

Var user_graph_weight(const Bindings& params, std::span<const int> users) {
  const Var s = gather_rows(params.at("user_emb"), users);
  const Var hidden = relu(linear(s, params.at("pge.w1"), params.at("pge.b1")));
  return linear(hidden, params.at("pge.w2"), params.at("pge.b2"));
}

Var subgraph_blocks(Tape& tape, const SparseGraph& graph, std::span<const int> padded_items, Eigen::Index seq_len,
                    Var left, Var right, double alpha) {
  const auto rows = static_cast<Eigen::Index>(padded_items.size());
  if (seq_len <= 0 || rows % seq_len != 0) {
    throw Error("subgraph_blocks: " + std::to_string(rows) + " ids not a multiple of " +
                std::to_string(seq_len));
  }
  std::vector<int> node(padded_items.size());
  for (std::size_t i = 0; i < node.size(); ++i) {
    const int v = padded_items[i];
    node[i] = (v > 0 && v < graph.n()) ? v : 0;
  }
  Matrix base = Matrix::Zero(rows, seq_len);
  for (Eigen::Index b = 0; b < rows / seq_len; ++b) {
    for (Eigen::Index p = 0; p < seq_len; ++p) {
      const int vp = node[static_cast<std::size_t>(b * seq_len + p)];
      if (vp == 0) continue;
      for (Eigen::Index q = 0; q < seq_len; ++q) {
        const int vq = node[static_cast<std::size_t>(b * seq_len + q)];
        if (vq != 0) base(b * seq_len + p, q) = graph.value(vp, vq);
      }
    }
  }
  const Var constant = tape.constant(std::move(base));
  if (!left.valid() || !right.valid() || alpha == 0.0) return constant;
  // Row 0 of A W is zero because the padding node has no edges.
  const Var u = gather_rows(left, node);
  const Var v = gather_rows(right, node);
  return add(constant, scale(block_matmul_nt(u, v, seq_len), alpha));
}

Var personalized_pe(Var weights, Var subgraphs, Eigen::Index seq_len) {
  return scale_blocks(subgraphs, weights, seq_len);
}

Matrix personalized_pe(const ParamRegistry& registry, UserId user, const Matrix& subgraph) {
  const Matrix& users = registry.value("user_emb");
  if (user < 1 || user >= users.rows()) throw Error("unknown user id " + std::to_string(user));
  Tape tape(false);
  Bindings params;
  for (const auto& name : extractor_param_names()) params.bind(tape, registry, name, false);
  const int ids[] = {user};
  const double w = user_graph_weight(params, ids).value()(0, 0);
  return w * subgraph;
}

Var encode_sequences(const Bindings& params, const EncoderConfig& cfg,
                     std::span<const int> padded_items, Var bias, const EncodeOptions& options) {
  const Eigen::Index n = cfg.max_len;
  const auto rows = static_cast<Eigen::Index>(padded_items.size());
  if (rows == 0 || rows % n != 0) {
    throw Error("encode_sequences: " + std::to_string(rows) + " ids for sequence length " +
                std::to_string(n));
  }
  const Eigen::Index batch = rows / n;
  std::vector<std::uint8_t> valid(padded_items.size());
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = padded_items[i] != kPaddingItem;
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (!valid[static_cast<std::size_t>(b * n + n - 1)]) {
      throw Error("encode_sequences: sequence " + std::to_string(b) +
                  " is all padding or not left-padded");
    }
  }
  const bool drop = options.training && cfg.dropout > 0.0;
  if (drop && options.rng == nullptr) throw Error("encode_sequences: dropout needs an rng");
  auto maybe_dropout = [&](Var x) { return drop ? dropout(x, cfg.dropout, *options.rng) : x; };

  Var h = add(gather_rows(params.at("item_emb"), padded_items), tile_rows(params.at("pos_emb"), batch));
  h = maybe_dropout(h);
  for (int l = 0; l < cfg.layers; ++l) {
    auto p = [&](const char* part) { return params.at(layer_name(l, part)); };
    const Var q = linear(h, p("wq"), p("bq"));
    const Var k = linear(h, p("wk"), p("bk"));
    const Var v = linear(h, p("wv"), p("bv"));
    AttentionProbe* probe = l + 1 == cfg.layers ? options.probe : nullptr;
    const Var attn = masked_attention(q, k, v, bias, valid, cfg.heads, n, probe);
    const Var o = maybe_dropout(linear(attn, p("wo"), p("bo")));
    const Var h1 = layer_norm(add(h, o), p("ln1.g"), p("ln1.b"));
    const Var f = maybe_dropout(linear(gelu(linear(h1, p("ffn.w1"), p("ffn.b1"))), p("ffn.w2"), p("ffn.b2")));
    h = layer_norm(add(h1, f), p("ln2.g"), p("ln2.b"));
  }
  return h;
}

std::vector<int> last_rows(Eigen::Index count, Eigen::Index seq_len) {
  std::vector<int> rows(static_cast<std::size_t>(count));
  for (Eigen::Index b = 0; b < count; ++b) rows[static_cast<std::size_t>(b)] = static_cast<int>(b * seq_len + seq_len - 1);
  return rows;
}

namespace {
std::size_t ratio_count(double ratio, std::size_t len) {
  const double x = ratio * static_cast<double>(len);
  auto n = static_cast<std::size_t>(std::ceil(x - 1e-9));
  return std::clamp<std::size_t>(n, 1, len);
}
}  // namespace

std::vector<ItemId> augment_with(AugmentOp op, std::span<const ItemId> seq, const AugmentationConfig& cfg,
                                 ItemId mask_item, std::mt19937_64& rng) {
  std::vector<ItemId> out(seq.begin(), seq.end());
  if (seq.empty()) return out;
  const std::size_t len = seq.size();
  switch (op) {
    case AugmentOp::Crop: {
      const std::size_t keep = ratio_count(cfg.crop_keep, len);
      std::uniform_int_distribution<std::size_t> start(0, len - keep);
      const std::size_t s = start(rng);
      out.assign(seq.begin() + static_cast<std::ptrdiff_t>(s),
                 seq.begin() + static_cast<std::ptrdiff_t>(s + keep));
      break;
    }
    case AugmentOp::Mask: {
      const std::size_t count = ratio_count(cfg.mask_ratio, len);
      std::vector<std::size_t> pos(len);
      std::iota(pos.begin(), pos.end(), 0);
      std::shuffle(pos.begin(), pos.end(), rng);
      for (std::size_t i = 0; i < count; ++i) out[pos[i]] = mask_item;
      break;
    }
    case AugmentOp::Reorder: {
      const std::size_t span = ratio_count(cfg.reorder_ratio, len);
      std::uniform_int_distribution<std::size_t> start(0, len - span);
      const std::size_t s = start(rng);
      std::shuffle(out.begin() + static_cast<std::ptrdiff_t>(s),
                   out.begin() + static_cast<std::ptrdiff_t>(s + span), rng);
      break;
    }
  }
  return out;
}

std::pair<std::vector<ItemId>, std::vector<ItemId>> augment(std::span<const ItemId> seq,
                                                            const AugmentationConfig& cfg,
                                                            ItemId mask_item, int max_len,
                                                            std::mt19937_64& rng) {
  if (seq.size() < 2) throw Error("augment needs a sequence of length >= 2");
  std::uniform_int_distribution<int> pick(0, 2);
  auto view = [&] {
    const auto op = static_cast<AugmentOp>(pick(rng));
    return left_pad(augment_with(op, seq, cfg, mask_item, rng), max_len);
  };
  auto first = view();
  auto second = view();
  return {std::move(first), std::move(second)};
}

Var seq_cl_loss(Var reps, double temperature) {
  const Eigen::Index rows = reps.rows();
  if (rows == 0 || rows % 2 != 0) {
    throw Error("seq_cl_loss: need 2B > 0 representations, got " + std::to_string(rows));
  }
  const Eigen::Index b = rows / 2;
  const Var logits = scale(matmul_nt(reps, reps), 1.0 / temperature);
  std::vector<int> targets(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) targets[static_cast<std::size_t>(i)] = static_cast<int>((i + b) % rows);
  return softmax_cross_entropy(logits, targets, /*exclude_self=*/true);
}

}  // namespace apgl
