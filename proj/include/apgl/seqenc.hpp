#pragma once

// Causal Transformer sequence encoder with a per-user relative positional
// bias derived from the item graph, plus the sequence augmentations and
// contrastive loss used for sequence-level self-supervision.

#include "apgl/autodiff.hpp"
#include "apgl/dataio.hpp"
#include "apgl/graph.hpp"
#include "apgl/params.hpp"
#include "apgl/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace apgl {

struct EncoderConfig {
  int dim = 64;
  int heads = 2;
  int layers = 2;
  int max_len = 50;
  double dropout = 0.2;
};

/// Registers item/positional embeddings and per-layer Transformer weights.
/// The item table has num_items + 2 rows: padding (0, pinned to zero), the
/// items, and the mask token.
void init_encoder_params(ParamRegistry& registry, const EncoderConfig& cfg, int num_items,
                         std::mt19937_64& rng);

/// Registers the user embedding table and the d -> ceil(d/2) -> 1 MLP.
void init_extractor_params(ParamRegistry& registry, int dim, int num_users, std::mt19937_64& rng);

/// Names of the parameters created by the two initialisers.
std::vector<std::string> encoder_param_names(const EncoderConfig& cfg);
std::vector<std::string> extractor_param_names();

/// Per-user importance of graph information: MLP(s_u), one row per user.
Var user_graph_weight(const Bindings& params, std::span<const int> users);

/// Stacked per-sequence sub-graphs, (B*N) x N. `left`/`right` are A W_us and
/// A W_v; pass invalid Vars (or alpha 0) for the original graph only. Ids
/// outside the graph (padding, mask token) give zero rows and columns.
Var subgraph_blocks(Tape& tape, const SparseGraph& graph, std::span<const int> padded_items, Eigen::Index seq_len,
                    Var left, Var right, double alpha);

/// P'_u = weight_u * A~_u for each block.
Var personalized_pe(Var weights, Var subgraphs, Eigen::Index seq_len);

/// Single-user value form of personalized_pe.
Matrix personalized_pe(const ParamRegistry& registry, UserId user, const Matrix& subgraph);

struct EncodeOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
  AttentionProbe* probe = nullptr;  // attention weights of the last layer
};

/// Encodes B left-padded sequences of length N stacked row-wise in
/// `padded_items`. Returns H^(L), (B*N) x d. `bias` may be invalid.
Var encode_sequences(const Bindings& params, const EncoderConfig& cfg,
                     std::span<const int> padded_items, Var bias, const EncodeOptions& options = {});

/// Row indices of the last position of each of `count` stacked sequences.
std::vector<int> last_rows(Eigen::Index count, Eigen::Index seq_len);

struct AugmentationConfig {
  double crop_keep = 0.6;
  double mask_ratio = 0.3;
  double reorder_ratio = 0.6;
};

enum class AugmentOp { Crop, Mask, Reorder };

std::vector<ItemId> augment_with(AugmentOp op, std::span<const ItemId> seq, const AugmentationConfig& cfg,
                                 ItemId mask_item, std::mt19937_64& rng);

/// Two independently augmented views, each left-padded to `max_len`.
std::pair<std::vector<ItemId>, std::vector<ItemId>> augment(std::span<const ItemId> seq,
                                                            const AugmentationConfig& cfg,
                                                            ItemId mask_item, int max_len,
                                                            std::mt19937_64& rng);

/// InfoNCE over 2B representations: rows [0, B) are first views, rows
/// [B, 2B) second views; row i pairs with row i+B. Dot-product critic, other
/// views in the batch act as negatives; summed over all 2B anchors.
Var seq_cl_loss(Var reps, double temperature = 1.0);

}  // namespace apgl
