#pragma once

// Training configuration, the parameter set of a full model, and the
// inference path shared by training-time validation and evaluation.

#include "apgl/agcl.hpp"
#include "apgl/container.hpp"
#include "apgl/dataio.hpp"
#include "apgl/graph.hpp"
#include "apgl/params.hpp"
#include "apgl/seqenc.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace apgl {

struct TrainConfig {
  int batch_size = 256;
  double lr = 1e-3;
  int dim = 64;
  int max_len = 50;
  int gcn_layers = 2;
  LayerCombine layer_combine = LayerCombine::Mean;
  double alpha = 0.05;
  int rank = 32;
  int heads = 2;
  int layers = 2;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  double tau = 0.2;
  double tau_seq = 1.0;
  double dropout = 0.2;
  int max_epochs = 1000;
  int patience = 40;
  std::uint64_t seed = 42;
  /// Upper bound on items contrasted by the graph loss per batch.
  int gce_item_cap = 512;
  /// "mean" divides the two contrastive sums by their anchor counts.
  bool ssl_mean = true;
  /// Treat the original-graph representation as a fixed target.
  bool gce_stop_grad_original = false;
  SubgraphSource pge_source = SubgraphSource::Refined;
  /// Let the positional bias backpropagate into the perturbation factors.
  bool pge_graph_grad = true;
  bool exclude_seen = true;
  bool disable_agcl = false;
  bool disable_pge = false;
  bool freeze_perturbation = false;
  AugmentationConfig augmentation;

  EncoderConfig encoder() const { return {dim, heads, layers, max_len, dropout}; }
  AdamConfig adam() const { return {lr, 0.9, 0.999, 1e-8}; }

  /// Sets one field from its key=value spelling; unknown keys throw.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  void validate() const;

  static TrainConfig from_text(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& path);
  static std::vector<std::string> keys();
};

/// All trainable state of one model instance.
class Model {
 public:
  Model(const TrainConfig& cfg, int num_users, int num_items);

  const TrainConfig& config() const { return cfg_; }
  int num_users() const { return num_users_; }
  int num_items() const { return num_items_; }

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  Container to_checkpoint() const;
  static Model from_checkpoint(const Container& c);
  /// Throws when the checkpoint was trained for different dimensions.
  void check_compatible(const Dataset& ds, const SparseGraph& graph) const;

 private:
  TrainConfig cfg_;
  int num_users_;
  int num_items_;
  ParamRegistry params_;
};

/// Binds model parameters for a pass. Frozen or disabled groups are bound as
/// constants or left unbound, so they never receive gradients.
Bindings bind_model(Tape& tape, const Model& model, bool trainable);

/// Positional bias for B stacked sequences and their users, or an invalid
/// Var when the extractor is disabled.
Var model_bias(const Model& model, const Bindings& params, const SparseGraph& graph,
               std::span<const int> padded_items, std::span<const int> users);

/// Last-position hidden vectors (users.size() x d) for the given inputs,
/// evaluated without dropout.
Matrix encode_users(const Model& model, const SparseGraph& graph, std::span<const UserId> users,
                    const std::vector<std::vector<ItemId>>& inputs);

}  // namespace apgl
