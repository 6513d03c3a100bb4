#pragma once

// Multi-task optimisation: batch assembly, next-item loss, loss composition,
// early stopping and the epoch loop.

#include "apgl/dataio.hpp"
#include "apgl/evaluate.hpp"
#include "apgl/graph.hpp"
#include "apgl/model.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace apgl {

struct LossReport {
  double rec = 0.0;
  double gce = 0.0;
  double seq = 0.0;
  double total = 0.0;
  long epoch = 0;
  long step = 0;
};

/// Mean over rows of softplus(-h_r . v_pos) + softplus(h_r . v_neg), i.e.
/// -log s(h.v_pos) - log(1 - s(h.v_neg)) per contributing step.
Var rec_loss(Var hidden, std::span<const int> rows, std::span<const int> positives,
             std::span<const int> negatives, Var item_table);

/// Everything random about one optimisation step, drawn up front.
struct Batch {
  std::vector<int> users;
  std::vector<int> items;  // B x N left-padded train views
  std::vector<int> step_rows;
  std::vector<int> positives;
  std::vector<int> negatives;
  std::vector<int> view_items;  // 2B x N: first views, then second views
  std::vector<int> gce_items;   // sorted, deduplicated, capped
};

Batch make_batch(const Dataset& ds, std::span<const UserId> users, const TrainConfig& cfg,
                 std::mt19937_64& rng);

struct LossTerms {
  Var rec;
  Var gce;  // invalid when the graph learner is disabled
  Var seq;  // invalid when lambda2 == 0
  Var total;
};

/// Builds the full objective on `tape`. `rng` drives dropout when training.
LossTerms compute_losses(const Model& model, const Bindings& params, const SparseGraph& graph,
                         const Batch& batch, bool training, std::mt19937_64* rng);

LossReport report_of(const LossTerms& terms);

/// One forward/backward pass and one Adam update.
LossReport train_step(Model& model, const SparseGraph& graph, const Batch& batch, std::mt19937_64& rng);

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  /// Records a score; returns true when it is a new best.
  bool observe(double score);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  long best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double best_ = -1.0;
  long best_epoch_ = 0;
  long epochs_ = 0;
  int since_best_ = 0;
};

struct FitResult {
  Model best;
  long epochs_run = 0;
  long best_epoch = 0;
  double best_valid_ndcg20 = 0.0;
  std::vector<LossReport> epoch_losses;
  std::vector<std::string> log_lines;
};

/// Validation hook; defaults to full-ranking NDCG@20 on the valid split.
using ValidationFn = std::function<double(const Model&)>;

FitResult fit(const Dataset& ds, const SparseGraph& graph, const TrainConfig& cfg,
              std::ostream* log = nullptr, ValidationFn validate = {});

}  // namespace apgl
