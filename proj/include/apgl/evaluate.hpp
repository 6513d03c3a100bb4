#pragma once

// Full-ranking leave-one-out evaluation (HR@K, NDCG@K).

#include "apgl/dataio.hpp"
#include "apgl/graph.hpp"
#include "apgl/model.hpp"
#include "apgl/types.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace apgl {

enum class Split { Valid, Test };

std::string to_string(Split split);
Split parse_split(const std::string& s);

struct RankScore {
  int k = 0;
  double hit = 0.0;
  double ndcg = 0.0;
};

/// Scores every item 1..num_items as h . V[item], skipping `exclude`. The
/// target's rank is 1 + #candidates scoring strictly higher, so ties count
/// against the target. NDCG for one relevant item is 1 / log2(rank + 1).
std::vector<RankScore> rank_and_score(std::span<const double> h, const Matrix& item_table,
                                      int num_items, const std::unordered_set<ItemId>& exclude,
                                      ItemId target, std::span<const int> ks);

/// Rank alone, under the same rules.
long target_rank(std::span<const double> h, const Matrix& item_table, int num_items,
                 const std::unordered_set<ItemId>& exclude, ItemId target);

struct MetricsReport {
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  long num_users = 0;
  Split split = Split::Test;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

struct EvalOptions {
  bool exclude_seen = true;
  std::vector<int> ks = {5, 20};
};

/// Input view and held-out target for one user.
struct EvalCase {
  std::vector<ItemId> input;
  ItemId target = 0;
};

EvalCase eval_case(const Dataset& ds, UserId user, Split split);

/// Items excluded from ranking: the input view's items, minus the target.
std::unordered_set<ItemId> excluded_items(const EvalCase& c, bool exclude_seen);

/// Averages per-user metrics given precomputed user representations
/// (row u - 1 belongs to user u).
MetricsReport evaluate_representations(const Matrix& reps, const Matrix& item_table, const Dataset& ds,
                                       Split split, const EvalOptions& options = {});

MetricsReport evaluate(const Model& model, const Dataset& ds, const SparseGraph& graph, Split split,
                       const EvalOptions& options = {});

}  // namespace apgl
