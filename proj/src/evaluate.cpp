#include "apgl/evaluate.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace apgl {

std::string to_string(Split split) { return split == Split::Valid ? "valid" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw Error("split must be 'valid' or 'test', got '" + s + "'");
}

namespace {

double score(std::span<const double> h, const Matrix& table, ItemId item) {
  double s = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) s += h[j] * table(item, static_cast<Eigen::Index>(j));
  return s;
}

}  // namespace

long target_rank(std::span<const double> h, const Matrix& item_table, int num_items,
                 const std::unordered_set<ItemId>& exclude, ItemId target) {
  if (static_cast<Eigen::Index>(h.size()) != item_table.cols()) {
    throw Error("representation width " + std::to_string(h.size()) + " vs item table " +
                shape_str(item_table));
  }
  if (item_table.rows() <= num_items) {
    throw Error("item table " + shape_str(item_table) + " too small for " + std::to_string(num_items) +
                " items");
  }
  if (target < 1 || target > num_items) throw Error("target " + std::to_string(target) + " is not an item");
  if (exclude.contains(target)) throw Error("target " + std::to_string(target) + " is excluded from ranking");
  const double target_score = score(h, item_table, target);
  long higher = 0;
  for (ItemId v = 1; v <= num_items; ++v) {
    if (v == target || exclude.contains(v)) continue;
    if (score(h, item_table, v) >= target_score) ++higher;
  }
  return higher + 1;
}

std::vector<RankScore> rank_and_score(std::span<const double> h, const Matrix& item_table,
                                      int num_items, const std::unordered_set<ItemId>& exclude,
                                      ItemId target, std::span<const int> ks) {
  const long rank = target_rank(h, item_table, num_items, exclude, target);
  std::vector<RankScore> out;
  for (int k : ks) {
    RankScore r{k, 0.0, 0.0};
    if (rank <= k) {
      r.hit = 1.0;
      r.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    out.push_back(r);
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : hr) j["hr@" + std::to_string(k)] = v;
  for (const auto& [k, v] : ndcg) j["ndcg@" + std::to_string(k)] = v;
  j["num_users"] = num_users;
  j["split"] = to_string(split);
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

EvalCase eval_case(const Dataset& ds, UserId user, Split split) {
  EvalCase c;
  const auto full = ds.sequences.full(user);
  if (split == Split::Valid) {
    const auto view = ds.sequences.train_view(user);
    c.input.assign(view.begin(), view.end());
    c.target = ds.sequences.valid_target(user);
  } else {
    const auto view = ds.sequences.test_input(user);
    c.input.assign(view.begin(), view.end());
    c.target = ds.sequences.test_target(user);
  }
  // The target must sit immediately after the input window.
  if (c.input.size() >= full.size() || full[c.input.size()] != c.target) {
    throw Error("evaluation input for user " + std::to_string(user) + " overlaps its target");
  }
  return c;
}

std::unordered_set<ItemId> excluded_items(const EvalCase& c, bool exclude_seen) {
  std::unordered_set<ItemId> ex;
  if (!exclude_seen) return ex;
  ex.insert(c.input.begin(), c.input.end());
  ex.erase(c.target);
  return ex;
}

MetricsReport evaluate_representations(const Matrix& reps, const Matrix& item_table, const Dataset& ds,
                                       Split split, const EvalOptions& options) {
  if (reps.rows() != ds.num_users) {
    throw Error("expected " + std::to_string(ds.num_users) + " user representations, got " +
                shape_str(reps));
  }
  MetricsReport report;
  report.split = split;
  for (int k : options.ks) {
    report.hr[k] = 0.0;
    report.ndcg[k] = 0.0;
  }
  std::vector<double> h(static_cast<std::size_t>(reps.cols()));
  for (UserId u = 1; u <= ds.num_users; ++u) {
    const EvalCase c = eval_case(ds, u, split);
    for (Eigen::Index j = 0; j < reps.cols(); ++j) h[static_cast<std::size_t>(j)] = reps(u - 1, j);
    for (const auto& r :
         rank_and_score(h, item_table, ds.num_items, excluded_items(c, options.exclude_seen), c.target, options.ks)) {
      report.hr[r.k] += r.hit;
      report.ndcg[r.k] += r.ndcg;
    }
  }
  report.num_users = ds.num_users;
  for (int k : options.ks) {
    report.hr[k] /= ds.num_users;
    report.ndcg[k] /= ds.num_users;
  }
  return report;
}

MetricsReport evaluate(const Model& model, const Dataset& ds, const SparseGraph& graph, Split split,
                       const EvalOptions& options) {
  model.check_compatible(ds, graph);
  std::vector<UserId> users;
  std::vector<std::vector<ItemId>> inputs;
  for (UserId u = 1; u <= ds.num_users; ++u) {
    users.push_back(u);
    inputs.push_back(eval_case(ds, u, split).input);
  }
  const Matrix reps = encode_users(model, graph, users, inputs);
  MetricsReport report =
      evaluate_representations(reps, model.params().value("item_emb"), ds, split, options);
  report.seed = model.config().seed;
  return report;
}

}  // namespace apgl
