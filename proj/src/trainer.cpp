#include "apgl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <mutex>
#include <set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <json.hpp>

namespace apgl {

Var rec_loss(Var hidden, std::span<const int> rows, std::span<const int> positives,
             std::span<const int> negatives, Var item_table) {
  if (rows.empty() || rows.size() != positives.size() || rows.size() != negatives.size()) {
    throw Error("rec_loss: " + std::to_string(rows.size()) + " steps, " +
                std::to_string(positives.size()) + " positives, " + std::to_string(negatives.size()) +
                " negatives");
  }
  const Var h = gather_rows(hidden, rows);
  const Var pos = row_dot(h, gather_rows(item_table, positives));
  const Var neg = row_dot(h, gather_rows(item_table, negatives));
  if (!pos.value().allFinite() || !neg.value().allFinite()) {
    throw Error("rec_loss: non-finite logits");
  }
  const Var per_step = add(softplus(scale(pos, -1.0)), softplus(neg));
  return scale(sum(per_step), 1.0 / static_cast<double>(rows.size()));
}

Batch make_batch(const Dataset& ds, std::span<const UserId> users, const TrainConfig& cfg,
                 std::mt19937_64& rng) {
  Batch b;
  const int n = cfg.max_len;
  std::set<int> batch_items;
  for (UserId u : users) {
    b.users.push_back(u);
    const auto view = ds.sequences.train_view(u);
    const auto padded = left_pad(view, n);
    const std::size_t base = b.items.size();
    b.items.insert(b.items.end(), padded.begin(), padded.end());
    for (int p = 0; p + 1 < n; ++p) {
      const int cur = padded[static_cast<std::size_t>(p)];
      const int next = padded[static_cast<std::size_t>(p + 1)];
      if (cur == kPaddingItem || next == kPaddingItem) continue;
      b.step_rows.push_back(static_cast<int>(base) + p);
      b.positives.push_back(next);
      b.negatives.push_back(sample_negative(rng, view, ds.num_items));
    }
    for (auto v : view) batch_items.insert(v);
  }
  if (cfg.lambda2 > 0.0) {
    std::vector<int> second;
    for (UserId u : users) {
      auto [v1, v2] = augment(ds.sequences.train_view(u), cfg.augmentation, ds.mask_item(), n, rng);
      b.view_items.insert(b.view_items.end(), v1.begin(), v1.end());
      second.insert(second.end(), v2.begin(), v2.end());
    }
    b.view_items.insert(b.view_items.end(), second.begin(), second.end());
  }
  if (!cfg.disable_agcl) {
    b.gce_items.assign(batch_items.begin(), batch_items.end());
    if (b.gce_items.size() > static_cast<std::size_t>(cfg.gce_item_cap)) {
      std::shuffle(b.gce_items.begin(), b.gce_items.end(), rng);
      b.gce_items.resize(static_cast<std::size_t>(cfg.gce_item_cap));
      std::sort(b.gce_items.begin(), b.gce_items.end());
    }
  }
  return b;
}

LossTerms compute_losses(const Model& model, const Bindings& params, const SparseGraph& graph,
                         const Batch& batch, bool training, std::mt19937_64* rng) {
  const auto& cfg = model.config();
  const auto enc = cfg.encoder();
  const Var item_table = params.at("item_emb");
  Tape& tape = *item_table.tape;
  LossTerms t;

  Var objective;
  if (!cfg.disable_agcl) {
    Var e0 = slice_rows(item_table, 0, model.num_items() + 1);
    const Var e0_orig = cfg.gce_stop_grad_original ? tape.constant(e0.value()) : e0;
    const Var original = lightgcn_propagate(graph, e0_orig, cfg.gcn_layers, cfg.layer_combine);
    const Var refined = perturbed_propagate(graph, params.at("pert.w_us"), params.at("pert.w_v"), cfg.alpha,
                                            e0, cfg.gcn_layers, cfg.layer_combine);
    t.gce = gce_loss(original, refined, batch.gce_items, cfg.tau);
    if (cfg.ssl_mean) t.gce = scale(t.gce, 1.0 / static_cast<double>(batch.gce_items.size()));
  }

  EncodeOptions opts;
  opts.training = training;
  opts.rng = rng;
  const Var bias = model_bias(model, params, graph, batch.items, batch.users);
  const Var hidden = encode_sequences(params, enc, batch.items, bias, opts);
  t.rec = rec_loss(hidden, batch.step_rows, batch.positives, batch.negatives, item_table);

  if (cfg.lambda2 > 0.0) {
    std::vector<int> view_users(batch.users);
    view_users.insert(view_users.end(), batch.users.begin(), batch.users.end());
    const Var view_bias = model_bias(model, params, graph, batch.view_items, view_users);
    const Var view_hidden = encode_sequences(params, enc, batch.view_items, view_bias, opts);
    const auto count = static_cast<Eigen::Index>(view_users.size());
    const Var reps = gather_rows(view_hidden, last_rows(count, cfg.max_len));
    t.seq = seq_cl_loss(reps, cfg.tau_seq);
    if (cfg.ssl_mean) t.seq = scale(t.seq, 1.0 / static_cast<double>(count));
  }

  t.total = t.rec;
  if (t.gce.valid()) t.total = add(t.total, scale(t.gce, cfg.lambda1));
  if (t.seq.valid()) t.total = add(t.total, scale(t.seq, cfg.lambda2));
  return t;
}

LossReport report_of(const LossTerms& terms) {
  LossReport r;
  r.rec = terms.rec.value()(0, 0);
  r.gce = terms.gce.valid() ? terms.gce.value()(0, 0) : 0.0;
  r.seq = terms.seq.valid() ? terms.seq.value()(0, 0) : 0.0;
  r.total = terms.total.value()(0, 0);
  return r;
}

LossReport train_step(Model& model, const SparseGraph& graph, const Batch& batch, std::mt19937_64& rng) {
  Tape tape;
  const Bindings params = bind_model(tape, model, true);
  const LossTerms terms = compute_losses(model, params, graph, batch, true, &rng);
  LossReport report = report_of(terms);
  if (!std::isfinite(report.total)) {
    throw Error("non-finite total loss: rec=" + std::to_string(report.rec) +
                " gce=" + std::to_string(report.gce) + " seq=" + std::to_string(report.seq));
  }
  model.params().zero_grad();
  backprop(terms.total, model.params(), params);
  adam_step(model.params(), model.config().adam());
  report.step = model.params().step();
  return report;
}

bool EarlyStopper::observe(double score) {
  ++epochs_;
  if (epochs_ == 1 || score > best_) {
    best_ = score;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

nlohmann::ordered_json metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : m.hr) j["hr@" + std::to_string(k)] = v;
  for (const auto& [k, v] : m.ndcg) j["ndcg@" + std::to_string(k)] = v;
  return j;
}

}  // namespace

namespace {

// Each step allocates and frees a few hundred MB of activations. Keeping that
// memory in the heap instead of returning it to the kernel avoids re-faulting
// every page on the next step.
void retain_heap_memory() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);  // the largest value glibc accepts
    mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
  });
#endif
}

}  // namespace

FitResult fit(const Dataset& ds, const SparseGraph& graph, const TrainConfig& cfg, std::ostream* log,
              ValidationFn validate) {
  cfg.validate();
  if (ds.num_users == 0) throw Error("fit: dataset has no users");
  retain_heap_memory();
  Model model(cfg, ds.num_users, ds.num_items);
  model.check_compatible(ds, graph);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  FitResult result{model, 0, 0, 0.0, {}, {}};
  EarlyStopper stopper(cfg.patience);
  std::vector<UserId> order(static_cast<std::size_t>(ds.num_users));
  std::iota(order.begin(), order.end(), 1);

  for (long epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossReport mean;
    mean.epoch = epoch;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const UserId> users(order.data() + start, end - start);
      const Batch batch = make_batch(ds, users, cfg, rng);
      const LossReport r = train_step(model, graph, batch, rng);
      mean.rec += r.rec;
      mean.gce += r.gce;
      mean.seq += r.seq;
      mean.total += r.total;
      mean.step = r.step;
      ++batches;
    }
    mean.rec /= batches;
    mean.gce /= batches;
    mean.seq /= batches;
    mean.total /= batches;
    result.epoch_losses.push_back(mean);

    double score = 0.0;
    nlohmann::ordered_json line;
    line["epoch"] = epoch;
    line["step"] = mean.step;
    line["L_rec"] = mean.rec;
    line["L_gce"] = mean.gce;
    line["L_seq"] = mean.seq;
    line["L_total"] = mean.total;
    if (validate) {
      score = validate(model);
      line["valid"] = {{"ndcg@20", score}};
    } else {
      EvalOptions eo;
      eo.exclude_seen = cfg.exclude_seen;
      const MetricsReport m = evaluate(model, ds, graph, Split::Valid, eo);
      score = m.ndcg.at(20);
      line["valid"] = metrics_json(m);
    }
    const bool improved = stopper.observe(score);
    line["improved"] = improved;
    if (improved) result.best = model;
    result.epochs_run = epoch;
    const std::string text = line.dump();
    result.log_lines.push_back(text);
    if (log != nullptr) *log << text << '\n' << std::flush;
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_valid_ndcg20 = stopper.best();
  return result;
}

}  // namespace apgl
