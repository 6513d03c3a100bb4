#include "apgl/tools.hpp"

#include "apgl/svd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <json.hpp>

namespace apgl {

Projection2D<double> project_items(const Model& model) {
  const Matrix& table = model.params().value("item_emb");
  const Matrix items = table.middleRows(1, model.num_items());
  return top2_svd_project(items);
}

std::size_t export_projection(const Model& model, const std::filesystem::path& out) {
  const Projection2D<double> p = project_items(model);
  std::ofstream f(out);
  if (!f) throw Error("cannot write " + out.string());
  f << "item_id,x,y\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
    f << (i + 1) << ',' << p.coords(i, 0) << ',' << p.coords(i, 1) << '\n';
  }
  if (!f) throw Error("write failed for " + out.string());
  return static_cast<std::size_t>(p.coords.rows());
}

GradcheckInstance gradcheck_instance(std::uint64_t seed) {
  InteractionLog log;
  for (int u = 0; u < 8; ++u) {
    for (int t = 0; t < 7; ++t) {
      const int item = (u * 7 + t) % 20 + 1;
      log.records.push_back({"u" + std::to_string(u + 1), "i" + std::to_string(item), t});
    }
  }
  TrainConfig cfg;
  cfg.dim = 8;
  cfg.max_len = 6;
  cfg.rank = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.lambda1 = 0.1;
  cfg.lambda2 = 0.1;
  cfg.alpha = 0.05;
  cfg.dropout = 0.0;
  cfg.batch_size = 8;
  cfg.seed = seed;
  Dataset ds = build_dataset(log, cfg.max_len);
  SparseGraph graph = build_item_graph(ds.sequences, ds.num_items, {});
  return {std::move(ds), std::move(graph), cfg};
}

namespace {

double objective(const Model& model, const SparseGraph& graph, const Batch& batch) {
  Tape tape(false);
  const Bindings params = bind_model(tape, model, false);
  return compute_losses(model, params, graph, batch, false, nullptr).total.value()(0, 0);
}

}  // namespace

GradcheckReport gradcheck(const Dataset& ds, const SparseGraph& graph, const TrainConfig& cfg,
                          const GradcheckOptions& opts) {
  if (cfg.dropout != 0.0) throw Error("gradcheck needs dropout = 0");
  Model model(cfg, ds.num_users, ds.num_items);
  std::mt19937_64 rng(cfg.seed);
  std::vector<UserId> users(static_cast<std::size_t>(ds.num_users));
  for (int u = 0; u < ds.num_users; ++u) users[static_cast<std::size_t>(u)] = u + 1;
  const Batch batch = make_batch(ds, users, cfg, rng);

  GradcheckReport report;
  {
    Tape tape(true);
    const Bindings params = bind_model(tape, model, true);
    const LossTerms terms = compute_losses(model, params, graph, batch, false, nullptr);
    report.loss = terms.total.value()(0, 0);
    model.params().zero_grad();
    backprop(terms.total, model.params(), params);
  }

  Tape probe(true);
  const Bindings bound = bind_model(probe, model, true);
  report.passed = true;
  for (auto& e : model.params().entries()) {
    if (!bound.contains(e.name) || !probe.requires_grad(bound.at(e.name))) continue;
    GradcheckEntry row{e.name};
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      if (std::find(e.pinned_rows.begin(), e.pinned_rows.end(), r) != e.pinned_rows.end()) continue;
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
        const double saved = e.value(r, c);
        e.value(r, c) = saved + opts.step;
        const double up = objective(model, graph, batch);
        e.value(r, c) = saved - opts.step;
        const double down = objective(model, graph, batch);
        e.value(r, c) = saved;
        const double numeric = (up - down) / (2.0 * opts.step);
        const double analytic = e.grad(r, c);
        const double err = std::abs(analytic - numeric);
        const double mag = std::max(std::abs(analytic), std::abs(numeric));
        ++row.checked;
        row.max_abs_error = std::max(row.max_abs_error, err);
        if (mag >= opts.magnitude_floor) {
          row.max_rel_error = std::max(row.max_rel_error, err / mag);
        } else if (err > opts.abs_tolerance) {
          report.passed = false;
        }
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, row.max_rel_error);
    report.entries.push_back(row);
  }
  if (report.max_rel_error >= opts.rel_tolerance) report.passed = false;
  return report;
}

std::string GradcheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["loss"] = loss;
  j["max_rel_error"] = max_rel_error;
  j["passed"] = passed;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    rows.push_back({{"name", e.name},
                    {"checked", e.checked},
                    {"max_abs_error", e.max_abs_error},
                    {"max_rel_error", e.max_rel_error}});
  }
  j["params"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace apgl
