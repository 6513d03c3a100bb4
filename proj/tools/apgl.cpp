// Command-line front end: data preparation, graph construction, training,
// evaluation and the diagnostic tools.

#include "apgl/bench.hpp"
#include "apgl/dataio.hpp"
#include "apgl/evaluate.hpp"
#include "apgl/graph.hpp"
#include "apgl/model.hpp"
#include "apgl/synth.hpp"
#include "apgl/tools.hpp"
#include "apgl/trainer.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace apgl;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config file)");
  cmd->add_option("--config", c.config, "Flat key=value configuration file")->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

/// Loads the config file, then applies per-key flags, then --seed.
TrainConfig resolve_config(const Common& c, const std::map<std::string, std::string>& overrides) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : TrainConfig::from_file(c.config);
  for (const auto& [k, v] : overrides) {
    if (!v.empty()) cfg.set(k, v);
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"APGL4SR: sequential recommendation with adaptive global collaborative graphs"};
  app.require_subcommand(1);

  // prepare
  Common prep;
  std::string prep_input;
  char prep_delim = '\t';
  bool prep_no_filter = false;
  bool prep_strict = false;
  std::map<std::string, std::string> prep_over{{"max_len", ""}};
  auto* prepare = app.add_subcommand("prepare", "Parse an interaction log into a dataset container");
  add_common(prepare, prep);
  prepare->add_option("--input", prep_input, "user<TAB>item<TAB>timestamp log")->required()->check(CLI::ExistingFile);
  prepare->add_option("--delimiter", prep_delim, "Field delimiter");
  prepare->add_option("--max_len", prep_over["max_len"], "Kept sequence length N");
  prepare->add_flag("--no-core-filter", prep_no_filter, "Skip the 5-core filter");
  prepare->add_flag("--strict", prep_strict, "Fail on malformed lines");

  // build-graph
  Common bg;
  std::string bg_data;
  GraphBuildConfig bg_cfg;
  auto* build_graph = app.add_subcommand("build-graph", "Build the global item transition graph");
  add_common(build_graph, bg);
  build_graph->add_option("--data", bg_data, "Dataset container")->required()->check(CLI::ExistingFile);
  build_graph->add_option("--window", bg_cfg.window, "Co-occurrence window k");
  build_graph->add_option("--self-loop", bg_cfg.self_loop_weight, "Diagonal weight");

  // train
  Common tr;
  std::string tr_data, tr_graph, tr_log;
  std::map<std::string, std::string> tr_over;
  auto* train = app.add_subcommand("train", "Train a model and keep the best-validation checkpoint");
  add_common(train, tr);
  train->add_option("--data", tr_data, "Dataset container")->required()->check(CLI::ExistingFile);
  train->add_option("--graph", tr_graph, "Graph container")->required()->check(CLI::ExistingFile);
  train->add_option("--log", tr_log, "Training log (JSON lines); default <out>.log.jsonl");
  for (const auto& key : TrainConfig::keys()) {
    if (key == "seed") continue;
    train->add_option("--" + key, tr_over[key], "Override config key " + key);
  }

  // eval
  Common ev;
  std::string ev_data, ev_graph, ev_ckpt, ev_split = "test";
  bool ev_no_exclude = false;
  auto* eval = app.add_subcommand("eval", "Full-ranking HR/NDCG on the valid or test split");
  add_common(eval, ev, false);
  eval->add_option("--data", ev_data, "Dataset container")->required()->check(CLI::ExistingFile);
  eval->add_option("--graph", ev_graph, "Graph container")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint container")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", ev_split, "valid or test")->check(CLI::IsMember({"valid", "test"}));
  eval->add_flag("--no-exclude-seen", ev_no_exclude, "Rank against every item, including seen ones");

  // bench-svd
  Common bs;
  BenchConfig bs_cfg;
  bool bs_no_dense = false;
  auto* bench = app.add_subcommand("bench-svd", "Time factored against dense propagation");
  add_common(bench, bs, false);
  bench->add_option("--sizes", bs_cfg.sizes, "Item counts, ascending")->delimiter(',');
  bench->add_option("--dim", bs_cfg.dim, "Embedding size d");
  bench->add_option("--rank", bs_cfg.rank, "Factor rank d'");
  bench->add_option("--nnz", bs_cfg.nnz_per_row, "Non-zeros per row");
  bench->add_option("--layers", bs_cfg.layers, "Propagation layers");
  bench->add_option("--reps", bs_cfg.reps, "Timed repetitions per point");
  bench->add_flag("--no-dense", bs_no_dense, "Skip the dense path");

  // gen-synth
  Common gs;
  SyntheticConfig gs_cfg;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic clustered interaction log");
  add_common(gen, gs);
  gen->add_option("--items", gs_cfg.num_items, "Item count");
  gen->add_option("--clusters", gs_cfg.num_clusters, "Cluster count");
  gen->add_option("--users", gs_cfg.num_users, "User count");
  gen->add_option("--min-len", gs_cfg.min_len, "Shortest sequence");
  gen->add_option("--max-len", gs_cfg.max_len, "Longest sequence");
  gen->add_option("--cross-cluster-prob", gs_cfg.cross_cluster_prob, "Per-step jump probability");
  gen->add_option("--globality-mix", gs_cfg.user_globality_mix, "Share of global-archetype users");

  // project
  Common pj;
  std::string pj_ckpt;
  auto* project = app.add_subcommand("project", "Export a 2-D SVD projection of item embeddings as CSV");
  add_common(project, pj);
  project->add_option("--checkpoint", pj_ckpt, "Checkpoint container")->required()->check(CLI::ExistingFile);

  // gradcheck
  Common gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every trainable tensor");
  add_common(grad, gc, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) {
      TrainConfig cfg = resolve_config(prep, prep_over);
      ParseOptions po;
      po.delimiter = prep_delim;
      po.strict = prep_strict;
      ParseResult parsed = parse_log(prep_input, po);
      for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
      const InteractionLog log = prep_no_filter ? parsed.log : five_core_filter(parsed.log);
      const Dataset ds = build_dataset(log, cfg.max_len);
      ds.to_container().save(prep.out);
      std::cout << "users=" << ds.num_users << " items=" << ds.num_items << " records=" << log.records.size()
                << " skipped_lines=" << parsed.malformed_lines << "\n";
    } else if (*build_graph) {
      const Dataset ds = Dataset::from_container(Container::load(bg_data));
      const SparseGraph g = build_item_graph(ds.sequences, ds.num_items, bg_cfg);
      g.to_container().save(bg.out);
      std::cout << "nodes=" << g.n() << " nnz=" << g.values().size() << "\n";
    } else if (*train) {
      const TrainConfig cfg = resolve_config(tr, tr_over);
      const Dataset ds = Dataset::from_container(Container::load(tr_data));
      const SparseGraph g = SparseGraph::from_container(Container::load(tr_graph));
      const fs::path log_path = tr_log.empty() ? fs::path(tr.out + ".log.jsonl") : fs::path(tr_log);
      std::ofstream log(log_path, std::ios::binary);
      if (!log) throw Error("cannot write " + log_path.string());
      FitResult r = fit(ds, g, cfg, &log);
      r.best.to_checkpoint().save(tr.out);
      std::cout << "epochs=" << r.epochs_run << " best_epoch=" << r.best_epoch
                << " best_valid_ndcg@20=" << r.best_valid_ndcg20 << "\n";
    } else if (*eval) {
      const Dataset ds = Dataset::from_container(Container::load(ev_data));
      const SparseGraph g = SparseGraph::from_container(Container::load(ev_graph));
      const Model model = Model::from_checkpoint(Container::load(ev_ckpt));
      model.check_compatible(ds, g);
      EvalOptions opts;
      opts.exclude_seen = !ev_no_exclude;
      MetricsReport m = evaluate(model, ds, g, parse_split(ev_split), opts);
      if (ev.seed) m.seed = *ev.seed;
      const std::string json = m.to_json();
      if (ev.out.empty()) std::cout << json;
      else write_text(ev.out, json);
    } else if (*bench) {
      if (bs.seed) bs_cfg.seed = *bs.seed;
      bs_cfg.run_dense = !bs_no_dense;
      const std::string json = bench_svd(bs_cfg).to_json();
      if (bs.out.empty()) std::cout << json;
      else write_text(bs.out, json);
    } else if (*gen) {
      if (gs.seed) gs_cfg.seed = *gs.seed;
      const SyntheticData data = gen_synthetic(gs_cfg);
      write_log(gs.out, data.log);
      std::cout << "records=" << data.log.records.size() << "\n";
    } else if (*project) {
      const Model model = Model::from_checkpoint(Container::load(pj_ckpt));
      const std::size_t rows = export_projection(model, pj.out);
      std::cout << "rows=" << rows << "\n";
    } else if (*grad) {
      const GradcheckInstance inst = gradcheck_instance(gc.seed.value_or(42));
      const GradcheckReport rep = gradcheck(inst.dataset, inst.graph, inst.config);
      const std::string json = rep.to_json();
      if (gc.out.empty()) std::cout << json;
      else write_text(gc.out, json);
      return rep.passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
