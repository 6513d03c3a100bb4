#include "apgl/model.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace apgl {
namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected a number, got '" + s + "'");
  }
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error("config key '" + key + "': expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw Error("config key '" + key + "': expected a boolean, got '" + s + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define APGL_INT_FIELD(name)                                                              \
  Field{#name, [](const TrainConfig& c) { return std::to_string(c.name); },               \
        [](TrainConfig& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(parse_int(#name, v)); }}
#define APGL_REAL_FIELD(name)                                                \
  Field{#name, [](const TrainConfig& c) { return fmt_double(c.name); },      \
        [](TrainConfig& c, const std::string& v) { c.name = parse_double(#name, v); }}
#define APGL_BOOL_FIELD(name)                                                        \
  Field{#name, [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      APGL_INT_FIELD(batch_size),
      APGL_REAL_FIELD(lr),
      APGL_INT_FIELD(dim),
      APGL_INT_FIELD(max_len),
      APGL_INT_FIELD(gcn_layers),
      Field{"layer_combine",
            [](const TrainConfig& c) {
              return std::string(c.layer_combine == LayerCombine::Mean ? "mean" : "paper_literal");
            },
            [](TrainConfig& c, const std::string& v) {
              if (v == "mean") c.layer_combine = LayerCombine::Mean;
              else if (v == "paper_literal") c.layer_combine = LayerCombine::PaperLiteral;
              else throw Error("layer_combine must be mean or paper_literal, got '" + v + "'");
            }},
      APGL_REAL_FIELD(alpha),
      APGL_INT_FIELD(rank),
      APGL_INT_FIELD(heads),
      APGL_INT_FIELD(layers),
      APGL_REAL_FIELD(lambda1),
      APGL_REAL_FIELD(lambda2),
      APGL_REAL_FIELD(tau),
      APGL_REAL_FIELD(tau_seq),
      APGL_REAL_FIELD(dropout),
      APGL_INT_FIELD(max_epochs),
      APGL_INT_FIELD(patience),
      Field{"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
            [](TrainConfig& c, const std::string& v) {
              std::uint64_t s = 0;
              auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
              if (ec != std::errc() || ptr != v.data() + v.size()) throw Error("seed must be an unsigned integer");
              c.seed = s;
            }},
      APGL_INT_FIELD(gce_item_cap),
      Field{"ssl_reduction", [](const TrainConfig& c) { return std::string(c.ssl_mean ? "mean" : "sum"); },
            [](TrainConfig& c, const std::string& v) {
              if (v == "mean") c.ssl_mean = true;
              else if (v == "sum") c.ssl_mean = false;
              else throw Error("ssl_reduction must be mean or sum, got '" + v + "'");
            }},
      APGL_BOOL_FIELD(gce_stop_grad_original),
      Field{"pge_source",
            [](const TrainConfig& c) {
              return std::string(c.pge_source == SubgraphSource::Refined ? "refined" : "original");
            },
            [](TrainConfig& c, const std::string& v) {
              if (v == "refined") c.pge_source = SubgraphSource::Refined;
              else if (v == "original") c.pge_source = SubgraphSource::Original;
              else throw Error("pge_source must be refined or original, got '" + v + "'");
            }},
      APGL_BOOL_FIELD(pge_graph_grad),
      APGL_BOOL_FIELD(exclude_seen),
      APGL_BOOL_FIELD(disable_agcl),
      APGL_BOOL_FIELD(disable_pge),
      APGL_BOOL_FIELD(freeze_perturbation),
      Field{"crop_keep", [](const TrainConfig& c) { return fmt_double(c.augmentation.crop_keep); },
            [](TrainConfig& c, const std::string& v) { c.augmentation.crop_keep = parse_double("crop_keep", v); }},
      Field{"mask_ratio", [](const TrainConfig& c) { return fmt_double(c.augmentation.mask_ratio); },
            [](TrainConfig& c, const std::string& v) { c.augmentation.mask_ratio = parse_double("mask_ratio", v); }},
      Field{"reorder_ratio", [](const TrainConfig& c) { return fmt_double(c.augmentation.reorder_ratio); },
            [](TrainConfig& c, const std::string& v) {
              c.augmentation.reorder_ratio = parse_double("reorder_ratio", v);
            }},
  };
  return table;
}

#undef APGL_INT_FIELD
#undef APGL_REAL_FIELD
#undef APGL_BOOL_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw Error("unknown config key '" + key + "'");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& f : fields()) m[f.key] = f.get(*this);
  return m;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error("invalid config: " + what);
  };
  require(batch_size > 0, "batch_size must be positive");
  require(lr > 0.0, "lr must be positive");
  require(dim > 0 && heads > 0 && dim % heads == 0, "dim must be a positive multiple of heads");
  require(max_len > 0, "max_len must be positive");
  require(gcn_layers >= 1, "gcn_layers must be >= 1");
  require(alpha >= 0.0, "alpha must be >= 0");
  require(rank >= 1, "rank must be >= 1");
  require(layers >= 1, "layers must be >= 1");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be >= 0");
  require(tau > 0.0 && tau_seq > 0.0, "temperatures must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_epochs >= 1, "max_epochs must be >= 1");
  require(patience >= 0, "patience must be >= 0");
  require(gce_item_cap >= 1, "gce_item_cap must be >= 1");
  for (double r : {augmentation.crop_keep, augmentation.mask_ratio, augmentation.reorder_ratio}) {
    require(r > 0.0 && r <= 1.0, "augmentation ratios must lie in (0, 1]");
  }
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

Model::Model(const TrainConfig& cfg, int num_users, int num_items)
    : cfg_(cfg), num_users_(num_users), num_items_(num_items) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  init_encoder_params(params_, cfg_.encoder(), num_items, rng);
  params_.add("pert.w_us", normal_init(num_items + 1, cfg_.rank, 0.02, rng), {0});
  params_.add("pert.w_v", normal_init(num_items + 1, cfg_.rank, 0.02, rng), {0});
  init_extractor_params(params_, cfg_.dim, num_users, rng);
}

Container Model::to_checkpoint() const {
  Container c;
  c.put_count("model.num_users", static_cast<std::uint64_t>(num_users_));
  c.put_count("model.num_items", static_cast<std::uint64_t>(num_items_));
  const std::string text = cfg_.to_text();
  std::vector<std::uint32_t> bytes(text.begin(), text.end());
  const std::uint64_t bytes_len = bytes.size();
  c.put_u32("model.config", {bytes_len}, std::move(bytes));
  params_.save_to(c);
  return c;
}

Model Model::from_checkpoint(const Container& c) {
  const auto& bytes = c.u32("model.config");
  const std::string text(bytes.begin(), bytes.end());
  Model m(TrainConfig::from_text(text), static_cast<int>(c.count("model.num_users")),
          static_cast<int>(c.count("model.num_items")));
  m.params_.load_from(c);
  return m;
}

void Model::check_compatible(const Dataset& ds, const SparseGraph& graph) const {
  if (ds.num_items != num_items_ || ds.num_users != num_users_) {
    throw Error("checkpoint expects " + std::to_string(num_users_) + " users x " +
                std::to_string(num_items_) + " items, dataset has " + std::to_string(ds.num_users) +
                " x " + std::to_string(ds.num_items));
  }
  if (graph.n() != num_items_ + 1) {
    throw Error("checkpoint expects a graph with " + std::to_string(num_items_ + 1) +
                " nodes, got " + std::to_string(graph.n()));
  }
  if (ds.sequences.max_len() != cfg_.max_len) {
    throw Error("checkpoint expects max_len " + std::to_string(cfg_.max_len) + ", dataset has " +
                std::to_string(ds.sequences.max_len()));
  }
}

Bindings bind_model(Tape& tape, const Model& model, bool trainable) {
  const auto& cfg = model.config();
  Bindings b;
  for (const auto& name : encoder_param_names(cfg.encoder())) {
    b.bind(tape, model.params(), name, trainable);
  }
  if (!cfg.disable_agcl) {
    const bool train_factors = trainable && !cfg.freeze_perturbation;
    b.bind(tape, model.params(), "pert.w_us", train_factors);
    b.bind(tape, model.params(), "pert.w_v", train_factors);
  }
  if (!cfg.disable_pge) {
    for (const auto& name : extractor_param_names()) b.bind(tape, model.params(), name, trainable);
  }
  return b;
}

Var model_bias(const Model& model, const Bindings& params, const SparseGraph& graph,
               std::span<const int> padded_items, std::span<const int> users) {
  const auto& cfg = model.config();
  if (cfg.disable_pge) return Var{};
  Tape& tape = *params.at("item_emb").tape;
  const Eigen::Index n = cfg.max_len;
  Var left, right;
  const bool refined = !cfg.disable_agcl && cfg.pge_source == SubgraphSource::Refined && cfg.alpha != 0.0;
  if (refined) {
    Var w_us = params.at("pert.w_us");
    Var w_v = params.at("pert.w_v");
    if (!cfg.pge_graph_grad) {
      w_us = tape.constant(w_us.value());
      w_v = tape.constant(w_v.value());
    }
    left = spmm(graph, w_us);
    right = spmm(graph, w_v);
  }
  const Var sub = subgraph_blocks(tape, graph, padded_items, n, left, right, refined ? cfg.alpha : 0.0);
  return personalized_pe(user_graph_weight(params, users), sub, n);
}

Matrix encode_users(const Model& model, const SparseGraph& graph, std::span<const UserId> users,
                    const std::vector<std::vector<ItemId>>& inputs) {
  const auto& cfg = model.config();
  if (users.size() != inputs.size()) throw Error("encode_users: users/inputs length mismatch");
  Matrix out(static_cast<Eigen::Index>(users.size()), cfg.dim);
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < users.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, users.size() - start);
    Tape tape(false);
    const Bindings params = bind_model(tape, model, false);
    std::vector<int> items;
    items.reserve(count * static_cast<std::size_t>(cfg.max_len));
    for (std::size_t i = start; i < start + count; ++i) {
      const auto padded = left_pad(inputs[i], cfg.max_len);
      items.insert(items.end(), padded.begin(), padded.end());
    }
    const std::vector<int> chunk_users(users.begin() + static_cast<std::ptrdiff_t>(start),
                                       users.begin() + static_cast<std::ptrdiff_t>(start + count));
    const Var bias = model_bias(model, params, graph, items, chunk_users);
    const Var h = encode_sequences(params, cfg.encoder(), items, bias);
    const Var last = gather_rows(h, last_rows(static_cast<Eigen::Index>(count), cfg.max_len));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = last.value();
  }
  return out;
}

}  // namespace apgl
