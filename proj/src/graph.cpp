#include "apgl/graph.hpp"

#include "apgl/dataio.hpp"

#include <algorithm>

namespace apgl {

SparseGraph::SparseGraph(std::int64_t n, std::vector<std::uint64_t> row_offsets,
                         std::vector<std::uint32_t> col_indices, std::vector<double> values)
    : n_(n),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (row_offsets_.size() != static_cast<std::size_t>(n_) + 1 || row_offsets_.front() != 0 ||
      row_offsets_.back() != values_.size() || col_indices_.size() != values_.size()) {
    throw Error("inconsistent CSR arrays for graph with " + std::to_string(n_) + " nodes");
  }
  for (std::size_t i = 0; i + 1 < row_offsets_.size(); ++i) {
    if (row_offsets_[i] > row_offsets_[i + 1]) throw Error("CSR row offsets not monotone");
    for (auto k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      if (col_indices_[k] >= static_cast<std::uint64_t>(n_)) throw Error("CSR column out of range");
      if (k > row_offsets_[i] && col_indices_[k] <= col_indices_[k - 1]) {
        throw Error("CSR columns not strictly increasing in row " + std::to_string(i));
      }
    }
  }
}

double SparseGraph::value(std::int64_t row, std::int64_t col) const {
  if (row < 0 || row >= n_ || col < 0 || col >= n_) return 0.0;
  const auto begin = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[row]);
  const auto end = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[row + 1]);
  const auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(col));
  if (it == end || *it != col) return 0.0;
  return values_[static_cast<std::size_t>(it - col_indices_.begin())];
}

bool SparseGraph::is_symmetric() const {
  for (std::int64_t i = 0; i < n_; ++i) {
    for (auto k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      const std::int64_t j = col_indices_[k];
      // Absent mirror entries compare against 0.
      if (value(j, i) != values_[k]) return false;
    }
  }
  return true;
}

Matrix SparseGraph::to_dense() const {
  Matrix d = Matrix::Zero(n_, n_);
  for (std::int64_t i = 0; i < n_; ++i) {
    for (auto k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) d(i, col_indices_[k]) = values_[k];
  }
  return d;
}

SparseGraph SparseGraph::from_triplets(
    std::int64_t n, std::vector<std::tuple<std::int64_t, std::int64_t, double>> t) {
  std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  std::vector<std::uint64_t> offs(static_cast<std::size_t>(n) + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto [r, c, v] = t[k];
    if (r < 0 || r >= n || c < 0 || c >= n) throw Error("triplet index out of range");
    if (!cols.empty() && k > 0 && std::get<0>(t[k - 1]) == r && std::get<1>(t[k - 1]) == c) {
      vals.back() += v;
      continue;
    }
    cols.push_back(static_cast<std::uint32_t>(c));
    vals.push_back(v);
    ++offs[static_cast<std::size_t>(r) + 1];
  }
  for (std::size_t i = 1; i < offs.size(); ++i) offs[i] += offs[i - 1];
  return SparseGraph(n, std::move(offs), std::move(cols), std::move(vals));
}

Container SparseGraph::to_container() const {
  Container c;
  c.put_count("graph.n", static_cast<std::uint64_t>(n_));
  c.put_u64("graph.row_offsets", {row_offsets_.size()}, row_offsets_);
  c.put_u32("graph.col_indices", {col_indices_.size()}, col_indices_);
  c.put_f64("graph.values", {values_.size()}, values_);
  c.put_count("graph.config.window", static_cast<std::uint64_t>(config.window));
  c.put_scalar("graph.config.self_loop_weight", config.self_loop_weight);
  return c;
}

SparseGraph SparseGraph::from_container(const Container& c) {
  SparseGraph g(static_cast<std::int64_t>(c.count("graph.n")), c.u64("graph.row_offsets"),
                c.u32("graph.col_indices"), c.f64("graph.values"));
  g.config.window = static_cast<int>(c.count("graph.config.window"));
  g.config.self_loop_weight = c.scalar("graph.config.self_loop_weight");
  return g;
}

void accumulate_cooccurrence(CooccurrenceAccumulator& acc, std::span<const ItemId> sequence,
                             int window) {
  if (window < 1) throw Error("co-occurrence window must be >= 1");
  const std::size_t len = sequence.size();
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 1; j <= static_cast<std::size_t>(window) && t + j < len; ++j) {
      acc.weights[{sequence[t], sequence[t + j]}] += 1.0 / static_cast<double>(j);
    }
  }
}

CooccurrenceAccumulator accumulate_cooccurrence(const std::vector<std::vector<ItemId>>& sequences,
                                                int num_items, int window) {
  CooccurrenceAccumulator acc;
  acc.num_items = num_items;
  for (const auto& s : sequences) accumulate_cooccurrence(acc, s, window);
  return acc;
}

CooccurrenceAccumulator normalize_degrees(const CooccurrenceAccumulator& acc) {
  std::map<ItemId, double> degree;
  for (const auto& [key, w] : acc.weights) {
    degree[key.first] += w;
    degree[key.second] += w;
  }
  CooccurrenceAccumulator out;
  out.num_items = acc.num_items;
  for (const auto& [key, w] : acc.weights) {
    const double di = degree[key.first];
    const double dj = degree[key.second];
    if (di == 0.0 || dj == 0.0) {
      out.weights[key] = w;
      continue;
    }
    out.weights[key] = (1.0 / di + 1.0 / dj) * w;
  }
  return out;
}

SparseGraph finalize_graph(const CooccurrenceAccumulator& acc, const GraphBuildConfig& cfg) {
  const std::int64_t n = acc.num_items + 1;
  std::map<std::pair<ItemId, ItemId>, double> sym;
  for (const auto& [key, w] : acc.weights) {
    if (key.first < 1 || key.second < 1 || key.first > acc.num_items || key.second > acc.num_items) {
      throw Error("accumulator holds an id outside 1.." + std::to_string(acc.num_items));
    }
    if (key.first == key.second) continue;
    const auto mirror = acc.weights.find({key.second, key.first});
    const double wt = mirror == acc.weights.end() ? 0.0 : mirror->second;
    sym[key] = w + wt;
    sym[{key.second, key.first}] = wt + w;
  }
  for (ItemId v = 1; v <= acc.num_items; ++v) sym[{v, v}] = cfg.self_loop_weight;

  std::vector<std::uint64_t> offs(static_cast<std::size_t>(n) + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  cols.reserve(sym.size());
  vals.reserve(sym.size());
  for (const auto& [key, w] : sym) {
    cols.push_back(static_cast<std::uint32_t>(key.second));
    vals.push_back(w);
    ++offs[static_cast<std::size_t>(key.first) + 1];
  }
  for (std::size_t i = 1; i < offs.size(); ++i) offs[i] += offs[i - 1];
  SparseGraph g(n, std::move(offs), std::move(cols), std::move(vals));
  g.config = cfg;
  return g;
}

SparseGraph build_item_graph(const SequenceStore& sequences, int num_items,
                             const GraphBuildConfig& cfg) {
  CooccurrenceAccumulator acc;
  acc.num_items = num_items;
  for (UserId u = 1; u <= sequences.num_users(); ++u) {
    accumulate_cooccurrence(acc, sequences.train_view(u), cfg.window);
  }
  return finalize_graph(normalize_degrees(acc), cfg);
}

Matrix extract_subgraph(const SparseGraph& graph, std::span<const ItemId> padded,
                        SubgraphSource source, const LowRankPerturbation* perturbation) {
  const auto len = static_cast<Eigen::Index>(padded.size());
  auto in_graph = [&](ItemId v) { return v != kPaddingItem && v < graph.n(); };
  Matrix sub = Matrix::Zero(len, len);
  for (Eigen::Index p = 0; p < len; ++p) {
    if (!in_graph(padded[p])) continue;
    for (Eigen::Index q = 0; q < len; ++q) {
      if (in_graph(padded[q])) sub(p, q) = graph.value(padded[p], padded[q]);
    }
  }
  if (source == SubgraphSource::Original) return sub;
  if (perturbation == nullptr) throw Error("refined sub-graph requested without perturbation");
  if (perturbation->alpha == 0.0) return sub;
  const Matrix left = spmm(graph, perturbation->w_us);
  const Matrix right = spmm(graph, perturbation->w_v);
  Matrix lrows = Matrix::Zero(len, left.cols());
  Matrix rrows = Matrix::Zero(len, right.cols());
  for (Eigen::Index p = 0; p < len; ++p) {
    if (!in_graph(padded[p])) continue;
    lrows.row(p) = left.row(padded[p]);
    rrows.row(p) = right.row(padded[p]);
  }
  sub.noalias() += perturbation->alpha * (lrows * rrows.transpose());
  return sub;
}

}  // namespace apgl
