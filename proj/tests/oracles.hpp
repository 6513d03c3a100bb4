#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run: dense propagation, sort-based ranking, hand-built corpora.

#include "apgl/agcl.hpp"
#include "apgl/dataio.hpp"
#include "apgl/graph.hpp"
#include "apgl/params.hpp"
#include "apgl/seqenc.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace apgl::testing {

inline SparseGraph random_graph(int items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> item(1, items);
  std::vector<std::vector<ItemId>> seqs(3 * items);
  for (auto& s : seqs) {
    s.resize(6);
    for (auto& v : s) v = item(rng);
  }
  return finalize_graph(normalize_degrees(accumulate_cooccurrence(seqs, items, 2)), {});
}

inline Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Materialises A + alpha (A W_us)(A W_v)^T and runs plain propagation.
inline Matrix dense_oracle(const SparseGraph& g, const Matrix& w_us, const Matrix& w_v, double alpha, const Matrix& e0,
                    int layers) {
  const Matrix a = g.to_dense();
  const Matrix refined = a + alpha * (a * w_us) * (a * w_v).transpose();
  Matrix layer = e0, total = e0;
  for (int l = 0; l < layers; ++l) {
    layer = refined * layer;
    total += layer;
  }
  return total / (layers + 1);
}

/// Four users whose train views are [1,2,3], [1,2], [3,2], [3,4,1]; the last
/// two items of each full sequence are held out.
inline SequenceStore toy_corpus() {
  return SequenceStore({{1, 2, 3, 4, 1}, {1, 2, 3, 4}, {3, 2, 1, 1}, {3, 4, 1, 2, 2}}, 10);
}

/// Hand-computed adjacency of toy_corpus() under window 2 and
/// unit self-loops; every entry is a dyadic rational.
inline Matrix toy_adjacency() {
  Matrix expected = Matrix::Zero(5, 5);
  auto set = [&](int i, int j, double v) { expected(i, j) = expected(j, i) = v; };
  set(1, 2, 1.0);
  set(1, 3, 0.5);
  set(2, 3, 1.0);
  set(3, 4, 0.75);
  set(1, 4, 0.75);
  for (int i = 1; i <= 4; ++i) expected(i, i) = 1.0;
  return expected;
}

inline Dataset dataset_of(std::vector<std::vector<ItemId>> seqs, int num_items, int max_len = 50) {
  Dataset ds;
  ds.num_users = static_cast<int>(seqs.size());
  ds.num_items = num_items;
  for (int u = 1; u <= ds.num_users; ++u) ds.user_raw_ids.push_back("u" + std::to_string(u));
  for (int i = 1; i <= num_items; ++i) ds.item_raw_ids.push_back("i" + std::to_string(i));
  ds.sequences = SequenceStore(std::move(seqs), max_len);
  return ds;
}

inline Dataset random_dataset(std::mt19937_64& rng, int users, int items, int max_seq) {
  std::uniform_int_distribution<int> item(1, items), len(3, max_seq);
  std::vector<std::vector<ItemId>> seqs(static_cast<std::size_t>(users));
  for (auto& s : seqs) {
    s.resize(static_cast<std::size_t>(len(rng)));
    for (auto& v : s) v = item(rng);
  }
  return dataset_of(std::move(seqs), items);
}

inline Matrix integer_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, int span) {
  std::uniform_int_distribution<int> d(-span, span);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

/// Rank by full sort: candidates ordered by descending score, and among equal
/// scores the target is placed last.
inline long sort_rank(const Eigen::RowVectorXd& h, const Matrix& table, int num_items, const std::set<ItemId>& exclude,
               ItemId target) {
  std::vector<std::pair<double, int>> scored;
  for (int i = 1; i <= num_items; ++i) {
    if (exclude.contains(i)) continue;
    double s = 0.0;
    for (Eigen::Index c = 0; c < h.size(); ++c) s += h(c) * table(i, c);
    scored.emplace_back(s, i == target ? 1 : 0);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t p = 0; p < scored.size(); ++p) {
    if (scored[p].second == 1) return static_cast<long>(p) + 1;
  }
  return -1;
}

/// Registry with non-trivial values everywhere (biases and norms included) so
/// the oracle exercises every parameter.
inline ParamRegistry make_params(const EncoderConfig& cfg, int num_items, int num_users, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamRegistry reg;
  init_encoder_params(reg, cfg, num_items, rng);
  init_extractor_params(reg, cfg.dim, num_users, rng);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& e : reg.entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] += n(rng);
    for (auto r : e.pinned_rows) e.value.row(r).setZero();
  }
  return reg;
}

inline Bindings bind_all(Tape& t, const ParamRegistry& reg) {
  Bindings b;
  for (const auto& e : reg.entries()) b.bind(t, reg, e.name);
  return b;
}

inline Matrix encode(const ParamRegistry& reg, const EncoderConfig& cfg, const std::vector<int>& ids, const Matrix* bias,
              AttentionProbe* probe = nullptr) {
  Tape t(false);
  const Bindings b = bind_all(t, reg);
  EncodeOptions opts;
  opts.probe = probe;
  return encode_sequences(b, cfg, ids, bias ? t.constant(*bias) : Var{}, opts).value();
}

}  // namespace apgl::testing
