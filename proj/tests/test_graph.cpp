#include "apgl/graph.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace apgl;
using namespace apgl::testing;

namespace {

/// Every ordered pair (s[t], s[t+j]) with 1 <= j <= k, weighted 1/j.
std::map<std::pair<ItemId, ItemId>, double> enumerate_pairs(const std::vector<ItemId>& s, int k) {
  std::map<std::pair<ItemId, ItemId>, double> w;
  for (std::size_t a = 0; a < s.size(); ++a) {
    for (std::size_t b = a + 1; b < s.size(); ++b) {
      const auto gap = static_cast<int>(b - a);
      if (gap <= k) w[{s[a], s[b]}] += 1.0 / gap;
    }
  }
  return w;
}

}  // namespace

TEST_CASE("co-occurrence rule") {
  SUBCASE("worked three-item example") {
    CooccurrenceAccumulator acc{3, {}};
    const std::vector<ItemId> s{1, 2, 3};
    accumulate_cooccurrence(acc, s, 2);
    CHECK(acc.weights.size() == 3);
    CHECK(acc.weights.at({1, 2}) == 1.0);
    CHECK(acc.weights.at({1, 3}) == 0.5);
    CHECK(acc.weights.at({2, 3}) == 1.0);
  }
  SUBCASE("single item adds nothing") {
    CooccurrenceAccumulator acc{3, {}};
    const std::vector<ItemId> s{2};
    accumulate_cooccurrence(acc, s, 2);
    CHECK(acc.weights.empty());
  }
  SUBCASE("repeated item") {
    CooccurrenceAccumulator acc{2, {}};
    const std::vector<ItemId> s{1, 2, 1};
    accumulate_cooccurrence(acc, s, 2);
    CHECK(acc.weights == enumerate_pairs(s, 2));
    CHECK(acc.weights.at({1, 2}) == 1.0);
    CHECK(acc.weights.at({1, 1}) == 0.5);
    CHECK(acc.weights.at({2, 1}) == 1.0);
  }
  SUBCASE("matches the brute-force pair enumerator") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> item(1, 6), len(1, 12), win(1, 4);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<ItemId> s(static_cast<std::size_t>(len(rng)));
      for (auto& v : s) v = item(rng);
      const int k = win(rng);
      CooccurrenceAccumulator acc{6, {}};
      accumulate_cooccurrence(acc, s, k);
      const auto oracle = enumerate_pairs(s, k);
      REQUIRE(acc.weights.size() == oracle.size());
      for (const auto& [key, w] : oracle) CHECK(acc.weights.at(key) == doctest::Approx(w).epsilon(1e-15));
    }
  }
}

TEST_CASE("degree normalisation") {
  SUBCASE("single edge") {
    CooccurrenceAccumulator acc{2, {{{1, 2}, 2.0}}};
    CHECK(normalize_degrees(acc).weights.at({1, 2}) == 2.0);
  }
  SUBCASE("star") {
    CooccurrenceAccumulator acc{3, {{{1, 2}, 1.0}, {{1, 3}, 1.0}}};
    const auto n = normalize_degrees(acc);
    CHECK(n.weights.at({1, 2}) == 1.5);
    CHECK(n.weights.at({1, 3}) == 1.5);
  }
  SUBCASE("empty") { CHECK(normalize_degrees(CooccurrenceAccumulator{3, {}}).weights.empty()); }
}

TEST_CASE("finalize_graph") {
  SUBCASE("directed edge becomes symmetric with self-loops") {
    const auto g = finalize_graph(CooccurrenceAccumulator{2, {{{1, 2}, 0.5}}}, {});
    CHECK(g.n() == 3);
    CHECK(g.value(1, 2) == 0.5);
    CHECK(g.value(2, 1) == 0.5);
    CHECK(g.value(1, 1) == 1.0);
    CHECK(g.value(2, 2) == 1.0);
    CHECK(g.value(0, 0) == 0.0);
    CHECK(g.is_symmetric());
  }
  SUBCASE("empty accumulator gives self-loops only") {
    const auto g = finalize_graph(CooccurrenceAccumulator{3, {}}, {2, 0.25});
    CHECK(g.nnz() == 3);
    Matrix expected = Matrix::Identity(4, 4) * 0.25;
    expected(0, 0) = 0.0;
    CHECK(g.to_dense() == expected);
  }
  SUBCASE("self co-occurrence is overwritten") {
    const auto g = finalize_graph(CooccurrenceAccumulator{2, {{{1, 1}, 3.0}, {{1, 2}, 1.0}}}, {});
    CHECK(g.value(1, 1) == 1.0);
  }
  SUBCASE("columns sorted, exactly one diagonal entry per item") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> item(1, 15);
    std::vector<std::vector<ItemId>> seqs(20);
    for (auto& s : seqs) {
      s.resize(8);
      for (auto& v : s) v = item(rng);
    }
    const auto g = finalize_graph(normalize_degrees(accumulate_cooccurrence(seqs, 15, 2)), {});
    CHECK(g.is_symmetric());
    int diagonal = 0;
    for (std::int64_t r = 0; r < g.n(); ++r) {
      for (auto k = g.row_offsets()[static_cast<std::size_t>(r)]; k < g.row_offsets()[static_cast<std::size_t>(r) + 1]; ++k) {
        if (k > g.row_offsets()[static_cast<std::size_t>(r)]) CHECK(g.col_indices()[k - 1] < g.col_indices()[k]);
        if (g.col_indices()[k] == r) {
          ++diagonal;
          CHECK(g.values()[k] == 1.0);
        }
        CHECK(g.values()[k] >= 0.0);
      }
    }
    CHECK(diagonal == 15);
  }
}

TEST_CASE("toy corpus reproduces hand-computed adjacency") {
  CHECK(build_item_graph(toy_corpus(), 4, {}).to_dense() == toy_adjacency());
}

TEST_CASE("build is independent of user order") {
  const SequenceStore a({{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}, {2, 2, 4, 1, 3}}, 10);
  const SequenceStore b({{5, 4, 3, 2, 1}, {2, 2, 4, 1, 3}, {1, 2, 3, 4, 5}}, 10);
  CHECK(build_item_graph(a, 5, {}).to_dense() == build_item_graph(b, 5, {}).to_dense());
}

TEST_CASE("container round trip") {
  const SparseGraph g = build_item_graph(toy_corpus(), 4, {3, 2.0});
  const auto back = SparseGraph::from_container(Container::deserialize(g.to_container().serialize()));
  CHECK(back.to_dense() == g.to_dense());
  CHECK(back.config.window == 3);
  CHECK(back.config.self_loop_weight == 2.0);
}

TEST_CASE("spmm matches dense products") {
  const SparseGraph g = build_item_graph(toy_corpus(), 4, {});
  Matrix x = Matrix::Random(5, 3);
  const Matrix dense = g.to_dense();
  CHECK((spmm(g, x) - dense * x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((spmm_transposed(g, x) - dense.transpose() * x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(spmm(g, Matrix::Zero(4, 3)), Error);
}

TEST_CASE("extract_subgraph") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> item(1, 30);
  std::vector<std::vector<ItemId>> seqs(40);
  for (auto& s : seqs) {
    s.resize(10);
    for (auto& v : s) v = item(rng);
  }
  const SparseGraph g = finalize_graph(normalize_degrees(accumulate_cooccurrence(seqs, 30, 2)), {});
  std::vector<ItemId> padded{0, 0, 3, 17, 3, 29, 8, 1};

  SUBCASE("original source is a gather of stored values") {
    const Matrix sub = extract_subgraph(g, padded);
    for (std::size_t p = 0; p < padded.size(); ++p) {
      for (std::size_t q = 0; q < padded.size(); ++q) {
        const double want = (padded[p] == 0 || padded[q] == 0) ? 0.0 : g.value(padded[p], padded[q]);
        CHECK(sub(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) == want);
      }
    }
  }
  SUBCASE("refined source equals the dense materialisation") {
    LowRankPerturbation pert{Matrix::Random(31, 4), Matrix::Random(31, 4), 0.3};
    const Matrix dense = g.to_dense() + pert.alpha * (g.to_dense() * pert.w_us) * (g.to_dense() * pert.w_v).transpose();
    const Matrix sub = extract_subgraph(g, padded, SubgraphSource::Refined, &pert);
    double worst = 0.0;
    for (std::size_t p = 0; p < padded.size(); ++p) {
      for (std::size_t q = 0; q < padded.size(); ++q) {
        const double want = (padded[p] == 0 || padded[q] == 0) ? 0.0 : dense(padded[p], padded[q]);
        worst = std::max(worst, std::abs(sub(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) - want));
      }
    }
    CHECK(worst < 1e-10);
  }
  SUBCASE("alpha zero equals the original block") {
    LowRankPerturbation pert{Matrix::Random(31, 4), Matrix::Random(31, 4), 0.0};
    CHECK(extract_subgraph(g, padded, SubgraphSource::Refined, &pert) == extract_subgraph(g, padded));
  }
  SUBCASE("all padding gives zeros") {
    const std::vector<ItemId> pad(6, 0);
    CHECK(extract_subgraph(g, pad).isZero(0.0));
  }
  SUBCASE("refined without factors is an error") {
    CHECK_THROWS_AS(extract_subgraph(g, padded, SubgraphSource::Refined, nullptr), Error);
  }
}
