#include "apgl/bench.hpp"
#include "apgl/synth.hpp"
#include "apgl/tools.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace apgl;

namespace {

int item_number(const std::string& id) { return std::stoi(id.substr(1)); }

/// Cluster-to-cluster counts over consecutive records of the same user.
Matrix empirical_transitions(const SyntheticData& data, int clusters, long& steps) {
  Matrix counts = Matrix::Zero(clusters, clusters);
  steps = 0;
  const auto& r = data.log.records;
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (r[i].user != r[i - 1].user) continue;
    const int from = data.item_cluster[static_cast<std::size_t>(item_number(r[i - 1].item) - 1)];
    const int to = data.item_cluster[static_cast<std::size_t>(item_number(r[i].item) - 1)];
    counts(from, to) += 1.0;
    ++steps;
  }
  return counts;
}

double worst_row_tv(const Matrix& counts, const Matrix& expected) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    const Eigen::RowVectorXd p = counts.row(i) / counts.row(i).sum();
    worst = std::max(worst, 0.5 * (p - expected.row(i)).cwiseAbs().sum());
  }
  return worst;
}

Model tiny_model(int dim, int items) {
  TrainConfig cfg;
  cfg.dim = dim;
  cfg.heads = 1;
  cfg.max_len = 4;
  cfg.rank = 2;
  cfg.seed = 5;
  return Model(cfg, 3, items);
}

}  // namespace

TEST_CASE("synthetic generator structure") {
  SyntheticConfig cfg;
  cfg.num_items = 40;
  cfg.num_clusters = 4;
  cfg.num_users = 300;
  SUBCASE("no cross-cluster jumps keeps each user in one cluster") {
    cfg.cross_cluster_prob = 0.0;
    const SyntheticData data = gen_synthetic(cfg);
    std::map<std::string, std::set<int>> clusters;
    for (const auto& r : data.log.records) {
      clusters[r.user].insert(data.item_cluster[static_cast<std::size_t>(item_number(r.item) - 1)]);
    }
    CHECK(clusters.size() == 300u);
    for (const auto& [user, seen] : clusters) CHECK(seen.size() == 1u);
  }
  SUBCASE("one cluster is uniform sampling over all items") {
    cfg.num_clusters = 1;
    cfg.num_users = 4000;
    const SyntheticData data = gen_synthetic(cfg);
    std::vector<double> counts(40, 0.0);
    for (const auto& r : data.log.records) counts[static_cast<std::size_t>(item_number(r.item) - 1)] += 1.0;
    const double n = static_cast<double>(data.log.records.size());
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - n / 40) * (c - n / 40) / (n / 40);
    CHECK(chi2 < 80.0);  // 39 degrees of freedom; p < 2e-4
  }
  SUBCASE("lengths, timestamps and chain") {
    const SyntheticData data = gen_synthetic(cfg);
    std::map<std::string, int> length;
    for (const auto& r : data.log.records) {
      CHECK(r.timestamp == length[r.user]);
      ++length[r.user];
    }
    for (const auto& [user, len] : length) {
      CHECK(len >= cfg.min_len);
      CHECK(len <= cfg.max_len);
    }
    for (Eigen::Index i = 0; i < 4; ++i) {
      CHECK(data.chain(i, i) == 0.0);
      CHECK(std::abs(data.chain.row(i).sum() - 1.0) < 1e-12);
    }
  }
  SUBCASE("seeded") {
    CHECK(gen_synthetic(cfg).log.records == gen_synthetic(cfg).log.records);
    SyntheticConfig other = cfg;
    other.seed = 2;
    CHECK_FALSE(gen_synthetic(other).log.records == gen_synthetic(cfg).log.records);
  }
  SUBCASE("preconditions") {
    cfg.num_items = 42;
    CHECK_THROWS_AS(gen_synthetic(cfg), Error);
  }
}

TEST_CASE("empirical cluster transitions match the planted chain") {
  SyntheticConfig cfg;
  cfg.num_users = 8000;
  cfg.user_globality_mix = 1.0;
  cfg.seed = 11;
  const SyntheticData data = gen_synthetic(cfg);
  long steps = 0;
  const Matrix counts = empirical_transitions(data, cfg.num_clusters, steps);
  CHECK(steps >= 100000);
  CHECK(worst_row_tv(counts, cluster_transition_matrix(data.chain, cfg.cross_cluster_prob)) < 0.02);

  SUBCASE("local users jump uniformly") {
    SyntheticConfig local = cfg;
    local.user_globality_mix = 0.0;
    local.local_strength = 0.0;
    const SyntheticData d = gen_synthetic(local);
    const Matrix c = empirical_transitions(d, local.num_clusters, steps);
    Matrix uniform = Matrix::Constant(4, 4, local.cross_cluster_prob / 3.0);
    uniform.diagonal().setConstant(1.0 - local.cross_cluster_prob);
    CHECK(worst_row_tv(c, uniform) < 0.02);
  }
}

TEST_CASE("item projection") {
  SUBCASE("two-dimensional embeddings are rotated, not distorted") {
    const Model m = tiny_model(2, 30);
    const Matrix items = m.params().value("item_emb").middleRows(1, 30);
    const Projection2D<double> p = project_items(m);
    REQUIRE(p.coords.rows() == 30);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 30; ++i) {
      for (Eigen::Index j = 0; j < 30; ++j) {
        worst = std::max(worst, std::abs((items.row(i) - items.row(j)).norm() -
                                         (p.coords.row(i) - p.coords.row(j)).norm()));
      }
    }
    CHECK(worst < 1e-8);
  }
  SUBCASE("rank-one table has a vanishing second coordinate") {
    Model m = tiny_model(6, 25);
    Matrix& table = m.params().value("item_emb");
    const Eigen::RowVectorXd dir = Eigen::RowVectorXd::LinSpaced(6, 1.0, 2.0);
    for (Eigen::Index i = 1; i <= 25; ++i) table.row(i) = std::sin(0.7 * static_cast<double>(i)) * dir;
    const Projection2D<double> p = project_items(m);
    CHECK(p.coords.col(1).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(p.coords.col(0).cwiseAbs().maxCoeff() > 0.1);
  }
  SUBCASE("CSV export") {
    const Model m = tiny_model(4, 17);
    const auto path = std::filesystem::temp_directory_path() / "apgl_projection_test.csv";
    CHECK(export_projection(m, path) == 17u);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "item_id,x,y");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    }
    CHECK(rows == 17);
    std::filesystem::remove(path);
  }
}

TEST_CASE("benchmark plumbing") {
  SUBCASE("log-log slope of exact power laws") {
    const std::vector<double> x{1000, 2000, 4000, 8000};
    std::vector<double> y;
    for (double v : x) y.push_back(3e-7 * std::pow(v, 1.5));
    CHECK(std::abs(loglog_slope(x, y) - 1.5) < 1e-12);
    CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), Error);
  }
  SUBCASE("random graph shape") {
    const SparseGraph g = random_sparse_graph(500, 10, 3);
    CHECK(g.n() == 501);
    CHECK(g.is_symmetric());
    CHECK(g.value(0, 0) == 0.0);
    CHECK(g.value(7, 7) == 1.0);
    const double per_row = static_cast<double>(g.nnz()) / 500.0;
    CHECK(per_row > 8.0);
    CHECK(per_row < 13.0);
  }
  SUBCASE("report over small sizes") {
    BenchConfig cfg;
    cfg.sizes = {100, 200, 400, 800};
    cfg.dim = 8;
    cfg.rank = 4;
    const BenchReport r = bench_svd(cfg);
    REQUIRE(r.points.size() == 4u);
    for (const auto& p : r.points) {
      CHECK(p.factored_seconds > 0.0);
      CHECK(p.dense_seconds.has_value());
    }
    CHECK(std::isfinite(r.factored_slope));
    CHECK(r.dense_slope.has_value());
    CHECK(r.to_json().find("factored_slope") != std::string::npos);
    cfg.sizes = {100, 200, 400};
    CHECK_THROWS_AS(bench_svd(cfg), Error);
  }
  SUBCASE("doubling the rank roughly doubles factored time") {
    BenchConfig cfg;
    cfg.reps = 7;
    const int n = 4000;
    const SparseGraph a = random_sparse_graph(n, cfg.nnz_per_row, 9);
    std::mt19937_64 rng(1);
    const Matrix e0 = normal_init(n + 1, cfg.dim, 0.1, rng);
    auto best_of = [&](int rank) {
      const Matrix w_us = normal_init(n + 1, rank, 0.1, rng);
      const Matrix w_v = normal_init(n + 1, rank, 0.1, rng);
      double best = 1e9;
      for (int trial = 0; trial < 3; ++trial) best = std::min(best, time_factored(a, w_us, w_v, e0, cfg));
      return best;
    };
    const double ratio = best_of(32) / best_of(16);
    MESSAGE("rank 32 / rank 16 time ratio " << ratio);
    CHECK(ratio > 1.4);
    CHECK(ratio < 2.6);
  }
}
