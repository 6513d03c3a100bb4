#include "apgl/bench.hpp"

#include "apgl/agcl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <random>
#include <set>

#include <unistd.h>

#include <json.hpp>

namespace apgl {
namespace {

using Clock = std::chrono::steady_clock;

/// Median wall time of `reps` calls after one warmup; robust to stray interference.
template <typename Fn>
double median_seconds(int reps, Fn&& fn) {
  fn();
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto start = Clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(Clock::now() - start).count());
  }
  std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
  return t[static_cast<std::size_t>(reps / 2)];
}

double available_bytes() {
  const long pages = sysconf(_SC_AVPHYS_PAGES);
  const long page = sysconf(_SC_PAGE_SIZE);
  if (pages <= 0 || page <= 0) return 0.0;
  return static_cast<double>(pages) * static_cast<double>(page);
}

Matrix dense_propagate(const SparseGraph& a, const Matrix& w_us, const Matrix& w_v, double alpha,
                       const Matrix& e0, int layers) {
  Matrix refined = alpha * (spmm(a, w_us) * spmm(a, w_v).transpose());
  const auto& offs = a.row_offsets();
  for (std::int64_t i = 0; i < a.n(); ++i) {
    for (auto k = offs[i]; k < offs[i + 1]; ++k) refined(i, a.col_indices()[k]) += a.values()[k];
  }
  Matrix layer = e0;
  Matrix total = layer;
  for (int l = 0; l < layers; ++l) {
    layer = refined * layer;
    total += layer;
  }
  return total / static_cast<double>(layers + 1);
}

}  // namespace

SparseGraph random_sparse_graph(int num_items, int nnz_per_row, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(1, num_items);
  std::uniform_real_distribution<double> weight(0.05, 0.5);
  std::set<std::pair<int, int>> seen;
  std::vector<std::tuple<std::int64_t, std::int64_t, double>> t;
  const int half = std::max(1, nnz_per_row / 2);
  for (int i = 1; i <= num_items; ++i) {
    t.emplace_back(i, i, 1.0);
    for (int k = 0; k < half; ++k) {
      const int j = pick(rng);
      if (j == i || !seen.insert({std::min(i, j), std::max(i, j)}).second) continue;
      const double w = weight(rng);
      t.emplace_back(i, j, w);
      t.emplace_back(j, i, w);
    }
  }
  return SparseGraph::from_triplets(num_items + 1, std::move(t));
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("loglog_slope needs >= 2 matching points");
  Eigen::MatrixXd design(static_cast<Eigen::Index>(x.size()), 2);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    design(static_cast<Eigen::Index>(i), 0) = std::log(x[i]);
    design(static_cast<Eigen::Index>(i), 1) = 1.0;
    rhs(static_cast<Eigen::Index>(i)) = std::log(y[i]);
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(rhs);
  return coef(0);
}

double time_factored(const SparseGraph& a, const Matrix& w_us, const Matrix& w_v, const Matrix& e0,
                     const BenchConfig& cfg) {
  volatile double sink = 0.0;
  const double secs = median_seconds(cfg.reps, [&] {
    const Matrix out = perturbed_propagate(a, w_us, w_v, cfg.alpha, e0, cfg.layers);
    sink = sink + out(1, 0);
  });
  return secs;
}

BenchReport bench_svd(const BenchConfig& cfg) {
  if (cfg.sizes.size() < 4) throw Error("bench-svd needs at least 4 size points");
  for (std::size_t i = 1; i < cfg.sizes.size(); ++i) {
    if (cfg.sizes[i] <= cfg.sizes[i - 1]) throw Error("bench-svd sizes must be strictly ascending");
  }
  if (cfg.reps < 5) throw Error("bench-svd needs at least 5 repetitions per point");
  BenchReport report;
  report.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  auto random_matrix = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    m.row(0).setZero();
    return m;
  };
  std::vector<double> xs, factored, dense_x, dense;
  for (int n : cfg.sizes) {
    const SparseGraph a = random_sparse_graph(n, cfg.nnz_per_row, cfg.seed + static_cast<std::uint64_t>(n));
    const Matrix w_us = random_matrix(n + 1, cfg.rank);
    const Matrix w_v = random_matrix(n + 1, cfg.rank);
    const Matrix e0 = random_matrix(n + 1, cfg.dim);
    BenchPoint p;
    p.num_items = n;
    p.factored_seconds = time_factored(a, w_us, w_v, e0, cfg);
    xs.push_back(n);
    factored.push_back(p.factored_seconds);

    // Dense path holds the n x n refined graph plus one product temporary.
    const double need = 3.0 * static_cast<double>(n + 1) * static_cast<double>(n + 1) * sizeof(double);
    if (cfg.run_dense && need < 0.8 * available_bytes()) {
      try {
        volatile double sink = 0.0;
        p.dense_seconds = median_seconds(cfg.reps, [&] {
          const Matrix out = dense_propagate(a, w_us, w_v, cfg.alpha, e0, cfg.layers);
          sink = sink + out(1, 0);
        });
        dense_x.push_back(n);
        dense.push_back(*p.dense_seconds);
      } catch (const std::bad_alloc&) {
        p.dense_seconds.reset();
      }
    }
    report.points.push_back(p);
  }
  report.factored_slope = loglog_slope(xs, factored);
  if (dense.size() >= 2) report.dense_slope = loglog_slope(dense_x, dense);
  return report;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["dim"] = config.dim;
  j["rank"] = config.rank;
  j["nnz_per_row"] = config.nnz_per_row;
  j["layers"] = config.layers;
  j["reps"] = config.reps;
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& p : points) {
    nlohmann::ordered_json e;
    e["num_items"] = p.num_items;
    e["factored_seconds"] = p.factored_seconds;
    if (p.dense_seconds) e["dense_seconds"] = *p.dense_seconds;
    else e["dense_seconds"] = nullptr;
    pts.push_back(e);
  }
  j["points"] = pts;
  j["factored_slope"] = factored_slope;
  if (dense_slope) j["dense_slope"] = *dense_slope;
  else j["dense_slope"] = nullptr;
  return j.dump(2) + "\n";
}

}  // namespace apgl
