#pragma once

// Scaling benchmark: factored low-rank propagation against propagation over
// the materialized refined graph.

#include "apgl/graph.hpp"
#include "apgl/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace apgl {

struct BenchConfig {
  std::vector<int> sizes = {1000, 2000, 4000, 8000};
  int dim = 32;
  int rank = 16;
  int nnz_per_row = 10;
  int layers = 2;
  int reps = 5;
  double alpha = 0.05;
  bool run_dense = true;
  std::uint64_t seed = 7;
};

struct BenchPoint {
  int num_items = 0;
  double factored_seconds = 0.0;
  std::optional<double> dense_seconds;  // empty when skipped
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchPoint> points;
  double factored_slope = 0.0;
  std::optional<double> dense_slope;

  std::string to_json() const;
};

/// Symmetric random graph over items 1..n with ~nnz_per_row entries per row
/// plus unit self-loops; node 0 stays isolated.
SparseGraph random_sparse_graph(int num_items, int nnz_per_row, std::uint64_t seed);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Median seconds per call of the factored propagation at one size point.
double time_factored(const SparseGraph& a, const Matrix& w_us, const Matrix& w_v, const Matrix& e0,
                     const BenchConfig& cfg);

BenchReport bench_svd(const BenchConfig& cfg);

}  // namespace apgl
