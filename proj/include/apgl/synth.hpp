#pragma once

// Seeded synthetic interaction logs with planted cluster structure.

#include "apgl/dataio.hpp"
#include "apgl/types.hpp"

#include <cstdint>
#include <vector>

namespace apgl {

struct SyntheticConfig {
  int num_items = 200;
  int num_clusters = 4;
  int num_users = 2000;
  int min_len = 8;
  int max_len = 20;
  /// Probability that a step leaves the current cluster.
  double cross_cluster_prob = 0.3;
  /// Fraction of users of the "global" archetype.
  double user_globality_mix = 0.5;
  /// Globality of the two archetypes: the probability that a cluster jump
  /// follows the planted chain rather than a uniform choice.
  double global_strength = 1.0;
  double local_strength = 0.2;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  InteractionLog log;
  /// Planted jump distribution between clusters (zero diagonal, rows sum to 1).
  Matrix chain;
  std::vector<int> item_cluster;      // index item - 1
  std::vector<double> user_globality;  // index user - 1
};

SyntheticData gen_synthetic(const SyntheticConfig& cfg);

/// Cluster-level transition matrix of a fully global user:
/// (1 - p) I + p * chain.
Matrix cluster_transition_matrix(const Matrix& chain, double cross_cluster_prob);

}  // namespace apgl
