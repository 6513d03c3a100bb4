#include "apgl/synth.hpp"

#include <cmath>
#include <random>
#include <string>

namespace apgl {

Matrix cluster_transition_matrix(const Matrix& chain, double cross_cluster_prob) {
  if (chain.rows() == 1) return Matrix::Ones(1, 1);
  return (1.0 - cross_cluster_prob) * Matrix::Identity(chain.rows(), chain.cols()) +
         cross_cluster_prob * chain;
}

SyntheticData gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_clusters < 1 || cfg.num_items < cfg.num_clusters || cfg.num_items % cfg.num_clusters != 0) {
    throw Error("num_items (" + std::to_string(cfg.num_items) + ") must be a positive multiple of num_clusters (" +
                std::to_string(cfg.num_clusters) + ")");
  }
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) throw Error("invalid sequence length range");
  if (cfg.cross_cluster_prob < 0.0 || cfg.cross_cluster_prob > 1.0) {
    throw Error("cross_cluster_prob must lie in [0, 1]");
  }
  std::mt19937_64 rng(cfg.seed);
  const int c = cfg.num_clusters;
  const int per_cluster = cfg.num_items / c;

  SyntheticData out;
  out.chain = Matrix::Zero(c, c);
  if (c > 1) {
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < c; ++j) {
        if (i != j) out.chain(i, j) = std::exp(2.0 * z(rng));
      }
      out.chain.row(i) /= out.chain.row(i).sum();
    }
  } else {
    out.chain(0, 0) = 1.0;
  }
  for (int v = 0; v < cfg.num_items; ++v) out.item_cluster.push_back(v / per_cluster);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> length(cfg.min_len, cfg.max_len);
  std::uniform_int_distribution<int> in_cluster(0, per_cluster - 1);
  std::uniform_int_distribution<int> any_cluster(0, c - 1);
  for (int u = 1; u <= cfg.num_users; ++u) {
    const double g = unit(rng) < cfg.user_globality_mix ? cfg.global_strength : cfg.local_strength;
    out.user_globality.push_back(g);
    const int len = length(rng);
    int cluster = any_cluster(rng);
    for (int t = 0; t < len; ++t) {
      if (t > 0 && c > 1 && unit(rng) < cfg.cross_cluster_prob) {
        if (unit(rng) < g) {
          std::discrete_distribution<int> jump(out.chain.row(cluster).data(),
                                               out.chain.row(cluster).data() + c);
          cluster = jump(rng);
        } else {
          std::uniform_int_distribution<int> other(0, c - 2);
          const int k = other(rng);
          cluster = k >= cluster ? k + 1 : k;
        }
      }
      const int item = cluster * per_cluster + in_cluster(rng) + 1;
      out.log.records.push_back({"u" + std::to_string(u), "i" + std::to_string(item), t});
    }
  }
  return out;
}

}  // namespace apgl
