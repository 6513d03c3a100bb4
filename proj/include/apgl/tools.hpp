#pragma once

// Exporters and diagnostics driven from the command line.

#include "apgl/dataio.hpp"
#include "apgl/graph.hpp"
#include "apgl/model.hpp"
#include "apgl/svd.hpp"
#include "apgl/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace apgl {

/// 2-D SVD projection of item rows 1..|V| of the embedding table.
Projection2D<double> project_items(const Model& model);

/// Writes `item_id,x,y` rows for items 1..|V|; returns the row count.
std::size_t export_projection(const Model& model, const std::filesystem::path& out);

struct GradcheckEntry {
  std::string name;
  Eigen::Index checked = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  double loss = 0.0;
  bool passed = false;

  std::string to_json() const;
};

struct GradcheckOptions {
  double step = 1e-5;
  /// Entries whose analytic and numeric magnitudes are both below this floor
  /// are compared in absolute terms instead.
  double magnitude_floor = 1e-6;
  double abs_tolerance = 1e-8;
  double rel_tolerance = 1e-3;
};

/// The small fixed instance: d=8, N=6, |V|=20, |U|=8, rank 4,
/// lambda1 = lambda2 = 0.1, alpha = 0.05, dropout off.
struct GradcheckInstance {
  Dataset dataset;
  SparseGraph graph;
  TrainConfig config;
};
GradcheckInstance gradcheck_instance(std::uint64_t seed);

/// Central finite differences of the full objective against the tape's
/// gradient for every trainable, unpinned scalar.
GradcheckReport gradcheck(const Dataset& ds, const SparseGraph& graph, const TrainConfig& cfg,
                          const GradcheckOptions& opts = {});

}  // namespace apgl
