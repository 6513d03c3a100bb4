#pragma once

// Named trainable parameters, gradient collection and the Adam update.

#include "apgl/autodiff.hpp"
#include "apgl/container.hpp"
#include "apgl/types.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace apgl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
    /// Rows held at zero (padding rows of embedding tables).
    std::vector<Eigen::Index> pinned_rows;
  };

  Matrix& add(const std::string& name, Matrix init, std::vector<Eigen::Index> pinned_rows = {});

  bool contains(const std::string& name) const { return index_.contains(name); }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Matrix& value(const std::string& name) { return entry(name).value; }
  const Matrix& value(const std::string& name) const { return entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  long step() const { return step_; }
  void zero_grad();

  /// Total number of scalar parameters.
  Eigen::Index size() const;

  void save_to(Container& c, const std::string& prefix = "param.") const;
  /// Loads every registered parameter from the container; shapes must match.
  void load_from(const Container& c, const std::string& prefix = "param.");
  void save_optimizer_state(Container& c) const;
  void load_optimizer_state(const Container& c);

  friend void adam_step(ParamRegistry& registry, const AdamConfig& cfg);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  long step_ = 0;
};

/// Parameters bound onto one tape for a forward/backward pass.
class Bindings {
 public:
  /// Binds `name` as a differentiable leaf, or as a constant when frozen.
  Var bind(Tape& tape, const ParamRegistry& registry, const std::string& name, bool trainable = true);
  Var at(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.contains(name); }
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

/// Backpropagates `loss` and adds the resulting gradients into the registry.
/// Parameters not reached by the loss receive zero. A non-finite gradient
/// throws with the parameter name.
void backprop(Var loss, ParamRegistry& registry, const Bindings& bindings);

/// Bias-corrected Adam; increments the step counter once per call.
void adam_step(ParamRegistry& registry, const AdamConfig& cfg);

/// Seeded normal(0, std) initialisation.
Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

}  // namespace apgl
