#include "apgl/params.hpp"

#include <cmath>

namespace apgl {

Matrix& ParamRegistry::add(const std::string& name, Matrix init,
                           std::vector<Eigen::Index> pinned_rows) {
  if (index_.contains(name)) throw Error("duplicate parameter name '" + name + "'");
  for (auto r : pinned_rows) {
    if (r < 0 || r >= init.rows()) throw Error("pinned row out of range for '" + name + "'");
    init.row(r).setZero();
  }
  Entry e;
  e.name = name;
  e.grad = Matrix::Zero(init.rows(), init.cols());
  e.m = Matrix::Zero(init.rows(), init.cols());
  e.v = Matrix::Zero(init.rows(), init.cols());
  e.value = std::move(init);
  e.pinned_rows = std::move(pinned_rows);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

ParamRegistry::Entry& ParamRegistry::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return entries_[it->second];
}

const ParamRegistry::Entry& ParamRegistry::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return entries_[it->second];
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

Eigen::Index ParamRegistry::size() const {
  Eigen::Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamRegistry::save_to(Container& c, const std::string& prefix) const {
  for (const auto& e : entries_) c.put_matrix(prefix + e.name, e.value);
}

void ParamRegistry::load_from(const Container& c, const std::string& prefix) {
  for (auto& e : entries_) {
    Matrix m = c.matrix(prefix + e.name);
    if (m.rows() != e.value.rows() || m.cols() != e.value.cols()) {
      throw Error("parameter '" + e.name + "' expected " + shape_str(e.value) + " but found " +
                  shape_str(m));
    }
    e.value = std::move(m);
  }
}

void ParamRegistry::save_optimizer_state(Container& c) const {
  c.put_count("adam.step", static_cast<std::uint64_t>(step_));
  for (const auto& e : entries_) {
    c.put_matrix("adam.m." + e.name, e.m);
    c.put_matrix("adam.v." + e.name, e.v);
  }
}

void ParamRegistry::load_optimizer_state(const Container& c) {
  step_ = static_cast<long>(c.count("adam.step"));
  for (auto& e : entries_) {
    e.m = c.matrix("adam.m." + e.name);
    e.v = c.matrix("adam.v." + e.name);
  }
}

Var Bindings::bind(Tape& tape, const ParamRegistry& registry, const std::string& name,
                   bool trainable) {
  const auto& value = registry.value(name);
  Var v = trainable ? tape.leaf(value) : tape.constant(value);
  vars_[name] = v;
  return v;
}

Var Bindings::at(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("parameter '" + name + "' is not bound");
  return it->second;
}

void backprop(Var loss, ParamRegistry& registry, const Bindings& bindings) {
  Tape& tape = *loss.tape;
  tape.backward(loss);
  for (auto& e : registry.entries()) {
    if (!bindings.contains(e.name)) continue;
    const Var v = bindings.at(e.name);
    if (!tape.requires_grad(v)) continue;
    Matrix g = tape.grad(v);
    for (auto r : e.pinned_rows) g.row(r).setZero();
    if (!g.allFinite()) throw Error("non-finite gradient for parameter '" + e.name + "'");
    e.grad += g;
  }
}

void adam_step(ParamRegistry& registry, const AdamConfig& cfg) {
  if (!(cfg.lr >= 0.0) || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
    throw Error("invalid Adam configuration");
  }
  ++registry.step_;
  const double t = static_cast<double>(registry.step_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : registry.entries_) {
    e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad;
    e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * e.grad.cwiseProduct(e.grad);
    e.value.array() -= cfg.lr * (e.m.array() / c1) / ((e.v.array() / c2).sqrt() + cfg.eps);
    for (auto r : e.pinned_rows) e.value.row(r).setZero();
  }
}

Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace apgl
