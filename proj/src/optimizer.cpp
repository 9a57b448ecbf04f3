#include "urvfl/optimizer.hpp"

#include <cmath>

#include "urvfl/error.hpp"

namespace urvfl {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

Optimizer::Optimizer(OptimizerSettings settings) : settings_(settings) {
  if (!(settings_.learning_rate >= 0.0)) throw ContractError("learning rate must be >= 0");
}

void Optimizer::step(std::vector<Tensor>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.grad.size() != p.values.size()) {
      throw ShapeError("parameter " + std::to_string(i) + " of shape " + shape_string(p.shape) +
                       " has gradient of size " + std::to_string(p.grad.size()));
    }
    for (std::size_t k = 0; k < p.grad.size(); ++k) {
      if (!std::isfinite(p.grad[k])) {
        throw NumericError("non-finite gradient " + std::to_string(p.grad[k]) + " in parameter " +
                           std::to_string(i) + " entry " + std::to_string(k));
      }
    }
  }
  if (settings_.kind == OptimizerKind::adam) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ShapeError("optimizer bound to a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (m_[i].size() != params[i].numel()) {
        throw ShapeError("moment buffer " + std::to_string(i) + " does not match its parameter");
      }
    }
  }
  ++step_;
  const double lr = settings_.learning_rate;
  if (settings_.kind == OptimizerKind::sgd) {
    for (auto& p : params)
      for (std::size_t k = 0; k < p.numel(); ++k) p.values[k] -= lr * p.grad[k];
    return;
  }
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double g = p.grad[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.values[k] -= lr * mhat / (std::sqrt(vhat) + settings_.epsilon);
    }
  }
}

}  // namespace urvfl
