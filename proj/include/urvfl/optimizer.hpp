#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "urvfl/network.hpp"
#include "urvfl/tensor.hpp"

namespace urvfl {

enum class OptimizerKind { sgd, adam };

[[nodiscard]] std::string to_string(OptimizerKind k);
[[nodiscard]] OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Applies p <- update(p, p.grad) to a fixed parameter list. Adam moment
/// buffers are allocated on the first step and bound to those shapes.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerSettings settings);

  void step(std::vector<Tensor>& params);
  void step(Network& net) { step(net.parameters()); }

  [[nodiscard]] const OptimizerSettings& settings() const { return settings_; }
  [[nodiscard]] std::uint64_t steps() const { return step_; }
  void set_learning_rate(double lr) { settings_.learning_rate = lr; }

 private:
  OptimizerSettings settings_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

}  // namespace urvfl
