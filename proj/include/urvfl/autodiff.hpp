#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "urvfl/tensor.hpp"

namespace urvfl {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const std::vector<double>& grad() const;
};

/// Single-use reverse-mode recording. Every op appends a node; backward()
/// walks the nodes in reverse once and then the tape is consumed.
///
/// Parameters are bound by reference: backward() overwrites the `grad` of each
/// bound parameter (zero when the loss does not reach it). The same parameter
/// bound several times accumulates across its bindings.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that receives no gradient.
  Var constant(Tensor t);
  /// A differentiable input; its gradient is readable through Var::grad().
  Var input(Tensor t);
  /// Binds an externally owned parameter. The tensor must outlive backward().
  Var parameter(Tensor& p);

  void backward(Var loss);

  [[nodiscard]] bool consumed() const { return consumed_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Op plumbing, used by the free functions below.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] const std::vector<double>& grad(std::size_t id) const;
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, zero-initialized on first access during backward.
  std::vector<double>& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor* parameter = nullptr;
    bool requires_grad = false;
  };

  void check_open() const;

  std::deque<Node> nodes_;  // stable references across push()
  bool consumed_ = false;
};

// Linear algebra on rank-2 values.
Var matmul(Var a, Var b);
/// x·W + b with W of shape (in, out) and b of shape (out).
Var affine(Var x, Var weight, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

// Elementwise nonlinearities.
Var relu(Var a);
Var tanh(Var a);
/// sqrt with a zero gradient where the input is <= 0 (and value clamped to 0).
Var sqrt(Var a);

// Reductions to a scalar.
Var sum(Var a);
Var mean(Var a);

// Feature-axis plumbing.
/// Concatenates rank-2 tensors along the feature axis, order preserved.
Var concat_features(std::span<const Var> parts);
Var slice_features(Var a, std::size_t begin, std::size_t count);

// Losses.
/// Mean of squared elementwise differences over every entry.
Var mse_loss(Var pred, Var target);
/// Mean over rows of -log softmax(logits)[target], log-sum-exp stabilized.
Var cross_entropy_loss(Var logits, std::span<const int> targets);

// Distance-matrix ops used by distance correlation.
/// Euclidean distances between all row pairs, shape (n, n).
Var pairwise_distances(Var a);
/// Subtract row means and column means, add the grand mean.
Var double_center(Var a);

}  // namespace urvfl
