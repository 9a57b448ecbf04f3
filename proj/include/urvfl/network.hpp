#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "urvfl/autodiff.hpp"
#include "urvfl/rng.hpp"
#include "urvfl/tensor.hpp"

namespace urvfl {

enum class Activation { none, relu, tanh };

[[nodiscard]] std::string to_string(Activation a);
[[nodiscard]] Activation activation_from_string(const std::string& s);

struct LayerSpec {
  enum class Kind { affine, activation };
  Kind kind = Kind::affine;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::none;
};

/// Ordered stack of affine and activation layers. Affine layer k owns
/// parameters[2k] (weight, in x out) and parameters[2k+1] (bias, out).
class Network {
 public:
  Network() = default;
  Network(std::vector<LayerSpec> layers, std::vector<Tensor> parameters);

  /// Affine layers of widths input -> hidden... -> output, `hidden_act` after
  /// every hidden affine, `output_act` after the last one. Weights uniform in
  /// +-sqrt(6/(fan_in+fan_out)), biases zero.
  static Network mlp(std::size_t input, std::span<const std::size_t> hidden, std::size_t output,
                     Activation hidden_act, Activation output_act, Rng& rng);

  /// Records the forward pass on `tape`, binding every parameter.
  Var forward(Tape& tape, Var x);
  /// Forward pass that records nothing and leaves gradients untouched.
  [[nodiscard]] Tensor evaluate(const Tensor& x) const;

  [[nodiscard]] std::size_t input_dim() const;
  [[nodiscard]] std::size_t output_dim() const;
  [[nodiscard]] bool empty() const { return layers_.empty(); }
  [[nodiscard]] const std::vector<LayerSpec>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Tensor>& parameters() { return parameters_; }
  [[nodiscard]] const std::vector<Tensor>& parameters() const { return parameters_; }
  [[nodiscard]] std::size_t parameter_count() const;
  /// FNV-1a over the raw parameter bytes; used to assert freezes.
  [[nodiscard]] std::uint64_t checksum() const;

  void zero_grad();

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Tensor> parameters_;
};

}  // namespace urvfl
