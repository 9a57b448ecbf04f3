#include "urvfl/network.hpp"

#include <cmath>
#include <cstring>

#include "urvfl/error.hpp"

namespace urvfl {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

Network::Network(std::vector<LayerSpec> layers, std::vector<Tensor> parameters)
    : layers_(std::move(layers)), parameters_(std::move(parameters)) {
  std::size_t affine = 0;
  std::size_t width = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.kind == LayerSpec::Kind::activation) continue;
    if (affine > 0 && l.in != width) {
      throw ShapeError("layer " + std::to_string(i) + " expects " + std::to_string(l.in) +
                       " inputs but previous layer produces " + std::to_string(width));
    }
    if (2 * affine + 1 >= parameters_.size()) {
      throw ShapeError("layer " + std::to_string(i) + " has no parameters");
    }
    const auto& w = parameters_[2 * affine];
    const auto& b = parameters_[2 * affine + 1];
    if (w.shape != std::vector<std::size_t>{l.in, l.out} ||
        b.shape != std::vector<std::size_t>{l.out}) {
      throw ShapeError("layer " + std::to_string(i) + " parameter shapes " + shape_string(w.shape) +
                       "/" + shape_string(b.shape) + " do not match " + std::to_string(l.in) +
                       "->" + std::to_string(l.out));
    }
    width = l.out;
    ++affine;
  }
  if (2 * affine != parameters_.size()) {
    throw ShapeError("network has " + std::to_string(parameters_.size()) + " parameter tensors for " +
                     std::to_string(affine) + " affine layers");
  }
}

Network Network::mlp(std::size_t input, std::span<const std::size_t> hidden, std::size_t output,
                     Activation hidden_act, Activation output_act, Rng& rng) {
  std::vector<std::size_t> widths{input};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(output);
  std::vector<LayerSpec> layers;
  std::vector<Tensor> params;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const std::size_t in = widths[k], out = widths[k + 1];
    if (in == 0 || out == 0) throw ShapeError("mlp layer widths must be positive");
    layers.push_back({LayerSpec::Kind::affine, in, out, Activation::none});
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w = Tensor::zeros({in, out});
    for (auto& v : w.values) v = rng.uniform(-bound, bound);
    params.push_back(std::move(w));
    params.push_back(Tensor::zeros({out}));
    const bool last = k + 2 == widths.size();
    const Activation act = last ? output_act : hidden_act;
    if (act != Activation::none) layers.push_back({LayerSpec::Kind::activation, out, out, act});
  }
  return Network(std::move(layers), std::move(params));
}

std::size_t Network::input_dim() const {
  for (const auto& l : layers_)
    if (l.kind == LayerSpec::Kind::affine) return l.in;
  return 0;
}

std::size_t Network::output_dim() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    if (it->kind == LayerSpec::Kind::affine) return it->out;
  return 0;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters_) n += p.numel();
  return n;
}

std::uint64_t Network::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parameters_) {
    for (double v : p.values) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

void Network::zero_grad() {
  for (auto& p : parameters_) p.zero_grad();
}

Var Network::forward(Tape& tape, Var x) {
  const auto& in = x.value();
  if (in.rank() != 2) {
    throw ShapeError("network input must be rank-2 (batch, features), got " +
                     shape_string(in.shape));
  }
  Var h = x;
  std::size_t affine = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.kind == LayerSpec::Kind::affine) {
      if (h.value().cols() != l.in) {
        throw ShapeError("layer " + std::to_string(i) + " expects " + std::to_string(l.in) +
                         " features, got " + std::to_string(h.value().cols()));
      }
      Var w = tape.parameter(parameters_[2 * affine]);
      Var b = tape.parameter(parameters_[2 * affine + 1]);
      h = urvfl::affine(h, w, b);
      ++affine;
    } else if (l.activation == Activation::relu) {
      h = relu(h);
    } else if (l.activation == Activation::tanh) {
      h = urvfl::tanh(h);
    }
  }
  return h;
}

Tensor Network::evaluate(const Tensor& x) const {
  if (x.rank() != 2) {
    throw ShapeError("network input must be rank-2 (batch, features), got " + shape_string(x.shape));
  }
  Tensor h(x.shape, x.values);
  std::size_t affine = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.kind == LayerSpec::Kind::affine) {
      if (h.cols() != l.in) {
        throw ShapeError("layer " + std::to_string(i) + " expects " + std::to_string(l.in) +
                         " features, got " + std::to_string(h.cols()));
      }
      const auto& w = parameters_[2 * affine];
      const auto& b = parameters_[2 * affine + 1];
      const std::size_t n = h.rows();
      Tensor out = Tensor::zeros({n, l.out});
      for (std::size_t r = 0; r < n; ++r) {
        double* o = &out.values[r * l.out];
        for (std::size_t p = 0; p < l.in; ++p) {
          const double v = h.values[r * l.in + p];
          if (v == 0.0) continue;
          const double* wr = &w.values[p * l.out];
          for (std::size_t j = 0; j < l.out; ++j) o[j] += v * wr[j];
        }
        // Same summation order as the recorded path.
        for (std::size_t j = 0; j < l.out; ++j) o[j] += b.values[j];
      }
      h = std::move(out);
      ++affine;
    } else if (l.activation == Activation::relu) {
      for (auto& v : h.values) v = v > 0.0 ? v : 0.0;
    } else if (l.activation == Activation::tanh) {
      for (auto& v : h.values) v = std::tanh(v);
    }
  }
  return h;
}

}  // namespace urvfl
