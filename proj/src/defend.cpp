#include "urvfl/defend.hpp"

#include <cmath>

#include "urvfl/error.hpp"

namespace urvfl {

void DefenseConfig::validate() const {
  if (!(nopeek_alpha >= 0.0 && nopeek_alpha <= 1.0)) throw ConfigError("nopeek_alpha must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (dp_epsilon && !(*dp_epsilon > 0.0)) throw ConfigError("dp_epsilon must be positive");
  if (!(dp_clip > 0.0)) throw ConfigError("dp_clip must be positive");
}

Var dcor(Var x, Var h) {
  const auto n = x.value().rows();
  if (n < 3 || h.value().rows() != n) {
    throw ContractError("dcor needs equal row counts of at least 3");
  }
  Var a = double_center(pairwise_distances(x));
  Var b = double_center(pairwise_distances(h));
  Var vxy = mean(mul(a, b));
  Var vxx = mean(mul(a, a));
  Var vyy = mean(mul(b, b));
  if (vxx.value().item() <= 0.0 || vyy.value().item() <= 0.0) return x.tape->constant(Tensor::scalar(0.0));
  return sqrt(div(vxy, sqrt(mul(vxx, vyy))));
}

double dcor(const Tensor& x, const Tensor& h) {
  Tape tape;
  return dcor(tape.constant(x), tape.constant(h)).value().item();
}

Var nopeek_loss(Var task_loss, Var dcor_value, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("nopeek alpha must lie in [0, 1]");
  if (alpha == 0.0) return task_loss;
  if (alpha == 1.0) return dcor_value;
  return add(scale(dcor_value, alpha), scale(task_loss, 1.0 - alpha));
}

double nopeek_loss(double task_loss, double dcor_value, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("nopeek alpha must lie in [0, 1]");
  if (alpha == 0.0) return task_loss;
  if (alpha == 1.0) return dcor_value;
  return alpha * dcor_value + (1.0 - alpha) * task_loss;
}

void obfuscate_embeddings(Tensor& h, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ContractError("sigma must be non-negative");
  if (sigma == 0.0) return;
  for (auto& v : h.values) v += sigma * rng.normal();
}

void dp_laplace_gradients(Tensor& g, double epsilon, double clip, Rng& rng) {
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  if (!(clip > 0.0)) throw ContractError("clip must be positive");
  if (g.rank() != 2) throw ShapeError("dp_laplace_gradients expects (batch, dim)");
  const std::size_t cols = g.cols();
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double l1 = 0.0;
    for (std::size_t j = 0; j < cols; ++j) l1 += std::abs(g.at(i, j));
    if (l1 > clip) {
      const double f = clip / l1;
      for (std::size_t j = 0; j < cols; ++j) g.at(i, j) *= f;
    }
  }
  if (std::isinf(epsilon)) return;
  const double b = clip / epsilon;
  for (auto& v : g.values) v += rng.laplace(b);
}

DefendedClients::DefendedClients(DefenseConfig config, std::size_t passive_count)
    : config_(std::move(config)) {
  config_.validate();
  for (std::size_t n = 0; n < passive_count; ++n) {
    embedding_rngs_.emplace_back(derive_seed(config_.seed, "obfuscation", n));
    gradient_rngs_.emplace_back(derive_seed(config_.seed, "dp", n));
  }
}

void DefendedClients::before_upload(std::size_t, std::size_t client, Tensor& embedding) {
  if (config_.noise_sigma > 0.0) obfuscate_embeddings(embedding, config_.noise_sigma, embedding_rngs_.at(client));
}

void DefendedClients::after_download(std::size_t, std::size_t client, Tensor& gradient) {
  if (config_.dp_epsilon) dp_laplace_gradients(gradient, *config_.dp_epsilon, config_.dp_clip, gradient_rngs_.at(client));
}

std::optional<Var> DefendedClients::passive_regularizer(Tape&, std::size_t, Var features, Var embedding) {
  if (config_.nopeek_alpha == 0.0 || features.value().rows() < 3) return std::nullopt;
  return scale(dcor(features, embedding), config_.nopeek_alpha);
}

}  // namespace urvfl
