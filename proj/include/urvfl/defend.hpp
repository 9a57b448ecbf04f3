#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "urvfl/autodiff.hpp"
#include "urvfl/rng.hpp"
#include "urvfl/vfl.hpp"

namespace urvfl {

struct DefenseConfig {
  double nopeek_alpha = 0.0;             // 0 disables Nopeek
  double noise_sigma = 0.0;              // 0 disables obfuscation
  std::optional<double> dp_epsilon;      // unset disables DP; infinity clips without noise
  double dp_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Distance correlation between the rows of x and h (n >= 3). Differentiable
/// through both arguments; 0 when either distance variance vanishes.
Var dcor(Var x, Var h);
[[nodiscard]] double dcor(const Tensor& x, const Tensor& h);

/// alpha * dcor + (1 - alpha) * task.
Var nopeek_loss(Var task_loss, Var dcor_value, double alpha);
[[nodiscard]] double nopeek_loss(double task_loss, double dcor_value, double alpha);

/// h += N(0, sigma^2) elementwise.
void obfuscate_embeddings(Tensor& h, double sigma, Rng& rng);

/// Each row clipped to L1 norm <= clip, then Laplace(clip / epsilon) noise
/// per element. An infinite epsilon only clips.
void dp_laplace_gradients(Tensor& g, double epsilon, double clip, Rng& rng);

/// Passive-side defenses as protocol hooks, one noise generator per client.
class DefendedClients : public PassiveHooks {
 public:
  DefendedClients(DefenseConfig config, std::size_t passive_count);

  void before_upload(std::size_t round, std::size_t client, Tensor& embedding) override;
  void after_download(std::size_t round, std::size_t client, Tensor& gradient) override;
  [[nodiscard]] double task_weight() const override { return 1.0 - config_.nopeek_alpha; }
  std::optional<Var> passive_regularizer(Tape& tape, std::size_t client, Var features,
                                         Var embedding) override;
  [[nodiscard]] const DefenseConfig& config() const { return config_; }

 private:
  DefenseConfig config_;
  std::vector<Rng> embedding_rngs_;
  std::vector<Rng> gradient_rngs_;
};

}  // namespace urvfl
