#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urvfl/data.hpp"
#include "urvfl/network.hpp"
#include "urvfl/optimizer.hpp"
#include "urvfl/rng.hpp"
#include "urvfl/vfl.hpp"

namespace urvfl {

enum class AttackVariant { urvfl, urvfl_sync, plain_discriminator };

[[nodiscard]] std::string to_string(AttackVariant v);
[[nodiscard]] AttackVariant attack_variant_from_string(const std::string& s);

/// Index layout of the 2C-way DAC head: real label y -> y, fake label y -> C + y.
struct DacLabelMap {
  int classes = 0;

  [[nodiscard]] int real(int y) const;
  [[nodiscard]] int fake(int y) const;
  /// (label, is_real) for an index in [0, 2C).
  [[nodiscard]] std::pair<int, bool> decode(int index) const;
  [[nodiscard]] int width() const { return 2 * classes; }
};

/// Adversary-side networks. The encoder stands in for the concatenated
/// passive bottoms, so its output slots line up with [h_1, ..., h_N].
struct AttackModels {
  Network encoder;
  Network decoder;
  Network dac;  // 2C outputs for the DAC variants, 2 for the plain discriminator
  std::optional<Network> adversary_bottom;

  /// Records the current checksum; verify_frozen() compares against it.
  void freeze(const std::string& name);
  void unfreeze(const std::string& name);
  [[nodiscard]] bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }
  /// Throws ContractError if a frozen model's parameters changed.
  void verify_frozen() const;
  [[nodiscard]] Network& model(const std::string& name);
  [[nodiscard]] const Network& model(const std::string& name) const;

 private:
  std::map<std::string, std::uint64_t> frozen_;
};

struct AttackModelSpec {
  std::vector<std::size_t> decoder_hidden{32, 32};
  std::vector<std::size_t> dac_hidden{32, 32};
  Activation activation = Activation::relu;
};

/// The encoder and fa copy the passive bottom layout (encoder input is every
/// passive column, output the summed passive embedding width); the decoder
/// maps [h_a, h_p] to the target columns.
[[nodiscard]] AttackModels build_attack_models(const VerticalPartition& partition,
                                               const BottomSpec& bottom,
                                               std::size_t target_count, int num_classes,
                                               AttackVariant variant, const AttackModelSpec& spec,
                                               Rng& rng);

struct AttackOptimizers {
  Optimizer encoder;
  Optimizer decoder;
  Optimizer dac;
  Optimizer adversary;

  static AttackOptimizers uniform(const OptimizerSettings& settings);
};

/// Adversary-visible columns of a dataset: its own features, the passive
/// features (only meaningful for the auxiliary set it owns outright), and the
/// reconstruction targets.
struct AttackView {
  Tensor adversary;  // (M, d_a), possibly zero columns
  Tensor passive;    // (M, d_p), passive columns in client order
  Tensor target;     // (M, |targets|)
  std::vector<int> labels;

  /// `target_columns` are global column indices and must all be passive.
  static AttackView make(const Dataset& ds, const VerticalPartition& partition,
                         std::span<const std::size_t> target_columns);
  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] AttackView rows(std::span<const std::size_t> idx) const;
};

/// One pretraining pass over the auxiliary set (reconstruction loss on fe,
/// fa, fd). Returns the epoch mean of L_R.
double pretrain_epoch(AttackModels& models, const AttackView& aux, AttackOptimizers& opt,
                      std::size_t batch_size, Rng& rng);

struct MaliciousStep {
  std::vector<Tensor> gradients;  // per passive client
  double recon_loss = 0.0;        // sync variant only
  double malicious_loss = 0.0;
  double dac_loss = 0.0;
};

/// Encoder/fa frozen. L_M over the received embeddings, gradients returned
/// split per client, then only D is updated on L_D (fake term on the
/// received embeddings, real term on encoder embeddings of the aux batch).
MaliciousStep malicious_round(AttackModels& models, std::span<const Tensor> embeddings,
                              std::span<const int> labels, const AttackView& aux_batch,
                              AttackOptimizers& opt);

/// Reconstruction step on the aux batch (fe, fa, fd), then the malicious
/// step with encoder embeddings recomputed after that update.
MaliciousStep sync_round(AttackModels& models, std::span<const Tensor> embeddings,
                         std::span<const int> labels, const AttackView& aux_batch,
                         AttackOptimizers& opt);

/// Label-free baseline: 2-way real/fake discriminator over the same plumbing.
MaliciousStep plain_discriminator_round(AttackModels& models, std::span<const Tensor> embeddings,
                                        const AttackView& aux_batch, AttackOptimizers& opt);

/// fd(fa(x_a) || h_p); fa is skipped when the adversary owns no columns.
[[nodiscard]] Tensor reconstruct(const AttackModels& models, const Tensor& adversary_features,
                                 const Tensor& passive_embeddings);

struct EmbeddingDistance {
  double mse = 0.0;
  double cosine = 0.0;  // mean of (1 - cos) over rows
  std::size_t zero_norm_rows = 0;
};

/// Zero-norm rows count as cosine distance 1.
[[nodiscard]] EmbeddingDistance embedding_distances(const Tensor& encoder, const Tensor& target);

/// The malicious active client as seen by the protocol. Draws one aux batch
/// per round, independent of the training batch order.
class AttackActive : public ActiveParty {
 public:
  AttackActive(AttackVariant variant, AttackModels& models, AttackOptimizers& opt,
               const AttackView& aux, std::size_t aux_batch_size, std::uint64_t seed);

  /// Replace training labels by row (label-shuffled control).
  void override_train_labels(std::vector<int> by_row) { label_override_ = std::move(by_row); }

  ActiveResponse respond(std::size_t round, std::span<const std::size_t> rows,
                         std::span<const int> labels, std::span<const Tensor> embeddings) override;

 private:
  AttackVariant variant_;
  AttackModels& models_;
  AttackOptimizers& opt_;
  const AttackView& aux_;
  std::size_t aux_batch_size_;
  Rng rng_;
  std::optional<std::vector<int>> label_override_;
};

/// Concatenated passive embeddings [f_1(x_1), ..., f_N(x_N)].
[[nodiscard]] Tensor passive_embeddings(std::span<const Network> bottoms, const ClientViews& views);

}  // namespace urvfl
