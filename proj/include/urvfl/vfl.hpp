#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "urvfl/data.hpp"
#include "urvfl/network.hpp"
#include "urvfl/optimizer.hpp"
#include "urvfl/rng.hpp"

namespace urvfl {

/// Split-VFL model state. The active client holds `top` (f0) and an optional
/// `adversary_bottom` (fa, absent when it owns no columns); passive client n
/// holds `passive_bottoms[n]`. Top-model input is [h_a, h_1, ..., h_N].
struct VflSystem {
  Network top;
  std::optional<Network> adversary_bottom;
  std::vector<Network> passive_bottoms;
  VerticalPartition partition;
  int num_classes = 0;

  /// Checks partition/model dimensions. `with_top` is false in attack mode,
  /// where no f0 exists.
  void validate(bool with_top = true) const;
  [[nodiscard]] std::size_t passive_embedding_dim() const;
};

struct BottomSpec {
  std::vector<std::size_t> hidden{16};
  std::size_t embedding_dim = 8;
  Activation activation = Activation::relu;
  Activation output_activation = Activation::none;
};

struct TopSpec {
  std::vector<std::size_t> hidden{16};
  Activation activation = Activation::relu;
};

/// Builds bottoms for every client (fa mirrors the passive bottom spec) and,
/// when `top` is given, an f0 head over the concatenated embeddings.
[[nodiscard]] VflSystem build_system(const VerticalPartition& partition, int num_classes,
                                     const BottomSpec& bottom, const std::optional<TopSpec>& top,
                                     Rng& rng);

/// Per-model optimizers. Each passive client owns its own.
struct VflOptimizers {
  Optimizer top;
  Optimizer adversary;
  std::vector<Optimizer> passive;

  static VflOptimizers uniform(const VflSystem& sys, const OptimizerSettings& settings);
};

/// Everything a passive client's detector may look at after download.
struct GradientObservation {
  std::size_t round = 0;
  std::size_t client = 0;
  const Tensor* embedding_gradient = nullptr;  // post-defense, (batch, emb)
  const std::vector<double>* parameter_gradient = nullptr;  // flattened, post-defense
  std::span<const int> labels;  // oracle label channel: labels the active side was told to use
  bool fake_batch = false;
};

/// Passive-side defenses and detectors. Defaults are the undefended protocol.
class PassiveHooks {
 public:
  virtual ~PassiveHooks() = default;
  /// Replacement labels for this round (a detector's fake batch), or none.
  virtual std::optional<std::vector<int>> fake_labels(std::size_t /*round*/,
                                                      std::span<const int> /*labels*/) {
    return std::nullopt;
  }
  virtual void before_upload(std::size_t /*round*/, std::size_t /*client*/, Tensor& /*embedding*/) {}
  virtual void after_download(std::size_t /*round*/, std::size_t /*client*/, Tensor& /*gradient*/) {}
  virtual void observe(const GradientObservation& /*obs*/) {}
  [[nodiscard]] virtual bool may_update(std::size_t /*client*/) const { return true; }
  /// Passive loss = task_weight * <h, g> + regularizer(x, h).
  [[nodiscard]] virtual double task_weight() const { return 1.0; }
  virtual std::optional<Var> passive_regularizer(Tape& /*tape*/, std::size_t /*client*/,
                                                 Var /*features*/, Var /*embedding*/) {
    return std::nullopt;
  }
};

/// What the active client sends back for one round.
struct ActiveResponse {
  std::vector<Tensor> gradients;  // one per passive client, same shape as its embedding
  double loss = 0.0;
  // Attack-specific scalars (L_R, L_M, L_D) keyed by name, in insertion order.
  std::vector<std::pair<std::string, double>> extras;
};

/// The active client's side of a round: it receives the passive embeddings
/// for an agreed batch and returns one gradient per passive client.
class ActiveParty {
 public:
  virtual ~ActiveParty() = default;
  virtual ActiveResponse respond(std::size_t round, std::span<const std::size_t> rows,
                                 std::span<const int> labels,
                                 std::span<const Tensor> embeddings) = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> rows;
  std::vector<Tensor> embeddings;  // as uploaded (post-defense)
  std::vector<Tensor> gradients;   // as sent by the active client
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> extras;
  bool fake_batch = false;
  // Per-sample L2 norms of the post-defense gradients, all clients.
  std::vector<double> gradient_norms;
};

/// Per-client feature views of one dataset under a partition.
struct ClientViews {
  Tensor adversary;             // (M, |adversary cols|), possibly zero columns
  std::vector<Tensor> passive;  // (M, |cols_n|)
  std::vector<int> labels;

  static ClientViews make(const Dataset& ds, const VerticalPartition& partition);
  [[nodiscard]] std::size_t size() const { return labels.size(); }
};

/// One synchronous round: passive clients embed the agreed batch, the active
/// party responds with embedding gradients, passive clients apply them.
/// Hook order: fake_labels, before_upload, respond, after_download, observe,
/// then update unless halted or the batch was fake.
RoundRecord protocol_round(std::size_t round, std::vector<Network>& passive_bottoms,
                           std::vector<Optimizer>& passive_optimizers, const ClientViews& views,
                           std::span<const std::size_t> rows, ActiveParty& active,
                           PassiveHooks* hooks = nullptr, bool keep_tensors = true);

/// The honest active client: CE of f0 over [h_a, h_1..h_N], updates f0 and fa.
class HonestActive : public ActiveParty {
 public:
  HonestActive(VflSystem& sys, VflOptimizers& opt, const ClientViews& views)
      : sys_(sys), opt_(opt), views_(views) {}
  ActiveResponse respond(std::size_t round, std::span<const std::size_t> rows,
                         std::span<const int> labels, std::span<const Tensor> embeddings) override;

 private:
  VflSystem& sys_;
  VflOptimizers& opt_;
  const ClientViews& views_;
};

RoundRecord honest_round(VflSystem& sys, const ClientViews& views, std::span<const std::size_t> rows,
                         VflOptimizers& opt, PassiveHooks* hooks = nullptr, std::size_t round = 0);

/// Seeded shuffle of 0..n-1 cut into consecutive batches; the last batch may
/// be short.
[[nodiscard]] std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n,
                                                                  std::size_t batch_size, Rng& rng);

struct TrainingOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  std::uint64_t batch_seed = 0;
  bool keep_tensors = false;
};

std::vector<RoundRecord> run_honest_training(VflSystem& sys, const ClientViews& train,
                                             VflOptimizers& opt, const TrainingOptions& options,
                                             PassiveHooks* hooks = nullptr);

/// argmax of f0 over [fa(x_a), f_1(x_1), ..., f_N(x_N)]; ties go to the
/// lowest index.
[[nodiscard]] int predict(const VflSystem& sys, std::span<const double> x_row);
[[nodiscard]] std::vector<int> predict_batch(const VflSystem& sys, const ClientViews& views);
[[nodiscard]] double accuracy(const VflSystem& sys, const ClientViews& views);
[[nodiscard]] std::size_t argmax(std::span<const double> v);

}  // namespace urvfl
