#include "urvfl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "urvfl/error.hpp"

namespace urvfl {

std::string to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::urvfl: return "urvfl";
    case AttackVariant::urvfl_sync: return "urvfl_sync";
    case AttackVariant::plain_discriminator: return "plain_discriminator";
  }
  return "urvfl";
}

AttackVariant attack_variant_from_string(const std::string& s) {
  if (s == "urvfl") return AttackVariant::urvfl;
  if (s == "urvfl_sync") return AttackVariant::urvfl_sync;
  if (s == "plain_discriminator") return AttackVariant::plain_discriminator;
  throw ConfigError("unknown attack variant '" + s + "'");
}

int DacLabelMap::real(int y) const {
  if (y < 0 || y >= classes) throw ContractError("label " + std::to_string(y) + " outside [0, C)");
  return y;
}

int DacLabelMap::fake(int y) const {
  if (y < 0 || y >= classes) throw ContractError("label " + std::to_string(y) + " outside [0, C)");
  return classes + y;
}

std::pair<int, bool> DacLabelMap::decode(int index) const {
  if (index < 0 || index >= 2 * classes) throw ContractError("DAC index outside [0, 2C)");
  return index < classes ? std::make_pair(index, true) : std::make_pair(index - classes, false);
}

void AttackModels::freeze(const std::string& name) { frozen_[name] = model(name).checksum(); }

void AttackModels::unfreeze(const std::string& name) { frozen_.erase(name); }

void AttackModels::verify_frozen() const {
  for (const auto& [name, sum] : frozen_) {
    if (model(name).checksum() != sum) {
      throw ContractError("frozen model '" + name + "' was modified");
    }
  }
}

Network& AttackModels::model(const std::string& name) {
  return const_cast<Network&>(std::as_const(*this).model(name));
}

const Network& AttackModels::model(const std::string& name) const {
  if (name == "encoder") return encoder;
  if (name == "decoder") return decoder;
  if (name == "dac") return dac;
  if (name == "adversary_bottom") {
    if (!adversary_bottom) throw ContractError("adversary owns no columns and has no bottom model");
    return *adversary_bottom;
  }
  throw ContractError("unknown attack model '" + name + "'");
}

AttackModels build_attack_models(const VerticalPartition& partition, const BottomSpec& bottom,
                                 std::size_t target_count, int num_classes, AttackVariant variant,
                                 const AttackModelSpec& spec, Rng& rng) {
  if (target_count == 0) throw ContractError("attack needs at least one target column");
  AttackModels m;
  const std::size_t passive_cols = partition.all_passive_columns().size();
  const std::size_t enc_out = bottom.embedding_dim * partition.passive_count();
  m.encoder = Network::mlp(passive_cols, bottom.hidden, enc_out, bottom.activation,
                           bottom.output_activation, rng);
  std::size_t dec_in = enc_out;
  const auto& adv = partition.adversary_columns();
  if (!adv.empty()) {
    m.adversary_bottom = Network::mlp(adv.size(), bottom.hidden, bottom.embedding_dim,
                                      bottom.activation, bottom.output_activation, rng);
    dec_in += bottom.embedding_dim;
  }
  m.decoder = Network::mlp(dec_in, spec.decoder_hidden, target_count, spec.activation,
                           Activation::none, rng);
  const std::size_t heads =
      variant == AttackVariant::plain_discriminator ? 2 : static_cast<std::size_t>(2 * num_classes);
  m.dac = Network::mlp(enc_out, spec.dac_hidden, heads, spec.activation, Activation::none, rng);
  return m;
}

AttackOptimizers AttackOptimizers::uniform(const OptimizerSettings& settings) {
  return {Optimizer(settings), Optimizer(settings), Optimizer(settings), Optimizer(settings)};
}

AttackView AttackView::make(const Dataset& ds, const VerticalPartition& partition,
                            std::span<const std::size_t> target_columns) {
  const auto passive = partition.all_passive_columns();
  const std::set<std::size_t> passive_set(passive.begin(), passive.end());
  if (target_columns.empty()) throw ContractError("attack needs at least one target column");
  for (auto c : target_columns) {
    if (!passive_set.count(c)) {
      throw ContractError("target column " + std::to_string(c) + " is not held by a passive client");
    }
  }
  AttackView v;
  v.adversary = gather_cols(ds.features, partition.adversary_columns());
  v.passive = gather_cols(ds.features, passive);
  v.target = gather_cols(ds.features, target_columns);
  v.labels = ds.labels;
  return v;
}

AttackView AttackView::rows(std::span<const std::size_t> idx) const {
  AttackView v;
  v.adversary = gather_rows(adversary, idx);
  v.passive = gather_rows(passive, idx);
  v.target = gather_rows(target, idx);
  for (auto i : idx) v.labels.push_back(labels.at(i));
  return v;
}

namespace {

double reconstruction_step(AttackModels& models, const AttackView& batch, AttackOptimizers& opt) {
  Tape tape;
  std::vector<Var> parts;
  if (models.adversary_bottom) {
    parts.push_back(models.adversary_bottom->forward(tape, tape.constant(batch.adversary)));
  }
  parts.push_back(models.encoder.forward(tape, tape.constant(batch.passive)));
  auto recon = models.decoder.forward(tape, concat_features(parts));
  auto loss = mse_loss(recon, tape.constant(batch.target));
  tape.backward(loss);
  opt.encoder.step(models.encoder);
  if (models.adversary_bottom) opt.adversary.step(*models.adversary_bottom);
  opt.decoder.step(models.decoder);
  return loss.value().item();
}

void check_labels(std::span<const Tensor> embeddings, std::span<const int> labels) {
  if (embeddings.empty()) throw ContractError("no passive embeddings received");
  if (labels.size() != embeddings[0].rows()) {
    throw ContractError("missing labels: " + std::to_string(labels.size()) + " labels for a batch of " +
                        std::to_string(embeddings[0].rows()));
  }
}

// Gradient of CE(targets, D(h_p)) w.r.t. each client's embedding.
std::pair<std::vector<Tensor>, double> adversarial_gradients(Network& dac,
                                                             std::span<const Tensor> embeddings,
                                                             std::span<const int> targets) {
  Tape tape;
  std::vector<Var> inputs;
  for (const auto& h : embeddings) inputs.push_back(tape.input(Tensor(h.shape, h.values)));
  auto loss = cross_entropy_loss(dac.forward(tape, concat_features(inputs)), targets);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (std::size_t n = 0; n < inputs.size(); ++n) grads.emplace_back(embeddings[n].shape, inputs[n].grad());
  return {std::move(grads), loss.value().item()};
}

// L_D = mean CE(fake, D(h_train)) + mean CE(real, D(h_aux)); only D is stepped.
double discriminator_update(Network& dac, Optimizer& opt, const Tensor& train_embeddings,
                            std::span<const int> fake_targets, const Tensor& aux_embeddings,
                            std::span<const int> real_targets) {
  Tape tape;
  auto loss = cross_entropy_loss(dac.forward(tape, tape.constant(train_embeddings)), fake_targets);
  if (!real_targets.empty()) {
    loss = add(loss, cross_entropy_loss(dac.forward(tape, tape.constant(aux_embeddings)), real_targets));
  }
  tape.backward(loss);
  opt.step(dac);
  return loss.value().item();
}

MaliciousStep dac_step(AttackModels& models, std::span<const Tensor> embeddings,
                       std::span<const int> labels, const AttackView& aux_batch,
                       AttackOptimizers& opt) {
  check_labels(embeddings, labels);
  const DacLabelMap map{static_cast<int>(models.dac.output_dim() / 2)};
  std::vector<int> real, fake, aux_real;
  for (int y : labels) {
    real.push_back(map.real(y));
    fake.push_back(map.fake(y));
  }
  for (int y : aux_batch.labels) aux_real.push_back(map.real(y));

  MaliciousStep step;
  std::tie(step.gradients, step.malicious_loss) = adversarial_gradients(models.dac, embeddings, real);
  const Tensor aux_h = aux_batch.size() ? models.encoder.evaluate(aux_batch.passive) : Tensor();
  step.dac_loss = discriminator_update(models.dac, opt.dac, hconcat(embeddings), fake, aux_h, aux_real);
  return step;
}

}  // namespace

double pretrain_epoch(AttackModels& models, const AttackView& aux, AttackOptimizers& opt,
                      std::size_t batch_size, Rng& rng) {
  if (aux.size() == 0) throw ContractError("pretraining needs a non-empty auxiliary set");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& batch : epoch_batches(aux.size(), batch_size, rng)) {
    total += reconstruction_step(models, aux.rows(batch), opt);
    ++count;
  }
  return total / static_cast<double>(count);
}

MaliciousStep malicious_round(AttackModels& models, std::span<const Tensor> embeddings,
                              std::span<const int> labels, const AttackView& aux_batch,
                              AttackOptimizers& opt) {
  if (!models.is_frozen("encoder") ||
      (models.adversary_bottom && !models.is_frozen("adversary_bottom"))) {
    throw ContractError("malicious rounds require a frozen encoder and adversary bottom");
  }
  models.verify_frozen();
  auto step = dac_step(models, embeddings, labels, aux_batch, opt);
  models.verify_frozen();
  return step;
}

MaliciousStep sync_round(AttackModels& models, std::span<const Tensor> embeddings,
                         std::span<const int> labels, const AttackView& aux_batch,
                         AttackOptimizers& opt) {
  check_labels(embeddings, labels);
  double recon = 0.0;
  if (aux_batch.size()) recon = reconstruction_step(models, aux_batch, opt);
  auto step = dac_step(models, embeddings, labels, aux_batch, opt);
  step.recon_loss = recon;
  return step;
}

MaliciousStep plain_discriminator_round(AttackModels& models, std::span<const Tensor> embeddings,
                                        const AttackView& aux_batch, AttackOptimizers& opt) {
  if (embeddings.empty()) throw ContractError("no passive embeddings received");
  if (models.dac.output_dim() != 2) throw ContractError("plain discriminator must have 2 outputs");
  models.verify_frozen();
  constexpr int kReal = 0, kFake = 1;
  const std::size_t b = embeddings[0].rows();
  const std::vector<int> real(b, kReal), fake(b, kFake), aux_real(aux_batch.size(), kReal);
  MaliciousStep step;
  std::tie(step.gradients, step.malicious_loss) = adversarial_gradients(models.dac, embeddings, real);
  const Tensor aux_h = aux_batch.size() ? models.encoder.evaluate(aux_batch.passive) : Tensor();
  step.dac_loss = discriminator_update(models.dac, opt.dac, hconcat(embeddings), fake, aux_h, aux_real);
  models.verify_frozen();
  return step;
}

Tensor reconstruct(const AttackModels& models, const Tensor& adversary_features,
                   const Tensor& passive_embeddings) {
  std::vector<Tensor> parts;
  if (models.adversary_bottom) parts.push_back(models.adversary_bottom->evaluate(adversary_features));
  parts.push_back(passive_embeddings);
  return models.decoder.evaluate(hconcat(parts));
}

EmbeddingDistance embedding_distances(const Tensor& encoder, const Tensor& target) {
  if (encoder.shape != target.shape) {
    throw ShapeError("embedding shapes differ: " + shape_string(encoder.shape) + " vs " +
                     shape_string(target.shape));
  }
  if (encoder.rank() != 2 || encoder.rows() == 0) throw ShapeError("embedding_distances needs >= 1 row");
  EmbeddingDistance d;
  double sq = 0.0;
  for (std::size_t k = 0; k < encoder.numel(); ++k) {
    const double diff = encoder.values[k] - target.values[k];
    sq += diff * diff;
  }
  d.mse = sq / static_cast<double>(encoder.numel());
  double cos_total = 0.0;
  for (std::size_t i = 0; i < encoder.rows(); ++i) {
    const auto e = encoder.row(i);
    const auto t = target.row(i);
    double ee = 0.0, tt = 0.0, et = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      ee += e[j] * e[j];
      tt += t[j] * t[j];
      et += e[j] * t[j];
    }
    if (ee == 0.0 || tt == 0.0) {
      ++d.zero_norm_rows;
      cos_total += 1.0;
      continue;
    }
    const double cos = std::clamp(et / (std::sqrt(ee) * std::sqrt(tt)), -1.0, 1.0);
    cos_total += 1.0 - cos;
  }
  d.cosine = cos_total / static_cast<double>(encoder.rows());
  return d;
}

AttackActive::AttackActive(AttackVariant variant, AttackModels& models, AttackOptimizers& opt,
                           const AttackView& aux, std::size_t aux_batch_size, std::uint64_t seed)
    : variant_(variant),
      models_(models),
      opt_(opt),
      aux_(aux),
      aux_batch_size_(aux_batch_size),
      rng_(seed) {}

ActiveResponse AttackActive::respond(std::size_t /*round*/, std::span<const std::size_t> rows,
                                     std::span<const int> labels,
                                     std::span<const Tensor> embeddings) {
  std::vector<int> used(labels.begin(), labels.end());
  if (label_override_) {
    for (std::size_t i = 0; i < rows.size(); ++i) used[i] = label_override_->at(rows[i]);
  }
  // Aux rows drawn without replacement within the batch, independently per round.
  const std::size_t k = std::min(aux_batch_size_, aux_.size());
  std::vector<std::size_t> pool(aux_.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng_.index(pool.size() - i)]);
  pool.resize(k);
  const AttackView batch = aux_.rows(pool);

  MaliciousStep step;
  switch (variant_) {
    case AttackVariant::urvfl: step = malicious_round(models_, embeddings, used, batch, opt_); break;
    case AttackVariant::urvfl_sync: step = sync_round(models_, embeddings, used, batch, opt_); break;
    case AttackVariant::plain_discriminator:
      step = plain_discriminator_round(models_, embeddings, batch, opt_);
      break;
  }
  ActiveResponse resp;
  resp.gradients = std::move(step.gradients);
  resp.loss = step.malicious_loss;
  if (variant_ == AttackVariant::urvfl_sync) resp.extras.emplace_back("L_R", step.recon_loss);
  resp.extras.emplace_back("L_M", step.malicious_loss);
  resp.extras.emplace_back("L_D", step.dac_loss);
  return resp;
}

Tensor passive_embeddings(std::span<const Network> bottoms, const ClientViews& views) {
  std::vector<Tensor> parts;
  for (std::size_t n = 0; n < bottoms.size(); ++n) parts.push_back(bottoms[n].evaluate(views.passive[n]));
  return hconcat(parts);
}

}  // namespace urvfl
