#include "urvfl/vfl.hpp"

#include <algorithm>
#include <cmath>

#include "urvfl/error.hpp"

namespace urvfl {

void VflSystem::validate(bool with_top) const {
  partition.validate(partition.total_columns());
  if (passive_bottoms.size() != partition.passive_count()) {
    throw ShapeError("system has " + std::to_string(passive_bottoms.size()) +
                     " passive bottoms for " + std::to_string(partition.passive_count()) +
                     " passive column sets");
  }
  for (std::size_t n = 0; n < passive_bottoms.size(); ++n) {
    if (passive_bottoms[n].input_dim() != partition.passive_columns(n).size()) {
      throw ShapeError("passive bottom " + std::to_string(n) + " expects " +
                       std::to_string(passive_bottoms[n].input_dim()) + " features, owns " +
                       std::to_string(partition.passive_columns(n).size()));
    }
  }
  const auto& adv = partition.adversary_columns();
  if (adv.empty() == adversary_bottom.has_value()) {
    throw ShapeError("adversary bottom must exist exactly when the adversary owns columns");
  }
  if (adversary_bottom && adversary_bottom->input_dim() != adv.size()) {
    throw ShapeError("adversary bottom input does not match its column count");
  }
  if (with_top) {
    const std::size_t concat =
        passive_embedding_dim() + (adversary_bottom ? adversary_bottom->output_dim() : 0);
    if (top.input_dim() != concat) {
      throw ShapeError("top model expects " + std::to_string(top.input_dim()) +
                       " inputs, embeddings concatenate to " + std::to_string(concat));
    }
    if (top.output_dim() != static_cast<std::size_t>(num_classes)) {
      throw ShapeError("top model output does not match the class count");
    }
  }
}

std::size_t VflSystem::passive_embedding_dim() const {
  std::size_t d = 0;
  for (const auto& b : passive_bottoms) d += b.output_dim();
  return d;
}

VflSystem build_system(const VerticalPartition& partition, int num_classes, const BottomSpec& bottom,
                       const std::optional<TopSpec>& top, Rng& rng) {
  VflSystem sys;
  sys.partition = partition;
  sys.num_classes = num_classes;
  const auto& adv = partition.adversary_columns();
  if (!adv.empty()) {
    sys.adversary_bottom = Network::mlp(adv.size(), bottom.hidden, bottom.embedding_dim,
                                        bottom.activation, bottom.output_activation, rng);
  }
  for (std::size_t n = 0; n < partition.passive_count(); ++n) {
    sys.passive_bottoms.push_back(Network::mlp(partition.passive_columns(n).size(), bottom.hidden,
                                               bottom.embedding_dim, bottom.activation,
                                               bottom.output_activation, rng));
  }
  if (top) {
    const std::size_t in = sys.passive_embedding_dim() +
                           (sys.adversary_bottom ? sys.adversary_bottom->output_dim() : 0);
    sys.top = Network::mlp(in, top->hidden, static_cast<std::size_t>(num_classes), top->activation,
                           Activation::none, rng);
  }
  sys.validate(top.has_value());
  return sys;
}

VflOptimizers VflOptimizers::uniform(const VflSystem& sys, const OptimizerSettings& settings) {
  VflOptimizers o{Optimizer(settings), Optimizer(settings), {}};
  for (std::size_t n = 0; n < sys.passive_bottoms.size(); ++n) o.passive.emplace_back(settings);
  return o;
}

ClientViews ClientViews::make(const Dataset& ds, const VerticalPartition& partition) {
  ClientViews v;
  v.adversary = gather_cols(ds.features, partition.adversary_columns());
  for (std::size_t n = 0; n < partition.passive_count(); ++n)
    v.passive.push_back(gather_cols(ds.features, partition.passive_columns(n)));
  v.labels = ds.labels;
  return v;
}

RoundRecord protocol_round(std::size_t round, std::vector<Network>& passive_bottoms,
                           std::vector<Optimizer>& passive_optimizers, const ClientViews& views,
                           std::span<const std::size_t> rows, ActiveParty& active,
                           PassiveHooks* hooks, bool keep_tensors) {
  if (rows.empty()) throw ContractError("round batch is empty");
  const std::size_t clients = passive_bottoms.size();
  if (passive_optimizers.size() != clients || views.passive.size() != clients) {
    throw ShapeError("passive clients, optimizers and feature views disagree in count");
  }
  RoundRecord rec;
  rec.round = round;
  rec.rows.assign(rows.begin(), rows.end());

  std::vector<int> labels;
  labels.reserve(rows.size());
  for (auto r : rows) labels.push_back(views.labels.at(r));
  if (hooks) {
    if (auto fake = hooks->fake_labels(round, labels)) {
      if (fake->size() != labels.size()) throw ContractError("fake label batch has the wrong size");
      labels = std::move(*fake);
      rec.fake_batch = true;
    }
  }

  // Passive clients: forward on their own tapes, upload (possibly perturbed) embeddings.
  std::vector<Tape> tapes(clients);
  std::vector<Var> xs, hs;
  std::vector<Tensor> uploads;
  for (std::size_t n = 0; n < clients; ++n) {
    auto xv = tapes[n].constant(gather_rows(views.passive[n], rows));
    auto hv = passive_bottoms[n].forward(tapes[n], xv);
    xs.push_back(xv);
    hs.push_back(hv);
    Tensor up(hv.value().shape, hv.value().values);
    if (hooks) hooks->before_upload(round, n, up);
    uploads.push_back(std::move(up));
  }

  ActiveResponse resp = active.respond(round, rows, labels, uploads);
  if (resp.gradients.size() != clients) throw ShapeError("active party returned the wrong number of gradients");
  for (std::size_t n = 0; n < clients; ++n) {
    if (resp.gradients[n].shape != uploads[n].shape) {
      throw ShapeError("gradient for client " + std::to_string(n) + " has shape " +
                       shape_string(resp.gradients[n].shape) + ", embedding has " +
                       shape_string(uploads[n].shape));
    }
  }
  rec.loss = resp.loss;
  rec.extras = resp.extras;

  for (std::size_t n = 0; n < clients; ++n) {
    Tensor received(resp.gradients[n].shape, resp.gradients[n].values);
    if (hooks) hooks->after_download(round, n, received);
    for (std::size_t i = 0; i < received.rows(); ++i) {
      double s = 0.0;
      for (double v : received.row(i)) s += v * v;
      rec.gradient_norms.push_back(std::sqrt(s));
    }

    const double task_weight = hooks ? hooks->task_weight() : 1.0;
    Var loss = scale(sum(mul(hs[n], tapes[n].constant(received))), task_weight);
    if (hooks) {
      if (auto reg = hooks->passive_regularizer(tapes[n], n, xs[n], hs[n])) loss = add(loss, *reg);
    }
    tapes[n].backward(loss);

    if (hooks) {
      std::vector<double> flat;
      for (const auto& p : passive_bottoms[n].parameters()) flat.insert(flat.end(), p.grad.begin(), p.grad.end());
      hooks->observe({round, n, &received, &flat, labels, rec.fake_batch});
    }
    const bool update = !rec.fake_batch && (!hooks || hooks->may_update(n));
    if (update) passive_optimizers[n].step(passive_bottoms[n]);
  }

  if (keep_tensors) {
    rec.embeddings = std::move(uploads);
    rec.gradients = std::move(resp.gradients);
  }
  return rec;
}

ActiveResponse HonestActive::respond(std::size_t /*round*/, std::span<const std::size_t> rows,
                                     std::span<const int> labels,
                                     std::span<const Tensor> embeddings) {
  Tape tape;
  std::vector<Var> parts;
  if (sys_.adversary_bottom) {
    parts.push_back(sys_.adversary_bottom->forward(tape, tape.constant(gather_rows(views_.adversary, rows))));
  }
  std::vector<Var> inputs;
  for (const auto& h : embeddings) {
    inputs.push_back(tape.input(Tensor(h.shape, h.values)));
    parts.push_back(inputs.back());
  }
  auto logits = sys_.top.forward(tape, concat_features(parts));
  auto loss = cross_entropy_loss(logits, labels);
  tape.backward(loss);
  ActiveResponse resp;
  resp.loss = loss.value().item();
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    resp.gradients.emplace_back(embeddings[n].shape, inputs[n].grad());
  }
  opt_.top.step(sys_.top);
  if (sys_.adversary_bottom) opt_.adversary.step(*sys_.adversary_bottom);
  return resp;
}

RoundRecord honest_round(VflSystem& sys, const ClientViews& views, std::span<const std::size_t> rows,
                         VflOptimizers& opt, PassiveHooks* hooks, std::size_t round) {
  HonestActive active(sys, opt, views);
  return protocol_round(round, sys.passive_bottoms, opt.passive, views, rows, active, hooks, true);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t off = 0; off < n; off += batch_size) {
    const std::size_t end = std::min(n, off + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(off),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<RoundRecord> run_honest_training(VflSystem& sys, const ClientViews& train,
                                             VflOptimizers& opt, const TrainingOptions& options,
                                             PassiveHooks* hooks) {
  sys.validate(true);
  Rng rng(options.batch_seed);
  HonestActive active(sys, opt, train);
  std::vector<RoundRecord> trace;
  std::size_t round = 0;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    for (const auto& batch : epoch_batches(train.size(), options.batch_size, rng)) {
      trace.push_back(protocol_round(round++, sys.passive_bottoms, opt.passive, train, batch,
                                     active, hooks, options.keep_tensors));
    }
  }
  return trace;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

Tensor top_logits(const VflSystem& sys, const ClientViews& views) {
  std::vector<Tensor> parts;
  if (sys.adversary_bottom) parts.push_back(sys.adversary_bottom->evaluate(views.adversary));
  for (std::size_t n = 0; n < sys.passive_bottoms.size(); ++n)
    parts.push_back(sys.passive_bottoms[n].evaluate(views.passive[n]));
  return sys.top.evaluate(hconcat(parts));
}

}  // namespace

int predict(const VflSystem& sys, std::span<const double> x_row) {
  const std::size_t d = sys.partition.total_columns();
  if (x_row.size() != d) {
    throw ShapeError("predict expects " + std::to_string(d) + " features, got " +
                     std::to_string(x_row.size()));
  }
  Dataset one;
  one.features = Tensor::matrix(1, d, std::vector<double>(x_row.begin(), x_row.end()));
  one.labels = {0};
  one.num_classes = sys.num_classes;
  auto logits = top_logits(sys, ClientViews::make(one, sys.partition));
  return static_cast<int>(argmax(logits.row(0)));
}

std::vector<int> predict_batch(const VflSystem& sys, const ClientViews& views) {
  auto logits = top_logits(sys, views);
  std::vector<int> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) out.push_back(static_cast<int>(argmax(logits.row(i))));
  return out;
}

double accuracy(const VflSystem& sys, const ClientViews& views) {
  if (views.size() == 0) return 0.0;
  auto pred = predict_batch(sys, views);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == views.labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace urvfl
