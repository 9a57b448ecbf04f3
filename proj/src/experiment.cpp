#include "urvfl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "urvfl/error.hpp"
#include "urvfl/metrics.hpp"

namespace urvfl {

using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::optional<double> MetricsReport::metric(const std::string& name) const {
  for (const auto& [k, v] : final_metrics)
    if (k == name) return v;
  return std::nullopt;
}

json MetricsReport::payload() const {
  json rows = json::array();
  for (const auto& r : trace) {
    rows.push_back({{"round", r.round},
                    {"loss", r.loss},
                    {"recon_loss", optional_json(r.recon_loss)},
                    {"malicious_loss", optional_json(r.malicious_loss)},
                    {"dac_loss", optional_json(r.dac_loss)},
                    {"fake_batch", r.fake_batch},
                    {"grad_norm_mean", r.grad_norm_mean},
                    {"emb_cos", optional_json(r.emb_cos)}});
  }
  json det = json::array();
  for (const auto& e : detection) {
    det.push_back({{"round", e.round},
                   {"detector", e.detector},
                   {"client", e.client},
                   {"score", e.score},
                   {"trailing_mean", e.trailing_mean},
                   {"decision", to_string(e.decision)}});
  }
  json fin = json::array();
  for (const auto& [k, v] : final_metrics) fin.push_back({k, v});
  return {{"label", label},     {"mode", to_string(mode)}, {"seed", seed},          {"config", config},
          {"trace", rows},      {"detection", det},       {"final_metrics", fin}, {"grad_norms", grad_norms.rounds}};
}

ClientMonitor::ClientMonitor(const DefenseConfig& defense, const DetectionConfig& detection, int num_classes,
                             std::size_t passive_count, std::uint64_t seed)
    : DefendedClients(defense, passive_count),
      detection_(detection),
      num_classes_(num_classes),
      halted_(passive_count, false),
      schedule_rng_(derive_seed(seed, "sg_schedule")),
      fake_rng_(derive_seed(seed, "sg_labels")) {
  const auto& sg = detection.splitguard;
  for (std::size_t n = 0; n < passive_count; ++n) {
    SgState state;
    state.fake_probability = sg.fake_probability;
    state.warmup_rounds = sg.warmup_rounds;
    state.threshold = sg.threshold;
    state.window = sg.window;
    sg_.emplace_back(state, sg.regular_window, derive_seed(seed, "sg_halving", n));
    GsState gs;
    gs.threshold = detection.scrutinizer.threshold;
    gs_.push_back(gs);
  }
}

std::optional<std::vector<int>> ClientMonitor::fake_labels(std::size_t round, std::span<const int> labels) {
  const auto& sg = detection_.splitguard;
  if (!sg.enabled || round < sg.warmup_rounds) return std::nullopt;
  if (!schedule_rng_.bernoulli(sg.fake_probability)) return std::nullopt;
  return sg_fake_batch(labels, num_classes_, fake_rng_);
}

void ClientMonitor::observe(const GradientObservation& obs) {
  const std::size_t c = obs.client;
  if (detection_.splitguard.enabled && obs.parameter_gradient) {
    if (auto s = sg_[c].observe(*obs.parameter_gradient, obs.fake_batch)) {
      const auto& st = sg_[c].state();
      events_.push_back({obs.round, "splitguard", c, *s, st.trailing_mean(), st.decision});
      if (st.decision == Decision::detected) halted_[c] = true;
    }
  }
  if (detection_.scrutinizer.enabled && !obs.fake_batch && obs.embedding_gradient) {
    if (auto s = gs_score(*obs.embedding_gradient, obs.labels)) {
      gs_[c].update(*s);
      events_.push_back({obs.round, "gradient_scrutinizer", c, *s, gs_[c].running_average(), gs_[c].decision});
      if (gs_[c].decision == Decision::detected) halted_[c] = true;
    }
  }
}

bool ClientMonitor::may_update(std::size_t client) const { return !halted_.at(client); }

std::optional<std::size_t> ClientMonitor::first_detection(const std::string& detector) const {
  for (const auto& e : events_)
    if (e.detector == detector && e.decision == Decision::detected) return e.round;
  return std::nullopt;
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  const auto& dc = config.dataset;
  if (dc.seed) seed = *dc.seed;
  const MixtureSpec spec{dc.classes, dc.dims, dc.per_class, dc.separation};
  Dataset raw = dc.source == "synthetic" ? generate_gaussian_mixture(spec, derive_seed(seed, "data"))
                                         : load_csv_dataset(dc.csv_path, dc.label_column);
  auto [norm, stats] = standardize(raw);
  auto splits = make_splits(norm, {config.splits.aux_ratio, config.splits.test_fraction, derive_seed(seed, "split")});
  PreparedData out;
  out.train = std::move(splits.train);
  out.test = std::move(splits.test);
  out.aux = std::move(splits.aux);
  if (config.splits.aux_ratio == 0.0 && is_attack(config.mode)) {
    // Out-of-distribution aux: same shape, class means drawn from another seed, 1:10 of train.
    MixtureSpec ood = spec;
    const double per = static_cast<double>(out.train.size()) / 10.0 / static_cast<double>(dc.classes);
    ood.per_class = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(per)));
    out.aux = apply_standardization(
        generate_gaussian_mixture(ood, derive_seed(seed, "aux_data"), derive_seed(seed, "aux_means")), stats);
  }
  const auto dims = raw.dims();
  out.partition = config.partition.permute
                      ? permuted_partition(dims, config.partition.fractions, derive_seed(seed, "partition"))
                      : vertical_partition(dims, config.partition.fractions);
  out.target_columns = out.partition.all_passive_columns();
  return out;
}

namespace {

OptimizerSettings settings(const ExperimentConfig& c, double lr) {
  OptimizerSettings s;
  s.kind = c.training.optimizer;
  s.learning_rate = lr;
  return s;
}

BottomSpec bottom_spec(const ExperimentConfig& c) {
  BottomSpec b;
  b.hidden = c.model.bottom_hidden;
  b.embedding_dim = c.model.embedding_dim;
  b.activation = c.model.activation;
  return b;
}

const Network& snapshot_net(const ModelSnapshot& s, const std::string& name) {
  auto it = s.networks.find(name);
  if (it == s.networks.end()) throw ContractError("snapshot has no network '" + name + "'");
  return it->second;
}

std::vector<Network> snapshot_passives(const ModelSnapshot& s, std::size_t count) {
  std::vector<Network> out;
  for (std::size_t n = 0; n < count; ++n) out.push_back(snapshot_net(s, "passive_" + std::to_string(n)));
  return out;
}

std::optional<Network> snapshot_adversary(const ModelSnapshot& s) {
  auto it = s.networks.find("adversary_bottom");
  if (it == s.networks.end()) return std::nullopt;
  return it->second;
}

struct Evaluation {
  std::vector<std::pair<std::string, double>> metrics;
  Tensor target_embeddings, encoder_embeddings;
};

Evaluation evaluate(const ExperimentConfig& config, const PreparedData& data, const ModelSnapshot& snap) {
  Evaluation ev;
  const auto n_passive = data.partition.passive_count();
  const auto passives = snapshot_passives(snap, n_passive);
  const auto test_views = ClientViews::make(data.test, data.partition);
  if (!is_attack(config.mode)) {
    VflSystem sys;
    sys.top = snapshot_net(snap, "top");
    sys.adversary_bottom = snapshot_adversary(snap);
    sys.passive_bottoms = passives;
    sys.partition = data.partition;
    sys.num_classes = data.train.num_classes;
    ev.metrics.emplace_back("test_accuracy", accuracy(sys, test_views));
    return ev;
  }
  AttackModels models;
  models.encoder = snapshot_net(snap, "encoder");
  models.decoder = snapshot_net(snap, "decoder");
  models.dac = snapshot_net(snap, "dac");
  models.adversary_bottom = snapshot_adversary(snap);

  const auto test = AttackView::make(data.test, data.partition, data.target_columns);
  ev.target_embeddings = passive_embeddings(passives, test_views);
  ev.encoder_embeddings = models.encoder.evaluate(test.passive);
  const Tensor recon = reconstruct(models, test.adversary, ev.target_embeddings);
  const auto dist = embedding_distances(ev.encoder_embeddings, ev.target_embeddings);
  const auto [t01, r01] = joint_unit_rescale(test.target, recon);
  const auto q = image_quality(t01, r01);

  const auto train_views = ClientViews::make(data.train, data.partition);
  const auto train = AttackView::make(data.train, data.partition, data.target_columns);
  const Tensor train_recon = reconstruct(models, train.adversary, passive_embeddings(passives, train_views));

  ev.metrics.emplace_back("recon_mse", recon_mse(test.target, recon));
  ev.metrics.emplace_back("emb_mse", dist.mse);
  ev.metrics.emplace_back("emb_cos", dist.cosine);
  ev.metrics.emplace_back("emb_zero_norm_rows", static_cast<double>(dist.zero_norm_rows));
  ev.metrics.emplace_back("psnr", q.psnr);
  ev.metrics.emplace_back("ssim", q.ssim);
  ev.metrics.emplace_back("train_recon_mse", recon_mse(train.target, train_recon));
  return ev;
}

}  // namespace

std::vector<std::pair<std::string, double>> evaluate_snapshot(const ExperimentConfig& config, std::uint64_t seed,
                                                              const ModelSnapshot& snapshot) {
  return evaluate(config, prepare_data(config, seed), snapshot).metrics;
}

RunOutput run_experiment(const ExperimentConfig& config, std::uint64_t seed, const std::string& label) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  const PreparedData data = prepare_data(config, seed);
  const int classes = data.train.num_classes;
  const bool attack = is_attack(config.mode);
  const auto& lr = config.training.lr;

  Rng init(derive_seed(seed, "init"));
  const BottomSpec bottom = bottom_spec(config);
  std::optional<TopSpec> top;
  if (!attack) top = TopSpec{config.model.top_hidden, config.model.activation};
  VflSystem sys = build_system(data.partition, classes, bottom, top, init);
  VflOptimizers vopt = VflOptimizers::uniform(sys, settings(config, lr.passive));
  vopt.top = Optimizer(settings(config, lr.top));
  vopt.adversary = Optimizer(settings(config, lr.adversary));

  const auto train_views = ClientViews::make(data.train, data.partition);
  const auto test_views = ClientViews::make(data.test, data.partition);

  DefenseConfig dc;
  dc.nopeek_alpha = config.defense.nopeek_alpha;
  dc.noise_sigma = config.defense.noise_sigma;
  dc.dp_epsilon = config.defense.dp_epsilon;
  dc.dp_clip = config.defense.dp_clip;
  dc.seed = derive_seed(seed, "defense");
  ClientMonitor hooks(dc, config.detection, classes, data.partition.passive_count(), derive_seed(seed, "detect"));

  MetricsReport report;
  report.label = label.empty() ? to_string(config.mode) : label;
  report.mode = config.mode;
  report.seed = seed;
  report.config = to_json(config);

  AttackModels models;
  AttackOptimizers aopt{Optimizer(settings(config, lr.encoder)), Optimizer(settings(config, lr.decoder)),
                        Optimizer(settings(config, lr.dac)), Optimizer(settings(config, lr.adversary))};
  AttackView aux;
  std::unique_ptr<ActiveParty> active;
  std::vector<std::pair<std::string, double>> extra_metrics;
  if (attack) {
    const auto variant = attack_variant(config.mode);
    AttackModelSpec spec{config.model.decoder_hidden, config.model.dac_hidden, config.model.activation};
    models = build_attack_models(data.partition, bottom, data.target_columns.size(), classes, variant, spec, init);
    aux = AttackView::make(data.aux, data.partition, data.target_columns);
    std::optional<std::vector<int>> shuffled_train;
    if (config.control == "label_shuffle") {
      Rng ctl(derive_seed(seed, "control"));
      ctl.shuffle(aux.labels);
      shuffled_train = train_views.labels;
      ctl.shuffle(*shuffled_train);
    }
    if (variant != AttackVariant::urvfl_sync && config.training.pretrain_epochs > 0) {
      Rng pre(derive_seed(seed, "pretrain"));
      std::vector<double> losses;
      for (std::size_t e = 0; e < config.training.pretrain_epochs; ++e)
        losses.push_back(pretrain_epoch(models, aux, aopt, config.training.aux_batch_size, pre));
      extra_metrics.emplace_back("pretrain_first_recon_loss", losses.front());
      extra_metrics.emplace_back("pretrain_final_recon_loss", losses.back());
    }
    if (variant != AttackVariant::urvfl_sync) {
      models.freeze("encoder");
      if (models.adversary_bottom) models.freeze("adversary_bottom");
    }
    auto a = std::make_unique<AttackActive>(variant, models, aopt, aux, config.training.aux_batch_size,
                                            derive_seed(seed, "aux_batches"));
    if (shuffled_train) a->override_train_labels(*shuffled_train);
    active = std::move(a);
  } else {
    active = std::make_unique<HonestActive>(sys, vopt, train_views);
  }

  Rng batching(derive_seed(seed, "batching"));
  std::vector<std::vector<std::size_t>> batches;
  std::size_t next = 0;
  const std::size_t rounds = config.training.rounds;
  for (std::size_t round = 0; round < rounds; ++round) {
    if (next == batches.size()) {
      batches = epoch_batches(train_views.size(), config.training.batch_size, batching);
      next = 0;
    }
    auto rec = protocol_round(round, sys.passive_bottoms, vopt.passive, train_views, batches[next++], *active,
                              &hooks, false);
    TraceRow row;
    row.round = round;
    row.loss = rec.loss;
    row.fake_batch = rec.fake_batch;
    for (const auto& [k, v] : rec.extras) {
      if (k == "L_R") row.recon_loss = v;
      if (k == "L_M") row.malicious_loss = v;
      if (k == "L_D") row.dac_loss = v;
    }
    double s = 0.0;
    for (double v : rec.gradient_norms) s += v;
    row.grad_norm_mean = rec.gradient_norms.empty() ? 0.0 : s / static_cast<double>(rec.gradient_norms.size());
    report.grad_norms.add(rec.gradient_norms);
    if (attack && (round % config.report.trace_every == 0 || round + 1 == rounds)) {
      const Tensor passive_test = gather_cols(data.test.features, data.target_columns);
      row.emb_cos = embedding_distances(models.encoder.evaluate(passive_test),
                                        passive_embeddings(sys.passive_bottoms, test_views))
                        .cosine;
    }
    report.trace.push_back(row);
  }

  RunOutput out;
  for (std::size_t n = 0; n < sys.passive_bottoms.size(); ++n)
    out.snapshot.networks.emplace("passive_" + std::to_string(n), sys.passive_bottoms[n]);
  if (attack) {
    out.snapshot.networks.emplace("encoder", models.encoder);
    out.snapshot.networks.emplace("decoder", models.decoder);
    out.snapshot.networks.emplace("dac", models.dac);
    if (models.adversary_bottom) out.snapshot.networks.emplace("adversary_bottom", *models.adversary_bottom);
  } else {
    out.snapshot.networks.emplace("top", sys.top);
    if (sys.adversary_bottom) out.snapshot.networks.emplace("adversary_bottom", *sys.adversary_bottom);
  }

  auto ev = evaluate(config, data, out.snapshot);
  report.final_metrics = ev.metrics;
  const std::size_t tail = std::min<std::size_t>(10, report.trace.size());
  double tail_loss = 0.0;
  for (std::size_t i = report.trace.size() - tail; i < report.trace.size(); ++i) tail_loss += report.trace[i].loss;
  report.final_metrics.emplace_back("final_loss", tail_loss / static_cast<double>(tail));
  for (auto& m : extra_metrics) report.final_metrics.push_back(m);

  if (config.detection.splitguard.enabled) {
    double worst = 1.0;
    std::size_t scores = 0;
    for (const auto& sg : hooks.splitguards()) {
      scores += sg.state().score_history.size();
      if (!sg.state().score_history.empty()) worst = std::min(worst, sg.state().trailing_mean());
    }
    report.final_metrics.emplace_back("sg_scores", static_cast<double>(scores));
    if (scores) report.final_metrics.emplace_back("sg_trailing_mean", worst);
    const auto first = hooks.first_detection("splitguard");
    report.final_metrics.emplace_back("sg_detected", first ? 1.0 : 0.0);
    if (first) report.final_metrics.emplace_back("sg_detection_round", static_cast<double>(*first));
  }
  if (config.detection.scrutinizer.enabled) {
    double worst = 1.0;
    std::size_t scores = 0;
    for (const auto& gs : hooks.scrutinizers()) {
      scores += gs.running_scores.size();
      if (!gs.running_scores.empty()) worst = std::min(worst, gs.running_average());
    }
    report.final_metrics.emplace_back("gs_scores", static_cast<double>(scores));
    if (scores) report.final_metrics.emplace_back("gs_running_average", worst);
    const auto first = hooks.first_detection("gradient_scrutinizer");
    report.final_metrics.emplace_back("gs_detected", first ? 1.0 : 0.0);
    if (first) report.final_metrics.emplace_back("gs_detection_round", static_cast<double>(*first));
  }
  report.detection = hooks.events();
  out.test_target_embeddings = std::move(ev.target_embeddings);
  out.test_encoder_embeddings = std::move(ev.encoder_embeddings);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.report = std::move(report);
  return out;
}

std::vector<RunOutput> run_jobs(const std::vector<Job>& jobs, unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  for (const auto& j : jobs) j.config.validate();
  std::vector<RunOutput> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        out[i] = run_experiment(jobs[i].config, jobs[i].seed, jobs[i].label);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<RunOutput> run_all_seeds(const ExperimentConfig& config, unsigned threads) {
  std::vector<Job> jobs;
  for (auto s : config.seeds) jobs.push_back({config, s, to_string(config.mode)});
  return run_jobs(jobs, threads);
}

std::vector<RunOutput> sweep(const ExperimentConfig& config, const std::string& axis,
                             const std::vector<json>& values, unsigned threads) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<Job> jobs;
  for (const auto& v : values) {
    auto c = with_override(config, axis, v);
    for (auto s : c.seeds) jobs.push_back({c, s, axis + "=" + v.dump()});
  }
  return run_jobs(jobs, threads);
}

std::vector<SummaryRow> summarize(const std::vector<MetricsReport>& reports) {
  std::vector<std::string> labels, metrics;
  for (const auto& r : reports) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
    for (const auto& [k, v] : r.final_metrics)
      if (std::find(metrics.begin(), metrics.end(), k) == metrics.end()) metrics.push_back(k);
  }
  std::vector<SummaryRow> rows;
  for (const auto& l : labels) {
    for (const auto& m : metrics) {
      std::vector<double> vals;
      for (const auto& r : reports)
        if (r.label == l)
          if (auto v = r.metric(m)) vals.push_back(*v);
      if (vals.empty()) continue;
      rows.push_back({l, m, vals.size(), mean(vals), sample_std(vals)});
    }
  }
  return rows;
}

}  // namespace urvfl
