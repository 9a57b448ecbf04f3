#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "urvfl/config.hpp"
#include "urvfl/detect.hpp"
#include "urvfl/defend.hpp"

namespace urvfl {

struct TraceRow {
  std::size_t round = 0;
  double loss = 0.0;
  std::optional<double> recon_loss;
  std::optional<double> malicious_loss;
  std::optional<double> dac_loss;
  bool fake_batch = false;
  double grad_norm_mean = 0.0;
  std::optional<double> emb_cos;  // test split, every trace_every rounds
};

struct DetectionEvent {
  std::size_t round = 0;
  std::string detector;  // "splitguard" or "gradient_scrutinizer"
  std::size_t client = 0;
  double score = 0.0;
  double trailing_mean = 0.0;
  Decision decision = Decision::undetected;
};

struct MetricsReport {
  std::string label;  // run group, e.g. the swept value
  Mode mode = Mode::honest;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<TraceRow> trace;
  std::vector<DetectionEvent> detection;
  std::vector<std::pair<std::string, double>> final_metrics;  // stable order
  GradNormProfile grad_norms;
  double wall_clock_seconds = 0.0;

  [[nodiscard]] std::optional<double> metric(const std::string& name) const;
  /// Everything except wall-clock time; what determinism is judged on.
  [[nodiscard]] nlohmann::json payload() const;
};

/// Named networks at the end of a run ("passive_0", "encoder", "decoder",
/// "adversary_bottom", "dac", "top").
struct ModelSnapshot {
  std::map<std::string, Network> networks;
};

struct RunOutput {
  MetricsReport report;
  ModelSnapshot snapshot;
  Tensor test_target_embeddings;   // f_p on the test split (attack modes)
  Tensor test_encoder_embeddings;  // fe on the test split (attack modes)
};

/// Passive clients' defenses plus SplitGuard / Gradient Scrutinizer. A client
/// stops updating once any of its detectors has fired.
class ClientMonitor : public DefendedClients {
 public:
  ClientMonitor(const DefenseConfig& defense, const DetectionConfig& detection, int num_classes,
                std::size_t passive_count, std::uint64_t seed);

  std::optional<std::vector<int>> fake_labels(std::size_t round, std::span<const int> labels) override;
  void observe(const GradientObservation& obs) override;
  [[nodiscard]] bool may_update(std::size_t client) const override;

  [[nodiscard]] const std::vector<DetectionEvent>& events() const { return events_; }
  [[nodiscard]] const std::vector<SplitGuard>& splitguards() const { return sg_; }
  [[nodiscard]] const std::vector<GsState>& scrutinizers() const { return gs_; }
  [[nodiscard]] std::optional<std::size_t> first_detection(const std::string& detector) const;

 private:
  DetectionConfig detection_;
  int num_classes_;
  std::vector<SplitGuard> sg_;
  std::vector<GsState> gs_;
  std::vector<bool> halted_;
  Rng schedule_rng_, fake_rng_;
  std::vector<DetectionEvent> events_;
};

/// Data prepared for one seed: standardized splits, the aux set the
/// adversary holds, and the partition.
struct PreparedData {
  Dataset aux, train, test;
  VerticalPartition partition;
  std::vector<std::size_t> target_columns;
};

[[nodiscard]] PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

/// One seed of one config.
[[nodiscard]] RunOutput run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                       const std::string& label = "");

/// Final metrics from saved networks and the regenerated test split.
[[nodiscard]] std::vector<std::pair<std::string, double>> evaluate_snapshot(const ExperimentConfig& config,
                                                                            std::uint64_t seed,
                                                                            const ModelSnapshot& snapshot);

struct Job {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string label;
};

/// Runs independent jobs on up to `threads` workers (0 = hardware
/// concurrency); results keep job order.
[[nodiscard]] std::vector<RunOutput> run_jobs(const std::vector<Job>& jobs, unsigned threads = 0);

/// Every seed of one config.
[[nodiscard]] std::vector<RunOutput> run_all_seeds(const ExperimentConfig& config, unsigned threads = 0);

/// One job per (value, seed). Labels read "<axis>=<value>".
[[nodiscard]] std::vector<RunOutput> sweep(const ExperimentConfig& config, const std::string& axis,
                                           const std::vector<nlohmann::json>& values, unsigned threads = 0);

struct SummaryRow {
  std::string label;
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample std
};

/// Mean and sample std of every final metric, grouped by label.
[[nodiscard]] std::vector<SummaryRow> summarize(const std::vector<MetricsReport>& reports);

}  // namespace urvfl
