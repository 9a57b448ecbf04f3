#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "urvfl/attack.hpp"
#include "urvfl/defend.hpp"
#include "urvfl/optimizer.hpp"

namespace urvfl {

inline constexpr int kSchemaVersion = 1;

enum class Mode { honest, urvfl, urvfl_sync, plain_discriminator };
[[nodiscard]] std::string to_string(Mode m);
[[nodiscard]] Mode mode_from_string(const std::string& s);
[[nodiscard]] bool is_attack(Mode m);
[[nodiscard]] AttackVariant attack_variant(Mode m);

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  int classes = 2;
  std::size_t dims = 8;
  std::size_t per_class = 500;
  double separation = 4.0;
  std::string csv_path;
  std::string label_column = "label";
  // Fixes data generation and splits across run seeds when set.
  std::optional<std::uint64_t> seed;
};

struct PartitionConfig {
  // [adversary, passive 1..N]
  std::vector<double> fractions{0.25, 0.75};
  bool permute = false;
};

struct SplitConfig {
  double aux_ratio = 0.1;  // 0 selects an out-of-distribution aux set
  double test_fraction = 0.3;
};

struct ModelConfig {
  std::vector<std::size_t> bottom_hidden{16};
  std::size_t embedding_dim = 8;
  std::vector<std::size_t> top_hidden{16};
  std::vector<std::size_t> decoder_hidden{32, 32};
  std::vector<std::size_t> dac_hidden{32, 32};
  Activation activation = Activation::relu;
};

struct LearningRates {
  double passive = 1e-3;
  double top = 1e-3;
  double adversary = 1e-3;
  double encoder = 1e-3;
  double decoder = 1e-3;
  double dac = 1e-3;
};

struct TrainingConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t rounds = 300;
  std::size_t batch_size = 32;
  std::size_t aux_batch_size = 32;
  std::size_t pretrain_epochs = 30;
  LearningRates lr;
};

struct SplitGuardConfig {
  bool enabled = false;
  double threshold = 0.9;
  std::size_t window = 10;
  std::size_t warmup_rounds = 20;
  double fake_probability = 0.1;
  std::size_t regular_window = 10;
};

struct ScrutinizerConfig {
  bool enabled = false;
  double threshold = 0.8;
};

struct DetectionConfig {
  SplitGuardConfig splitguard;
  ScrutinizerConfig scrutinizer;
};

struct DefenseSettings {
  double nopeek_alpha = 0.0;
  double noise_sigma = 0.0;
  std::optional<double> dp_epsilon;  // null disables, "inf" clips only
  double dp_clip = 1.0;
};

struct ReportConfig {
  std::size_t trace_every = 10;  // rounds between test-split embedding distances
  bool export_embeddings = false;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  Mode mode = Mode::urvfl;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  // "none" or "label_shuffle": the attack sees permuted labels.
  std::string control = "none";
  DatasetConfig dataset;
  PartitionConfig partition;
  SplitConfig splits;
  ModelConfig model;
  TrainingConfig training;
  DetectionConfig detection;
  DefenseSettings defense;
  ReportConfig report;

  /// Collects every problem and throws one ConfigError listing them all.
  void validate() const;
  /// Every violated constraint, one message each.
  [[nodiscard]] std::vector<std::string> problems() const;
};

[[nodiscard]] nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys take defaults; unknown keys and type mismatches are errors.
[[nodiscard]] ExperimentConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);

/// Returns a copy with the dotted `path` (e.g. "defense.noise_sigma") set to
/// `value`. The path must name an existing key.
[[nodiscard]] ExperimentConfig with_override(const ExperimentConfig& c, const std::string& path,
                                             const nlohmann::json& value);

}  // namespace urvfl
