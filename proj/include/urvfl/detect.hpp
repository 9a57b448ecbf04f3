#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urvfl/rng.hpp"
#include "urvfl/tensor.hpp"

namespace urvfl {

enum class Decision { undetected, detected };
[[nodiscard]] std::string to_string(Decision d);

/// Replaces every label by a uniform draw over the other C-1 classes.
[[nodiscard]] std::vector<int> sg_fake_batch(std::span<const int> labels, int num_classes, Rng& rng);

/// SplitGuard-style score in [0, 1]: how far the fake-batch gradients sit from
/// the regular ones, relative to two random halves of the regular set.
[[nodiscard]] double sg_score(std::span<const std::vector<double>> fake,
                              std::span<const std::vector<double>> regular, Rng& rng);

/// Angle between two vectors in [0, pi]; 0 when either is the zero vector.
[[nodiscard]] double vector_angle(std::span<const double> a, std::span<const double> b);

struct SgState {
  double fake_probability = 0.1;
  std::size_t warmup_rounds = 20;
  double threshold = 0.9;
  std::size_t window = 10;
  std::vector<double> score_history;
  Decision decision = Decision::undetected;

  /// Mean of the last `window` scores (fewer if the history is shorter); NaN if empty.
  [[nodiscard]] double trailing_mean() const;
  /// Appends a score; flips to detected once the trailing mean of a full
  /// window drops below threshold. Never reverts.
  void update(double score);
};

/// Per-passive-client SplitGuard detector.
class SplitGuard {
 public:
  SplitGuard(SgState settings, std::size_t regular_window, std::uint64_t seed);

  /// Called after each round with this client's flattened bottom-model
  /// gradient. Fake rounds are scored against the recent regular ones.
  /// Returns the score when one was emitted.
  std::optional<double> observe(std::span<const double> gradient, bool fake_batch);
  [[nodiscard]] const SgState& state() const { return state_; }

 private:
  SgState state_;
  std::size_t regular_window_;
  std::vector<std::vector<double>> regular_;
  Rng rng_;
};

/// Gradient-Scrutinizer-style score in [0, 1] from per-sample gradient rows:
/// different-label pairs should be further apart than same-label pairs.
/// Empty when the batch has < 2 samples or < 2 distinct labels.
[[nodiscard]] std::optional<double> gs_score(const Tensor& gradients, std::span<const int> labels);

struct GsState {
  double threshold = 0.8;
  std::vector<double> running_scores;
  Decision decision = Decision::undetected;

  [[nodiscard]] double running_average() const;
  void update(double score);
};

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

/// Per-round L2 norms of received embedding gradients, one vector per round.
struct GradNormProfile {
  std::vector<std::vector<double>> rounds;

  void add(std::span<const double> round_norms);
  [[nodiscard]] std::vector<double> all() const;
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] Histogram histogram(std::size_t bins) const;
  /// One uniformly drawn norm per round over the last `trailing` rounds
  /// (every round when 0).
  [[nodiscard]] std::vector<double> thinned(std::size_t trailing, Rng& rng) const;
};

/// Two-sample Kolmogorov-Smirnov statistic sup|F1 - F2|.
[[nodiscard]] double ks_statistic(std::span<const double> a, std::span<const double> b);
/// c(alpha) * sqrt((n + m) / (n m)) with c(alpha) = sqrt(-ln(alpha / 2) / 2).
[[nodiscard]] double ks_critical_value(std::size_t n, std::size_t m, double alpha);
/// KS between all norms of two profiles; both need at least 100 norms.
[[nodiscard]] double compare_profiles(const GradNormProfile& a, const GradNormProfile& b);

struct ProfileTest {
  double ks = 0.0;
  double critical = 0.0;
  bool flagged = false;  // ks > critical
};

/// Baseline-vs-live check on thinned profiles (see GradNormProfile::thinned),
/// at significance `alpha`. Each thinned sample needs at least 100 values.
[[nodiscard]] ProfileTest profile_test(const GradNormProfile& baseline, const GradNormProfile& live,
                                       double alpha, std::size_t trailing_rounds, std::uint64_t seed);

}  // namespace urvfl
