#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urvfl/tensor.hpp"

namespace urvfl {

/// Rows of features with integer class labels in [0, num_classes).
struct Dataset {
  Tensor features;  // (M, d)
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> feature_names;
  // Original label text for each class index, when loaded from a file.
  std::vector<std::string> class_names;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] std::size_t dims() const { return features.cols(); }

  /// Throws ContractError if the row counts, label range, or size minimums
  /// are violated.
  void validate() const;
  [[nodiscard]] Dataset subset(std::span<const std::size_t> rows) const;
};

struct MixtureSpec {
  int classes = 2;
  std::size_t dims = 16;
  std::size_t per_class = 100;
  double separation = 6.0;
};

/// Class c is drawn from N(mu_c, I) with mu_c = separation * u_c and u_c a
/// seeded random unit direction. Rows are grouped by class. `mean_seed`
/// picks the class means independently of the sample stream; by default it
/// equals `seed`.
[[nodiscard]] Dataset generate_gaussian_mixture(const MixtureSpec& spec, std::uint64_t seed,
                                                std::optional<std::uint64_t> mean_seed = {});

/// Reads a headed CSV. Every column except `label_column` must be numeric.
/// Labels are remapped to 0..C-1 in ascending order (numeric when every
/// label parses as a number, lexicographic otherwise). Row numbers in errors
/// count data rows from 1, excluding the header.
[[nodiscard]] Dataset load_csv_dataset(const std::filesystem::path& path,
                                       const std::string& label_column);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation
};

/// Zero mean and unit population std per column; constant columns become 0.
[[nodiscard]] std::pair<Dataset, ColumnStats> standardize(const Dataset& ds);
/// Applies previously fitted stats (same constant-column rule).
[[nodiscard]] Dataset apply_standardization(const Dataset& ds, const ColumnStats& stats);

/// Per-column affine map of [min, max] onto [-1, 1]; constant columns become 0.
[[nodiscard]] Dataset rescale_to_unit_range(const Dataset& ds);

/// Column ownership. Slot 0 belongs to the active client (the adversary) and
/// may be empty; slots 1..N belong to passive clients and are never empty.
struct VerticalPartition {
  std::vector<std::vector<std::size_t>> column_sets;

  [[nodiscard]] std::size_t passive_count() const { return column_sets.size() - 1; }
  [[nodiscard]] const std::vector<std::size_t>& adversary_columns() const { return column_sets[0]; }
  [[nodiscard]] const std::vector<std::size_t>& passive_columns(std::size_t n) const {
    return column_sets.at(n + 1);
  }
  /// All passive columns, concatenated in client order.
  [[nodiscard]] std::vector<std::size_t> all_passive_columns() const;
  [[nodiscard]] std::size_t total_columns() const;

  /// Disjoint, covering 0..d-1, passive sets non-empty.
  void validate(std::size_t d) const;
};

/// Contiguous blocks [adversary, passive 1..N]. Block sizes are rounded
/// fractions of d with the remainder going to the last client.
[[nodiscard]] VerticalPartition vertical_partition(std::size_t d, std::span<const double> fractions);

/// Same block sizes as vertical_partition, over a seeded column permutation.
[[nodiscard]] VerticalPartition permuted_partition(std::size_t d, std::span<const double> fractions,
                                                   std::uint64_t seed);

struct SplitSpec {
  // |aux| / |train|.
  double aux_ratio = 0.1;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset aux;
  Dataset train;
  Dataset test;
  // Row indices into the source dataset.
  std::vector<std::size_t> aux_rows, train_rows, test_rows;
};

/// Seeded shuffle, then test = round(test_fraction * M), and the remainder
/// divided so that |aux| / |train| is within one row of aux_ratio.
[[nodiscard]] Splits make_splits(const Dataset& ds, const SplitSpec& spec);

}  // namespace urvfl
