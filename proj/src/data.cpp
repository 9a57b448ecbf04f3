#include "urvfl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "urvfl/error.hpp"
#include "urvfl/rng.hpp"

namespace urvfl {

void Dataset::validate() const {
  if (features.rank() != 2) throw ContractError("dataset features must be rank-2");
  if (features.rows() != labels.size()) {
    throw ContractError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                        std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ContractError("dataset must have at least one row");
  if (features.cols() < 2) throw ContractError("dataset must have at least two feature columns");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                          " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = gather_rows(features, rows);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(labels.at(r));
  out.num_classes = num_classes;
  out.feature_names = feature_names;
  out.class_names = class_names;
  return out;
}

Dataset generate_gaussian_mixture(const MixtureSpec& spec, std::uint64_t seed,
                                  std::optional<std::uint64_t> mean_seed) {
  if (spec.classes < 2 || spec.dims < 2 || spec.per_class < 2 || !(spec.separation > 0.0)) {
    throw ContractError("gaussian mixture needs classes >= 2, dims >= 2, per_class >= 2, separation > 0");
  }
  Rng mean_rng(derive_seed(mean_seed.value_or(seed), "mixture-means"));
  std::vector<std::vector<double>> means(static_cast<std::size_t>(spec.classes),
                                         std::vector<double>(spec.dims));
  for (auto& mu : means) {
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& v : mu) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (auto& v : mu) v *= spec.separation / norm;
  }
  Rng rng(derive_seed(seed, "mixture-samples"));
  const std::size_t m = spec.per_class * static_cast<std::size_t>(spec.classes);
  Dataset ds;
  ds.num_classes = spec.classes;
  ds.features = Tensor::zeros({m, spec.dims});
  ds.labels.reserve(m);
  std::size_t row = 0;
  for (int c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < spec.per_class; ++k, ++row) {
      for (std::size_t j = 0; j < spec.dims; ++j) {
        ds.features.at(row, j) = means[static_cast<std::size_t>(c)][j] + rng.normal();
      }
      ds.labels.push_back(c);
    }
  }
  for (std::size_t j = 0; j < spec.dims; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_real(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw ParseError("'" + path.string() + "' is empty");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw ParseError("label column '" + label_column + "' not found in '" + path.string() + "'");
  }
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());

  Dataset ds;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != label_idx) ds.feature_names.push_back(header[j]);
  const std::size_t d = ds.feature_names.size();

  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      auto cell = trim(cells[j]);
      if (j == label_idx) {
        if (cell.empty()) throw ParseError("row " + std::to_string(row) + " has an empty label");
        raw_labels.push_back(cell);
        continue;
      }
      auto v = parse_real(cell);
      if (!v) {
        throw ParseError("non-numeric value '" + cell + "' at row " + std::to_string(row) +
                         ", column \"" + header[j] + "\"");
      }
      values.push_back(*v);
    }
  }
  if (row == 0) throw ParseError("'" + path.string() + "' has a header but no data rows");

  std::vector<std::string> distinct = raw_labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const bool numeric = std::all_of(distinct.begin(), distinct.end(),
                                   [](const std::string& s) { return parse_real(s).has_value(); });
  if (numeric) {
    std::sort(distinct.begin(), distinct.end(), [](const std::string& a, const std::string& b) {
      return *parse_real(a) < *parse_real(b);
    });
  }
  std::map<std::string, int> index;
  for (std::size_t c = 0; c < distinct.size(); ++c) index[distinct[c]] = static_cast<int>(c);

  ds.features = Tensor::matrix(row, d, std::move(values));
  for (const auto& l : raw_labels) ds.labels.push_back(index[l]);
  ds.num_classes = static_cast<int>(distinct.size());
  ds.class_names = std::move(distinct);
  return ds;
}

std::pair<Dataset, ColumnStats> standardize(const Dataset& ds) {
  const std::size_t m = ds.features.rows(), d = ds.features.cols();
  if (m < 2) throw ContractError("standardize needs at least two rows");
  ColumnStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += ds.features.at(i, j);
    const double mu = s / static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double c = ds.features.at(i, j) - mu;
      ss += c * c;
    }
    stats.mean[j] = mu;
    stats.std[j] = std::sqrt(ss / static_cast<double>(m));
  }
  Dataset out = apply_standardization(ds, stats);
  return {std::move(out), std::move(stats)};
}

Dataset apply_standardization(const Dataset& ds, const ColumnStats& stats) {
  const std::size_t m = ds.features.rows(), d = ds.features.cols();
  if (stats.mean.size() != d || stats.std.size() != d) {
    throw ShapeError("column stats cover " + std::to_string(stats.mean.size()) + " columns, data has " +
                     std::to_string(d));
  }
  Dataset out = ds;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = stats.std[j];
      // Relative guard: a column whose spread is rounding noise is constant.
      const bool constant = sd <= 1e-12 * std::max(1.0, std::abs(stats.mean[j]));
      out.features.at(i, j) = constant ? 0.0 : (ds.features.at(i, j) - stats.mean[j]) / sd;
    }
  return out;
}

Dataset rescale_to_unit_range(const Dataset& ds) {
  const std::size_t m = ds.features.rows(), d = ds.features.cols();
  Dataset out = ds;
  for (std::size_t j = 0; j < d; ++j) {
    double lo = ds.features.at(0, j), hi = lo;
    for (std::size_t i = 1; i < m; ++i) {
      lo = std::min(lo, ds.features.at(i, j));
      hi = std::max(hi, ds.features.at(i, j));
    }
    for (std::size_t i = 0; i < m; ++i) {
      out.features.at(i, j) = hi > lo ? 2.0 * (ds.features.at(i, j) - lo) / (hi - lo) - 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<std::size_t> VerticalPartition::all_passive_columns() const {
  std::vector<std::size_t> cols;
  for (std::size_t n = 1; n < column_sets.size(); ++n)
    cols.insert(cols.end(), column_sets[n].begin(), column_sets[n].end());
  return cols;
}

std::size_t VerticalPartition::total_columns() const {
  std::size_t t = 0;
  for (const auto& s : column_sets) t += s.size();
  return t;
}

void VerticalPartition::validate(std::size_t d) const {
  if (column_sets.size() < 2) throw ContractError("partition needs an adversary slot and >= 1 passive client");
  std::vector<int> seen(d, 0);
  for (std::size_t s = 0; s < column_sets.size(); ++s) {
    if (s > 0 && column_sets[s].empty()) {
      throw ContractError("passive client " + std::to_string(s) + " owns no columns");
    }
    for (auto c : column_sets[s]) {
      if (c >= d) throw ContractError("partition column " + std::to_string(c) + " out of range");
      if (seen[c]++) throw ContractError("partition column " + std::to_string(c) + " assigned twice");
    }
  }
  for (std::size_t c = 0; c < d; ++c)
    if (!seen[c]) throw ContractError("partition leaves column " + std::to_string(c) + " unassigned");
}

namespace {

std::vector<std::size_t> block_sizes(std::size_t d, std::span<const double> fractions) {
  if (fractions.size() < 2) throw ContractError("need an adversary fraction and >= 1 passive fraction");
  double total = 0.0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double f = fractions[i];
    if (!(f >= 0.0) || (i > 0 && f == 0.0)) {
      throw ContractError("fraction " + std::to_string(i) + " must be > 0 (only the adversary may be 0)");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractError("partition fractions sum to " + std::to_string(total) + ", expected 1");
  }
  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
    const auto s = static_cast<std::size_t>(std::llround(fractions[i] * static_cast<double>(d)));
    sizes.push_back(s);
    used += s;
  }
  if (used >= d) throw ContractError("partition leaves no columns for the last client");
  sizes.push_back(d - used);
  return sizes;
}

VerticalPartition partition_from_order(std::span<const std::size_t> order,
                                       std::span<const std::size_t> sizes) {
  VerticalPartition p;
  std::size_t off = 0;
  for (auto s : sizes) {
    p.column_sets.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(off),
                               order.begin() + static_cast<std::ptrdiff_t>(off + s));
    off += s;
  }
  p.validate(order.size());
  return p;
}

}  // namespace

VerticalPartition vertical_partition(std::size_t d, std::span<const double> fractions) {
  const auto sizes = block_sizes(d, fractions);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return partition_from_order(order, sizes);
}

VerticalPartition permuted_partition(std::size_t d, std::span<const double> fractions,
                                     std::uint64_t seed) {
  const auto sizes = block_sizes(d, fractions);
  Rng rng(derive_seed(seed, "column-permutation"));
  auto order = rng.permutation(d);
  auto p = partition_from_order(order, sizes);
  for (auto& s : p.column_sets) std::sort(s.begin(), s.end());
  return p;
}

Splits make_splits(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t m = ds.size();
  if (!(spec.aux_ratio >= 0.0) || !(spec.test_fraction >= 0.0) || spec.test_fraction >= 1.0) {
    throw ContractError("split fractions must satisfy aux_ratio >= 0 and 0 <= test_fraction < 1");
  }
  const auto test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(m)));
  const std::size_t rest = m - test;
  const auto aux = static_cast<std::size_t>(
      std::llround(static_cast<double>(rest) * spec.aux_ratio / (1.0 + spec.aux_ratio)));
  if (aux >= rest) throw ContractError("split leaves no training rows");
  Rng rng(derive_seed(spec.seed, "splits"));
  const auto order = rng.permutation(m);
  Splits out;
  out.test_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test));
  out.aux_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(test),
                      order.begin() + static_cast<std::ptrdiff_t>(test + aux));
  out.train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(test + aux), order.end());
  out.aux = ds.subset(out.aux_rows);
  out.train = ds.subset(out.train_rows);
  out.test = ds.subset(out.test_rows);
  return out;
}

}  // namespace urvfl
