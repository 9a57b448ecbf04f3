#include "urvfl/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "urvfl/error.hpp"

namespace urvfl {

std::string to_string(Decision d) { return d == Decision::detected ? "detected" : "undetected"; }

std::vector<int> sg_fake_batch(std::span<const int> labels, int num_classes, Rng& rng) {
  if (num_classes < 2) throw ContractError("fake batches need at least 2 classes");
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ContractError("label outside [0, C)");
    int draw = static_cast<int>(rng.index(static_cast<std::size_t>(num_classes - 1)));
    out.push_back(draw >= y ? draw + 1 : draw);
  }
  return out;
}

namespace {

std::vector<double> mean_of(std::span<const std::vector<double>> vs) {
  std::vector<double> m(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    if (v.size() != m.size()) throw ShapeError("gradient vectors differ in length");
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += v[k];
  }
  for (auto& x : m) x /= static_cast<double>(vs.size());
  return m;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

double vector_angle(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("vector lengths differ");
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    aa += a[k] * a[k];
    bb += b[k] * b[k];
    ab += a[k] * b[k];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::acos(std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0));
}

double sg_score(std::span<const std::vector<double>> fake, std::span<const std::vector<double>> regular,
                Rng& rng) {
  if (fake.empty() || regular.empty()) throw ContractError("sg_score needs fake and regular gradients");
  if (regular.size() < 2) throw ContractError("sg_score needs at least 2 regular gradients to halve");
  auto perm = rng.permutation(regular.size());
  std::vector<std::vector<double>> h1, h2;
  for (std::size_t i = 0; i < perm.size(); ++i) (i < perm.size() / 2 ? h1 : h2).push_back(regular[perm[i]]);
  const auto f = mean_of(fake);
  const auto r = mean_of(regular);
  const auto r1 = mean_of(h1);
  const auto r2 = mean_of(h2);
  if (f.size() != r.size()) throw ShapeError("fake and regular gradients differ in length");
  const double pf = vector_angle(f, r) * distance(f, r);
  const double pr = vector_angle(r1, r2) * distance(r1, r2);
  const double raw = (pf - pr) / (pf + pr + 1e-12);
  return (raw + 1.0) / 2.0;
}

double SgState::trailing_mean() const {
  if (score_history.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::min(window, score_history.size());
  double s = 0.0;
  for (std::size_t i = score_history.size() - n; i < score_history.size(); ++i) s += score_history[i];
  return s / static_cast<double>(n);
}

void SgState::update(double score) {
  score_history.push_back(score);
  if (score_history.size() >= window && trailing_mean() < threshold) decision = Decision::detected;
}

SplitGuard::SplitGuard(SgState settings, std::size_t regular_window, std::uint64_t seed)
    : state_(std::move(settings)), regular_window_(regular_window), rng_(seed) {
  if (regular_window_ < 2) throw ConfigError("SplitGuard needs a regular window of at least 2");
}

std::optional<double> SplitGuard::observe(std::span<const double> gradient, bool fake_batch) {
  if (!fake_batch) {
    regular_.emplace_back(gradient.begin(), gradient.end());
    if (regular_.size() > regular_window_) regular_.erase(regular_.begin());
    return std::nullopt;
  }
  if (regular_.size() < 2) return std::nullopt;
  const std::vector<std::vector<double>> f{std::vector<double>(gradient.begin(), gradient.end())};
  const double score = sg_score(f, regular_, rng_);
  state_.update(score);
  return score;
}

std::optional<double> gs_score(const Tensor& gradients, std::span<const int> labels) {
  if (gradients.rank() != 2) throw ShapeError("gs_score expects a (batch, dim) gradient matrix");
  if (labels.size() != gradients.rows()) throw ContractError("gs_score: label count differs from batch");
  if (labels.size() < 2 || std::set<int>(labels.begin(), labels.end()).size() < 2) return std::nullopt;
  double diff = 0.0, same = 0.0;
  std::size_t n_diff = 0, n_same = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      const double d = distance(gradients.row(i), gradients.row(j));
      if (labels[i] == labels[j]) {
        same += d;
        ++n_same;
      } else {
        diff += d;
        ++n_diff;
      }
    }
  }
  const double d_diff = diff / static_cast<double>(n_diff);
  const double d_same = n_same ? same / static_cast<double>(n_same) : 0.0;
  const double raw = (d_diff - d_same) / (d_diff + d_same + 1e-12);
  return (raw + 1.0) / 2.0;
}

double GsState::running_average() const {
  if (running_scores.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : running_scores) s += v;
  return s / static_cast<double>(running_scores.size());
}

void GsState::update(double score) {
  running_scores.push_back(score);
  if (running_average() < threshold) decision = Decision::detected;
}

void GradNormProfile::add(std::span<const double> round_norms) {
  for (double v : round_norms)
    if (!(v >= 0.0)) throw ContractError("gradient norms must be non-negative");
  rounds.emplace_back(round_norms.begin(), round_norms.end());
}

std::vector<double> GradNormProfile::all() const {
  std::vector<double> out;
  for (const auto& r : rounds) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::size_t GradNormProfile::size() const {
  std::size_t n = 0;
  for (const auto& r : rounds) n += r.size();
  return n;
}

Histogram GradNormProfile::histogram(std::size_t bins) const {
  if (bins == 0) throw ContractError("histogram needs at least one bin");
  const auto norms = all();
  Histogram h;
  h.counts.assign(bins, 0);
  if (norms.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  const auto [lo_it, hi_it] = std::minmax_element(norms.begin(), norms.end());
  const double lo = *lo_it;
  const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
  for (double v : norms) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

std::vector<double> GradNormProfile::thinned(std::size_t trailing, Rng& rng) const {
  const std::size_t start = trailing == 0 || trailing >= rounds.size() ? 0 : rounds.size() - trailing;
  std::vector<double> out;
  for (std::size_t i = start; i < rounds.size(); ++i) {
    if (!rounds[i].empty()) out.push_back(rounds[i][rng.index(rounds[i].size())]);
  }
  return out;
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ContractError("KS needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

double ks_critical_value(std::size_t n, std::size_t m, double alpha) {
  if (n == 0 || m == 0 || !(alpha > 0.0 && alpha < 1.0)) throw ContractError("invalid KS critical value inputs");
  const double c = std::sqrt(-std::log(alpha / 2.0) / 2.0);
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return c * std::sqrt((dn + dm) / (dn * dm));
}

double compare_profiles(const GradNormProfile& a, const GradNormProfile& b) {
  if (a.size() < 100 || b.size() < 100) {
    throw ContractError("profile comparison needs at least 100 norms per profile");
  }
  return ks_statistic(a.all(), b.all());
}

ProfileTest profile_test(const GradNormProfile& baseline, const GradNormProfile& live, double alpha,
                         std::size_t trailing_rounds, std::uint64_t seed) {
  Rng rb(derive_seed(seed, "baseline")), rl(derive_seed(seed, "live"));
  const auto x = baseline.thinned(trailing_rounds, rb);
  const auto y = live.thinned(trailing_rounds, rl);
  if (x.size() < 100 || y.size() < 100) {
    throw ContractError("profile test needs at least 100 thinned norms per profile");
  }
  ProfileTest t;
  t.ks = ks_statistic(x, y);
  t.critical = ks_critical_value(x.size(), y.size(), alpha);
  t.flagged = t.ks > t.critical;
  return t;
}

}  // namespace urvfl
