#include "urvfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "urvfl/error.hpp"

namespace urvfl {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw ShapeError("shape mismatch: " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  }
  if (a.numel() == 0) throw ShapeError("metrics need at least one entry");
}

}  // namespace

double recon_mse(const Tensor& target, const Tensor& recon) {
  require_same_shape(target, recon);
  double s = 0.0;
  for (std::size_t k = 0; k < target.numel(); ++k) {
    const double d = target.values[k] - recon.values[k];
    s += d * d;
  }
  return s / static_cast<double>(target.numel());
}

double psnr_from_mse(double mse) {
  if (mse < 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

ImageQuality image_quality(const Tensor& target, const Tensor& recon) {
  require_same_shape(target, recon);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double n = static_cast<double>(target.numel());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < target.numel(); ++k) {
    mx += target.values[k];
    my += recon.values[k];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t k = 0; k < target.numel(); ++k) {
    const double dx = target.values[k] - mx, dy = recon.values[k] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  ImageQuality q;
  q.psnr = psnr_from_mse(recon_mse(target, recon));
  q.ssim = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  return q;
}

std::pair<Tensor, Tensor> joint_unit_rescale(const Tensor& target, const Tensor& recon) {
  require_same_shape(target, recon);
  const auto [lo, hi] = std::minmax_element(target.values.begin(), target.values.end());
  const double a = *lo;
  const double w = *hi > *lo ? *hi - *lo : 1.0;
  Tensor t = target, r = recon;
  for (auto& v : t.values) v = (v - a) / w;
  for (auto& v : r.values) v = (v - a) / w;
  return {std::move(t), std::move(r)};
}

double mean(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractError("spearman needs two equal samples of size >= 2");
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = mean(ra), mb = mean(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace urvfl
