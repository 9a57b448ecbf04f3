#pragma once

#include <span>
#include <vector>

#include "urvfl/tensor.hpp"

namespace urvfl {

/// Mean squared error over every entry.
[[nodiscard]] double recon_mse(const Tensor& target, const Tensor& recon);

struct ImageQuality {
  double psnr = 0.0;  // dB, capped at 100
  double ssim = 0.0;
};

/// PSNR and single-window SSIM for values already in [0, 1].
[[nodiscard]] ImageQuality image_quality(const Tensor& target, const Tensor& recon);
[[nodiscard]] double psnr_from_mse(double mse);

/// Maps both tensors with the affine transform taking the target's global
/// [min, max] onto [0, 1].
[[nodiscard]] std::pair<Tensor, Tensor> joint_unit_rescale(const Tensor& target, const Tensor& recon);

[[nodiscard]] double mean(std::span<const double> v);
/// n - 1 denominator; 0 for fewer than two values.
[[nodiscard]] double sample_std(std::span<const double> v);
/// Average ranks, ties share the mean rank.
[[nodiscard]] std::vector<double> ranks(std::span<const double> v);
/// Pearson correlation of ranks; 0 if either side is constant.
[[nodiscard]] double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace urvfl
