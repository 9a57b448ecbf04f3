#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace urvfl {

/// Dense row-major array of doubles. Most of the library works on rank-2
/// tensors laid out as (batch, features); rank-1 tensors hold biases and
/// rank-0/1 tensors with one element hold scalar losses.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  // Empty until a backward pass writes into it; otherwise same size as values.
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> values_);

  static Tensor zeros(std::vector<std::size_t> shape_);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values_);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double v);

  [[nodiscard]] std::size_t numel() const { return values.size(); }
  [[nodiscard]] std::size_t rank() const { return shape.size(); }
  [[nodiscard]] bool has_grad() const { return !grad.empty(); }

  // Rank-2 accessors. rows() of a rank-1 tensor is 1.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;
  [[nodiscard]] double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }
  [[nodiscard]] std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }

  [[nodiscard]] double item() const;
  [[nodiscard]] bool all_finite() const;

  void zero_grad();
};

[[nodiscard]] std::size_t shape_numel(const std::vector<std::size_t>& shape);
[[nodiscard]] std::string shape_string(const std::vector<std::size_t>& shape);

/// Rows of `src` selected by `indices`, in that order.
[[nodiscard]] Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices);
/// Columns of `src` selected by `columns`, in that order.
[[nodiscard]] Tensor gather_cols(const Tensor& src, std::span<const std::size_t> columns);
/// Horizontal concatenation of rank-2 tensors with equal row counts.
[[nodiscard]] Tensor hconcat(std::span<const Tensor> parts);

}  // namespace urvfl
