#include "urvfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "urvfl/error.hpp"

namespace urvfl {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values_)
    : shape(std::move(shape_)), values(std::move(values_)) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) {
  const auto n = shape_numel(shape_);
  return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values_) {
  return Tensor({rows, cols}, std::move(values_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

std::size_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  if (shape.size() <= 1) return 1;
  throw ShapeError("rows() on tensor of shape " + shape_string(shape));
}

std::size_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  if (shape.empty()) return 1;
  throw ShapeError("cols() on tensor of shape " + shape_string(shape));
}

double Tensor::item() const {
  if (values.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape));
  }
  return values[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices) {
  const std::size_t c = src.cols();
  Tensor out = Tensor::zeros({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= src.rows()) throw ShapeError("row index out of range");
    std::copy_n(src.values.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

Tensor gather_cols(const Tensor& src, std::span<const std::size_t> columns) {
  const std::size_t r = src.rows();
  const std::size_t c = src.cols();
  Tensor out = Tensor::zeros({r, columns.size()});
  for (auto col : columns) {
    if (col >= c) throw ShapeError("column index out of range");
  }
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out.at(i, j) = src.values[i * c + columns[j]];
  }
  return out;
}

Tensor hconcat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("hconcat of zero tensors");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("hconcat batch-size mismatch");
    total += p.cols();
  }
  Tensor out = Tensor::zeros({r, total});
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto src = p.row(i);
      std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * total + off));
      off += p.cols();
    }
  }
  return out;
}

}  // namespace urvfl
