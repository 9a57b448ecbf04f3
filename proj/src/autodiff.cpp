#include "urvfl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "urvfl/error.hpp"

namespace urvfl {

const Tensor& Var::value() const { return tape->value(id); }
const std::vector<double>& Var::grad() const { return tape->grad(id); }

void Tape::check_open() const {
  if (consumed_) throw ReuseError("tape already consumed by a backward pass");
}

Var Tape::constant(Tensor t) {
  check_open();
  t.grad.clear();
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Tape::input(Tensor t) {
  check_open();
  t.grad.clear();
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr, nullptr, true});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& p) {
  check_open();
  Tensor copy(p.shape, p.values);
  nodes_.push_back(Node{std::move(copy), {}, {}, nullptr, &p, true});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  check_open();
  bool rg = false;
  for (auto p : parents) rg = rg || nodes_.at(p).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), rg ? std::move(fn) : nullptr,
                        nullptr, rg});
  return {this, nodes_.size() - 1};
}

const std::vector<double>& Tape::grad(std::size_t id) const {
  static const std::vector<double> kEmpty;
  const auto& n = nodes_.at(id);
  return n.grad.empty() && !consumed_ ? kEmpty : n.grad;
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  check_open();
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (nodes_.at(loss.id).value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(nodes_[loss.id].value.shape));
  }
  consumed_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  // Unreached differentiable nodes get explicit zeros.
  for (auto& n : nodes_) {
    if (n.requires_grad && n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  }
  for (auto& n : nodes_) {
    if (n.parameter) n.parameter->grad.assign(n.parameter->numel(), 0.0);
  }
  for (auto& n : nodes_) {
    if (!n.parameter) continue;
    auto& g = n.parameter->grad;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
  }
}

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("vars from different tapes");
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

template <class F>
Tensor elementwise_binary(Var a, Var b, const char* op, F f) {
  require_same_tape(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require_same_shape(x, y, op);
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out.values[i] = f(x.values[i], y.values[i]);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const auto& x = a.value();
  const auto& w = b.value();
  require_rank2(x, "matmul");
  require_rank2(w, "matmul");
  const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
  if (w.rows() != k) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_string(x.shape) + " x " +
                     shape_string(w.shape));
  }
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.values[i * k + p];
      if (xv == 0.0) continue;
      const double* wr = &w.values[p * m];
      double* o = &out.values[i * m];
      for (std::size_t j = 0; j < m; ++j) o[j] += xv * wr[j];
    }
  }
  const auto ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      const auto& wv = t.value(ib).values;
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * wv[p * m + j];
          ga[i * k + p] += s;
        }
    }
    if (t.requires_grad(ib)) {
      const auto& xv = t.value(ia).values;
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xi = xv[i * k + p];
          if (xi == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += xi * g[i * m + j];
        }
    }
  });
}

Var affine(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const auto& b = bias.value();
  const auto& w = weight.value();
  require_rank2(w, "affine");
  if (b.rank() != 1 || b.numel() != w.cols()) {
    throw ShapeError("affine bias shape " + shape_string(b.shape) + " does not match weight " +
                     shape_string(w.shape));
  }
  Var prod = matmul(x, weight);
  Tensor out = prod.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.values[i * m + j] += b.values[j];
  const auto ip = prod.id, ib = bias.id;
  return x.tape->push(std::move(out), {ip, ib}, [ip, ib, n, m](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ip)) {
      auto& gp = t.grad_buffer(ip);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
    }
  });
}

Var add(Var a, Var b) {
  Tensor out = elementwise_binary(a, b, "add", [](double x, double y) { return x + y; });
  const auto ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    for (auto id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto& gp = t.grad_buffer(id);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k];
    }
  });
}

Var sub(Var a, Var b) {
  Tensor out = elementwise_binary(a, b, "sub", [](double x, double y) { return x - y; });
  const auto ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      auto& gp = t.grad_buffer(ia);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k];
    }
    if (t.requires_grad(ib)) {
      auto& gp = t.grad_buffer(ib);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] -= g[k];
    }
  });
}

Var mul(Var a, Var b) {
  Tensor out = elementwise_binary(a, b, "mul", [](double x, double y) { return x * y; });
  const auto ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      const auto& y = t.value(ib).values;
      auto& gp = t.grad_buffer(ia);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k] * y[k];
    }
    if (t.requires_grad(ib)) {
      const auto& x = t.value(ia).values;
      auto& gp = t.grad_buffer(ib);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k] * x[k];
    }
  });
}

Var div(Var a, Var b) {
  Tensor out = elementwise_binary(a, b, "div", [](double x, double y) { return x / y; });
  const auto ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& x = t.value(ia).values;
    const auto& y = t.value(ib).values;
    if (t.requires_grad(ia)) {
      auto& gp = t.grad_buffer(ia);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k] / y[k];
    }
    if (t.requires_grad(ib)) {
      auto& gp = t.grad_buffer(ib);
      for (std::size_t k = 0; k < g.size(); ++k) gp[k] -= g[k] * x[k] / (y[k] * y[k]);
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.grad.clear();
  for (auto& v : out.values) v *= factor;
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia, factor](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gp = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k) gp[k] += factor * g[k];
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  out.grad.clear();
  for (auto& v : out.values) v += offset;
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gp = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  out.grad.clear();
  for (auto& v : out.values) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& x = t.value(ia).values;
    auto& gp = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (x[k] > 0.0) gp[k] += g[k];
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  out.grad.clear();
  for (auto& v : out.values) v = std::tanh(v);
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self).values;
    auto& gp = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k] * (1.0 - y[k] * y[k]);
  });
}

Var sqrt(Var a) {
  Tensor out = a.value();
  out.grad.clear();
  for (auto& v : out.values) v = v > 0.0 ? std::sqrt(v) : 0.0;
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self).values;
    auto& gp = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (y[k] > 0.0) gp[k] += g[k] * 0.5 / y[k];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values) s += v;
  const auto ia = a.id;
  return a.tape->push(Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    for (auto& v : t.grad_buffer(ia)) v += g;
  });
}

Var mean(Var a) {
  const auto n = a.value().numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var concat_features(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_features of zero parts");
  Tape* tape = parts[0].tape;
  std::vector<Tensor> vals;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].tape != tape) throw ContractError("vars from different tapes");
    const auto& v = parts[i].value();
    require_rank2(v, "concat_features");
    if (v.rows() != parts[0].value().rows()) {
      throw ShapeError("concat_features batch-size mismatch at part " + std::to_string(i) + ": " +
                       std::to_string(v.rows()) + " vs " +
                       std::to_string(parts[0].value().rows()));
    }
    vals.push_back(Tensor(v.shape, v.values));
    ids.push_back(parts[i].id);
    widths.push_back(v.cols());
  }
  Tensor out = hconcat(vals);
  const std::size_t n = out.rows(), total = out.cols();
  return tape->push(std::move(out), ids, [ids, widths, n, total](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t w = widths[p];
      if (t.requires_grad(ids[p])) {
        auto& gp = t.grad_buffer(ids[p]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
      }
      off += w;
    }
  });
}

Var slice_features(Var a, std::size_t begin, std::size_t count) {
  const auto& x = a.value();
  require_rank2(x, "slice_features");
  const std::size_t n = x.rows(), c = x.cols();
  if (begin + count > c) throw ShapeError("slice_features range exceeds feature count");
  Tensor out = Tensor::zeros({n, count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out.values[i * count + j] = x.values[i * c + begin + j];
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia, n, c, begin, count](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    auto& gp = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) gp[i * c + begin + j] += g[i * count + j];
  });
}

Var mse_loss(Var pred, Var target) {
  require_same_tape(pred, target);
  const auto& p = pred.value();
  const auto& y = target.value();
  require_same_shape(p, y, "mse_loss");
  const std::size_t n = p.numel();
  if (n == 0) throw ShapeError("mse_loss on empty tensors");
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = p.values[k] - y.values[k];
    s += d * d;
  }
  const auto ip = pred.id, iy = target.id;
  return pred.tape->push(Tensor::scalar(s / static_cast<double>(n)), {ip, iy},
                         [ip, iy, n](Tape& t, std::size_t self) {
                           const double g = t.grad_buffer(self)[0] * 2.0 / static_cast<double>(n);
                           const auto& pv = t.value(ip).values;
                           const auto& yv = t.value(iy).values;
                           if (t.requires_grad(ip)) {
                             auto& gp = t.grad_buffer(ip);
                             for (std::size_t k = 0; k < n; ++k) gp[k] += g * (pv[k] - yv[k]);
                           }
                           if (t.requires_grad(iy)) {
                             auto& gy = t.grad_buffer(iy);
                             for (std::size_t k = 0; k < n; ++k) gy[k] -= g * (pv[k] - yv[k]);
                           }
                         });
}

Var cross_entropy_loss(Var logits, std::span<const int> targets) {
  const auto& z = logits.value();
  require_rank2(z, "cross_entropy_loss");
  const std::size_t n = z.rows(), k = z.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  if (n == 0) throw ShapeError("cross_entropy_loss on empty batch");
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("cross_entropy_loss: target " + std::to_string(y) + " at row " +
                          std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
    const double* row = &z.values[i * k];
    const double mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[y];
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  const auto iz = logits.id;
  return logits.tape->push(
      Tensor::scalar(total / static_cast<double>(n)), {iz},
      [iz, n, k, probs = std::move(probs), tgt = std::move(tgt)](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0] / static_cast<double>(n);
        auto& gz = t.grad_buffer(iz);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) gz[i * k + j] += g * probs[i * k + j];
          gz[i * k + static_cast<std::size_t>(tgt[i])] -= g;
        }
      });
}

Var pairwise_distances(Var a) {
  const auto& x = a.value();
  require_rank2(x, "pairwise_distances");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = x.values[i * d + c] - x.values[j * d + c];
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      out.values[i * n + j] = dist;
      out.values[j * n + i] = dist;
    }
  const auto ia = a.id;
  return a.tape->push(std::move(out), {ia}, [ia, n, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& dist = t.value(self).values;
    const auto& xv = t.value(ia).values;
    auto& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double dij = dist[i * n + j];
        if (i == j || dij <= 0.0) continue;
        // d(dist_ij)/d(x_i) = (x_i - x_j)/dist_ij; both (i,j) and (j,i) entries are visited.
        const double w = (g[i * n + j] + g[j * n + i]) / dij;
        for (std::size_t c = 0; c < d; ++c) gx[i * d + c] += w * (xv[i * d + c] - xv[j * d + c]);
      }
  });
}

Var double_center(Var a) {
  const auto& m = a.value();
  require_rank2(m, "double_center");
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> rmean(r, 0.0), cmean(c, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double v = m.values[i * c + j];
      rmean[i] += v;
      cmean[j] += v;
      grand += v;
    }
  for (auto& v : rmean) v /= static_cast<double>(c);
  for (auto& v : cmean) v /= static_cast<double>(r);
  grand /= static_cast<double>(r * c);
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.values[i * c + j] = m.values[i * c + j] - rmean[i] - cmean[j] + grand;
  const auto ia = a.id;
  // The map is linear and self-adjoint.
  return a.tape->push(std::move(out), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    std::vector<double> grm(r, 0.0), gcm(c, 0.0);
    double gg = 0.0;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        grm[i] += g[i * c + j];
        gcm[j] += g[i * c + j];
        gg += g[i * c + j];
      }
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] += g[i * c + j] - grm[i] / static_cast<double>(c) -
                         gcm[j] / static_cast<double>(r) + gg / static_cast<double>(r * c);
  });
}

}  // namespace urvfl
