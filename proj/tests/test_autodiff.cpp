#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fd_oracle.hpp"
#include "urvfl/autodiff.hpp"
#include "urvfl/error.hpp"
#include "urvfl/network.hpp"
#include "urvfl/optimizer.hpp"
#include "urvfl/rng.hpp"

using namespace urvfl;
using urvfl::testing::central_differences;
using urvfl::testing::max_relative_error;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t = Tensor::zeros({r, c});
  for (auto& v : t.values) v = scale * rng.normal();
  return t;
}

// Straight-line evaluation of an affine/activation stack, written without the tape.
Tensor reference_forward(const Network& net, const Tensor& x) {
  std::vector<std::vector<double>> h(x.rows(), std::vector<double>(x.cols()));
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) h[i][j] = x.at(i, j);
  std::size_t k = 0;
  for (const auto& l : net.layers()) {
    if (l.kind == LayerSpec::Kind::affine) {
      const auto& w = net.parameters()[2 * k];
      const auto& b = net.parameters()[2 * k + 1];
      std::vector<std::vector<double>> next(h.size(), std::vector<double>(l.out));
      for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t o = 0; o < l.out; ++o) {
          double s = b.values[o];
          for (std::size_t p = 0; p < l.in; ++p) s += h[i][p] * w.values[p * l.out + o];
          next[i][o] = s;
        }
      h = std::move(next);
      ++k;
    } else {
      for (auto& row : h)
        for (auto& v : row)
          v = l.activation == Activation::relu ? std::max(v, 0.0) : std::tanh(v);
    }
  }
  Tensor out = Tensor::zeros({h.size(), h.empty() ? 0 : h[0].size()});
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[i].size(); ++j) out.at(i, j) = h[i][j];
  return out;
}

}  // namespace

TEST_CASE("network_forward identity and zero-weight layers") {
  Network id({{LayerSpec::Kind::affine, 2, 2, Activation::none}},
             {Tensor::matrix({{1, 0}, {0, 1}}), Tensor({2}, {0, 0})});
  Tape tape;
  auto y = id.forward(tape, tape.constant(Tensor::matrix({{1, 2}})));
  CHECK(y.value().values == std::vector<double>{1, 2});

  Network zero({{LayerSpec::Kind::affine, 3, 2, Activation::none}},
               {Tensor::zeros({3, 2}), Tensor({2}, {0.5, -1.5})});
  Tape t2;
  auto z = zero.forward(t2, t2.constant(Tensor::matrix({{1, 2, 3}, {-4, 5, 6}})));
  CHECK(z.value().values == std::vector<double>{0.5, -1.5, 0.5, -1.5});
}

TEST_CASE("network_forward matches straight-line re-evaluation") {
  Rng rng(7);
  const std::size_t hidden[] = {5};
  auto net = Network::mlp(4, hidden, 3, Activation::relu, Activation::tanh, rng);
  auto x = random_matrix(rng, 3, 4);
  Tape tape;
  auto y = net.forward(tape, tape.constant(x));
  auto ref = reference_forward(net, x);
  REQUIRE(y.value().shape == ref.shape);
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(y.value().values[i] == doctest::Approx(ref.values[i]).epsilon(1e-14));
  CHECK(net.evaluate(x).values == y.value().values);
}

TEST_CASE("network_forward reports the offending layer on shape mismatch") {
  Rng rng(1);
  const std::size_t hidden[] = {3};
  auto net = Network::mlp(4, hidden, 2, Activation::relu, Activation::none, rng);
  Tape tape;
  try {
    net.forward(tape, tape.constant(Tensor::zeros({2, 5})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
  std::vector<LayerSpec> bad{{LayerSpec::Kind::affine, 2, 3, Activation::none},
                             {LayerSpec::Kind::affine, 4, 1, Activation::none}};
  CHECK_THROWS_AS(Network(bad, {Tensor::zeros({2, 3}), Tensor::zeros({3}), Tensor::zeros({4, 1}),
                                Tensor::zeros({1})}),
                  ShapeError);
}

TEST_CASE("network_forward is deterministic") {
  Rng a(11), b(11);
  const std::size_t hidden[] = {6, 6};
  auto n1 = Network::mlp(3, hidden, 2, Activation::tanh, Activation::none, a);
  auto n2 = Network::mlp(3, hidden, 2, Activation::tanh, Activation::none, b);
  Rng rx(3);
  auto x = random_matrix(rx, 5, 3);
  CHECK(n1.evaluate(x).values == n2.evaluate(x).values);
  CHECK(n1.checksum() == n2.checksum());
}

TEST_CASE("backward on zero-weighted loss gives zero gradients") {
  Rng rng(2);
  const std::size_t hidden[] = {4};
  auto net = Network::mlp(3, hidden, 2, Activation::relu, Activation::none, rng);
  Tape tape;
  auto loss = scale(sum(net.forward(tape, tape.constant(random_matrix(rng, 4, 3)))), 0.0);
  tape.backward(loss);
  for (const auto& p : net.parameters())
    for (double g : p.grad) CHECK(g == 0.0);
}

TEST_CASE("backward contract errors") {
  Tape tape;
  auto x = tape.input(Tensor::matrix({{1, 2}}));
  CHECK_THROWS_AS(tape.backward(x), ContractError);
  auto l = sum(x);
  tape.backward(l);
  CHECK_THROWS_AS(tape.backward(l), ReuseError);
  CHECK_THROWS_AS(tape.constant(Tensor::scalar(1)), ReuseError);
}

TEST_CASE("unreached parameters and inputs receive zero gradients") {
  Tensor p = Tensor::matrix({{1.0, 2.0}});
  Tensor unused = Tensor::matrix({{3.0}});
  Tape tape;
  auto a = tape.parameter(p);
  auto u = tape.parameter(unused);
  auto v = tape.input(Tensor::matrix({{4.0}}));
  (void)u;
  tape.backward(sum(mul(a, a)));
  CHECK(p.grad == std::vector<double>{2.0, 4.0});
  CHECK(unused.grad == std::vector<double>{0.0});
  CHECK(v.grad() == std::vector<double>{0.0});
}

TEST_CASE("linear regression gradient equals 2 X^T (Xw - y) / n") {
  Rng rng(5);
  const std::size_t n = 6, d = 3;
  auto X = random_matrix(rng, n, d);
  auto y = random_matrix(rng, n, 1);
  Tensor w = random_matrix(rng, d, 1);
  Tape tape;
  auto pred = matmul(tape.constant(X), tape.parameter(w));
  tape.backward(mse_loss(pred, tape.constant(y)));
  for (std::size_t j = 0; j < d; ++j) {
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = -y.at(i, 0);
      for (std::size_t k = 0; k < d; ++k) r += X.at(i, k) * w.values[k];
      expected += 2.0 * X.at(i, j) * r / static_cast<double>(n);
    }
    CHECK(w.grad[j] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("random MLP gradients match central finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const std::size_t hidden[] = {5, 4};
    auto net = Network::mlp(3, hidden, 4, Activation::tanh, Activation::none, rng);
    auto x = random_matrix(rng, 5, 3);
    std::vector<int> targets{0, 3, 1, 2, 3};
    auto loss_value = [&]() {
      Tape t;
      return cross_entropy_loss(net.forward(t, t.constant(x)), targets).value().item();
    };
    Tape tape;
    tape.backward(cross_entropy_loss(net.forward(tape, tape.constant(x)), targets));
    for (auto& p : net.parameters()) {
      auto analytic = p.grad;
      auto numeric = central_differences(p.values, loss_value);
      CHECK(max_relative_error(analytic, numeric) < 1e-4);
    }
  }
}

TEST_CASE("optimizer_step") {
  SUBCASE("sgd single step") {
    std::vector<Tensor> ps{Tensor({1}, {1.0})};
    ps[0].grad = {0.5};
    Optimizer opt({OptimizerKind::sgd, 0.1});
    opt.step(ps);
    CHECK(ps[0].values[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
      std::vector<Tensor> ps{Tensor({3}, {1.0, -2.0, 0.25})};
      ps[0].grad = {0.0, 0.0, 0.0};
      Optimizer opt({kind, 0.01});
      for (int i = 0; i < 3; ++i) opt.step(ps);
      CHECK(ps[0].values[0] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(ps[0].values[1] == doctest::Approx(-2.0).epsilon(1e-12));
      CHECK(ps[0].values[2] == doctest::Approx(0.25).epsilon(1e-12));
    }
  }
  SUBCASE("lr = 0 leaves parameters unchanged") {
    std::vector<Tensor> ps{Tensor({2}, {3.0, 4.0})};
    ps[0].grad = {1.0, -7.0};
    Optimizer opt({OptimizerKind::adam, 0.0});
    opt.step(ps);
    CHECK(ps[0].values == std::vector<double>{3.0, 4.0});
  }
  SUBCASE("adam first step matches the hand-evaluated update") {
    // m1 = 0.1 g, v1 = 0.001 g^2, mhat = g, vhat = g^2.
    const double p0 = 0.3, g = -0.2, lr = 0.01, eps = 1e-8;
    std::vector<Tensor> ps{Tensor({1}, {p0})};
    ps[0].grad = {g};
    Optimizer opt({OptimizerKind::adam, lr});
    opt.step(ps);
    const double m = (1 - 0.9) * g, v = (1 - 0.999) * g * g;
    const double expected = p0 - lr * (m / (1 - 0.9)) / (std::sqrt(v / (1 - 0.999)) + eps);
    CHECK(ps[0].values[0] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(ps[0].values[0] == doctest::Approx(p0 - lr * g / (std::abs(g) + eps)).epsilon(1e-12));
  }
  SUBCASE("errors") {
    std::vector<Tensor> ps{Tensor({2}, {1.0, 2.0})};
    ps[0].grad = {1.0};
    Optimizer opt({OptimizerKind::sgd, 0.1});
    CHECK_THROWS_AS(opt.step(ps), ShapeError);
    ps[0].grad = {1.0, std::nan("")};
    CHECK_THROWS_AS(opt.step(ps), NumericError);
  }
}

TEST_CASE("mse_loss") {
  Tape tape;
  auto a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(mse_loss(a, a).value().item() == 0.0);
  auto z = tape.constant(Tensor::matrix({{0, 0}}));
  auto o = tape.constant(Tensor::matrix({{1, 1}}));
  CHECK(mse_loss(z, o).value().item() == 1.0);
  CHECK_THROWS_AS(mse_loss(a, o), ShapeError);

  Rng rng(9);
  auto p = random_matrix(rng, 4, 3);
  auto q = random_matrix(rng, 4, 3);
  double naive = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) naive += (p.at(i, j) - q.at(i, j)) * (p.at(i, j) - q.at(i, j));
  naive /= 12.0;
  CHECK(mse_loss(tape.constant(p), tape.constant(q)).value().item() == naive);
}

TEST_CASE("cross_entropy_loss") {
  Tape tape;
  std::vector<int> t4{0, 3};
  auto uniform = cross_entropy_loss(tape.constant(Tensor::zeros({2, 4})), t4);
  CHECK(uniform.value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(std::abs(uniform.value().item() - std::numbers::ln2 * 2) < 1e-15);

  std::vector<int> t0{1};
  auto peaked = cross_entropy_loss(tape.constant(Tensor::matrix({{0, 30, 0}})), t0);
  CHECK(peaked.value().item() < 1e-10);
  CHECK(peaked.value().item() >= 0.0);

  auto huge = cross_entropy_loss(tape.constant(Tensor::matrix({{1000, -1000}})), std::vector<int>{1});
  CHECK(std::isfinite(huge.value().item()));
  CHECK(huge.value().item() == doctest::Approx(2000.0));

  std::vector<int> bad{4};
  CHECK_THROWS_AS(cross_entropy_loss(tape.constant(Tensor::zeros({1, 4})), bad), ContractError);

  Rng rng(21);
  Tensor logits = random_matrix(rng, 6, 5, 2.0);
  std::vector<int> targets{0, 1, 2, 3, 4, 2};
  auto f = [&]() {
    Tape t;
    return cross_entropy_loss(t.constant(logits), targets).value().item();
  };
  Tape t2;
  auto in = t2.input(logits);
  t2.backward(cross_entropy_loss(in, targets));
  auto analytic = in.grad();
  auto numeric = central_differences(logits.values, f);
  CHECK(max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("concat_features") {
  Tape tape;
  auto a = tape.input(Tensor::matrix({{1, 2}, {3, 4}}));
  auto b = tape.input(Tensor::matrix({{5, 6, 7}, {8, 9, 10}}));
  Var parts[] = {a, b};
  auto c = concat_features(parts);
  CHECK(c.value().shape == std::vector<std::size_t>{2, 5});
  CHECK(c.value().values == std::vector<double>{1, 2, 5, 6, 7, 3, 4, 8, 9, 10});
  Var one[] = {a};
  CHECK(concat_features(one).value().values == a.value().values);
  auto bad = tape.input(Tensor::zeros({3, 1}));
  Var mism[] = {a, bad};
  CHECK_THROWS_AS(concat_features(mism), ShapeError);

  Rng rng(4);
  Tensor x = random_matrix(rng, 3, 2), y = random_matrix(rng, 3, 3), w = random_matrix(rng, 5, 2);
  auto loss_of = [&](Tape& t, Var xv, Var yv) {
    Var ps[] = {xv, yv};
    return mean(urvfl::tanh(matmul(concat_features(ps), t.constant(w))));
  };
  Tape t;
  auto xv = t.input(x), yv = t.input(y);
  t.backward(loss_of(t, xv, yv));
  CHECK(xv.grad().size() == 6);
  CHECK(yv.grad().size() == 9);
  auto fx = [&]() { Tape s; return loss_of(s, s.constant(x), s.constant(y)).value().item(); };
  CHECK(max_relative_error(xv.grad(), central_differences(x.values, fx)) < 1e-4);
  CHECK(max_relative_error(yv.grad(), central_differences(y.values, fx)) < 1e-4);
}

TEST_CASE("elementwise and distance ops match finite differences") {
  Rng rng(33);
  Tensor a = random_matrix(rng, 5, 3);
  Tensor b = random_matrix(rng, 5, 3);
  for (auto& v : b.values) v = 1.5 + std::abs(v);
  auto build = [&](Tape& t, Var av, Var bv) {
    auto q = div(mul(av, add_scalar(bv, 0.5)), bv);
    auto r = sub(relu(q), scale(urvfl::tanh(av), 0.3));
    auto dc = double_center(pairwise_distances(add(r, bv)));
    return add(mean(mul(dc, dc)), sum(sqrt(mul(bv, bv))));
  };
  Tape t;
  auto av = t.input(a), bv = t.input(b);
  t.backward(build(t, av, bv));
  auto f = [&]() { Tape s; return build(s, s.constant(a), s.constant(b)).value().item(); };
  CHECK(max_relative_error(av.grad(), central_differences(a.values, f)) < 1e-4);
  CHECK(max_relative_error(bv.grad(), central_differences(b.values, f)) < 1e-4);
}

TEST_CASE("slice_features routes gradients back to the right columns") {
  Tape t;
  auto x = t.input(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  auto s = slice_features(x, 1, 2);
  CHECK(s.value().values == std::vector<double>{2, 3, 5, 6});
  t.backward(sum(s));
  CHECK(x.grad() == std::vector<double>{0, 1, 1, 0, 1, 1});
}
