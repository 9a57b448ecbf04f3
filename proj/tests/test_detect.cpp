#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "urvfl/detect.hpp"
#include "urvfl/error.hpp"

using namespace urvfl;

namespace {

// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
std::vector<std::vector<double>> random_rotation(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> q;
  while (q.size() < d) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : q) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += v[k] * u[k];
      for (std::size_t k = 0; k < d; ++k) v[k] -= dot * u[k];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    q.push_back(v);
  }
  return q;
}

std::vector<double> rotate(const std::vector<std::vector<double>>& q, const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t k = 0; k < v.size(); ++k) out[i] += q[i][k] * v[k];
  return out;
}

std::vector<std::vector<double>> noisy_copies(const std::vector<double>& base, std::size_t n, double noise,
                                              Rng& rng) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto v = base;
    for (auto& x : v) x += noise * rng.normal();
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("fake batch never keeps the true label") {
  Rng rng(1);
  std::vector<int> y{0, 1, 0};
  CHECK(sg_fake_batch(y, 2, rng) == std::vector<int>{1, 0, 1});
  std::vector<int> many(500);
  for (std::size_t i = 0; i < many.size(); ++i) many[i] = static_cast<int>(i % 7);
  auto fake = sg_fake_batch(many, 7, rng);
  for (std::size_t i = 0; i < many.size(); ++i) CHECK(fake[i] != many[i]);
  CHECK_THROWS_AS((void)sg_fake_batch(y, 1, rng), ContractError);

  Rng a(9), b(9);
  CHECK(sg_fake_batch(many, 7, a) == sg_fake_batch(many, 7, b));
}

TEST_CASE("fake labels are uniform over the wrong classes (chi-square, 1%)") {
  Rng rng(2);
  std::vector<int> y(1000);
  for (auto& v : y) v = static_cast<int>(rng.index(10));
  auto fake = sg_fake_batch(y, 10, rng);
  // Offset (fake - y) mod 10 is uniform on 1..9 under the null.
  std::vector<double> counts(9, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) counts[static_cast<std::size_t>((fake[i] - y[i] + 10) % 10 - 1)] += 1;
  const double expected = 1000.0 / 9.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 20.090);  // chi-square 0.99 quantile, 8 dof
}

TEST_CASE("sg_score construction cases") {
  Rng rng(3);
  std::vector<std::vector<double>> r{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  std::vector<std::vector<double>> f{{-1, -2, -3}};
  CHECK(sg_score(f, r, rng) == doctest::Approx(1.0));
  std::vector<std::vector<double>> same{{1, 2, 3}};
  CHECK(sg_score(same, r, rng) == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)sg_score({}, r, rng), ContractError);
  std::vector<std::vector<double>> one{{1, 2, 3}};
  CHECK_THROWS_AS((void)sg_score(f, one, rng), ContractError);
}

TEST_CASE("zero vectors have angle zero") {
  std::vector<double> z{0, 0}, v{1, 0}, w{-1, 0};
  CHECK(vector_angle(z, v) == 0.0);
  CHECK(vector_angle(v, w) == doctest::Approx(std::acos(-1.0)));
}

TEST_CASE("sg_score and gs_score are rotation invariant") {
  Rng rng(4);
  const std::size_t d = 6;
  std::vector<double> base(d);
  for (auto& x : base) x = rng.normal();
  auto r = noisy_copies(base, 10, 0.3, rng);
  auto f = noisy_copies(base, 1, 2.0, rng);
  auto q = random_rotation(d, rng);
  std::vector<std::vector<double>> rr, rf;
  for (const auto& v : r) rr.push_back(rotate(q, v));
  for (const auto& v : f) rf.push_back(rotate(q, v));
  Rng h1(7), h2(7);
  CHECK(sg_score(f, r, h1) == doctest::Approx(sg_score(rf, rr, h2)).epsilon(1e-9));

  Tensor g = Tensor::zeros({10, d}), gr = Tensor::zeros({10, d});
  std::vector<int> labels;
  for (std::size_t i = 0; i < 10; ++i) {
    auto rot = rotate(q, r[i]);
    for (std::size_t k = 0; k < d; ++k) {
      g.at(i, k) = r[i][k];
      gr.at(i, k) = rot[k];
    }
    labels.push_back(static_cast<int>(i % 3));
  }
  CHECK(*gs_score(g, labels) == doctest::Approx(*gs_score(gr, labels)).epsilon(1e-9));
}

TEST_CASE("sg_score averaged over 20 halvings is stable") {
  Rng data(5);
  std::vector<double> base(8);
  for (auto& x : base) x = data.normal();
  auto r = noisy_copies(base, 10, 0.5, data);
  auto f = noisy_copies(base, 1, 1.5, data);
  std::vector<double> means;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    double total = 0.0;
    for (int k = 0; k < 20; ++k) total += sg_score(f, r, rng);
    means.push_back(total / 20.0);
  }
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  CHECK(*hi - *lo < 0.05);
}

TEST_CASE("SG decision uses a strict trailing-window threshold and never reverts") {
  SgState ones;
  for (int i = 0; i < 10; ++i) ones.update(1.0);
  CHECK(ones.decision == Decision::undetected);

  SgState halves;
  for (int i = 0; i < 10; ++i) halves.update(0.5);
  CHECK(halves.decision == Decision::detected);
  for (int i = 0; i < 20; ++i) halves.update(1.0);
  CHECK(halves.decision == Decision::detected);

  SgState boundary;
  for (int i = 0; i < 9; ++i) boundary.update(0.9);
  boundary.update(0.8);  // mean 0.89
  CHECK(boundary.trailing_mean() == doctest::Approx(0.89));
  CHECK(boundary.decision == Decision::detected);

  SgState exact;
  for (int i = 0; i < 10; ++i) exact.update(0.9);
  CHECK(exact.decision == Decision::undetected);
}

TEST_CASE("SplitGuard scores only fake rounds") {
  SplitGuard sg(SgState{}, 10, 1);
  std::vector<double> g{1, 2, 3};
  CHECK_FALSE(sg.observe(g, false).has_value());
  CHECK_FALSE(sg.observe(g, true).has_value());  // one regular gradient is not enough
  CHECK_FALSE(sg.observe(g, false).has_value());
  std::vector<double> fake{-1, -2, -3};
  auto s = sg.observe(fake, true);
  REQUIRE(s.has_value());
  CHECK(*s == doctest::Approx(1.0));
  CHECK(sg.state().score_history.size() == 1);
}

TEST_CASE("gs_score construction cases and skip rule") {
  auto g = Tensor::matrix({{0, 0}, {0, 0}, {1, 0}, {1, 0}});
  std::vector<int> y{0, 0, 1, 1};
  CHECK(*gs_score(g, y) == doctest::Approx(1.0));
  auto flat = Tensor::matrix({{2, 1}, {2, 1}, {2, 1}});
  std::vector<int> y3{0, 1, 1};
  CHECK(*gs_score(flat, y3) == doctest::Approx(0.5));
  std::vector<int> single{1, 1, 1};
  CHECK_FALSE(gs_score(flat, single).has_value());
  CHECK_FALSE(gs_score(Tensor::matrix({{1, 2}}), std::vector<int>{0}).has_value());
}

TEST_CASE("GS running average threshold") {
  GsState s;
  s.update(0.9);
  s.update(0.8);
  CHECK(s.running_average() == doctest::Approx(0.85));
  CHECK(s.decision == Decision::undetected);
  s.update(0.5);
  CHECK(s.decision == Decision::detected);
  s.update(1.0);
  s.update(1.0);
  CHECK(s.decision == Decision::detected);
}

TEST_CASE("KS statistic and critical value") {
  std::vector<double> a(200), b(200);
  for (std::size_t i = 0; i < 200; ++i) {
    a[i] = static_cast<double>(i);
    b[i] = 1000.0 + static_cast<double>(i);
  }
  CHECK(ks_statistic(a, a) == 0.0);
  CHECK(ks_statistic(a, b) == 1.0);
  CHECK(ks_critical_value(100, 100, 0.01) == doctest::Approx(1.6276 * std::sqrt(0.02)).epsilon(1e-4));

  GradNormProfile p, q;
  p.add(a);
  q.add(b);
  CHECK(compare_profiles(p, q) == 1.0);
  GradNormProfile small;
  small.add(std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS((void)compare_profiles(p, small), ContractError);
  CHECK_THROWS_AS(small.add(std::vector<double>{-1.0}), ContractError);

  auto h = p.histogram(4);
  CHECK(h.edges.size() == 5);
  std::size_t total = 0;
  for (auto c : h.counts) total += c;
  CHECK(total == 200);
  CHECK(h.counts[0] == 50);
}

TEST_CASE("profiles keep per-round norms and thin to one per round") {
  GradNormProfile p;
  Rng rng(1);
  for (int r = 0; r < 300; ++r) {
    std::vector<double> round(32);
    for (auto& v : round) v = std::abs(rng.normal()) + r;
    p.add(round);
  }
  CHECK(p.rounds.size() == 300);
  for (const auto& r : p.rounds) CHECK(r.size() == 32);
  CHECK(p.size() == 9600);
  Rng t(2);
  auto tail = p.thinned(200, t);
  REQUIRE(tail.size() == 200);
  CHECK(tail.front() >= 100.0);
  CHECK(tail.front() < 110.0);
  CHECK(p.thinned(0, t).size() == 300);

  auto same = profile_test(p, p, 0.01, 200, 5);
  CHECK(same.ks < same.critical);
  GradNormProfile shifted;
  for (const auto& r : p.rounds) {
    std::vector<double> s = r;
    for (auto& v : s) v += 50.0;
    shifted.add(s);
  }
  auto diff = profile_test(p, shifted, 0.01, 200, 5);
  CHECK(diff.flagged);
  CHECK(diff.critical == doctest::Approx(ks_critical_value(200, 200, 0.01)));
  GradNormProfile tiny;
  tiny.add(std::vector<double>(50, 1.0));
  CHECK_THROWS_AS((void)profile_test(tiny, tiny, 0.01, 0, 1), ContractError);
}

TEST_CASE("KS handles ties") {
  std::vector<double> a{1, 1, 2, 2}, b{1, 2, 2, 2};
  CHECK(ks_statistic(a, b) == doctest::Approx(0.25));
}
