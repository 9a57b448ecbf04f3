#include <doctest.h>

#include <cmath>
#include <numeric>

#include "urvfl/attack.hpp"
#include "urvfl/error.hpp"

using namespace urvfl;

namespace {

struct AttackFixture {
  Dataset aux_ds, train_ds, test_ds;
  VerticalPartition partition;
  VflSystem sys;
  ClientViews train_views, test_views;
  AttackView aux, train, test;
  AttackModels models;

  AttackFixture(std::uint64_t seed, AttackVariant variant = AttackVariant::urvfl,
                std::vector<double> fractions = {0.25, 0.75}, int classes = 2,
                std::size_t dims = 8, std::size_t per_class = 300) {
    auto ds = generate_gaussian_mixture({classes, dims, per_class, 4.0}, seed);
    auto splits = make_splits(standardize(ds).first, {0.25, 0.2, seed});
    aux_ds = splits.aux;
    train_ds = splits.train;
    test_ds = splits.test;
    partition = vertical_partition(dims, fractions);
    Rng rng(seed + 11);
    const BottomSpec bottom{{16}, 8};
    sys = build_system(partition, classes, bottom, std::nullopt, rng);
    const auto targets = partition.all_passive_columns();
    models = build_attack_models(partition, bottom, targets.size(), classes, variant, {}, rng);
    train_views = ClientViews::make(train_ds, partition);
    test_views = ClientViews::make(test_ds, partition);
    aux = AttackView::make(aux_ds, partition, targets);
    train = AttackView::make(train_ds, partition, targets);
    test = AttackView::make(test_ds, partition, targets);
  }

  [[nodiscard]] EmbeddingDistance test_distance() const {
    return embedding_distances(models.encoder.evaluate(test.passive),
                               passive_embeddings(sys.passive_bottoms, test_views));
  }

  [[nodiscard]] double test_recon_mse() const {
    auto recon = reconstruct(models, test.adversary, passive_embeddings(sys.passive_bottoms, test_views));
    double s = 0.0;
    for (std::size_t k = 0; k < recon.numel(); ++k) {
      const double d = recon.values[k] - test.target.values[k];
      s += d * d;
    }
    return s / static_cast<double>(recon.numel());
  }

  void pretrain(AttackOptimizers& opt, std::size_t epochs, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t e = 0; e < epochs; ++e) (void)pretrain_epoch(models, aux, opt, 32, rng);
  }

  void freeze() {
    models.freeze("encoder");
    if (models.adversary_bottom) models.freeze("adversary_bottom");
  }

  std::vector<RoundRecord> attack_rounds(AttackVariant variant, AttackOptimizers& opt,
                                         std::size_t rounds, std::uint64_t seed) {
    auto popt = VflOptimizers::uniform(sys, {OptimizerKind::adam, 1e-3}).passive;
    AttackActive active(variant, models, opt, aux, 32, seed);
    Rng batch_rng(seed + 1);
    std::vector<RoundRecord> out;
    std::size_t round = 0;
    while (round < rounds) {
      for (const auto& rows : epoch_batches(train_views.size(), 32, batch_rng)) {
        if (round == rounds) break;
        out.push_back(protocol_round(round++, sys.passive_bottoms, popt, train_views, rows, active));
      }
    }
    return out;
  }
};

std::vector<Tensor> split_embeddings(const AttackFixture& f, std::span<const std::size_t> rows) {
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < f.sys.passive_bottoms.size(); ++n)
    out.push_back(f.sys.passive_bottoms[n].evaluate(gather_rows(f.train_views.passive[n], rows)));
  return out;
}

std::vector<int> labels_of(const AttackFixture& f, std::span<const std::size_t> rows) {
  std::vector<int> y;
  for (auto r : rows) y.push_back(f.train_views.labels[r]);
  return y;
}

bool same_values(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].shape != b[i].shape || a[i].values != b[i].values) return false;
  return true;
}

}  // namespace

TEST_CASE("DAC label map round-trips and keeps real/fake disjoint") {
  DacLabelMap map{5};
  std::vector<int> seen(map.width(), 0);
  for (int y = 0; y < 5; ++y) {
    CHECK(map.decode(map.real(y)) == std::make_pair(y, true));
    CHECK(map.decode(map.fake(y)) == std::make_pair(y, false));
    ++seen[map.real(y)];
    ++seen[map.fake(y)];
  }
  for (int c : seen) CHECK(c == 1);
  CHECK_THROWS_AS((void)map.real(5), ContractError);
  CHECK_THROWS_AS((void)map.decode(10), ContractError);
}

TEST_CASE("attack model dimensions follow the partition") {
  AttackFixture f(1, AttackVariant::urvfl, {0.25, 0.375, 0.375});
  CHECK(f.models.encoder.input_dim() == 6);
  CHECK(f.models.encoder.output_dim() == 16);
  CHECK(f.models.decoder.input_dim() == 24);
  CHECK(f.models.decoder.output_dim() == 6);
  CHECK(f.models.dac.input_dim() == 16);
  CHECK(f.models.dac.output_dim() == 4);

  AttackFixture plain(1, AttackVariant::plain_discriminator);
  CHECK(plain.models.dac.output_dim() == 2);
}

TEST_CASE("target columns must belong to passive clients") {
  AttackFixture f(2);
  std::vector<std::size_t> bad{0};
  CHECK_THROWS_AS((void)AttackView::make(f.train_ds, f.partition, bad), ContractError);
}

TEST_CASE("zero pretraining epochs leave models bit-identical") {
  AttackFixture f(3);
  const auto before = f.models.encoder.checksum() ^ f.models.decoder.checksum();
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 1e-3});
  f.pretrain(opt, 0, 5);
  CHECK((f.models.encoder.checksum() ^ f.models.decoder.checksum()) == before);
}

TEST_CASE("pretraining reduces reconstruction loss") {
  AttackFixture f(4);
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 3e-3});
  Rng rng(9);
  const double first = pretrain_epoch(f.models, f.aux, opt, 32, rng);
  double last = first;
  for (int e = 1; e < 30; ++e) last = pretrain_epoch(f.models, f.aux, opt, 32, rng);
  CHECK(last < 0.2 * first);
}

TEST_CASE("linear toy data reconstructs almost exactly") {
  // Rank-2 linear data in 4 passive columns, identity-capable decoder.
  Rng rng(77);
  Dataset ds;
  ds.num_classes = 2;
  ds.features = Tensor::zeros({400, 5});
  for (std::size_t i = 0; i < 400; ++i) {
    const double a = rng.normal(), b = rng.normal();
    const double row[5] = {rng.normal(), a, b, a + b, a - 0.5 * b};
    for (int j = 0; j < 5; ++j) ds.features.at(i, j) = row[j];
    ds.labels.push_back(a > 0 ? 1 : 0);
  }
  const std::vector<double> fractions{0.2, 0.8};
  auto partition = vertical_partition(5, fractions);
  Rng init(3);
  auto models = build_attack_models(partition, {{16}, 8}, 4, 2, AttackVariant::urvfl, {}, init);
  auto aux = AttackView::make(ds, partition, partition.all_passive_columns());
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 3e-3});
  Rng brng(4);
  double loss = 1.0;
  for (int e = 0; e < 150; ++e) loss = pretrain_epoch(models, aux, opt, 32, brng);
  CHECK(loss < 1e-2);
}

TEST_CASE("malicious round gradients match embedding shapes and keep fe frozen") {
  AttackFixture f(5, AttackVariant::urvfl, {0.25, 0.375, 0.375});
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 1e-3});
  std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5, 6};
  auto h = split_embeddings(f, rows);
  auto y = labels_of(f, rows);
  std::vector<std::size_t> aux_rows{0, 1, 2, 3};

  CHECK_THROWS_AS(malicious_round(f.models, h, y, f.aux.rows(aux_rows), opt), ContractError);
  f.freeze();
  const auto enc = f.models.encoder.checksum();
  const auto adv = f.models.adversary_bottom->checksum();
  for (int r = 0; r < 5; ++r) {
    auto step = malicious_round(f.models, h, y, f.aux.rows(aux_rows), opt);
    REQUIRE(step.gradients.size() == 2);
    for (std::size_t n = 0; n < 2; ++n) CHECK(step.gradients[n].shape == h[n].shape);
  }
  CHECK(f.models.encoder.checksum() == enc);
  CHECK(f.models.adversary_bottom->checksum() == adv);

  std::vector<int> short_labels(y.begin(), y.begin() + 3);
  CHECK_THROWS_AS(malicious_round(f.models, h, short_labels, f.aux.rows(aux_rows), opt), ContractError);

  // Tampering with a frozen model is caught.
  f.models.encoder.parameters()[0].values[0] += 1e-9;
  CHECK_THROWS_AS(malicious_round(f.models, h, y, f.aux.rows(aux_rows), opt), ContractError);
}

TEST_CASE("DAC gradients depend on labels, plain discriminator gradients do not") {
  AttackFixture f(6);
  AttackFixture p(6, AttackVariant::plain_discriminator);
  f.freeze();
  p.freeze();
  auto opt = AttackOptimizers::uniform({OptimizerKind::sgd, 0.0});
  std::vector<std::size_t> rows(16);
  std::iota(rows.begin(), rows.end(), 0);
  auto y = labels_of(f, rows);
  std::vector<int> flipped;
  for (int v : y) flipped.push_back(1 - v);
  const AttackView empty;

  auto h = split_embeddings(f, rows);
  auto a = malicious_round(f.models, h, y, empty, opt).gradients;
  auto b = malicious_round(f.models, h, flipped, empty, opt).gradients;
  CHECK_FALSE(same_values(a, b));

  auto hp = split_embeddings(p, rows);
  auto c = plain_discriminator_round(p.models, hp, empty, opt).gradients;
  auto d = plain_discriminator_round(p.models, hp, empty, opt).gradients;
  CHECK(same_values(c, d));
  CHECK(c[0].shape == hp[0].shape);
}

TEST_CASE("DAC loss decomposes into fake and real terms") {
  AttackFixture f(7);
  f.freeze();
  auto opt = AttackOptimizers::uniform({OptimizerKind::sgd, 0.0});
  std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  auto h = split_embeddings(f, rows);
  auto y = labels_of(f, rows);
  const DacLabelMap map{2};
  std::vector<int> fake, real;
  for (int v : y) {
    fake.push_back(map.fake(v));
    real.push_back(map.real(v));
  }
  auto logits = f.models.dac.evaluate(hconcat(h));
  Tape t;
  const double ce_fake = cross_entropy_loss(t.constant(logits), fake).value().item();
  const double ce_real = cross_entropy_loss(t.constant(logits), real).value().item();

  auto empty_step = malicious_round(f.models, h, y, AttackView{}, opt);
  CHECK(empty_step.dac_loss == doctest::Approx(ce_fake).epsilon(1e-12));
  CHECK(empty_step.malicious_loss == doctest::Approx(ce_real).epsilon(1e-12));

  // Encoder copied into the target model on identical inputs: both terms see the same logits.
  AttackView same = f.train.rows(rows);
  std::vector<Tensor> enc_h{f.models.encoder.evaluate(same.passive)};
  auto enc_logits = f.models.dac.evaluate(enc_h[0]);
  const double f2 = cross_entropy_loss(t.constant(enc_logits), fake).value().item();
  const double r2 = cross_entropy_loss(t.constant(enc_logits), real).value().item();
  auto step = malicious_round(f.models, enc_h, y, same, opt);
  CHECK(step.dac_loss == doctest::Approx(f2 + r2).epsilon(1e-12));
}

TEST_CASE("sync round with zero encoder/decoder rates equals the frozen round") {
  AttackFixture a(8), b(8);
  a.freeze();
  auto opt_a = AttackOptimizers::uniform({OptimizerKind::adam, 1e-3});
  auto opt_b = AttackOptimizers::uniform({OptimizerKind::adam, 1e-3});
  for (auto* o : {&opt_b.encoder, &opt_b.decoder, &opt_b.adversary}) o->set_learning_rate(0.0);
  auto ra = a.attack_rounds(AttackVariant::urvfl, opt_a, 12, 21);
  auto rb = b.attack_rounds(AttackVariant::urvfl_sync, opt_b, 12, 21);
  for (std::size_t r = 0; r < ra.size(); ++r) {
    CHECK(same_values(ra[r].gradients, rb[r].gradients));
    CHECK(ra[r].loss == rb[r].loss);
  }
  CHECK(a.models.dac.checksum() == b.models.dac.checksum());
  CHECK(a.models.encoder.checksum() == b.models.encoder.checksum());
}

TEST_CASE("sync reconstruction loss trends down") {
  AttackFixture f(9, AttackVariant::urvfl_sync);
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 3e-3});
  auto recs = f.attack_rounds(AttackVariant::urvfl_sync, opt, 30, 2);
  auto lr_at = [&](std::size_t r) {
    for (const auto& [k, v] : recs[r].extras)
      if (k == "L_R") return v;
    return -1.0;
  };
  double first = 0.0, last = 0.0;
  for (std::size_t r = 0; r < 10; ++r) {
    first += lr_at(r);
    last += lr_at(20 + r);
  }
  CHECK(last < first);
}

TEST_CASE("embedding distances") {
  auto e = Tensor::matrix({{1, 2, 3}, {0, -1, 4}});
  auto same = embedding_distances(e, e);
  CHECK(same.mse == 0.0);
  CHECK(same.cosine == doctest::Approx(0.0).epsilon(1e-15));
  auto x = Tensor::matrix({{1, 0}, {0, 1}});
  auto y = Tensor::matrix({{0, 1}, {1, 0}});
  CHECK(embedding_distances(x, y).cosine == doctest::Approx(1.0));
  auto z = Tensor::matrix({{0, 0}, {0, 1}});
  auto d = embedding_distances(z, x);
  CHECK(d.zero_norm_rows == 1);
  CHECK(d.cosine == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)embedding_distances(x, Tensor::matrix({{1, 0, 0}})), ShapeError);
}

TEST_CASE("reconstruct output width and pretrained decoder beats untrained") {
  AttackFixture f(10);
  auto h = passive_embeddings(f.sys.passive_bottoms, f.test_views);
  auto untrained = f.models;
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 3e-3});
  f.pretrain(opt, 30, 1);
  auto recon = reconstruct(f.models, f.test.adversary, h);
  CHECK(recon.cols() == f.test.target.cols());
  CHECK(recon.values == reconstruct(f.models, f.test.adversary, h).values);

  // Hold-out: test rows fed through the encoder (same population as aux).
  auto mse = [&](const AttackModels& m) {
    auto r = reconstruct(m, f.test.adversary, m.encoder.evaluate(f.test.passive));
    double s = 0.0;
    for (std::size_t k = 0; k < r.numel(); ++k) s += std::pow(r.values[k] - f.test.target.values[k], 2);
    return s / static_cast<double>(r.numel());
  };
  CHECK(mse(f.models) < 0.5 * mse(untrained));
  CHECK_THROWS_AS((void)reconstruct(f.models, f.test.adversary, Tensor::zeros({f.test.size(), 3})),
                  ShapeError);
}

TEST_CASE("split-learning mode: adversary owns no features") {
  AttackFixture f(11, AttackVariant::urvfl, {0.0, 1.0});
  CHECK_FALSE(f.models.adversary_bottom.has_value());
  CHECK(f.models.decoder.input_dim() == 8);
  auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 3e-3});
  f.pretrain(opt, 5, 1);
  f.freeze();
  f.attack_rounds(AttackVariant::urvfl, opt, 20, 3);
  auto recon = reconstruct(f.models, f.test.adversary, passive_embeddings(f.sys.passive_bottoms, f.test_views));
  CHECK(recon.cols() == 8);
  CHECK(recon.all_finite());
}

TEST_CASE("DAC rounds pull the target model toward the encoder") {
  double start = 0.0, end = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AttackFixture f(100 + seed);
    auto opt = AttackOptimizers::uniform({OptimizerKind::adam, 1e-3});
    f.pretrain(opt, 30, seed);
    f.freeze();
    start += f.test_distance().cosine;
    f.attack_rounds(AttackVariant::urvfl, opt, 300, seed);
    end += f.test_distance().cosine;
  }
  MESSAGE("emb_cos start " << start / 5 << " end " << end / 5);
  CHECK(end < start);
}
