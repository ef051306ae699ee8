#include <doctest.h>

#include <cmath>

#include "svmix/mixer.hpp"

using namespace svmix;

namespace {

VideoBatch toy_batch(std::size_t b, std::size_t t, std::size_t h,
                     std::size_t w, std::size_t k, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "mixer-test");
  std::vector<double> v(b * t * h * w);
  for (auto& x : v) x = rng.uniform();
  VideoBatch out;
  out.frames = Tensor::from_data({b, t, h, w, 1}, v);
  std::vector<double> lab(b * k, 0.0);
  for (std::size_t i = 0; i < b; ++i) lab[i * k + i % k] = 1.0;
  out.labels = Tensor::from_data({b, k}, lab);
  out.ids.resize(b);
  for (std::size_t i = 0; i < b; ++i) out.ids[i] = seed * 100 + i;
  return out;
}

MixMask constant_mask(std::size_t b, std::size_t t, std::size_t h,
                      std::size_t w, double value,
                      std::vector<double> lambdas,
                      MaskKind kind = MaskKind::Spatial) {
  MixMask m;
  m.weights = Tensor::full({b, t, h, w}, value);
  m.lambdas = std::move(lambdas);
  m.kind = kind;
  return m;
}

}  // namespace

TEST_CASE("an all-ones mask returns the first clip bit for bit") {
  VideoBatch a = toy_batch(2, 3, 4, 4, 2, 1);
  VideoBatch b = toy_batch(2, 3, 4, 4, 2, 2);

  MixedBatch keep = apply_mask(a, b, constant_mask(2, 3, 4, 4, 1.0, {0.3, 0.8}));
  CHECK(keep.frames.values() == a.frames.values());

  MixedBatch drop = apply_mask(a, b, constant_mask(2, 3, 4, 4, 0.0, {0.3, 0.8}));
  CHECK(drop.frames.values() == b.frames.values());
}

TEST_CASE("a half mask is the exact midpoint") {
  VideoBatch a = toy_batch(1, 2, 2, 2, 2, 3);
  VideoBatch b = toy_batch(1, 2, 2, 2, 2, 4);
  MixedBatch m = apply_mask(a, b, constant_mask(1, 2, 2, 2, 0.5, {0.5}));
  for (std::size_t i = 0; i < m.frames.size(); ++i)
    CHECK(std::abs(m.frames.values()[i] - 0.5 * (a.frames.values()[i] +
                                                 b.frames.values()[i])) <
          1e-16);
}

TEST_CASE("labels mix by the sampled proportion, not the mask mean") {
  VideoBatch a = toy_batch(2, 2, 2, 2, 3, 5);  // classes 0, 1
  VideoBatch b = toy_batch(2, 2, 2, 2, 3, 6);  // classes 0, 1
  // Mask value far from lambda on purpose.
  MixedBatch m = apply_mask(a, b, constant_mask(2, 2, 2, 2, 0.9, {0.35, 0.6}));
  const auto& y = m.soft_labels.values();
  CHECK(y[0] == doctest::Approx(0.35 + 0.65).epsilon(1e-12));  // same class
  CHECK(y[3 + 1] == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += y[r * 3 + k];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  VideoBatch c = toy_batch(2, 2, 2, 2, 3, 7);
  std::vector<double> moved(c.labels.values());
  std::swap(moved[0], moved[1]);  // class 1 instead of 0
  std::swap(moved[3 + 1], moved[3 + 2]);
  VideoBatch d = c;
  d.labels = Tensor::from_data({2, 3}, moved);
  MixedBatch mixed = apply_mask(c, d, constant_mask(2, 2, 2, 2, 0.1, {0.35, 0.6}));
  const auto& z = mixed.soft_labels.values();
  CHECK(std::abs(z[0] - 0.35) < 1e-12);
  CHECK(std::abs(z[1] - 0.65) < 1e-12);
  CHECK(std::abs(z[3 + 1] - 0.6) < 1e-12);
  CHECK(std::abs(z[3 + 2] - 0.4) < 1e-12);
}

TEST_CASE("blended pixels stay inside the convex hull of their sources") {
  VideoBatch a = toy_batch(2, 3, 4, 4, 2, 8);
  VideoBatch b = toy_batch(2, 3, 4, 4, 2, 9);
  Rng rng = Rng::stream(10, "hull");
  std::vector<double> w(2 * 3 * 4 * 4);
  for (auto& x : w) x = rng.uniform();
  MixMask m;
  m.weights = Tensor::from_data({2, 3, 4, 4}, w);
  m.lambdas = {0.4, 0.7};
  MixedBatch mixed = apply_mask(a, b, m);
  for (std::size_t i = 0; i < mixed.frames.size(); ++i) {
    double lo = std::min(a.frames.values()[i], b.frames.values()[i]);
    double hi = std::max(a.frames.values()[i], b.frames.values()[i]);
    CHECK(mixed.frames.values()[i] >= lo - 1e-12);
    CHECK(mixed.frames.values()[i] <= hi + 1e-12);
  }
}

TEST_CASE("mask application validates shapes and proportions") {
  VideoBatch a = toy_batch(2, 3, 4, 4, 2, 11);
  VideoBatch b = toy_batch(2, 3, 4, 4, 2, 12);
  CHECK_THROWS_AS(apply_mask(a, b, constant_mask(2, 3, 4, 2, 0.5, {0.5, 0.5})),
                  ContractError);
  CHECK_THROWS_AS(apply_mask(a, b, constant_mask(2, 3, 4, 4, 0.5, {0.5})),
                  ContractError);
  VideoBatch c = toy_batch(2, 3, 4, 4, 3, 13);
  CHECK_THROWS_AS(apply_mask(a, c, constant_mask(2, 3, 4, 4, 0.5, {0.5, 0.5})),
                  ContractError);
}

TEST_CASE("the gradient through the mask is the pixel difference") {
  VideoBatch a = toy_batch(1, 2, 2, 2, 2, 14);
  VideoBatch b = toy_batch(1, 2, 2, 2, 2, 15);
  Tensor mw = Tensor::full({1, 2, 2, 2}, 0.5, true);
  MixMask m;
  m.weights = mw;
  m.lambdas = {0.5};
  MixedBatch mixed = apply_mask(a, b, m);
  sum_all(mixed.frames).backward();
  const auto& g = mw.grad();
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(std::abs(g[i] -
                   (a.frames.values()[i] - b.frames.values()[i])) < 1e-15);
}

TEST_CASE("constant-blend baseline reproduces its closed form") {
  VideoBatch a = toy_batch(2, 2, 2, 2, 2, 16);
  VideoBatch b = toy_batch(2, 2, 2, 2, 2, 17);
  MixedBatch m = mixup_baseline(a, b, {0.35, 0.8});
  CHECK(m.method == MixMethod::Mixup);
  const std::size_t clip = 2 * 2 * 2;
  for (std::size_t s = 0; s < 2; ++s) {
    const double lam = s == 0 ? 0.35 : 0.8;
    for (std::size_t i = 0; i < clip; ++i) {
      double expect = lam * a.frames.values()[s * clip + i] +
                      (1 - lam) * b.frames.values()[s * clip + i];
      CHECK(std::abs(m.frames.values()[s * clip + i] - expect) < 1e-15);
    }
  }
  CHECK_THROWS_AS(mixup_baseline(a, b, {0.0, 0.5}), ParamError);
}

TEST_CASE("rectangle baseline pastes one aligned box on every frame") {
  VideoBatch a = toy_batch(2, 3, 4, 4, 2, 18);
  VideoBatch b = toy_batch(2, 3, 4, 4, 2, 19);
  Rng rng = Rng::stream(20, "cutbox");
  MixedBatch m = cutmix_baseline(a, b, {0.75, 0.75}, rng);
  CHECK(m.method == MixMethod::Cutmix);

  const auto& w = m.mask_used.weights.values();
  for (std::size_t s = 0; s < 2; ++s) {
    // The hole is identical on every frame.
    for (std::size_t t = 1; t < 3; ++t)
      for (std::size_t px = 0; px < 16; ++px)
        CHECK(w[(s * 3 + t) * 16 + px] == w[(s * 3) * 16 + px]);
    // Mask entries are exactly 0 or 1 and the kept fraction is the label
    // proportion.
    double kept = 0.0;
    for (std::size_t px = 0; px < 16; ++px) {
      double v = w[s * 3 * 16 + px];
      CHECK((v == 0.0 || v == 1.0));
      kept += v;
    }
    CHECK(m.lambdas[s] == kept / 16.0);
    // target 0.75 with a 4x4 frame: the 2x2 box never clips, so exactly.
    CHECK(m.lambdas[s] == 0.75);
  }

  SUBCASE("clipped boxes recompute the proportion from the kept area") {
    // Partner batch with opposite classes, so the label row exposes lambda.
    VideoBatch bf = b;
    std::vector<double> flipped(b.labels.values());
    for (std::size_t s = 0; s < 2; ++s)
      std::swap(flipped[s * 2], flipped[s * 2 + 1]);
    bf.labels = Tensor::from_data({2, 2}, flipped);

    Rng rng2 = Rng::stream(21, "cutbox");
    bool saw_adjusted = false;
    for (int trial = 0; trial < 40; ++trial) {
      MixedBatch c = cutmix_baseline(a, bf, {0.1, 0.1}, rng2);
      for (std::size_t s = 0; s < 2; ++s) {
        const auto& cw = c.mask_used.weights.values();
        double kept = 0.0;
        for (std::size_t px = 0; px < 16; ++px) kept += cw[s * 3 * 16 + px];
        CHECK(c.lambdas[s] == kept / 16.0);
        if (std::abs(c.lambdas[s] - 0.1) > 0.05) saw_adjusted = true;
        // a's class for sample s is s; the mixed row there must be the
        // corrected proportion, not the requested 0.1.
        const auto& y = c.soft_labels.values();
        CHECK(std::abs(y[s * 2 + s % 2] - c.lambdas[s]) < 1e-12);
      }
    }
    CHECK(saw_adjusted);
  }
}

TEST_CASE("the ensemble draw follows the switch probability") {
  FeatureGrid zi, zj;
  Rng fr = Rng::stream(22, "feat");
  std::vector<double> v1(2 * 2 * 2 * 2 * 4), v2(v1.size());
  for (auto& x : v1) x = fr.normal();
  for (auto& x : v2) x = fr.normal();
  zi.values = Tensor::from_data({2, 2, 2, 2, 4}, v1);
  zj.values = Tensor::from_data({2, 2, 2, 2, 4}, v2);
  zi.factor_t = zj.factor_t = 2;
  zi.factor_h = zj.factor_h = 2;
  zi.factor_w = zj.factor_w = 2;
  SelectorConfig scfg;
  scfg.d_k = 4;
  SelectorBank bank = SelectorBank::init(4, scfg, 23, true, false);
  std::vector<double> lambdas{0.4, 0.6};

  SUBCASE("endpoints never switch") {
    EnsemblePolicy p;
    p.switch_prob = 1.0;
    Rng rng = Rng::stream(24, "mu");
    for (int i = 0; i < 50; ++i)
      CHECK(ensemble_select_from_features(zi, zj, lambdas, bank, p, rng)
                .mask.kind == MaskKind::Temporal);
    p.switch_prob = 0.0;
    for (int i = 0; i < 50; ++i)
      CHECK(ensemble_select_from_features(zi, zj, lambdas, bank, p, rng)
                .mask.kind == MaskKind::Spatial);
  }

  SUBCASE("a fair switch visits both branches and records the draw") {
    EnsemblePolicy p;
    Rng rng = Rng::stream(25, "mu");
    int temporal = 0;
    for (int i = 0; i < 200; ++i) {
      EnsembleChoice c =
          ensemble_select_from_features(zi, zj, lambdas, bank, p, rng);
      CHECK(c.mu > 0.0);
      CHECK(c.mu < 1.0);
      if (c.mask.kind == MaskKind::Temporal) ++temporal;
    }
    CHECK(temporal > 60);
    CHECK(temporal < 140);
  }

  SUBCASE("averaging halves the two kind masks") {
    EnsemblePolicy p;
    p.mode = EnsemblePolicy::Mode::Average;
    Rng rng = Rng::stream(26, "mu");
    EnsembleChoice c =
        ensemble_select_from_features(zi, zj, lambdas, bank, p, rng);
    CHECK(c.mask.kind == MaskKind::Averaged);
    CHECK(c.mu == -1.0);
    MixMask tem = select_from_features(zi, zj, lambdas, MaskKind::Temporal,
                                       bank.for_kind(MaskKind::Temporal));
    MixMask spa = select_from_features(zi, zj, lambdas, MaskKind::Spatial,
                                       bank.for_kind(MaskKind::Spatial));
    for (std::size_t i = 0; i < c.mask.weights.size(); ++i)
      CHECK(c.mask.weights.values()[i] ==
            0.5 * tem.weights.values()[i] + 0.5 * spa.weights.values()[i]);
  }

  SUBCASE("invalid switch probabilities are rejected") {
    EnsemblePolicy p;
    p.switch_prob = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
}
