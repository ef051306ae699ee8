#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <unistd.h>
#include <map>
#include <set>

#include "svmix/dataset.hpp"
#include "svmix/recognizer.hpp"
#include "svmix/stats.hpp"

using namespace svmix;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.num_classes = 4;
  s.samples_per_class_train = 3;
  s.samples_per_class_val = 2;
  s.frames_t = 6;
  s.height = 16;
  s.width = 16;
  s.seed = 11;
  return s;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

// Index of a length-3 permutation in a fixed enumeration of all six.
std::size_t perm3_index(const std::vector<std::size_t>& p) {
  return p[0] * 2 + (p[1] > p[2] ? 1 : 0);
}

}  // namespace

TEST_CASE("generation is deterministic in the spec") {
  DatasetSpec s = tiny_spec();
  Dataset a = generate(s);
  Dataset b = generate(s);
  CHECK(bitwise_equal(a.train.frames, b.train.frames));
  CHECK(bitwise_equal(a.val.frames, b.val.frames));
  CHECK(bitwise_equal(a.train.labels, b.train.labels));
  CHECK(a.train.ids == b.train.ids);
  CHECK(a.val.ids == b.val.ids);

  s.seed = 12;
  Dataset c = generate(s);
  CHECK_FALSE(bitwise_equal(a.train.frames, c.train.frames));
}

TEST_CASE("splits are balanced, one-hot labeled, and disjoint") {
  DatasetSpec s = tiny_spec();
  Dataset ds = generate(s);

  CHECK(ds.train.batch_size() == s.num_classes * s.samples_per_class_train);
  CHECK(ds.val.batch_size() == s.num_classes * s.samples_per_class_val);
  CHECK(ds.train.num_classes() == s.num_classes);

  for (const VideoBatch* b : {&ds.train, &ds.val}) {
    std::vector<std::size_t> counts(s.num_classes, 0);
    const auto& lb = b->labels.values();
    for (std::size_t i = 0; i < b->batch_size(); ++i) {
      std::size_t ones = 0, cls = 0;
      for (std::size_t k = 0; k < s.num_classes; ++k) {
        double v = lb[i * s.num_classes + k];
        CHECK((v == 0.0 || v == 1.0));
        if (v == 1.0) { ++ones; cls = k; }
      }
      CHECK(ones == 1);
      ++counts[cls];
    }
    for (auto c : counts)
      CHECK(c == b->batch_size() / s.num_classes);
  }

  std::set<std::uint64_t> ids(ds.train.ids.begin(), ds.train.ids.end());
  for (auto id : ds.val.ids) ids.insert(id);
  CHECK(ids.size() == ds.train.batch_size() + ds.val.batch_size());
}

TEST_CASE("pixels stay in range; shapes live only in active frames") {
  DatasetSpec s = tiny_spec();
  Dataset ds = generate(s);
  const auto& v = ds.train.frames.values();
  for (double x : v) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }

  // The disc level sits far above background plus any plausible noise, so a
  // bright pixel marks the shape. Lead/trail frames must have none; every
  // active frame must have some.
  const std::size_t B = ds.train.batch_size();
  const std::size_t frame = s.height * s.width * s.channels;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < s.frames_t; ++t) {
      double mx = 0.0;
      const double* p = v.data() + (b * s.frames_t + t) * frame;
      for (std::size_t i = 0; i < frame; ++i) mx = std::max(mx, p[i]);
      const bool active = t >= s.bg_lead && t < s.frames_t - s.bg_trail;
      if (active)
        CHECK(mx > 0.7);
      else
        CHECK(mx < 0.7);
    }
  }
}

TEST_CASE("a static per-frame summary carries almost no class signal") {
  // Average all frames of a clip into one pooled image and fit a linear
  // classifier on it. Classes differ only in motion, so this must hover
  // near chance on held-out clips.
  DatasetSpec s;
  s.seed = 5;
  Dataset ds = generate(s);  // defaults: 4 classes, 8/32 per class, 32x32

  auto pool_features = [&](const VideoBatch& b) {
    // [B,T,H,W,C] -> mean over T -> 4x4 average blocks -> [B,64]
    Tensor m = mean(b.frames, 1);  // [B,H,W,C]
    Tensor img = reshape(m, {b.batch_size(), s.height, s.width});
    const auto& src = img.values();
    const std::size_t gh = s.height / 4, gw = s.width / 4;
    std::vector<double> out(b.batch_size() * gh * gw, 0.0);
    for (std::size_t i = 0; i < b.batch_size(); ++i)
      for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x)
          out[i * gh * gw + (y / 4) * gw + (x / 4)] +=
              src[(i * s.height + y) * s.width + x] / 16.0;
    return Tensor::from_data({b.batch_size(), gh * gw}, out);
  };

  Tensor ftr = pool_features(ds.train);
  Tensor fva = pool_features(ds.val);
  const std::size_t d = ftr.shape()[1];

  Rng rng = Rng::stream(99, "probe-init");
  Tensor w = randn_fan_in({d, s.num_classes}, d, rng, true);
  Tensor bias = Tensor::zeros({s.num_classes}, true);

  for (int step = 0; step < 400; ++step) {
    w.zero_grad();
    bias.zero_grad();
    Tensor logits = add(matmul(ftr, w),
                        repeat_axis(reshape(bias, {1, s.num_classes}), 0,
                                    ftr.shape()[0]));
    Tensor loss = soft_ce(logits, ds.train.labels);
    loss.backward();
    auto& wv = w.mutable_values();
    const auto& wg = w.grad();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= 0.5 * wg[i];
    auto& bv = bias.mutable_values();
    const auto& bg = bias.grad();
    for (std::size_t i = 0; i < bv.size(); ++i) bv[i] -= 0.5 * bg[i];
  }

  Tensor vlog = add(matmul(fva, w),
                    repeat_axis(reshape(bias, {1, s.num_classes}), 0,
                                fva.shape()[0]));
  double acc = accuracy(vlog, ds.val.labels);
  CHECK(acc <= 0.45);
}

TEST_CASE("an order-free per-frame vote stays near chance") {
  // Fit a linear classifier on single frames, then label each clip by the
  // majority vote of its frames' predictions. The vote ignores frame order,
  // so it can only use what a frame looks like, never how frames evolve.
  DatasetSpec s;
  s.seed = 5;
  Dataset ds = generate(s);
  const std::size_t K = s.num_classes, T = s.frames_t;

  auto frame_features = [&](const VideoBatch& b) {
    // [B,T,H,W,C] -> per-frame 4x4 average blocks -> [B*T,64]
    const std::size_t B = b.batch_size();
    const auto& src = b.frames.values();
    const std::size_t gh = s.height / 4, gw = s.width / 4;
    std::vector<double> out(B * T * gh * gw, 0.0);
    for (std::size_t i = 0; i < B * T; ++i)
      for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x)
          out[i * gh * gw + (y / 4) * gw + (x / 4)] +=
              src[(i * s.height + y) * s.width + x] / 16.0;
    return Tensor::from_data({B * T, gh * gw}, out);
  };
  auto frame_labels = [&](const VideoBatch& b) {
    const std::size_t B = b.batch_size();
    std::vector<double> out(B * T * K);
    const auto& lb = b.labels.values();
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k)
          out[(i * T + t) * K + k] = lb[i * K + k];
    return Tensor::from_data({B * T, K}, out);
  };

  Tensor ftr = frame_features(ds.train);
  Tensor ltr = frame_labels(ds.train);
  const std::size_t d = ftr.shape()[1];

  Rng rng = Rng::stream(99, "probe-init");
  Tensor w = randn_fan_in({d, K}, d, rng, true);
  Tensor bias = Tensor::zeros({K}, true);
  for (int step = 0; step < 400; ++step) {
    w.zero_grad();
    bias.zero_grad();
    Tensor logits = add(matmul(ftr, w),
                        repeat_axis(reshape(bias, {1, K}), 0, ftr.shape()[0]));
    Tensor loss = soft_ce(logits, ltr);
    loss.backward();
    auto& wv = w.mutable_values();
    const auto& wg = w.grad();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= 0.5 * wg[i];
    auto& bv = bias.mutable_values();
    const auto& bg = bias.grad();
    for (std::size_t i = 0; i < bv.size(); ++i) bv[i] -= 0.5 * bg[i];
  }

  Tensor fva = frame_features(ds.val);
  Tensor vlog = add(matmul(fva, w),
                    repeat_axis(reshape(bias, {1, K}), 0, fva.shape()[0]));
  const auto& lv = vlog.values();
  const auto& lb = ds.val.labels.values();
  const std::size_t B = ds.val.batch_size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<std::size_t> votes(K, 0);
    std::vector<double> lsum(K, 0.0);  // tie-break on summed logits
    for (std::size_t t = 0; t < T; ++t) {
      const double* row = lv.data() + (i * T + t) * K;
      std::size_t am = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (row[k] > row[am]) am = k;
      votes[am] += 1;
      for (std::size_t k = 0; k < K; ++k) lsum[k] += row[k];
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (votes[k] > votes[best] ||
          (votes[k] == votes[best] && lsum[k] > lsum[best]))
        best = k;
    std::size_t truth = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (lb[i * K + k] == 1.0) truth = k;
    if (best == truth) ++hits;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(B) <= 0.45);
}

TEST_CASE("take selects rows bitwise and validates indices") {
  DatasetSpec s = tiny_spec();
  Dataset ds = generate(s);
  std::vector<std::size_t> idx{3, 0, 7};
  VideoBatch sub = take(ds.train, idx);
  CHECK(sub.batch_size() == 3);
  const std::size_t clip = s.frames_t * s.height * s.width * s.channels;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    CHECK(sub.ids[r] == ds.train.ids[idx[r]]);
    for (std::size_t i = 0; i < clip; ++i)
      CHECK(sub.frames.values()[r * clip + i] ==
            ds.train.frames.values()[idx[r] * clip + i]);
  }
  CHECK_THROWS_AS(take(ds.train, {ds.train.batch_size()}), ContractError);
}

TEST_CASE("pairing applies one uniform permutation to the partner side") {
  DatasetSpec s = tiny_spec();
  Dataset ds = generate(s);
  Rng rng = Rng::stream(21, "pairing-test");

  PairedBatch pb = pair_batches(ds.train, rng);
  CHECK(pb.perm.size() == ds.train.batch_size());
  VideoBatch expect = take(ds.train, pb.perm);
  CHECK(bitwise_equal(pb.rhs.frames, expect.frames));
  CHECK(bitwise_equal(pb.lhs.frames, ds.train.frames));
  CHECK(pb.rhs.ids == expect.ids);

  SUBCASE("both two-element permutations occur") {
    VideoBatch two = take(ds.train, {0, 1});
    bool saw_id = false, saw_swap = false;
    for (int i = 0; i < 100; ++i) {
      PairedBatch p = pair_batches(two, rng);
      if (p.perm[0] == 0) saw_id = true;
      else saw_swap = true;
    }
    CHECK(saw_id);
    CHECK(saw_swap);
  }

  SUBCASE("three-element permutations are uniform") {
    VideoBatch three = take(ds.train, {0, 1, 2});
    std::vector<std::size_t> counts(6, 0);
    for (int i = 0; i < 600; ++i)
      counts[perm3_index(pair_batches(three, rng).perm)] += 1;
    CHECK(stats::chi_square_uniform(counts) < 20.5);
  }

  SUBCASE("a single sample cannot be paired") {
    VideoBatch one = take(ds.train, {0});
    CHECK_THROWS_AS(pair_batches(one, rng), ContractError);
  }
}

TEST_CASE("cache round-trips bitwise and rejects stale or corrupt files") {
  DatasetSpec s = tiny_spec();
  Dataset ds = generate(s);
  const std::string path = "dataset_cache_test.bin";
  save_dataset(path, s, ds);

  auto back = load_dataset(path, s);
  REQUIRE(back.has_value());
  CHECK(bitwise_equal(back->train.frames, ds.train.frames));
  CHECK(bitwise_equal(back->val.frames, ds.val.frames));
  CHECK(back->train.ids == ds.train.ids);

  SUBCASE("spec drift is reported as a miss, not an error") {
    DatasetSpec other = s;
    other.seed = 99;
    CHECK_FALSE(load_dataset(path, other).has_value());
    other = s;
    other.noise_std = 0.5;
    CHECK_FALSE(load_dataset(path, other).has_value());
  }

  SUBCASE("truncation is a format error") {
    FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f);
    std::fseek(f, 0, SEEK_END);
    long len = std::ftell(f);
    std::fclose(f);
    REQUIRE(truncate(path.c_str(), len / 2) == 0);
    CHECK_THROWS_AS(load_dataset(path, s), FormatError);
  }

  SUBCASE("a foreign file is a format error") {
    FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f);
    std::fputs("not a dataset", f);
    std::fclose(f);
    CHECK_THROWS_AS(load_dataset(path, s), FormatError);
  }

  std::remove(path.c_str());
}

TEST_CASE("spec validation names the offending field") {
  DatasetSpec s = tiny_spec();
  s.num_classes = 7;  // more classes than motion patterns
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.bg_lead = 3;
  s.bg_trail = 3;  // no active frames left at T=6
  try {
    s.validate();
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bg_") != std::string::npos);
  }
  s = tiny_spec();
  s.height = 6;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
