#include "svmix/recognizer.hpp"

#include <cmath>

#include "svmix/rng.hpp"

namespace svmix {

void RecognizerConfig::validate() const {
  if (num_classes < 2)
    throw ConfigError("recognizer.num_classes must be >= 2");
  if (channels < 1) throw ConfigError("recognizer.channels must be >= 1");
  if (height % 4 != 0 || width % 4 != 0)
    throw ConfigError(
        "recognizer.height and recognizer.width must be multiples of 4 "
        "(two 2x2 pooling stages)");
  if (stage1_channels < 1 || stage2_channels < 1)
    throw ConfigError("recognizer stage widths must be >= 1");
  if (temporal_window1 < 1 || temporal_window2 < 1)
    throw ConfigError("recognizer temporal windows must be >= 1");
  if (frames_t % (temporal_window1 * temporal_window2) != 0)
    throw ConfigError(
        "recognizer.frames_t must be divisible by the temporal windows");

  const std::size_t c1 = stage1_channels, c2 = stage2_channels;
  const std::size_t count = c1 * channels * 9 + c1 +
                            temporal_window1 * c1 * c1 + c1 +
                            c2 * c1 * 9 + c2 + temporal_window2 * c2 * c2 +
                            c2 + c2 * num_classes + num_classes;
  if (count > 100000)
    throw ConfigError("recognizer parameter count " + std::to_string(count) +
                      " exceeds the 100000 budget");
}

RecognizerParams RecognizerParams::init(const RecognizerConfig& cfg,
                                        std::uint64_t seed,
                                        bool requires_grad) {
  cfg.validate();
  Rng rng = Rng::stream(seed, "recognizer-init");
  const std::size_t C = cfg.channels, c1 = cfg.stage1_channels,
                    c2 = cfg.stage2_channels, K = cfg.num_classes;
  RecognizerParams p;
  p.cfg = cfg;
  p.conv1_w = randn_fan_in({c1, C, 3, 3}, C * 9, rng, requires_grad);
  p.conv1_b = Tensor::zeros({c1}, requires_grad);
  p.tconv1_w = randn_fan_in({cfg.temporal_window1, c1, c1},
                            cfg.temporal_window1 * c1, rng, requires_grad);
  p.tconv1_b = Tensor::zeros({c1}, requires_grad);
  p.conv2_w = randn_fan_in({c2, c1, 3, 3}, c1 * 9, rng, requires_grad);
  p.conv2_b = Tensor::zeros({c2}, requires_grad);
  p.tconv2_w = randn_fan_in({cfg.temporal_window2, c2, c2},
                            cfg.temporal_window2 * c2, rng, requires_grad);
  p.tconv2_b = Tensor::zeros({c2}, requires_grad);
  p.head_w = randn_fan_in({c2, K}, c2, rng, requires_grad);
  p.head_b = Tensor::zeros({K}, requires_grad);
  return p;
}

RecognizerParams RecognizerParams::clone(bool requires_grad) const {
  RecognizerParams p;
  p.cfg = cfg;
  auto copy = [requires_grad](const Tensor& t) {
    return Tensor::from_data(t.shape(), t.values(), requires_grad);
  };
  p.conv1_w = copy(conv1_w);
  p.conv1_b = copy(conv1_b);
  p.tconv1_w = copy(tconv1_w);
  p.tconv1_b = copy(tconv1_b);
  p.conv2_w = copy(conv2_w);
  p.conv2_b = copy(conv2_b);
  p.tconv2_w = copy(tconv2_w);
  p.tconv2_b = copy(tconv2_b);
  p.head_w = copy(head_w);
  p.head_b = copy(head_b);
  return p;
}

std::vector<Tensor> RecognizerParams::all() const {
  return {conv1_w, conv1_b, tconv1_w, tconv1_b, conv2_w,
          conv2_b, tconv2_w, tconv2_b, head_w,  head_b};
}

NamedTensors RecognizerParams::named(const std::string& prefix) const {
  return {{prefix + ".conv1_w", conv1_w},   {prefix + ".conv1_b", conv1_b},
          {prefix + ".tconv1_w", tconv1_w}, {prefix + ".tconv1_b", tconv1_b},
          {prefix + ".conv2_w", conv2_w},   {prefix + ".conv2_b", conv2_b},
          {prefix + ".tconv2_w", tconv2_w}, {prefix + ".tconv2_b", tconv2_b},
          {prefix + ".head_w", head_w},     {prefix + ".head_b", head_b}};
}

std::size_t RecognizerParams::param_count() const {
  std::size_t n = 0;
  for (const Tensor& t : all()) n += t.size();
  return n;
}

namespace {

// One trunk stage: per-frame 3x3 conv + 2x2 pool + tanh, then a
// non-overlapping temporal window conv + tanh. Pooling before the
// activation keeps the per-frame nonlinearity on the downsampled grid.
// x: [B,T,C,H,W] -> [B, T/window, C_out, H/2, W/2]
Tensor stage(const Tensor& x, const Tensor& cw, const Tensor& cb,
             const Tensor& tw, const Tensor& tb, std::size_t window) {
  const Shape& s = x.shape();
  const std::size_t B = s[0], T = s[1], C = s[2], H = s[3], W = s[4];
  Tensor flat = reshape(x, {B * T, C, H, W});
  Tensor h = tanh(avg_pool2(conv2d(flat, cw, cb, 1)));
  const std::size_t c_out = cw.shape()[0];
  Tensor back = reshape(h, {B, T, c_out, H / 2, W / 2});
  return tanh(temporal_conv(back, tw, tb, window));
}

}  // namespace

ForwardResult forward(const Tensor& x, const RecognizerParams& p) {
  const RecognizerConfig& cfg = p.cfg;
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != cfg.frames_t || s[2] != cfg.height ||
      s[3] != cfg.width || s[4] != cfg.channels)
    throw ConfigError("recognizer forward: input " + shape_str(s) +
                      " does not match configured [B," +
                      std::to_string(cfg.frames_t) + "," +
                      std::to_string(cfg.height) + "," +
                      std::to_string(cfg.width) + "," +
                      std::to_string(cfg.channels) + "]");
  const std::size_t B = s[0];
  // [B,T,H,W,C] -> [B,T,C,H,W]
  Tensor xc = transpose(x, {0, 1, 4, 2, 3});
  // Center each frame: the frame-wide brightness level is shared across
  // classes and would otherwise dominate the pooled features.
  const std::size_t T = s[1], H = cfg.height, W = cfg.width, C = cfg.channels;
  Tensor fm = reshape(mean(mean(mean(xc, 4), 3), 2), {B, T, 1, 1, 1});
  xc = sub(xc, repeat_axis(repeat_axis(repeat_axis(fm, 2, C), 3, H), 4, W));
  Tensor h1 = stage(xc, p.conv1_w, p.conv1_b, p.tconv1_w, p.tconv1_b,
                    cfg.temporal_window1);
  Tensor h2 = stage(h1, p.conv2_w, p.conv2_b, p.tconv2_w, p.tconv2_b,
                    cfg.temporal_window2);
  // h2: [B, T', C_f, H', W']
  ForwardResult out;
  out.features = transpose(h2, {0, 1, 3, 4, 2});
  Tensor pooled = mean(mean(mean(h2, 4), 3), 1);  // [B, C_f]
  Tensor bias = repeat_axis(reshape(p.head_b, {1, cfg.num_classes}), 0, B);
  out.logits = add(matmul(pooled, p.head_w), bias);
  return out;
}

Tensor soft_ce(const Tensor& logits, const Tensor& soft_labels) {
  const Shape& sl = logits.shape();
  if (sl.size() != 2 || soft_labels.shape() != sl)
    throw ContractError("soft_ce: logits " + shape_str(sl) +
                        " vs labels " + shape_str(soft_labels.shape()));
  const auto& y = soft_labels.values();
  const std::size_t B = sl[0], K = sl[1];
  for (std::size_t b = 0; b < B; ++b) {
    double row = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = y[b * K + k];
      if (v < -1e-9)
        throw ContractError("soft_ce: negative label in row " +
                            std::to_string(b));
      row += v;
    }
    if (std::fabs(row - 1.0) > 1e-9)
      throw ContractError("soft_ce: label row " + std::to_string(b) +
                          " sums to " + std::to_string(row));
  }
  Tensor logp = log_softmax(logits, 1);
  Tensor weighted = mul(logp, soft_labels);
  return mul_scalar(sum_all(weighted), -1.0 / static_cast<double>(B));
}

double accuracy(const Tensor& logits, const Tensor& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || labels.shape() != s)
    throw ContractError("accuracy: logits " + shape_str(s) + " vs labels " +
                        shape_str(labels.shape()));
  const std::size_t B = s[0], K = s[1];
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t pred = 0, want = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits.values()[b * K + k] > logits.values()[b * K + pred]) pred = k;
      if (labels.values()[b * K + k] > labels.values()[b * K + want]) want = k;
    }
    if (pred == want) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace svmix
