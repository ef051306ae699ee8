#pragma once

// Desk-scale video classifier: factorized trunk of per-frame spatial
// convolutions plus non-overlapping temporal mixing windows, ending in a
// global-average-pool linear head. The pre-head activation grid doubles as
// the feature volume source for the mask selector.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "svmix/checkpoint.hpp"
#include "svmix/tensor.hpp"

namespace svmix {

struct RecognizerConfig {
  std::size_t num_classes = 4;
  std::size_t frames_t = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t stage1_channels = 10;
  std::size_t stage2_channels = 20;
  // Temporal mixing window (kernel == stride) per stage. A window of 1 keeps
  // the stage strictly per-frame.
  std::size_t temporal_window1 = 2;
  std::size_t temporal_window2 = 1;

  void validate() const;  // ConfigError naming the offending field

  std::size_t feat_t() const {
    return frames_t / (temporal_window1 * temporal_window2);
  }
  std::size_t feat_h() const { return height / 4; }
  std::size_t feat_w() const { return width / 4; }
  std::size_t feat_c() const { return stage2_channels; }
};

struct RecognizerParams {
  RecognizerConfig cfg;
  Tensor conv1_w, conv1_b;    // [c1, C, 3, 3], [c1]
  Tensor tconv1_w, tconv1_b;  // [w1, c1, c1], [c1]
  Tensor conv2_w, conv2_b;    // [c2, c1, 3, 3], [c2]
  Tensor tconv2_w, tconv2_b;  // [w2, c2, c2], [c2]
  Tensor head_w, head_b;      // [C_f, K], [K]

  static RecognizerParams init(const RecognizerConfig& cfg,
                               std::uint64_t seed, bool requires_grad);
  RecognizerParams clone(bool requires_grad) const;
  std::vector<Tensor> all() const;
  NamedTensors named(const std::string& prefix) const;
  std::size_t param_count() const;
};

struct ForwardResult {
  Tensor logits;    // [B, K]
  Tensor features;  // [B, T', H', W', C_f] pre-head activation
};

// x: [B,T,H,W,C] channel-last video frames.
ForwardResult forward(const Tensor& x, const RecognizerParams& p);

// Mean over the batch of the cross entropy against soft label rows.
// Label rows must lie on the probability simplex within 1e-9.
Tensor soft_ce(const Tensor& logits, const Tensor& soft_labels);

// argmax-accuracy of logits against one-hot (or soft) label rows.
double accuracy(const Tensor& logits, const Tensor& labels);

}  // namespace svmix
