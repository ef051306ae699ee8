#pragma once

// The learnable mask selector: encode videos into feature volumes with the
// frozen teacher trunk, partition spatially (patch volumes per timestamp) or
// temporally (pooled frame volumes), condition on the mixing proportion by
// appending it as an extra channel, run scaled dot-product cross-attention
// between the two clips, and emit inverted-sigmoid mixing weights upsampled
// to full video resolution.

#include <cstdint>
#include <string>
#include <vector>

#include "svmix/dataset.hpp"
#include "svmix/recognizer.hpp"
#include "svmix/tensor.hpp"

namespace svmix {

enum class MaskKind : std::uint8_t { Spatial = 0, Temporal = 1, Averaged = 2 };
const char* mask_kind_name(MaskKind k);

struct FeatureGrid {
  Tensor values;  // [B, T', H', W', C_f]
  std::size_t factor_t = 1, factor_h = 1, factor_w = 1;  // full / grid dims

  std::size_t batch() const { return values.shape()[0]; }
  std::size_t grid_t() const { return values.shape()[1]; }
  std::size_t grid_h() const { return values.shape()[2]; }
  std::size_t grid_w() const { return values.shape()[3]; }
  std::size_t grid_c() const { return values.shape()[4]; }
};

// Volume index convention (the geometry bijection):
//   Spatial:  g = b*T' + t',  n = h'*W' + w'
//   Temporal: g = b,          n = t'
struct VolumeGeometry {
  std::size_t batch = 0, grid_t = 0, grid_h = 0, grid_w = 0;
  std::size_t factor_t = 1, factor_h = 1, factor_w = 1;
  std::size_t sample_of_group(MaskKind kind, std::size_t g) const;
};

struct VolumeSet {
  Tensor volumes;  // [G, N, C] (C = C_f, or C_f+1 once embedded)
  MaskKind kind = MaskKind::Spatial;
  VolumeGeometry geometry;
  bool lambda_embedded = false;

  std::size_t groups() const { return volumes.shape()[0]; }
  std::size_t per_group() const { return volumes.shape()[1]; }
  std::size_t channels() const { return volumes.shape()[2]; }
};

struct SelectorConfig {
  std::size_t d_k = 32;
  bool lambda_embedding = true;  // off → a constant 0.5 channel instead
  bool nearest_upsample = true;  // off → trilinear interpolation
  // Test canary: emit sigmoid(r) instead of 1 - sigmoid(r). Never set outside
  // the self-test mutation checks.
  bool flip_mask_inversion = false;

  void validate() const;
};

struct SelectorParams {
  SelectorConfig cfg;
  std::size_t feat_c = 0;  // C_f the params were sized for
  Tensor w_q, w_k;         // [(C_f+1), d_k]
  Tensor w_v;              // [(C_f+1), 1]

  static SelectorParams init(std::size_t feat_c, const SelectorConfig& cfg,
                             std::uint64_t seed, bool requires_grad);
  SelectorParams clone(bool requires_grad) const;
  std::vector<Tensor> all() const;
  NamedTensors named(const std::string& prefix) const;
};

// One or two parameter sets depending on the sharing ablation.
struct SelectorBank {
  bool shared = true;
  SelectorParams primary;    // used for both kinds when shared
  SelectorParams temporal_only;  // used for Temporal when not shared

  static SelectorBank init(std::size_t feat_c, const SelectorConfig& cfg,
                           std::uint64_t seed, bool shared,
                           bool requires_grad);
  const SelectorParams& for_kind(MaskKind kind) const;
  std::vector<Tensor> all() const;
  NamedTensors named() const;
};

struct MixMask {
  Tensor weights;               // [B, T, H, W], values in [0, 1]
  std::vector<double> lambdas;  // per sample
  MaskKind kind = MaskKind::Spatial;
};

enum class Side { I, J };

// Teacher trunk forward (pre-head activations). Teacher parameters carry no
// gradient; the graph through the features remains differentiable toward
// anything upstream that does.
FeatureGrid encode(const Tensor& frames, const RecognizerParams& teacher);

// Pure reshape: timestamps move into the group dimension.
VolumeSet partition_spatial(const FeatureGrid& z);
// Spatial mean per (sample, timestamp): G = B, N = T'.
VolumeSet partition_temporal(const FeatureGrid& z);
// Inverse of the geometry mapping, back to [B,T',H',W',C] (Spatial only).
Tensor unpartition_spatial(const VolumeSet& v);

// Appends the proportion channel: side I carries λ_b, side J carries 1−λ_b
// for the sample b owning each group. With `enabled` false a constant 0.5
// channel is appended instead (keeps parameter shapes identical).
VolumeSet embed_lambda(const VolumeSet& v, const std::vector<double>& lambdas,
                       Side side, bool enabled = true);

// Cross-attention mask head. Returns raw mask values [G, N] in (0, 1).
Tensor attend(const VolumeSet& v_i, const VolumeSet& v_j,
              const SelectorParams& p);

// Spreads raw volume weights back over the full (T, H, W) resolution.
MixMask upsample(const Tensor& raw, MaskKind kind,
                 const VolumeGeometry& geometry,
                 const std::vector<double>& lambdas, bool nearest);

// Full composition over pre-encoded features (the trainer encodes once and
// permutes). kind must be Spatial or Temporal.
MixMask select_from_features(const FeatureGrid& z_i, const FeatureGrid& z_j,
                             const std::vector<double>& lambdas, MaskKind kind,
                             const SelectorParams& p);

// Convenience composition from raw frames.
MixMask select(const VideoBatch& x_i, const VideoBatch& x_j,
               const std::vector<double>& lambdas, MaskKind kind,
               const SelectorParams& p, const RecognizerParams& teacher);

// Mask dump: header (B,T,H,W, kind, λ per sample) + weights, optionally the
// mixed frames for offline viewing.
void save_mask_dump(const std::string& path, const MixMask& mask,
                    const Tensor* mixed_frames = nullptr);
struct MaskDump {
  MixMask mask;
  bool has_frames = false;
  Tensor frames;  // [B,T,H,W,C] when present
};
MaskDump load_mask_dump(const std::string& path);

}  // namespace svmix
