#pragma once

// Applies mixing masks to pixels and labels, draws the spatial/temporal
// ensemble choice, and provides the constant-blend and rectangle-paste
// reference baselines.

#include <cstdint>
#include <vector>

#include "svmix/dataset.hpp"
#include "svmix/selector.hpp"

namespace svmix {

enum class MixMethod : std::uint8_t {
  Spatial = 0,
  Temporal = 1,
  Averaged = 2,
  Mixup = 3,
  Cutmix = 4,
};
const char* mix_method_name(MixMethod m);

struct MixedBatch {
  Tensor frames;       // [B,T,H,W,C]; graph-attached when the mask is
  Tensor soft_labels;  // [B,K], rows on the simplex
  std::vector<double> lambdas;
  MixMask mask_used;
  MixMethod method = MixMethod::Mixup;
};

struct EnsemblePolicy {
  enum class Mode : std::uint8_t { Probabilistic = 0, Average = 1 };
  Mode mode = Mode::Probabilistic;
  double switch_prob = 0.5;  // chance of the Temporal branch

  void validate() const;  // ConfigError when switch_prob outside [0,1]
};

// Pixelwise convex blend x̃ = M⊙x_i + (1−M)⊙x_j with labels mixed by the
// sampled per-sample proportions (NOT the mask means). Differentiable
// w.r.t. the mask weights.
MixedBatch apply_mask(const VideoBatch& x_i, const VideoBatch& x_j,
                      const MixMask& m);

// One per-mixing-event branch decision. mu records the uniform draw behind a
// probabilistic choice and stays -1 when the Average mode consumed none.
struct BranchDraw {
  MaskKind kind = MaskKind::Spatial;
  double mu = -1.0;
};

// Draws the branch for one mixing event: μ ~ U(0,1), μ ≤ switch_prob picks
// Temporal. Average mode returns Averaged without touching the stream.
BranchDraw draw_branch(const EnsemblePolicy& policy, Rng& rng);

struct EnsembleChoice {
  MixMask mask;
  double mu = -1.0;  // the uniform draw; -1 when mode is Average
};

// Probabilistic: draw μ ~ U(0,1); μ ≤ P picks Temporal, otherwise Spatial.
// Average: half-sum of the two kind masks, tagged Averaged.
EnsembleChoice ensemble_select_from_features(
    const FeatureGrid& z_i, const FeatureGrid& z_j,
    const std::vector<double>& lambdas, const SelectorBank& bank,
    const EnsemblePolicy& policy, Rng& rng);

EnsembleChoice ensemble_select(const VideoBatch& x_i, const VideoBatch& x_j,
                               const std::vector<double>& lambdas,
                               const SelectorBank& bank,
                               const RecognizerParams& teacher,
                               const EnsemblePolicy& policy, Rng& rng);

// Constant mask M ≡ λ_b per sample.
MixedBatch mixup_baseline(const VideoBatch& x_i, const VideoBatch& x_j,
                          const std::vector<double>& lambdas);

// One rectangle of area ratio 1−λ_b pasted from x_j identically on all
// frames; the label proportion is recomputed as the exact kept-area fraction
// after clipping to the image bounds.
MixedBatch cutmix_baseline(const VideoBatch& x_i, const VideoBatch& x_j,
                           const std::vector<double>& lambdas, Rng& rng);

}  // namespace svmix
