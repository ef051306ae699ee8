#include "svmix/mixer.hpp"

#include <cmath>

namespace svmix {

const char* mix_method_name(MixMethod m) {
  switch (m) {
    case MixMethod::Spatial: return "spatial";
    case MixMethod::Temporal: return "temporal";
    case MixMethod::Averaged: return "averaged";
    case MixMethod::Mixup: return "mixup";
    case MixMethod::Cutmix: return "cutmix";
  }
  throw ParamError("unknown mix method");
}

void EnsemblePolicy::validate() const {
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0))
    throw ConfigError("ensemble.switch_prob must lie in [0,1]");
}

namespace {

MixMethod method_of(MaskKind k) {
  switch (k) {
    case MaskKind::Spatial: return MixMethod::Spatial;
    case MaskKind::Temporal: return MixMethod::Temporal;
    case MaskKind::Averaged: return MixMethod::Averaged;
  }
  throw ParamError("unknown mask kind");
}

std::vector<double> mix_labels(const Tensor& y_i, const Tensor& y_j,
                               const std::vector<double>& lambdas) {
  const std::size_t B = y_i.shape()[0], K = y_i.shape()[1];
  std::vector<double> out(B * K);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      out[b * K + k] = lambdas[b] * y_i.values()[b * K + k] +
                       (1.0 - lambdas[b]) * y_j.values()[b * K + k];
  return out;
}

}  // namespace

MixedBatch apply_mask(const VideoBatch& x_i, const VideoBatch& x_j,
                      const MixMask& m) {
  const Shape& fs = x_i.frames.shape();
  if (x_j.frames.shape() != fs)
    throw ContractError("apply_mask: frame shapes differ: " + shape_str(fs) +
                        " vs " + shape_str(x_j.frames.shape()));
  if (x_i.labels.shape() != x_j.labels.shape())
    throw ContractError("apply_mask: label shapes differ");
  const Shape want_mask{fs[0], fs[1], fs[2], fs[3]};
  if (m.weights.shape() != want_mask)
    throw ContractError("apply_mask: mask " + shape_str(m.weights.shape()) +
                        " does not match frames " + shape_str(fs));
  if (m.lambdas.size() != fs[0])
    throw ContractError("apply_mask: proportion count does not match batch");
  for (double lam : m.lambdas)
    if (!(lam >= 0.0 && lam <= 1.0))
      throw ContractError("apply_mask: proportion outside [0,1]");

  const std::size_t C = fs[4];
  Tensor m5 = reshape(m.weights, {fs[0], fs[1], fs[2], fs[3], 1});
  if (C > 1) m5 = repeat_axis(m5, 4, C);
  Tensor blended =
      add(mul(m5, x_i.frames), mul(rsub_scalar(1.0, m5), x_j.frames));

  MixedBatch out;
  out.frames = blended;
  out.soft_labels = Tensor::from_data(
      x_i.labels.shape(), mix_labels(x_i.labels, x_j.labels, m.lambdas));
  out.lambdas = m.lambdas;
  out.mask_used = m;
  out.method = method_of(m.kind);
  return out;
}

BranchDraw draw_branch(const EnsemblePolicy& policy, Rng& rng) {
  policy.validate();
  BranchDraw b;
  if (policy.mode == EnsemblePolicy::Mode::Average) {
    b.kind = MaskKind::Averaged;
    return b;
  }
  b.mu = rng.uniform();
  b.kind = b.mu <= policy.switch_prob ? MaskKind::Temporal : MaskKind::Spatial;
  return b;
}

EnsembleChoice ensemble_select_from_features(
    const FeatureGrid& z_i, const FeatureGrid& z_j,
    const std::vector<double>& lambdas, const SelectorBank& bank,
    const EnsemblePolicy& policy, Rng& rng) {
  EnsembleChoice choice;
  const BranchDraw b = draw_branch(policy, rng);
  if (b.kind != MaskKind::Averaged) {
    choice.mu = b.mu;
    choice.mask = select_from_features(z_i, z_j, lambdas, b.kind,
                                       bank.for_kind(b.kind));
    return choice;
  }
  MixMask tem = select_from_features(z_i, z_j, lambdas, MaskKind::Temporal,
                                     bank.for_kind(MaskKind::Temporal));
  MixMask spa = select_from_features(z_i, z_j, lambdas, MaskKind::Spatial,
                                     bank.for_kind(MaskKind::Spatial));
  choice.mask.weights = mul_scalar(add(tem.weights, spa.weights), 0.5);
  choice.mask.lambdas = lambdas;
  choice.mask.kind = MaskKind::Averaged;
  return choice;
}

EnsembleChoice ensemble_select(const VideoBatch& x_i, const VideoBatch& x_j,
                               const std::vector<double>& lambdas,
                               const SelectorBank& bank,
                               const RecognizerParams& teacher,
                               const EnsemblePolicy& policy, Rng& rng) {
  FeatureGrid z_i = encode(x_i.frames, teacher);
  FeatureGrid z_j = encode(x_j.frames, teacher);
  return ensemble_select_from_features(z_i, z_j, lambdas, bank, policy, rng);
}

MixedBatch mixup_baseline(const VideoBatch& x_i, const VideoBatch& x_j,
                          const std::vector<double>& lambdas) {
  const Shape& fs = x_i.frames.shape();
  if (lambdas.size() != fs[0])
    throw ContractError("mixup: proportion count does not match batch");
  for (double lam : lambdas)
    if (!(lam > 0.0 && lam < 1.0))
      throw ParamError("mixup: proportion " + std::to_string(lam) +
                       " outside (0,1)");
  const std::size_t frame_cells = fs[1] * fs[2] * fs[3];
  std::vector<double> w(fs[0] * frame_cells);
  for (std::size_t b = 0; b < fs[0]; ++b)
    for (std::size_t i = 0; i < frame_cells; ++i)
      w[b * frame_cells + i] = lambdas[b];
  MixMask m;
  m.weights = Tensor::from_data({fs[0], fs[1], fs[2], fs[3]}, std::move(w));
  m.lambdas = lambdas;
  m.kind = MaskKind::Spatial;  // placeholder; method tag below is what counts
  MixedBatch out = apply_mask(x_i, x_j, m);
  out.method = MixMethod::Mixup;
  return out;
}

MixedBatch cutmix_baseline(const VideoBatch& x_i, const VideoBatch& x_j,
                           const std::vector<double>& lambdas, Rng& rng) {
  const Shape& fs = x_i.frames.shape();
  const std::size_t B = fs[0], T = fs[1], H = fs[2], W = fs[3];
  if (lambdas.size() != B)
    throw ContractError("cutmix: proportion count does not match batch");
  std::vector<double> w(B * T * H * W, 1.0);
  std::vector<double> corrected(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double lam = lambdas[b];
    if (!(lam > 0.0 && lam < 1.0))
      throw ParamError("cutmix: proportion " + std::to_string(lam) +
                       " outside (0,1)");
    const double cut = std::sqrt(1.0 - lam);
    const std::size_t rw =
        static_cast<std::size_t>(std::lround(static_cast<double>(W) * cut));
    const std::size_t rh =
        static_cast<std::size_t>(std::lround(static_cast<double>(H) * cut));
    const std::size_t cx = rng.below(W), cy = rng.below(H);
    const std::size_t x0 = cx >= rw / 2 ? cx - rw / 2 : 0;
    const std::size_t y0 = cy >= rh / 2 ? cy - rh / 2 : 0;
    const std::size_t x1 = std::min(x0 + rw, W);
    const std::size_t y1 = std::min(y0 + rh, H);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x)
          w[((b * T + t) * H + y) * W + x] = 0.0;
    const double hole = static_cast<double>((x1 - x0) * (y1 - y0));
    corrected[b] = 1.0 - hole / static_cast<double>(H * W);
  }
  MixMask m;
  m.weights = Tensor::from_data({B, T, H, W}, std::move(w));
  m.lambdas = corrected;
  m.kind = MaskKind::Spatial;
  MixedBatch out = apply_mask(x_i, x_j, m);
  out.method = MixMethod::Cutmix;
  return out;
}

}  // namespace svmix
