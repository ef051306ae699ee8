#include "svmix/selector.hpp"

#include <cmath>

#include "svmix/io.hpp"
#include "svmix/rng.hpp"

namespace svmix {

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::Spatial: return "spatial";
    case MaskKind::Temporal: return "temporal";
    case MaskKind::Averaged: return "averaged";
  }
  throw ParamError("unknown mask kind");
}

std::size_t VolumeGeometry::sample_of_group(MaskKind kind,
                                            std::size_t g) const {
  return kind == MaskKind::Spatial ? g / grid_t : g;
}

void SelectorConfig::validate() const {
  if (d_k < 1) throw ConfigError("selector.d_k must be >= 1");
}

SelectorParams SelectorParams::init(std::size_t feat_c,
                                    const SelectorConfig& cfg,
                                    std::uint64_t seed, bool requires_grad) {
  cfg.validate();
  if (feat_c < 1) throw ConfigError("selector feature channels must be >= 1");
  Rng rng = Rng::stream(seed, "selector-init");
  SelectorParams p;
  p.cfg = cfg;
  p.feat_c = feat_c;
  const std::size_t c1 = feat_c + 1;
  p.w_q = randn_fan_in({c1, cfg.d_k}, c1, rng, requires_grad);
  p.w_k = randn_fan_in({c1, cfg.d_k}, c1, rng, requires_grad);
  p.w_v = randn_fan_in({c1, 1}, c1, rng, requires_grad);
  return p;
}

SelectorParams SelectorParams::clone(bool requires_grad) const {
  SelectorParams p;
  p.cfg = cfg;
  p.feat_c = feat_c;
  p.w_q = Tensor::from_data(w_q.shape(), w_q.values(), requires_grad);
  p.w_k = Tensor::from_data(w_k.shape(), w_k.values(), requires_grad);
  p.w_v = Tensor::from_data(w_v.shape(), w_v.values(), requires_grad);
  return p;
}

std::vector<Tensor> SelectorParams::all() const { return {w_q, w_k, w_v}; }

NamedTensors SelectorParams::named(const std::string& prefix) const {
  return {{prefix + ".w_q", w_q}, {prefix + ".w_k", w_k},
          {prefix + ".w_v", w_v}};
}

SelectorBank SelectorBank::init(std::size_t feat_c, const SelectorConfig& cfg,
                                std::uint64_t seed, bool shared,
                                bool requires_grad) {
  SelectorBank bank;
  bank.shared = shared;
  bank.primary = SelectorParams::init(feat_c, cfg, seed, requires_grad);
  if (!shared)
    bank.temporal_only =
        SelectorParams::init(feat_c, cfg, seed + 1, requires_grad);
  return bank;
}

const SelectorParams& SelectorBank::for_kind(MaskKind kind) const {
  if (shared || kind != MaskKind::Temporal) return primary;
  return temporal_only;
}

std::vector<Tensor> SelectorBank::all() const {
  std::vector<Tensor> out = primary.all();
  if (!shared)
    for (const Tensor& t : temporal_only.all()) out.push_back(t);
  return out;
}

NamedTensors SelectorBank::named() const {
  NamedTensors out = primary.named("selector");
  if (!shared)
    for (auto& kv : temporal_only.named("selector_temporal"))
      out.push_back(kv);
  return out;
}

FeatureGrid encode(const Tensor& frames, const RecognizerParams& teacher) {
  FeatureGrid z;
  z.values = forward(frames, teacher).features;
  const Shape& in = frames.shape();
  z.factor_t = in[1] / z.grid_t();
  z.factor_h = in[2] / z.grid_h();
  z.factor_w = in[3] / z.grid_w();
  return z;
}

namespace {

VolumeGeometry geometry_of(const FeatureGrid& z) {
  VolumeGeometry g;
  g.batch = z.batch();
  g.grid_t = z.grid_t();
  g.grid_h = z.grid_h();
  g.grid_w = z.grid_w();
  g.factor_t = z.factor_t;
  g.factor_h = z.factor_h;
  g.factor_w = z.factor_w;
  return g;
}

}  // namespace

VolumeSet partition_spatial(const FeatureGrid& z) {
  VolumeSet v;
  v.kind = MaskKind::Spatial;
  v.geometry = geometry_of(z);
  v.volumes = reshape(z.values, {z.batch() * z.grid_t(),
                                 z.grid_h() * z.grid_w(), z.grid_c()});
  return v;
}

VolumeSet partition_temporal(const FeatureGrid& z) {
  VolumeSet v;
  v.kind = MaskKind::Temporal;
  v.geometry = geometry_of(z);
  // [B,T',H',W',C] -> mean over W' (axis 3) then H' (axis 2) -> [B,T',C]
  v.volumes = mean(mean(z.values, 3), 2);
  return v;
}

Tensor unpartition_spatial(const VolumeSet& v) {
  if (v.kind != MaskKind::Spatial)
    throw ContractError("unpartition_spatial: volume set is not spatial");
  const VolumeGeometry& g = v.geometry;
  return reshape(v.volumes,
                 {g.batch, g.grid_t, g.grid_h, g.grid_w, v.channels()});
}

VolumeSet embed_lambda(const VolumeSet& v, const std::vector<double>& lambdas,
                       Side side, bool enabled) {
  if (v.lambda_embedded)
    throw ContractError("embed_lambda: volumes already carry a proportion "
                        "channel");
  if (lambdas.size() != v.geometry.batch)
    throw ContractError("embed_lambda: " + std::to_string(lambdas.size()) +
                        " proportions for batch of " +
                        std::to_string(v.geometry.batch));
  for (double lam : lambdas)
    if (!(lam > 0.0 && lam < 1.0))
      throw ParamError("embed_lambda: proportion " + std::to_string(lam) +
                       " outside (0,1)");
  const std::size_t G = v.groups(), N = v.per_group();
  std::vector<double> chan(G * N);
  for (std::size_t g = 0; g < G; ++g) {
    const double lam = lambdas[v.geometry.sample_of_group(v.kind, g)];
    const double value = enabled ? (side == Side::I ? lam : 1.0 - lam) : 0.5;
    for (std::size_t n = 0; n < N; ++n) chan[g * N + n] = value;
  }
  VolumeSet out;
  out.kind = v.kind;
  out.geometry = v.geometry;
  out.lambda_embedded = true;
  out.volumes =
      concat({v.volumes, Tensor::from_data({G, N, 1}, std::move(chan))}, 2);
  return out;
}

Tensor attend(const VolumeSet& v_i, const VolumeSet& v_j,
              const SelectorParams& p) {
  if (v_i.kind != v_j.kind)
    throw ContractError("attend: volume kinds differ");
  if (!v_i.lambda_embedded || !v_j.lambda_embedded)
    throw ContractError("attend: volumes must carry the proportion channel");
  const std::size_t G = v_i.groups(), N = v_i.per_group(),
                    C1 = v_i.channels();
  if (v_j.groups() != G || v_j.per_group() != N || v_j.channels() != C1)
    throw ContractError("attend: volume shapes differ: " +
                        shape_str(v_i.volumes.shape()) + " vs " +
                        shape_str(v_j.volumes.shape()));
  if (C1 != p.feat_c + 1)
    throw ContractError("attend: volumes have " + std::to_string(C1) +
                        " channels, parameters expect " +
                        std::to_string(p.feat_c + 1));

  Tensor flat_i = reshape(v_i.volumes, {G * N, C1});
  Tensor flat_j = reshape(v_j.volumes, {G * N, C1});
  Tensor q = reshape(matmul(flat_i, p.w_q), {G, N, p.cfg.d_k});
  Tensor k = reshape(matmul(flat_j, p.w_k), {G, N, p.cfg.d_k});
  Tensor scores = mul_scalar(bmm(q, transpose(k, {0, 2, 1})),
                             1.0 / std::sqrt(static_cast<double>(p.cfg.d_k)));
  Tensor s = softmax(scores, 2);
  Tensor val = reshape(matmul(flat_j, p.w_v), {G, N, 1});
  Tensor response = reshape(bmm(s, val), {G, N});
  Tensor kept = sigmoid(response);
  return p.cfg.flip_mask_inversion ? kept : rsub_scalar(1.0, kept);
}

namespace {

// Linear interpolation matrix [len, len*factor]: column o holds the weights
// of each input cell in output cell o (half-pixel centers, clamped edges).
Tensor interp_matrix(std::size_t len, std::size_t factor) {
  const std::size_t out_len = len * factor;
  std::vector<double> m(len * out_len, 0.0);
  for (std::size_t o = 0; o < out_len; ++o) {
    const double p = (static_cast<double>(o) + 0.5) /
                         static_cast<double>(factor) - 0.5;
    if (p <= 0.0) {
      m[o] = 1.0;  // row 0
    } else if (p >= static_cast<double>(len - 1)) {
      m[(len - 1) * out_len + o] = 1.0;
    } else {
      const std::size_t i0 = static_cast<std::size_t>(p);
      const double w = p - static_cast<double>(i0);
      m[i0 * out_len + o] = 1.0 - w;
      m[(i0 + 1) * out_len + o] = w;
    }
  }
  return Tensor::from_data({len, out_len}, std::move(m));
}

// Expand one axis by `factor`, either nearest (block replication) or linear.
Tensor expand_axis(const Tensor& x, std::size_t axis, std::size_t factor,
                   bool nearest) {
  if (factor == 1) return x;
  if (nearest) return repeat_axis(x, axis, factor);
  const Shape& s = x.shape();
  const std::size_t nd = s.size(), len = s[axis];
  std::vector<std::size_t> perm;
  for (std::size_t i = 0; i < nd; ++i)
    if (i != axis) perm.push_back(i);
  perm.push_back(axis);
  Tensor xt = transpose(x, perm);
  Tensor flat = reshape(xt, {x.size() / len, len});
  Tensor y = matmul(flat, interp_matrix(len, factor));
  Shape expanded = xt.shape();
  expanded.back() = len * factor;
  Tensor yt = reshape(y, expanded);
  std::vector<std::size_t> inv(nd);
  for (std::size_t i = 0; i < nd; ++i) inv[perm[i]] = i;
  return transpose(yt, inv);
}

}  // namespace

MixMask upsample(const Tensor& raw, MaskKind kind,
                 const VolumeGeometry& g, const std::vector<double>& lambdas,
                 bool nearest) {
  const std::size_t H = g.grid_h * g.factor_h;
  const std::size_t W = g.grid_w * g.factor_w;
  Tensor grid;
  if (kind == MaskKind::Temporal) {
    if (raw.shape() != Shape{g.batch, g.grid_t})
      throw ContractError("upsample: temporal raw mask " +
                          shape_str(raw.shape()) + " does not match geometry");
    Tensor t = expand_axis(reshape(raw, {g.batch, g.grid_t, 1, 1}), 1,
                           g.factor_t, nearest);
    // The per-frame scalar replicates over space regardless of mode.
    grid = repeat_axis(repeat_axis(t, 2, H), 3, W);
  } else if (kind == MaskKind::Spatial) {
    if (raw.shape() != Shape{g.batch * g.grid_t, g.grid_h * g.grid_w})
      throw ContractError("upsample: spatial raw mask " +
                          shape_str(raw.shape()) + " does not match geometry");
    Tensor t = reshape(raw, {g.batch, g.grid_t, g.grid_h, g.grid_w});
    t = expand_axis(t, 1, g.factor_t, nearest);
    t = expand_axis(t, 2, g.factor_h, nearest);
    grid = expand_axis(t, 3, g.factor_w, nearest);
  } else {
    throw ContractError("upsample: averaged masks are assembled by the "
                        "ensemble, not upsampled directly");
  }
  MixMask m;
  m.weights = grid;
  m.lambdas = lambdas;
  m.kind = kind;
  return m;
}

MixMask select_from_features(const FeatureGrid& z_i, const FeatureGrid& z_j,
                             const std::vector<double>& lambdas, MaskKind kind,
                             const SelectorParams& p) {
  if (kind == MaskKind::Averaged)
    throw ContractError(
        "select: averaged masks come from the ensemble policy, pick Spatial "
        "or Temporal here");
  VolumeSet raw_i = kind == MaskKind::Spatial ? partition_spatial(z_i)
                                              : partition_temporal(z_i);
  VolumeSet raw_j = kind == MaskKind::Spatial ? partition_spatial(z_j)
                                              : partition_temporal(z_j);
  VolumeSet v_i = embed_lambda(raw_i, lambdas, Side::I, p.cfg.lambda_embedding);
  VolumeSet v_j = embed_lambda(raw_j, lambdas, Side::J, p.cfg.lambda_embedding);
  Tensor raw = attend(v_i, v_j, p);
  return upsample(raw, kind, v_i.geometry, lambdas, p.cfg.nearest_upsample);
}

MixMask select(const VideoBatch& x_i, const VideoBatch& x_j,
               const std::vector<double>& lambdas, MaskKind kind,
               const SelectorParams& p, const RecognizerParams& teacher) {
  FeatureGrid z_i = encode(x_i.frames, teacher);
  FeatureGrid z_j = encode(x_j.frames, teacher);
  return select_from_features(z_i, z_j, lambdas, kind, p);
}

namespace {
constexpr char kMaskMagic[9] = "SVMASK01";
}

void save_mask_dump(const std::string& path, const MixMask& mask,
                    const Tensor* mixed_frames) {
  const Shape& s = mask.weights.shape();
  if (s.size() != 4)
    throw ContractError("mask dump: weights must be [B,T,H,W], got " +
                        shape_str(s));
  io::Writer w(path);
  w.magic(kMaskMagic);
  w.u64(s[0]);
  w.u64(s[1]);
  w.u64(s[2]);
  w.u64(s[3]);
  w.u8(static_cast<std::uint8_t>(mask.kind));
  w.u8(mixed_frames ? 1 : 0);
  if (mask.lambdas.size() != s[0])
    throw ContractError("mask dump: proportion count does not match batch");
  w.f64_array(mask.lambdas);
  w.f64_array(mask.weights.values());
  if (mixed_frames) {
    const Shape& fs = mixed_frames->shape();
    if (fs.size() != 5 || fs[0] != s[0] || fs[1] != s[1] || fs[2] != s[2] ||
        fs[3] != s[3])
      throw ContractError("mask dump: frames " + shape_str(fs) +
                          " do not match mask " + shape_str(s));
    w.u64(fs[4]);
    w.f64_array(mixed_frames->values());
  }
  w.close();
}

MaskDump load_mask_dump(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kMaskMagic);
  const std::size_t B = r.u64(), T = r.u64(), H = r.u64(), W = r.u64();
  const std::uint8_t kind = r.u8();
  if (kind > 2)
    throw FormatError(path + ": bad mask kind at byte " +
                      std::to_string(r.offset() - 2));
  const std::uint8_t has_frames = r.u8();
  if (has_frames > 1)
    throw FormatError(path + ": bad frames flag at byte " +
                      std::to_string(r.offset() - 1));
  MaskDump d;
  d.mask.kind = static_cast<MaskKind>(kind);
  d.mask.lambdas = r.f64_array(B);
  d.mask.weights = Tensor::from_data({B, T, H, W}, r.f64_array(B * T * H * W));
  d.has_frames = has_frames == 1;
  if (d.has_frames) {
    const std::size_t C = r.u64();
    d.frames =
        Tensor::from_data({B, T, H, W, C}, r.f64_array(B * T * H * W * C));
  }
  return d;
}

}  // namespace svmix
