#include "svmix/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "svmix/io.hpp"

namespace svmix {

namespace {

constexpr double kBackgroundLo = 0.10;
constexpr double kBackgroundHi = 0.22;
constexpr double kShapeLo = 0.88;
constexpr double kShapeHi = 0.98;
constexpr double kRadiusLo = 3.0;
constexpr double kRadiusHi = 6.0;
constexpr std::uint64_t kValIdBase = 1ull << 40;

enum MotionKind : std::size_t {
  kMoveRight = 0,
  kMoveLeft = 1,
  kGrow = 2,
  kShrink = 3,
  kMoveDown = 4,
  kMoveUp = 5,
};

// Wrap-around distance on a ring of size n.
inline double toroidal_delta(double a, double b, double n) {
  double d = std::fabs(a - b);
  return std::min(d, n - d);
}

struct SampleRecipe {
  bool disc = false;   // otherwise square
  double radius = 3.0; // movers only; growers use the shared radius path
  double cx = 0.0, cy = 0.0;
  double speed = 1.0;  // pixels per active frame, movers only
  double bg_level = kBackgroundLo;
  double shape_level = kShapeHi;  // per-sample brightness nuisance
};

// The recipe consumes a fixed number of draws regardless of class, so the
// background noise (drawn afterwards) is identical across classes for the
// same sample stream.
SampleRecipe draw_recipe(Rng& rng, const DatasetSpec& spec) {
  SampleRecipe r;
  r.disc = rng.below(2) == 1;
  r.radius = kRadiusLo + static_cast<double>(rng.below(
                 static_cast<std::uint64_t>(kRadiusHi - kRadiusLo) + 1));
  r.cx = static_cast<double>(rng.below(spec.width));
  r.cy = static_cast<double>(rng.below(spec.height));
  r.speed = 2.0 + static_cast<double>(rng.below(3));
  r.bg_level = kBackgroundLo + (kBackgroundHi - kBackgroundLo) * rng.uniform();
  r.shape_level = kShapeLo + (kShapeHi - kShapeLo) * rng.uniform();
  return r;
}

void render_sample(std::size_t cls, std::uint64_t id, const DatasetSpec& spec,
                   double* out /* [T,H,W,C] */) {
  Rng rng(splitmix64(spec.seed ^ splitmix64(0xD1B54A32D192ED03ull ^ id)));
  const SampleRecipe recipe = draw_recipe(rng, spec);
  const std::size_t T = spec.frames_t, H = spec.height, W = spec.width,
                    C = spec.channels;
  const std::size_t active0 = spec.bg_lead;
  const std::size_t active1 = T - spec.bg_trail;  // exclusive
  const std::size_t ta = active1 - active0;

  for (std::size_t t = 0; t < T; ++t) {
    const bool active = t >= active0 && t < active1;
    const std::size_t a = active ? t - active0 : 0;
    double cx = recipe.cx, cy = recipe.cy, radius = recipe.radius;
    if (active) {
      const double step = recipe.speed * static_cast<double>(a);
      const double frac =
          ta > 1 ? static_cast<double>(a) / static_cast<double>(ta - 1) : 0.0;
      switch (static_cast<MotionKind>(cls)) {
        case kMoveRight: cx = std::fmod(cx + step, static_cast<double>(W)); break;
        case kMoveLeft:
          cx = std::fmod(cx - step + static_cast<double>(W * T * 4),
                         static_cast<double>(W));
          break;
        case kMoveDown: cy = std::fmod(cy + step, static_cast<double>(H)); break;
        case kMoveUp:
          cy = std::fmod(cy - step + static_cast<double>(H * T * 4),
                         static_cast<double>(H));
          break;
        // Radii snap to the movers' integer grid so any one frame could have
        // come from any class; only the across-frame trend separates them.
        case kGrow:
          radius = std::round(kRadiusLo + (kRadiusHi - kRadiusLo) * frac);
          break;
        case kShrink:
          radius = std::round(kRadiusHi - (kRadiusHi - kRadiusLo) * frac);
          break;
      }
    }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        bool inside = false;
        if (active) {
          const double dx = toroidal_delta(static_cast<double>(x), cx,
                                           static_cast<double>(W));
          const double dy = toroidal_delta(static_cast<double>(y), cy,
                                           static_cast<double>(H));
          inside = recipe.disc ? dx * dx + dy * dy <= radius * radius
                               : std::max(dx, dy) <= radius;
        }
        const double base = inside ? recipe.shape_level : recipe.bg_level;
        for (std::size_t c = 0; c < C; ++c) {
          const double v = base + rng.normal(0.0, spec.noise_std);
          out[((t * H + y) * W + x) * C + c] = std::clamp(v, 0.0, 1.0);
        }
      }
  }
}

VideoBatch build_split(const DatasetSpec& spec, std::size_t per_class,
                       std::uint64_t id_base) {
  const std::size_t K = spec.num_classes;
  const std::size_t B = K * per_class;
  const std::size_t sample_len =
      spec.frames_t * spec.height * spec.width * spec.channels;
  std::vector<double> frames(B * sample_len);
  std::vector<double> labels(B * K, 0.0);
  std::vector<std::uint64_t> ids(B);
  for (std::size_t cls = 0; cls < K; ++cls)
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t row = cls * per_class + s;
      const std::uint64_t id = id_base + row;
      render_sample(cls, id, spec, frames.data() + row * sample_len);
      labels[row * K + cls] = 1.0;
      ids[row] = id;
    }
  VideoBatch b;
  b.frames = Tensor::from_data(
      {B, spec.frames_t, spec.height, spec.width, spec.channels},
      std::move(frames));
  b.labels = Tensor::from_data({B, K}, std::move(labels));
  b.ids = std::move(ids);
  return b;
}

}  // namespace

const char* motion_kind_name(std::size_t cls) {
  static const char* names[kMotionKinds] = {"move-right", "move-left",
                                            "grow",       "shrink",
                                            "move-down",  "move-up"};
  if (cls >= kMotionKinds) throw ParamError("motion kind out of range");
  return names[cls];
}

void DatasetSpec::validate() const {
  if (num_classes < 2)
    throw ConfigError("dataset.num_classes must be >= 2");
  if (num_classes > kMotionKinds)
    throw ConfigError("dataset.num_classes must be <= " +
                      std::to_string(kMotionKinds) +
                      " (available motion kinds)");
  if (samples_per_class_train < 2)
    throw ConfigError("dataset.samples_per_class_train must be >= 2");
  if (samples_per_class_val < 1)
    throw ConfigError("dataset.samples_per_class_val must be >= 1");
  if (frames_t < 4) throw ConfigError("dataset.frames_t must be >= 4");
  if (height < 8 || width < 8)
    throw ConfigError("dataset.height and dataset.width must be >= 8");
  if (channels < 1) throw ConfigError("dataset.channels must be >= 1");
  if (bg_lead + bg_trail + 2 > frames_t)
    throw ConfigError(
        "dataset.bg_lead + bg_trail leaves fewer than 2 active frames");
  if (!(noise_std >= 0.0))
    throw ConfigError("dataset.noise_std must be >= 0");
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.train = build_split(spec, spec.samples_per_class_train, 0);
  ds.val = build_split(spec, spec.samples_per_class_val, kValIdBase);
  return ds;
}

VideoBatch take(const VideoBatch& b, const std::vector<std::size_t>& idx) {
  VideoBatch out;
  out.frames = take_axis0(b.frames, idx);
  out.labels = take_axis0(b.labels, idx);
  out.ids.reserve(idx.size());
  for (std::size_t i : idx) {
    if (i >= b.ids.size())
      throw ContractError("take: index " + std::to_string(i) +
                          " out of range for batch of " +
                          std::to_string(b.ids.size()));
    out.ids.push_back(b.ids[i]);
  }
  return out;
}

PairedBatch pair_batches(const VideoBatch& b, Rng& rng) {
  const std::size_t B = b.batch_size();
  if (B < 2)
    throw ContractError("pair_batches: batch size must be >= 2, got " +
                        std::to_string(B));
  PairedBatch p;
  p.perm = rng.permutation(B);
  p.lhs = b;
  p.rhs = take(b, p.perm);
  return p;
}

namespace {

constexpr char kDatasetMagic[9] = "SVDATA01";

void write_spec(io::Writer& w, const DatasetSpec& s) {
  w.u64(s.num_classes);
  w.u64(s.samples_per_class_train);
  w.u64(s.samples_per_class_val);
  w.u64(s.frames_t);
  w.u64(s.height);
  w.u64(s.width);
  w.u64(s.channels);
  w.u64(s.bg_lead);
  w.u64(s.bg_trail);
  w.f64(s.noise_std);
  w.u64(s.seed);
}

bool read_spec_matches(io::Reader& r, const DatasetSpec& s) {
  bool ok = true;
  ok &= r.u64() == s.num_classes;
  ok &= r.u64() == s.samples_per_class_train;
  ok &= r.u64() == s.samples_per_class_val;
  ok &= r.u64() == s.frames_t;
  ok &= r.u64() == s.height;
  ok &= r.u64() == s.width;
  ok &= r.u64() == s.channels;
  ok &= r.u64() == s.bg_lead;
  ok &= r.u64() == s.bg_trail;
  ok &= r.f64() == s.noise_std;
  ok &= r.u64() == s.seed;
  return ok;
}

void write_batch(io::Writer& w, const VideoBatch& b) {
  w.u64(b.batch_size());
  w.f64_array(b.frames.values());
  w.f64_array(b.labels.values());
  for (std::uint64_t id : b.ids) w.u64(id);
}

VideoBatch read_batch(io::Reader& r, const DatasetSpec& s) {
  const std::size_t B = r.u64();
  const std::size_t sample_len =
      s.frames_t * s.height * s.width * s.channels;
  VideoBatch b;
  b.frames = Tensor::from_data(
      {B, s.frames_t, s.height, s.width, s.channels},
      r.f64_array(B * sample_len));
  b.labels = Tensor::from_data({B, s.num_classes},
                               r.f64_array(B * s.num_classes));
  b.ids.resize(B);
  for (std::uint64_t& id : b.ids) id = r.u64();
  return b;
}

}  // namespace

void save_dataset(const std::string& path, const DatasetSpec& spec,
                  const Dataset& ds) {
  io::Writer w(path);
  w.magic(kDatasetMagic);
  write_spec(w, spec);
  write_batch(w, ds.train);
  write_batch(w, ds.val);
  w.close();
}

std::optional<Dataset> load_dataset(const std::string& path,
                                    const DatasetSpec& spec) {
  io::Reader r(path);
  r.expect_magic(kDatasetMagic);
  if (!read_spec_matches(r, spec)) return std::nullopt;
  Dataset ds;
  ds.train = read_batch(r, spec);
  ds.val = read_batch(r, spec);
  return ds;
}

}  // namespace svmix
