#include "svmix/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace svmix {

const char* aug_arm_name(AugArm a) {
  switch (a) {
    case AugArm::None: return "none";
    case AugArm::Mixup: return "mixup";
    case AugArm::Cutmix: return "cutmix";
    case AugArm::SvmixSpatial: return "svmix-spatial";
    case AugArm::SvmixTemporal: return "svmix-temporal";
    case AugArm::SvmixFull: return "svmix-full";
  }
  return "?";
}

const char* train_mode_name(TrainMode m) {
  return m == TrainMode::Disentangled ? "disentangled" : "entangled";
}

void TrainerConfig::validate() const {
  recognizer.validate();
  selector.validate();
  policy.validate();
  if (!(alpha_spatial > 0.0))
    throw ConfigError("alpha_spatial must be positive");
  if (!(alpha_temporal > 0.0))
    throw ConfigError("alpha_temporal must be positive");
  if (!(omega >= 0.0)) throw ConfigError("omega must be non-negative");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
    throw ConfigError("ema_momentum must lie in [0,1]");
  if (!(lr_student > 0.0)) throw ConfigError("lr_student must be positive");
  if (!(lr_selector > 0.0)) throw ConfigError("lr_selector must be positive");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0))
    throw ConfigError("sgd_momentum must lie in [0,1)");
  if (lr_decay_epoch > 0 && !(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    throw ConfigError("lr_decay_factor must lie in (0,1]");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
  if (!recognition_losses && !mask_loss_enabled)
    throw ConfigError("at least one loss term must be enabled");
}

void SgdState::ensure(const std::vector<Tensor>& params) {
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (const auto& p : params)
      velocity.emplace_back(p.size(), 0.0);
    return;
  }
  if (velocity.size() != params.size())
    throw ContractError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (velocity[i].size() != params[i].size())
      throw ContractError("optimizer state does not match the parameter list");
}

TrainerState TrainerState::init(const TrainerConfig& cfg) {
  cfg.validate();
  TrainerState st;
  st.cfg = cfg;
  st.student = RecognizerParams::init(cfg.recognizer, cfg.seed, true);
  st.teacher = st.student.clone(false);
  st.selector = SelectorBank::init(cfg.recognizer.feat_c(), cfg.selector,
                                   cfg.seed, cfg.share_selector_params, true);
  st.rng_shuffle = Rng::stream(cfg.seed, "trainer-shuffle");
  st.rng_pairing = Rng::stream(cfg.seed, "trainer-pairing");
  st.rng_lambda = Rng::stream(cfg.seed, "trainer-lambda");
  st.rng_ensemble = Rng::stream(cfg.seed, "trainer-ensemble");
  st.rng_cutmix = Rng::stream(cfg.seed, "trainer-cutmix");
  return st;
}

void ema_update(RecognizerParams& teacher, const RecognizerParams& student,
                double m) {
  if (!(m >= 0.0 && m <= 1.0))
    throw ParamError("ema momentum must lie in [0,1]");
  auto ts = teacher.all();
  auto ss = student.all();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    auto& tv = ts[i].mutable_values();
    const auto& sv = ss[i].values();
    if (tv.size() != sv.size())
      throw ContractError("teacher/student parameter shapes diverged");
    for (std::size_t j = 0; j < tv.size(); ++j)
      tv[j] = m * tv[j] + (1.0 - m) * sv[j];
  }
}

Tensor loss_mask(const MixMask& m) {
  const Shape& sh = m.weights.shape();
  if (sh.size() != 4)
    throw DimensionError("mask weights must be rank 4, got shape " +
                         shape_str(sh));
  const std::size_t b = sh[0];
  if (m.lambdas.size() != b)
    throw ContractError("mask carries " + std::to_string(m.lambdas.size()) +
                        " lambdas for batch " + std::to_string(b));
  Tensor flat = reshape(m.weights, {b, sh[1] * sh[2] * sh[3]});
  Tensor means = mean(flat, 1);  // [B]
  Tensor lam = Tensor::from_data({b}, m.lambdas);
  return mean_all(abs(sub(lam, means)));
}

namespace {

std::vector<double> draw_lambdas(Rng& rng, double alpha, std::size_t n) {
  std::vector<double> out(n);
  for (auto& l : out) l = rng.beta(alpha, alpha);
  return out;
}

FeatureGrid permute_grid(const FeatureGrid& z,
                         const std::vector<std::size_t>& perm) {
  FeatureGrid out;
  out.values = take_axis0(z.values, perm);
  out.factor_t = z.factor_t;
  out.factor_h = z.factor_h;
  out.factor_w = z.factor_w;
  return out;
}

double grad_l2(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

void zero_all(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    Tensor t = p;
    t.zero_grad();
  }
}

void sgd_apply(const std::vector<Tensor>& params, SgdState& opt, double lr,
               double momentum) {
  opt.ensure(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    const auto& g = p.grad();
    auto& v = opt.velocity[i];
    auto& w = p.mutable_values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      v[j] = momentum * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

void require_finite(double loss, const char* which, std::size_t step) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << which << " loss is non-finite (" << loss << ") at step " << step;
    throw ContractError(os.str());
  }
}

double numeric_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct MixDraw {
  MixedBatch mixed;
  double mu = -1.0;
};

// Shared front half of a mixing step: pair, pick the mask kind, draw the
// proportions, build the mask through `encoder`, blend. Consumes the
// pairing / ensemble / lambda streams in a fixed order.
MixDraw draw_mixed(TrainerState& st, const VideoBatch& batch,
                   const RecognizerParams& encoder) {
  const TrainerConfig& cfg = st.cfg;
  PairedBatch pb = pair_batches(batch, st.rng_pairing);

  MaskKind kind = MaskKind::Spatial;
  double mu = -1.0;
  if (cfg.arm == AugArm::SvmixSpatial) {
    kind = MaskKind::Spatial;
  } else if (cfg.arm == AugArm::SvmixTemporal) {
    kind = MaskKind::Temporal;
  } else {
    const BranchDraw b = draw_branch(cfg.policy, st.rng_ensemble);
    kind = b.kind;
    mu = b.mu;
  }

  const double alpha = (kind == MaskKind::Temporal) ? cfg.alpha_temporal
                                                    : cfg.alpha_spatial;
  std::vector<double> lambdas =
      draw_lambdas(st.rng_lambda, alpha, batch.batch_size());

  FeatureGrid z_i = encode(pb.lhs.frames, encoder);
  FeatureGrid z_j = permute_grid(z_i, pb.perm);

  MixMask mask;
  if (kind == MaskKind::Averaged) {
    MixMask tem = select_from_features(z_i, z_j, lambdas, MaskKind::Temporal,
                                       st.selector.for_kind(MaskKind::Temporal));
    MixMask spa = select_from_features(z_i, z_j, lambdas, MaskKind::Spatial,
                                       st.selector.for_kind(MaskKind::Spatial));
    mask.weights = add(mul_scalar(tem.weights, 0.5),
                       mul_scalar(spa.weights, 0.5));
    mask.lambdas = lambdas;
    mask.kind = MaskKind::Averaged;
  } else {
    mask = select_from_features(z_i, z_j, lambdas, kind,
                                st.selector.for_kind(kind));
  }

  MixDraw out;
  out.mixed = apply_mask(pb.lhs, pb.rhs, mask);
  out.mu = mu;
  return out;
}

void fill_mix_stats(StepReport& rep, const MixedBatch& mixed, double mu) {
  rep.method = mixed.method;
  rep.mu = mu;
  rep.lambda_mean = numeric_mean(mixed.lambdas);
  rep.mask_mean = numeric_mean(mixed.mask_used.weights.values());
}

}  // namespace

StepLosses build_step_losses(TrainerState& st, const VideoBatch& batch) {
  const TrainerConfig& cfg = st.cfg;
  MixDraw d = draw_mixed(st, batch, st.teacher);

  StepLosses out;
  out.mixed = std::move(d.mixed);
  out.mu = d.mu;

  Tensor sel_loss;
  if (cfg.recognition_losses) {
    Tensor x_s = cfg.leak_student_grad_to_selector ? out.mixed.frames
                                                   : out.mixed.frames.detach();
    out.student_loss =
        soft_ce(forward(x_s, st.student).logits, out.mixed.soft_labels);
    sel_loss = soft_ce(forward(out.mixed.frames, st.teacher).logits,
                       out.mixed.soft_labels);
  }
  if (cfg.mask_loss_enabled) {
    Tensor weighted = mul_scalar(loss_mask(out.mixed.mask_used), cfg.omega);
    sel_loss = sel_loss.defined() ? add(sel_loss, weighted) : weighted;
  }
  out.selector_loss = sel_loss;
  return out;
}

StepReport disentangled_step(TrainerState& st, const VideoBatch& batch) {
  const TrainerConfig& cfg = st.cfg;
  StepLosses sl = build_step_losses(st, batch);

  StepReport rep;
  rep.step = st.step_count;
  fill_mix_stats(rep, sl.mixed, sl.mu);
  if (cfg.mask_loss_enabled)
    rep.mask_loss = loss_mask(sl.mixed.mask_used).item();

  const auto sparams = st.student.all();
  const auto selparams = st.selector.all();

  if (sl.student_loss.defined()) {
    rep.student_loss = sl.student_loss.item();
    require_finite(rep.student_loss, "student", st.step_count);
    zero_all(sparams);
    sl.student_loss.backward();
    rep.grad_norm_student = grad_l2(sparams);
    sgd_apply(sparams, st.student_opt, cfg.lr_student, cfg.sgd_momentum);
  }
  if (sl.selector_loss.defined()) {
    rep.selector_loss = sl.selector_loss.item();
    require_finite(rep.selector_loss, "selector", st.step_count);
    zero_all(selparams);
    sl.selector_loss.backward();
    rep.grad_norm_selector = grad_l2(selparams);
    sgd_apply(selparams, st.selector_opt, cfg.lr_selector, cfg.sgd_momentum);
  }

  ema_update(st.teacher, st.student, cfg.ema_momentum);
  ++st.step_count;
  return rep;
}

StepReport entangled_step(TrainerState& st, const VideoBatch& batch) {
  const TrainerConfig& cfg = st.cfg;
  // Single joint objective: the live student both encodes the volumes and
  // classifies the blended frames, so mask gradients flow through it.
  MixDraw d = draw_mixed(st, batch, st.student);

  StepReport rep;
  rep.step = st.step_count;
  fill_mix_stats(rep, d.mixed, d.mu);

  Tensor loss = soft_ce(forward(d.mixed.frames, st.student).logits,
                        d.mixed.soft_labels);
  if (cfg.mask_loss_enabled) {
    Tensor lm = loss_mask(d.mixed.mask_used);
    rep.mask_loss = lm.item();
    loss = add(loss, mul_scalar(lm, cfg.omega));
  }

  rep.student_loss = loss.item();
  rep.selector_loss = rep.student_loss;
  require_finite(rep.student_loss, "joint", st.step_count);

  const auto sparams = st.student.all();
  const auto selparams = st.selector.all();
  zero_all(sparams);
  zero_all(selparams);
  loss.backward();
  rep.grad_norm_student = grad_l2(sparams);
  rep.grad_norm_selector = grad_l2(selparams);
  sgd_apply(sparams, st.student_opt, cfg.lr_student, cfg.sgd_momentum);
  sgd_apply(selparams, st.selector_opt, cfg.lr_selector, cfg.sgd_momentum);

  ema_update(st.teacher, st.student, cfg.ema_momentum);
  ++st.step_count;
  return rep;
}

StepReport baseline_step(TrainerState& st, const VideoBatch& batch) {
  const TrainerConfig& cfg = st.cfg;
  StepReport rep;
  rep.step = st.step_count;

  Tensor loss;
  if (cfg.arm == AugArm::None) {
    loss = soft_ce(forward(batch.frames, st.student).logits, batch.labels);
  } else {
    PairedBatch pb = pair_batches(batch, st.rng_pairing);
    std::vector<double> lambdas =
        draw_lambdas(st.rng_lambda, cfg.alpha_spatial, batch.batch_size());
    MixedBatch mixed =
        cfg.arm == AugArm::Mixup
            ? mixup_baseline(pb.lhs, pb.rhs, lambdas)
            : cutmix_baseline(pb.lhs, pb.rhs, lambdas, st.rng_cutmix);
    fill_mix_stats(rep, mixed, -1.0);
    loss = soft_ce(forward(mixed.frames, st.student).logits,
                   mixed.soft_labels);
  }

  rep.student_loss = loss.item();
  require_finite(rep.student_loss, "student", st.step_count);
  const auto sparams = st.student.all();
  zero_all(sparams);
  loss.backward();
  rep.grad_norm_student = grad_l2(sparams);
  sgd_apply(sparams, st.student_opt, cfg.lr_student, cfg.sgd_momentum);

  ema_update(st.teacher, st.student, cfg.ema_momentum);
  ++st.step_count;
  return rep;
}

StepReport train_step(TrainerState& st, const VideoBatch& batch) {
  switch (st.cfg.arm) {
    case AugArm::None:
    case AugArm::Mixup:
    case AugArm::Cutmix:
      return baseline_step(st, batch);
    default:
      return st.cfg.mode == TrainMode::Entangled ? entangled_step(st, batch)
                                                 : disentangled_step(st, batch);
  }
}

double evaluate(const RecognizerParams& params, const VideoBatch& data,
                std::size_t chunk) {
  const std::size_t n = data.batch_size();
  if (n == 0) return 0.0;
  if (chunk == 0) chunk = n;
  double weighted = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    VideoBatch mb = take(data, idx);
    weighted += accuracy(forward(mb.frames, params).logits, mb.labels) *
                static_cast<double>(end - start);
  }
  return weighted / static_cast<double>(n);
}

TrainResult train(TrainerState& st, const Dataset& ds, const StepHook& on_step,
                  const EpochHook& on_epoch) {
  const TrainerConfig& cfg = st.cfg;
  TrainResult res;
  const std::size_t n = ds.train.batch_size();
  const double base_lr_student = cfg.lr_student;
  const double base_lr_selector = cfg.lr_selector;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.lr_decay_epoch > 0 && epoch == cfg.lr_decay_epoch) {
      st.cfg.lr_student = base_lr_student * cfg.lr_decay_factor;
      st.cfg.lr_selector = base_lr_selector * cfg.lr_decay_factor;
    }
    const auto order = st.rng_shuffle.permutation(n);
    double sum_student = 0.0, sum_selector = 0.0;
    std::size_t steps = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      if (end - start < 2) break;  // pairing needs at least two samples
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      VideoBatch mb = take(ds.train, idx);
      StepReport rep = train_step(st, mb);
      sum_student += rep.student_loss;
      sum_selector += rep.selector_loss;
      ++steps;
      if (on_step) on_step(rep);
    }

    EpochRecord er;
    er.epoch = epoch;
    if (steps > 0) {
      er.mean_student_loss = sum_student / static_cast<double>(steps);
      er.mean_selector_loss = sum_selector / static_cast<double>(steps);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      er.train_accuracy = evaluate(st.student, ds.train);
      er.val_accuracy = evaluate(st.student, ds.val);
    }
    res.history.push_back(er);
    if (on_epoch) on_epoch(er);
  }

  if (!res.history.empty() && res.history.back().val_accuracy >= 0.0) {
    res.final_train_accuracy = res.history.back().train_accuracy;
    res.final_val_accuracy = res.history.back().val_accuracy;
  } else {
    res.final_train_accuracy = evaluate(st.student, ds.train);
    res.final_val_accuracy = evaluate(st.student, ds.val);
  }
  st.cfg.lr_student = base_lr_student;
  st.cfg.lr_selector = base_lr_selector;
  res.steps_run = st.step_count;
  return res;
}

}  // namespace svmix
