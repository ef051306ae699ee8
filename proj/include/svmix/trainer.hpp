#pragma once

// Training pipeline with a frozen EMA teacher: the student learns from
// detached mixed samples while the mask selector learns through the teacher,
// so neither corrupts the other's gradients. An entangled single-loss mode
// exists as the ablation arm.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "svmix/mixer.hpp"

namespace svmix {

enum class AugArm : std::uint8_t {
  None = 0,
  Mixup = 1,
  Cutmix = 2,
  SvmixSpatial = 3,
  SvmixTemporal = 4,
  SvmixFull = 5,
};
const char* aug_arm_name(AugArm a);

enum class TrainMode : std::uint8_t { Disentangled = 0, Entangled = 1 };
const char* train_mode_name(TrainMode m);

struct TrainerConfig {
  RecognizerConfig recognizer;
  SelectorConfig selector;
  AugArm arm = AugArm::SvmixFull;
  EnsemblePolicy policy;
  double alpha_spatial = 1.0;   // Beta concentration, spatial masks & baselines
  double alpha_temporal = 0.8;  // Beta concentration, temporal masks
  double omega = 1.0;           // weight of the mask-mean tributary loss
  double ema_momentum = 0.999;  // teacher momentum m
  bool share_selector_params = true;
  bool mask_loss_enabled = true;
  // Off → selector-only mode: no student/teacher classification losses; the
  // tributary loss is the only force on the selector.
  bool recognition_losses = true;
  TrainMode mode = TrainMode::Disentangled;
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  std::size_t eval_every = 5;  // epochs between validation passes
  double lr_student = 0.05;
  double lr_selector = 0.05;
  double sgd_momentum = 0.9;
  // Single-decay schedule: from epoch lr_decay_epoch (1-based) on, both
  // learning rates are multiplied by lr_decay_factor. 0 disables it.
  std::size_t lr_decay_epoch = 0;
  double lr_decay_factor = 0.1;
  std::uint64_t seed = 1;
  // Self-test canary: route the student loss through the attached mask.
  // Never set outside the mutation checks.
  bool leak_student_grad_to_selector = false;

  void validate() const;
};

struct SgdState {
  std::vector<std::vector<double>> velocity;  // one slot per parameter tensor
  void ensure(const std::vector<Tensor>& params);
};

struct TrainerState {
  TrainerConfig cfg;
  RecognizerParams student;  // gradients tracked
  RecognizerParams teacher;  // frozen; moves only via the EMA update
  SelectorBank selector;     // gradients tracked
  SgdState student_opt, selector_opt;
  Rng rng_shuffle{0}, rng_pairing{0}, rng_lambda{0}, rng_ensemble{0},
      rng_cutmix{0};
  std::size_t step_count = 0;

  static TrainerState init(const TrainerConfig& cfg);
};

struct StepReport {
  std::size_t step = 0;
  double student_loss = 0.0;
  double selector_loss = 0.0;
  double mask_loss = 0.0;
  double lambda_mean = 0.0;
  MixMethod method = MixMethod::Mixup;
  double mask_mean = 0.0;
  double mu = -1.0;  // ensemble draw when probabilistic SV-Mix ran
  double grad_norm_student = 0.0;
  double grad_norm_selector = 0.0;
};

// Teacher tracks the student: every parameter p_t <- m*p_t + (1-m)*p_s.
void ema_update(RecognizerParams& teacher, const RecognizerParams& student,
                double m);

// Tributary loss: mean over the batch of |λ_b − mean(mask_b)|.
Tensor loss_mask(const MixMask& m);

// The forward graphs of one mixing step, before any update. Exposed so tests
// can drive the two backward passes separately and inspect gradient routing.
struct StepLosses {
  Tensor student_loss;   // undefined when recognition losses are off
  Tensor selector_loss;  // undefined when no selector term is active
  MixedBatch mixed;
  double mu = -1.0;
};
StepLosses build_step_losses(TrainerState& st, const VideoBatch& batch);

StepReport disentangled_step(TrainerState& st, const VideoBatch& batch);
StepReport entangled_step(TrainerState& st, const VideoBatch& batch);
// Baseline arms (none / mixup / cutmix): student-only updates.
StepReport baseline_step(TrainerState& st, const VideoBatch& batch);
// Dispatches on cfg.arm and cfg.mode.
StepReport train_step(TrainerState& st, const VideoBatch& batch);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_student_loss = 0.0;
  double mean_selector_loss = 0.0;
  double train_accuracy = -1.0;  // -1 when not evaluated this epoch
  double val_accuracy = -1.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double final_train_accuracy = 0.0;
  double final_val_accuracy = 0.0;
  std::size_t steps_run = 0;
};

// Chunked argmax accuracy of the student on a full batch container.
double evaluate(const RecognizerParams& params, const VideoBatch& data,
                std::size_t chunk = 32);

using StepHook = std::function<void(const StepReport&)>;
using EpochHook = std::function<void(const EpochRecord&)>;

TrainResult train(TrainerState& st, const Dataset& ds,
                  const StepHook& on_step = {},
                  const EpochHook& on_epoch = {});

}  // namespace svmix
