#pragma once

// Flat, diff-able experiment configuration: every knob is one `section.key`
// line in a text file, CLI overrides reuse the same setter, and the config
// hash is taken over the canonical serialization so key order never matters.

#include <cstdint>
#include <string>
#include <string_view>

#include "svmix/trainer.hpp"

namespace svmix {

struct ExperimentConfig {
  DatasetSpec data;

  std::size_t stage1_channels = 10;
  std::size_t stage2_channels = 20;
  std::size_t temporal_window1 = 2;
  std::size_t temporal_window2 = 1;

  SelectorConfig selector;

  AugArm arm = AugArm::SvmixFull;
  EnsemblePolicy policy;
  double alpha_spatial = 1.0;
  double alpha_temporal = 0.8;

  TrainMode mode = TrainMode::Disentangled;
  double omega = 1.0;
  double ema_momentum = 0.999;
  bool share_selector_params = true;
  bool mask_loss_enabled = true;
  bool recognition_losses = true;
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  std::size_t eval_every = 5;
  double lr_student = 0.05;
  double lr_selector = 0.05;
  double sgd_momentum = 0.9;
  std::uint64_t train_seed = 1;

  // The recognizer input dims mirror the dataset spec; this composes the
  // full training configuration from the single source of truth.
  TrainerConfig trainer() const;
  void validate() const;

  // Assigns one key. Unknown keys and unparsable values raise ConfigError
  // naming the key.
  void set(const std::string& key, const std::string& value);

  // Canonical form: every key, sorted, one `key=value` per line.
  std::string serialize() const;
  // FNV-1a 64 over the canonical serialization.
  std::uint64_t hash() const;

  // Defaults overlaid with the file's assignments. Lines are
  // `key = value`, '#' starts a comment, blank lines are skipped.
  static ExperimentConfig from_file(const std::string& path);
  void apply_file(const std::string& path);
};

std::uint64_t fnv1a64(std::string_view bytes);

// Content version of the sources, computed at build time.
std::string code_version();

struct RunRecord {
  std::uint64_t config_hash = 0;
  std::string code_version;
  std::string arm;
  std::string mode;
  std::uint64_t seed = 0;
  TrainResult result;
  double wall_seconds = 0.0;
};

// Plain-text summary next to the metrics stream. IoError on failure.
void save_run_record(const std::string& path, const RunRecord& r);

}  // namespace svmix
