#include "svmix/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "svmix_code_version.hpp"

namespace svmix {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("config key '" + key + "' has invalid value '" + value +
                    "'");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  bad_value(key, value);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (value.empty() || value[0] == '-') bad_value(key, value);
    std::uint64_t v = std::stoull(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value);
  }
}

AugArm parse_arm(const std::string& key, const std::string& value) {
  for (auto a : {AugArm::None, AugArm::Mixup, AugArm::Cutmix,
                 AugArm::SvmixSpatial, AugArm::SvmixTemporal,
                 AugArm::SvmixFull})
    if (value == aug_arm_name(a)) return a;
  bad_value(key, value);
}

EnsemblePolicy::Mode parse_ensemble_mode(const std::string& key,
                                         const std::string& value) {
  if (value == "probabilistic") return EnsemblePolicy::Mode::Probabilistic;
  if (value == "average") return EnsemblePolicy::Mode::Average;
  bad_value(key, value);
}

TrainMode parse_train_mode(const std::string& key, const std::string& value) {
  if (value == "disentangled") return TrainMode::Disentangled;
  if (value == "entangled") return TrainMode::Entangled;
  bad_value(key, value);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

const char* format_bool(bool v) { return v ? "true" : "false"; }

}  // namespace

TrainerConfig ExperimentConfig::trainer() const {
  TrainerConfig t;
  t.recognizer.num_classes = data.num_classes;
  t.recognizer.frames_t = data.frames_t;
  t.recognizer.height = data.height;
  t.recognizer.width = data.width;
  t.recognizer.channels = data.channels;
  t.recognizer.stage1_channels = stage1_channels;
  t.recognizer.stage2_channels = stage2_channels;
  t.recognizer.temporal_window1 = temporal_window1;
  t.recognizer.temporal_window2 = temporal_window2;
  t.selector = selector;
  t.arm = arm;
  t.policy = policy;
  t.alpha_spatial = alpha_spatial;
  t.alpha_temporal = alpha_temporal;
  t.omega = omega;
  t.ema_momentum = ema_momentum;
  t.share_selector_params = share_selector_params;
  t.mask_loss_enabled = mask_loss_enabled;
  t.recognition_losses = recognition_losses;
  t.mode = mode;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.eval_every = eval_every;
  t.lr_student = lr_student;
  t.lr_selector = lr_selector;
  t.sgd_momentum = sgd_momentum;
  t.seed = train_seed;
  return t;
}

void ExperimentConfig::validate() const {
  data.validate();
  trainer().validate();
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "data.num_classes") data.num_classes = parse_u64(key, value);
  else if (key == "data.samples_per_class_train")
    data.samples_per_class_train = parse_u64(key, value);
  else if (key == "data.samples_per_class_val")
    data.samples_per_class_val = parse_u64(key, value);
  else if (key == "data.frames_t") data.frames_t = parse_u64(key, value);
  else if (key == "data.height") data.height = parse_u64(key, value);
  else if (key == "data.width") data.width = parse_u64(key, value);
  else if (key == "data.channels") data.channels = parse_u64(key, value);
  else if (key == "data.bg_lead") data.bg_lead = parse_u64(key, value);
  else if (key == "data.bg_trail") data.bg_trail = parse_u64(key, value);
  else if (key == "data.noise_std") data.noise_std = parse_double(key, value);
  else if (key == "data.seed") data.seed = parse_u64(key, value);
  else if (key == "model.stage1_channels")
    stage1_channels = parse_u64(key, value);
  else if (key == "model.stage2_channels")
    stage2_channels = parse_u64(key, value);
  else if (key == "model.temporal_window1")
    temporal_window1 = parse_u64(key, value);
  else if (key == "model.temporal_window2")
    temporal_window2 = parse_u64(key, value);
  else if (key == "selector.d_k") selector.d_k = parse_u64(key, value);
  else if (key == "selector.lambda_embedding")
    selector.lambda_embedding = parse_bool(key, value);
  else if (key == "selector.nearest_upsample")
    selector.nearest_upsample = parse_bool(key, value);
  else if (key == "mix.arm") arm = parse_arm(key, value);
  else if (key == "mix.ensemble_mode")
    policy.mode = parse_ensemble_mode(key, value);
  else if (key == "mix.switch_prob")
    policy.switch_prob = parse_double(key, value);
  else if (key == "mix.alpha_spatial")
    alpha_spatial = parse_double(key, value);
  else if (key == "mix.alpha_temporal")
    alpha_temporal = parse_double(key, value);
  else if (key == "train.mode") mode = parse_train_mode(key, value);
  else if (key == "train.omega") omega = parse_double(key, value);
  else if (key == "train.ema_momentum")
    ema_momentum = parse_double(key, value);
  else if (key == "train.share_selector_params")
    share_selector_params = parse_bool(key, value);
  else if (key == "train.mask_loss_enabled")
    mask_loss_enabled = parse_bool(key, value);
  else if (key == "train.recognition_losses")
    recognition_losses = parse_bool(key, value);
  else if (key == "train.epochs") epochs = parse_u64(key, value);
  else if (key == "train.batch_size") batch_size = parse_u64(key, value);
  else if (key == "train.eval_every") eval_every = parse_u64(key, value);
  else if (key == "train.lr_student") lr_student = parse_double(key, value);
  else if (key == "train.lr_selector") lr_selector = parse_double(key, value);
  else if (key == "train.sgd_momentum")
    sgd_momentum = parse_double(key, value);
  else if (key == "train.seed") train_seed = parse_u64(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  // Kept in sorted key order so the hash is independent of input order.
  os << "data.bg_lead=" << data.bg_lead << "\n";
  os << "data.bg_trail=" << data.bg_trail << "\n";
  os << "data.channels=" << data.channels << "\n";
  os << "data.frames_t=" << data.frames_t << "\n";
  os << "data.height=" << data.height << "\n";
  os << "data.noise_std=" << format_double(data.noise_std) << "\n";
  os << "data.num_classes=" << data.num_classes << "\n";
  os << "data.samples_per_class_train=" << data.samples_per_class_train
     << "\n";
  os << "data.samples_per_class_val=" << data.samples_per_class_val << "\n";
  os << "data.seed=" << data.seed << "\n";
  os << "data.width=" << data.width << "\n";
  os << "mix.alpha_spatial=" << format_double(alpha_spatial) << "\n";
  os << "mix.alpha_temporal=" << format_double(alpha_temporal) << "\n";
  os << "mix.arm=" << aug_arm_name(arm) << "\n";
  os << "mix.ensemble_mode="
     << (policy.mode == EnsemblePolicy::Mode::Probabilistic ? "probabilistic"
                                                            : "average")
     << "\n";
  os << "mix.switch_prob=" << format_double(policy.switch_prob) << "\n";
  os << "model.stage1_channels=" << stage1_channels << "\n";
  os << "model.stage2_channels=" << stage2_channels << "\n";
  os << "model.temporal_window1=" << temporal_window1 << "\n";
  os << "model.temporal_window2=" << temporal_window2 << "\n";
  os << "selector.d_k=" << selector.d_k << "\n";
  os << "selector.lambda_embedding=" << format_bool(selector.lambda_embedding)
     << "\n";
  os << "selector.nearest_upsample=" << format_bool(selector.nearest_upsample)
     << "\n";
  os << "train.batch_size=" << batch_size << "\n";
  os << "train.ema_momentum=" << format_double(ema_momentum) << "\n";
  os << "train.epochs=" << epochs << "\n";
  os << "train.eval_every=" << eval_every << "\n";
  os << "train.lr_selector=" << format_double(lr_selector) << "\n";
  os << "train.lr_student=" << format_double(lr_student) << "\n";
  os << "train.mask_loss_enabled=" << format_bool(mask_loss_enabled) << "\n";
  os << "train.mode=" << train_mode_name(mode) << "\n";
  os << "train.omega=" << format_double(omega) << "\n";
  os << "train.recognition_losses=" << format_bool(recognition_losses)
     << "\n";
  os << "train.seed=" << train_seed << "\n";
  os << "train.sgd_momentum=" << format_double(sgd_momentum) << "\n";
  os << "train.share_selector_params=" << format_bool(share_selector_params)
     << "\n";
  return os.str();
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(serialize()); }

void ExperimentConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos)
      line.resize(pos);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  ExperimentConfig cfg;
  cfg.apply_file(path);
  return cfg;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string code_version() { return SVMIX_CODE_VERSION; }

void save_run_record(const std::string& path, const RunRecord& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run record: " + path);
  out << std::setprecision(17);
  out << "config_hash=" << std::hex << std::setw(16) << std::setfill('0')
      << r.config_hash << std::dec << std::setfill(' ') << "\n";
  out << "code_version=" << r.code_version << "\n";
  out << "arm=" << r.arm << "\n";
  out << "mode=" << r.mode << "\n";
  out << "seed=" << r.seed << "\n";
  out << "steps_run=" << r.result.steps_run << "\n";
  out << "final_train_accuracy=" << r.result.final_train_accuracy << "\n";
  out << "final_val_accuracy=" << r.result.final_val_accuracy << "\n";
  out << "wall_seconds=" << r.wall_seconds << "\n";
  if (!out) throw IoError("failed while writing run record: " + path);
}

}  // namespace svmix
