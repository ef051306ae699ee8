#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "svmix/config.hpp"

using namespace svmix;

namespace {

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("defaults form a valid experiment") {
  ExperimentConfig cfg;
  cfg.validate();
  TrainerConfig t = cfg.trainer();
  CHECK(t.recognizer.height == cfg.data.height);
  CHECK(t.recognizer.num_classes == cfg.data.num_classes);
  CHECK(t.seed == cfg.train_seed);
}

TEST_CASE("serialization is sorted, complete, and round-trips") {
  ExperimentConfig cfg;
  cfg.data.noise_std = 0.125;
  cfg.alpha_temporal = 0.8;
  cfg.arm = AugArm::Cutmix;
  cfg.mode = TrainMode::Entangled;
  std::string text = cfg.serialize();
  auto ls = lines_of(text);

  std::vector<std::string> keys;
  for (const auto& l : ls) keys.push_back(l.substr(0, l.find('=')));
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(keys.size() == 36);

  ExperimentConfig back;
  for (const auto& l : ls) {
    auto eq = l.find('=');
    back.set(l.substr(0, eq), l.substr(eq + 1));
  }
  CHECK(back.serialize() == text);
  CHECK(back.hash() == cfg.hash());
}

TEST_CASE("the hash ignores assignment order but tracks every field") {
  ExperimentConfig a;
  a.set("train.omega", "2.5");
  a.set("mix.arm", "mixup");
  ExperimentConfig b;
  b.set("mix.arm", "mixup");
  b.set("train.omega", "2.5");
  CHECK(a.hash() == b.hash());

  ExperimentConfig c = b;
  CHECK(c.hash() == b.hash());
  c.set("train.omega", "2.5000001");
  CHECK(c.hash() != b.hash());
}

TEST_CASE("unknown keys and bad values name the offender") {
  ExperimentConfig cfg;
  try {
    cfg.set("train.omege", "1.0");
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.omege") != std::string::npos);
  }
  try {
    cfg.set("mix.arm", "svmax");
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("mix.arm") != std::string::npos);
    CHECK(std::string(e.what()).find("svmax") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg.set("train.epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.lr_student", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.set("selector.lambda_embedding", "maybe"), ConfigError);
}

TEST_CASE("config files accept comments, spacing, and overrides") {
  const std::string path = "config_parse_test.cfg";
  write_file(path,
             "# experiment\n"
             "mix.arm = svmix-temporal   # forced arm\n"
             "\n"
             "train.omega=3.5\n"
             "  train.epochs   =  7\n");
  ExperimentConfig cfg = ExperimentConfig::from_file(path);
  CHECK(cfg.arm == AugArm::SvmixTemporal);
  CHECK(cfg.omega == 3.5);
  CHECK(cfg.epochs == 7);
  // CLI-style override after the file load wins.
  cfg.set("train.omega", "0.25");
  CHECK(cfg.omega == 0.25);

  SUBCASE("missing files are IO errors") {
    CHECK_THROWS_AS(ExperimentConfig::from_file("does_not_exist.cfg"),
                    IoError);
  }

  SUBCASE("malformed lines carry their line number") {
    write_file(path, "mix.arm = mixup\nnot a key value line\n");
    try {
      ExperimentConfig::from_file(path);
      CHECK(false);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }

  std::remove(path.c_str());
}

TEST_CASE("cross-field consistency is enforced at validation") {
  ExperimentConfig cfg;
  cfg.set("data.height", "30");  // trunk needs multiples of 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  ExperimentConfig cfg2;
  cfg2.set("data.frames_t", "6");
  cfg2.set("model.temporal_window1", "4");  // 6 does not split into 4s
  CHECK_THROWS_AS(cfg2.validate(), ConfigError);
}

TEST_CASE("the hash function matches its published reference values") {
  CHECK(fnv1a64("") == 14695981039346656037ull);
  CHECK(fnv1a64("a") == 12638187200555641996ull);
  CHECK(fnv1a64("foobar") == 9625390261332436968ull);
}

TEST_CASE("run records land on disk with the essentials") {
  RunRecord r;
  r.config_hash = ExperimentConfig{}.hash();
  r.code_version = code_version();
  r.arm = "svmix-full";
  r.mode = "disentangled";
  r.seed = 3;
  r.result.final_val_accuracy = 0.75;
  r.wall_seconds = 1.5;
  CHECK(r.code_version.size() == 40);  // content hash in hex

  const std::string path = "run_record_test.txt";
  save_run_record(path, r);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  CHECK(text.find("config_hash=") != std::string::npos);
  CHECK(text.find("final_val_accuracy=0.75") != std::string::npos);
  CHECK(text.find("arm=svmix-full") != std::string::npos);
  CHECK(text.find(r.code_version) != std::string::npos);
  std::remove(path.c_str());
}
