#pragma once

// Synthetic moving-shapes video classification data. Classes are defined by
// motion alone (direction of travel, growth, shrinkage); any single frame is
// uninformative because start positions, sizes, and shapes are uniform across
// classes. Leading/trailing frames contain pure background.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "svmix/rng.hpp"
#include "svmix/tensor.hpp"

namespace svmix {

struct VideoBatch {
  Tensor frames;                  // [B,T,H,W,C], values in [0,1]
  Tensor labels;                  // [B,K] rows on the simplex (one-hot raw)
  std::vector<std::uint64_t> ids; // stable per-sample identity

  std::size_t batch_size() const { return frames.shape()[0]; }
  std::size_t num_classes() const { return labels.shape()[1]; }
};

struct DatasetSpec {
  std::size_t num_classes = 4;  // at most the number of motion kinds (6)
  std::size_t samples_per_class_train = 8;
  std::size_t samples_per_class_val = 32;
  std::size_t frames_t = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t bg_lead = 1;   // background-only frames at the start
  std::size_t bg_trail = 1;  // background-only frames at the end
  double noise_std = 0.03;
  std::uint64_t seed = 7;

  void validate() const;  // ConfigError with the offending field
};

constexpr std::size_t kMotionKinds = 6;
const char* motion_kind_name(std::size_t cls);

struct Dataset {
  VideoBatch train;
  VideoBatch val;
};

Dataset generate(const DatasetSpec& spec);

// Row subset: out[i] = b[idx[i]] for frames, labels, and ids.
VideoBatch take(const VideoBatch& b, const std::vector<std::size_t>& idx);

struct PairedBatch {
  VideoBatch lhs;                 // b as given
  VideoBatch rhs;                 // b under `perm`
  std::vector<std::size_t> perm;  // uniform over all permutations of B
};

// In-batch pairing by uniformly random permutation. B >= 2 required.
PairedBatch pair_batches(const VideoBatch& b, Rng& rng);

// Cache file: header (spec + seed + version) then raw little-endian float64.
void save_dataset(const std::string& path, const DatasetSpec& spec,
                  const Dataset& ds);
// Returns nothing when the header does not match `spec` (caller regenerates).
std::optional<Dataset> load_dataset(const std::string& path,
                                    const DatasetSpec& spec);

}  // namespace svmix
