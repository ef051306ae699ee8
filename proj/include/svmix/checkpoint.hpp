#pragma once

// Versioned checkpoint format shared by the student, teacher, and selector:
// a magic header followed by named parameter blobs (shape + float64 data).

#include <string>
#include <utility>
#include <vector>

#include "svmix/tensor.hpp"

namespace svmix {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const NamedTensors& params);

// Loads values into the given tensors in place. Every name in the file must
// match a tensor of identical shape; missing or extra names are format errors.
void load_checkpoint(const std::string& path, NamedTensors& params);

}  // namespace svmix
