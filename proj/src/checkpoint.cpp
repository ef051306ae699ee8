#include "svmix/checkpoint.hpp"

#include <algorithm>

#include "svmix/io.hpp"

namespace svmix {

namespace {
constexpr char kCheckpointMagic[9] = "SVCKPT01";
}

void save_checkpoint(const std::string& path, const NamedTensors& params) {
  io::Writer w(path);
  w.magic(kCheckpointMagic);
  w.u64(params.size());
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u64(t.ndim());
    for (std::size_t d : t.shape()) w.u64(d);
    w.f64_array(t.values());
  }
  w.close();
}

void load_checkpoint(const std::string& path, NamedTensors& params) {
  io::Reader r(path);
  r.expect_magic(kCheckpointMagic);
  const std::size_t count = r.u64();
  if (count != params.size())
    throw FormatError(path + ": holds " + std::to_string(count) +
                      " parameters, expected " + std::to_string(params.size()));
  std::vector<bool> filled(params.size(), false);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Shape shape(r.u64());
    for (std::size_t& d : shape) d = r.u64();
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const auto& p) { return p.first == name; });
    if (it == params.end())
      throw FormatError(path + ": unknown parameter '" + name + "' at byte " +
                        std::to_string(r.offset()));
    if (it->second.shape() != shape)
      throw FormatError(path + ": parameter '" + name + "' has shape " +
                        shape_str(shape) + ", expected " +
                        shape_str(it->second.shape()));
    const std::size_t idx =
        static_cast<std::size_t>(std::distance(params.begin(), it));
    if (filled[idx])
      throw FormatError(path + ": duplicate parameter '" + name + "'");
    filled[idx] = true;
    it->second.mutable_values() = r.f64_array(numel(shape));
  }
}

}  // namespace svmix
