#include "trkp/checkpoint.hpp"

#include <fstream>

#include "trkp/binio.hpp"

namespace trkp {

namespace {
constexpr char kMagic[8] = {'T', 'R', 'K', 'P', 'C', 'K', '1', '\0'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint16_t kModelVersion = 1;
}  // namespace

const Tensor<float>& NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw LookupError("checkpoint: no tensor named '" + name + "'");
}

bool NamedTensors::contains(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return true;
  return false;
}

void write_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgError("write_checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  binio::put_u16(os, kFormatVersion);
  binio::put_u16(os, kModelVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(tensors.items.size()));
  for (const auto& [name, t] : tensors.items) {
    binio::put_string(os, name);
    binio::put_u16(os, static_cast<std::uint16_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) binio::put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    binio::put_f32_array(os, t.data(), static_cast<std::size_t>(t.size()));
  }
  if (!os) throw ArgError("write_checkpoint: write failed for " + path);
}

NamedTensors read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("read_checkpoint: cannot open " + path);
  binio::check_magic(is, kMagic, "TRKPCK1 checkpoint");
  const std::uint16_t fmt = binio::get_u16(is, "format version");
  if (fmt != kFormatVersion) throw ParseError("read_checkpoint: unsupported format version");
  (void)binio::get_u16(is, "model version");
  const std::uint32_t count = binio::get_u32(is, "tensor count");
  NamedTensors out;
  out.items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binio::get_string(is, "tensor name");
    const std::uint16_t ndim = binio::get_u16(is, "tensor rank");
    if (ndim == 0 || ndim > 4) throw ParseError("read_checkpoint: bad tensor rank");
    std::vector<int> shape(ndim);
    for (int d = 0; d < ndim; ++d) {
      shape[static_cast<std::size_t>(d)] = static_cast<int>(binio::get_u32(is, "tensor dims"));
      if (shape[static_cast<std::size_t>(d)] <= 0)
        throw ParseError("read_checkpoint: bad tensor dimension");
    }
    Tensor<float> t(shape);
    binio::get_f32_array(is, t.data(), static_cast<std::size_t>(t.size()), "tensor payload");
    out.items.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace trkp
