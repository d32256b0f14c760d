#pragma once

#include <string>
#include <utility>
#include <vector>

#include "trkp/tensor.hpp"

namespace trkp {

// Model checkpoint container, magic "TRKPCK1\0": header (format and
// model version, tensor count) followed by named little-endian f32
// tensors. Write->read round-trips bit-exactly; runs at f64 precision
// round their parameters to f32 on save.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor<float>>> items;

  const Tensor<float>& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::string& path);

}  // namespace trkp
