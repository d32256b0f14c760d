#pragma once

#include <string>

#include "trkp/scenes.hpp"

namespace trkp {

// Binary dataset container, magic "TRKPDS1\0". Little-endian header
// (h, w, scene count, class count, domain-id string), then per scene the
// box count, the image payload as f32, and the box records. Write->read
// round-trips bit-exactly.

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace trkp
