#pragma once

#include "trkp/scenes.hpp"

namespace trkp {

// One decoded candidate. `cell` is the flat grid index it came from and
// breaks score ties deterministically.
struct Detection {
  BoxLabel box;
  double score = 0;
  int cell = 0;
};

}  // namespace trkp
