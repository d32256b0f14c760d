#pragma once

namespace trkp {

// Number of worker threads used by the OpenMP kernels. 0 means the
// OpenMP runtime default. All parallel loops in this project are
// gather-form (each output element written by exactly one iteration),
// so results are bit-identical for every thread count.
void set_threads(int n);
int threads();
int hardware_threads();

}  // namespace trkp
