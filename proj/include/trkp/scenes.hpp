#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trkp/tensor.hpp"

namespace trkp {

// Axis-aligned box with its class. Pixel coordinates, x to the right,
// y downward; (0,0) is the top-left image corner.
struct BoxLabel {
  float xmin = 0, ymin = 0, xmax = 0, ymax = 0;
  int class_id = 0;

  float cx() const { return 0.5f * (xmin + xmax); }
  float cy() const { return 0.5f * (ymin + ymax); }
  float width() const { return xmax - xmin; }
  float height() const { return ymax - ymin; }
  float area() const { return width() * height(); }
};

// One grayscale image plus its ground-truth boxes. Pixels are stored as
// 32-bit floats regardless of the training precision, matching the
// on-disk dataset format, so a written dataset reads back bit-exactly.
struct Scene {
  Tensor<float> image;  // (h, w, 1), values in [0, 1]
  std::vector<BoxLabel> boxes;
};

// Appearance parameters of one domain. These knobs are the stand-in for
// a real-world domain gap: relevance of any image to a target built from
// the same knobs is known by construction.
struct DomainSpec {
  std::string domain_id;
  double intensity_offset = 0.0;  // in [-0.5, 0.5]
  double noise_sigma = 0.0;       // >= 0
  double object_scale = 1.0;      // in [0.5, 2.0]
  std::vector<double> class_prior;  // sums to 1, size C in {2, 3}
  std::uint64_t seed = 0;
  int image_h = 64, image_w = 64;
};

// Target domain as a per-scene mixture over source-like component specs.
struct MixtureSpec {
  std::string domain_id;
  std::vector<DomainSpec> components;
  std::vector<double> weights;  // sums to 1
  std::uint64_t seed = 0;
};

struct Dataset {
  std::string domain_id;
  int classes = 0;
  std::vector<Scene> scenes;
  int image_h() const { return scenes.empty() ? 0 : scenes[0].image.dim(0); }
  int image_w() const { return scenes.empty() ? 0 : scenes[0].image.dim(1); }
};

void validate_spec(const DomainSpec& spec);

// Scenes [0, n). Deterministic for a given seed; parallel over scenes.
std::vector<Scene> synthesize_domain(const DomainSpec& spec, int n);

// Scenes [begin, end) of the same stream, e.g. a held-out split that
// does not overlap the training range.
std::vector<Scene> synthesize_range(const DomainSpec& spec, int begin, int end);

// Per-scene component index is drawn from `weights`; the scene is then
// rendered with that component's appearance knobs under the mixture's
// own seed stream.
std::vector<Scene> synthesize_mixture(const MixtureSpec& mix, int begin, int end);

// Which component scene `index` draws, for construction-truth checks.
int mixture_component(const MixtureSpec& mix, int index);

}  // namespace trkp
