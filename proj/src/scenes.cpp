#include "trkp/scenes.hpp"

#include <algorithm>
#include <cmath>

#include "trkp/error.hpp"
#include "trkp/rng.hpp"

namespace trkp {
namespace {

constexpr int kMaxObjects = 8;
constexpr double kMinHalfExtent = 3.0;
constexpr double kMaxHalfExtent = 8.0;
constexpr double kObjectContrast = 0.35;
constexpr double kOverlapIouLimit = 0.2;
constexpr int kPlacementTries = 12;

float clamp01(double v) {
  return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

double box_iou(const BoxLabel& a, const BoxLabel& b) {
  const double ix = std::max(0.0, double(std::min(a.xmax, b.xmax)) - std::max(a.xmin, b.xmin));
  const double iy = std::max(0.0, double(std::min(a.ymax, b.ymax)) - std::max(a.ymin, b.ymin));
  const double inter = ix * iy;
  const double uni = double(a.area()) + double(b.area()) - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

int draw_class(CounterRng& rng, const std::vector<double>& prior) {
  const double u = rng.next_double();
  double acc = 0;
  for (std::size_t c = 0; c < prior.size(); ++c) {
    acc += prior[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(prior.size()) - 1;
}

struct Shape {
  int kind;  // 0 square, 1 circle, 2 triangle (apex up)
  double cx, cy, half;

  bool contains(double px, double py) const {
    switch (kind) {
      case 0:
        return std::abs(px - cx) <= half && std::abs(py - cy) <= half;
      case 1:
        return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= half * half;
      default: {
        const double d = py - (cy - half);
        return d >= 0 && py <= cy + half && std::abs(px - cx) <= 0.5 * d;
      }
    }
  }
};

Scene render_scene(const DomainSpec& spec, std::uint64_t stream_seed, int index) {
  CounterRng rng(stream_seed, rng_stream::kSceneBase + static_cast<std::uint64_t>(index));
  const int h = spec.image_h, w = spec.image_w;
  const double bg = 0.5 + spec.intensity_offset;
  const double fg = bg <= 0.5 ? bg + kObjectContrast : bg - kObjectContrast;

  Scene scene;
  scene.image = Tensor<float>(std::vector<int>{h, w, 1});

  const int n_obj = 1 + static_cast<int>(rng.next_below(kMaxObjects));
  std::vector<Shape> shapes;
  for (int o = 0; o < n_obj; ++o) {
    const int cls = draw_class(rng, spec.class_prior);
    Shape s;
    s.kind = cls;
    BoxLabel box;
    for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
      s.half = rng.uniform(kMinHalfExtent, kMaxHalfExtent) * spec.object_scale;
      const double margin = s.half + 1.0;
      s.cx = rng.uniform(margin, w - margin);
      s.cy = rng.uniform(margin, h - margin);
      box.xmin = static_cast<float>(s.cx - s.half);
      box.xmax = static_cast<float>(s.cx + s.half);
      box.ymin = static_cast<float>(s.cy - s.half);
      box.ymax = static_cast<float>(s.cy + s.half);
      box.class_id = cls;
      bool clear = true;
      for (const BoxLabel& prev : scene.boxes)
        if (box_iou(box, prev) > kOverlapIouLimit) {
          clear = false;
          break;
        }
      if (clear) break;
    }
    shapes.push_back(s);
    scene.boxes.push_back(box);
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double v = bg;
      for (const Shape& s : shapes)
        if (s.contains(px, py)) {
          v = fg;
          break;
        }
      scene.image.at(y, x, 0) = clamp01(v);
    }

  if (spec.noise_sigma > 0)
    for (int i = 0; i < scene.image.size(); ++i)
      scene.image[i] = clamp01(double(scene.image[i]) + spec.noise_sigma * rng.normal());

  return scene;
}

}  // namespace

void validate_spec(const DomainSpec& spec) {
  if (spec.image_h < 16 || spec.image_w < 16 || spec.image_h % 8 != 0 || spec.image_w % 8 != 0)
    throw ArgError("domain '" + spec.domain_id + "': image size must be a multiple of 8, >= 16");
  if (spec.intensity_offset < -0.5 || spec.intensity_offset > 0.5)
    throw ArgError("domain '" + spec.domain_id + "': intensity_offset outside [-0.5, 0.5]");
  if (spec.noise_sigma < 0)
    throw ArgError("domain '" + spec.domain_id + "': noise_sigma must be >= 0");
  if (spec.object_scale < 0.5 || spec.object_scale > 2.0)
    throw ArgError("domain '" + spec.domain_id + "': object_scale outside [0.5, 2.0]");
  const std::size_t c = spec.class_prior.size();
  if (c < 2 || c > 3)
    throw ArgError("domain '" + spec.domain_id + "': class count must be 2 or 3");
  double sum = 0;
  for (double p : spec.class_prior) {
    if (p < 0) throw ArgError("domain '" + spec.domain_id + "': negative class prior");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ArgError("domain '" + spec.domain_id + "': class prior must sum to 1");
}

std::vector<Scene> synthesize_range(const DomainSpec& spec, int begin, int end) {
  validate_spec(spec);
  if (begin < 0 || end <= begin) throw ArgError("synthesize_range: need 0 <= begin < end");
  std::vector<Scene> scenes(static_cast<std::size_t>(end - begin));
#pragma omp parallel for schedule(dynamic)
  for (int i = begin; i < end; ++i)
    scenes[static_cast<std::size_t>(i - begin)] = render_scene(spec, spec.seed, i);
  return scenes;
}

std::vector<Scene> synthesize_domain(const DomainSpec& spec, int n) {
  if (n <= 0) throw ArgError("synthesize_domain: scene count must be positive");
  return synthesize_range(spec, 0, n);
}

int mixture_component(const MixtureSpec& mix, int index) {
  // Separate stream from the scene renderer so the component draw does
  // not alias the renderer's first draw.
  CounterRng rng(mix.seed, rng_stream::kMixtureBase + static_cast<std::uint64_t>(index));
  const double u = rng.next_double();
  double acc = 0;
  for (std::size_t c = 0; c < mix.weights.size(); ++c) {
    acc += mix.weights[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(mix.weights.size()) - 1;
}

std::vector<Scene> synthesize_mixture(const MixtureSpec& mix, int begin, int end) {
  if (mix.components.empty() || mix.components.size() != mix.weights.size())
    throw ArgError("mixture: components and weights must be non-empty and match");
  double sum = 0;
  for (double v : mix.weights) {
    if (v < 0) throw ArgError("mixture: negative weight");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgError("mixture: weights must sum to 1");
  for (const DomainSpec& c : mix.components) validate_spec(c);
  if (begin < 0 || end <= begin) throw ArgError("synthesize_mixture: need 0 <= begin < end");

  std::vector<Scene> scenes(static_cast<std::size_t>(end - begin));
#pragma omp parallel for schedule(dynamic)
  for (int i = begin; i < end; ++i) {
    DomainSpec spec = mix.components[static_cast<std::size_t>(mixture_component(mix, i))];
    spec.domain_id = mix.domain_id;
    spec.seed = mix.seed;
    scenes[static_cast<std::size_t>(i - begin)] = render_scene(spec, mix.seed, i);
  }
  return scenes;
}

}  // namespace trkp
