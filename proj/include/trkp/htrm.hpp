#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "trkp/detector.hpp"
#include "trkp/error.hpp"
#include "trkp/kernels.hpp"
#include "trkp/scenes.hpp"
#include "trkp/tensor.hpp"

namespace trkp {

// Holistic target-relevant mining: pool one feature per annotated (or
// pseudo-labeled) object, run exact cosine k-NN from every target
// instance into the source pool, count per-source-image hits and map
// counts to weights.

struct HtrmConfig {
  int k_prime = 5;
  double gamma = 1.0;
  double beta = 0.5;
  // Count each neighbor feature once (the mining loop's literal rule).
  // When true, a source image is counted at most once per query instead,
  // no matter how many of its features land in that neighborhood.
  bool count_unique_queries = false;
  // Mine on whole-image mean features instead of per-instance ones.
  bool image_level = false;
};

template <typename T>
struct InstanceFeature {
  std::vector<T> v;  // unit norm (or all-zero when the pooled region is zero)
  std::string domain;
  int image = 0;
  int box = 0;
};

template <typename T>
struct InstanceFeatureSet {
  std::vector<InstanceFeature<T>> items;
  bool target_pool = false;
};

struct RelevanceEntry {
  int w = 0;
  double alpha = 0;
};

// Per (domain-id, image-index) hit counts and weights. Images of the
// source pool that are never hit keep w = 0, alpha = 0.
struct RelevanceWeights {
  std::map<std::pair<std::string, int>, RelevanceEntry> entries;

  double alpha_of(const std::string& domain, int image) const {
    auto it = entries.find({domain, image});
    return it == entries.end() ? 0.0 : it->second.alpha;
  }
  int count_of(const std::string& domain, int image) const {
    auto it = entries.find({domain, image});
    return it == entries.end() ? 0 : it->second.w;
  }
};

// alpha = gamma * ln(w / k') + beta when w > k', else 0 (natural log).
inline double weight_from_count(int w, const HtrmConfig& cfg) {
  if (w < 0) throw ArgError("weight_from_count: negative count");
  if (cfg.k_prime < 1) throw ArgError("weight_from_count: k_prime must be >= 1");
  if (w <= cfg.k_prime) return 0.0;
  return cfg.gamma * std::log(double(w) / double(cfg.k_prime)) + cfg.beta;
}

namespace detail {

template <typename T>
void l2_normalize(std::vector<T>& v) {
  double norm = 0;
  for (T x : v) norm += double(x) * double(x);
  norm = std::sqrt(norm);
  if (norm < 1e-12) return;  // leave a zero region as the zero vector
  for (T& x : v) x = static_cast<T>(double(x) / norm);
}

}  // namespace detail

// Average of the feature-grid cells whose centers fall inside the box;
// if no center does, the single cell containing the box center. The
// result is L2-normalized.
template <typename T>
std::vector<InstanceFeature<T>> pool_instance_features(const Tensor<T>& grid,
                                                       const std::vector<BoxLabel>& boxes,
                                                       const std::string& domain, int image) {
  const int gh = grid.dim(0), gw = grid.dim(1), depth = grid.dim(2);
  const double cs = DetectorLayout::kCellPx;
  std::vector<InstanceFeature<T>> feats;
  feats.reserve(boxes.size());
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const BoxLabel& box = boxes[b];
    InstanceFeature<T> f;
    f.v.assign(static_cast<std::size_t>(depth), T(0));
    f.domain = domain;
    f.image = image;
    f.box = static_cast<int>(b);
    int covered = 0;
    for (int r = 0; r < gh; ++r)
      for (int c = 0; c < gw; ++c) {
        const double cx = (c + 0.5) * cs, cy = (r + 0.5) * cs;
        if (cx < box.xmin || cx > box.xmax || cy < box.ymin || cy > box.ymax) continue;
        for (int d = 0; d < depth; ++d) f.v[static_cast<std::size_t>(d)] += grid.at(r, c, d);
        ++covered;
      }
    if (covered == 0) {
      int r = static_cast<int>(box.cy() / cs), c = static_cast<int>(box.cx() / cs);
      r = std::min(std::max(r, 0), gh - 1);
      c = std::min(std::max(c, 0), gw - 1);
      for (int d = 0; d < depth; ++d) f.v[static_cast<std::size_t>(d)] = grid.at(r, c, d);
    } else {
      for (T& x : f.v) x /= static_cast<T>(covered);
    }
    detail::l2_normalize(f.v);
    feats.push_back(std::move(f));
  }
  return feats;
}

// Whole-grid mean feature used by the image-level ablation.
template <typename T>
InstanceFeature<T> pool_image_feature(const Tensor<T>& grid, const std::string& domain,
                                      int image) {
  const int gh = grid.dim(0), gw = grid.dim(1), depth = grid.dim(2);
  InstanceFeature<T> f;
  f.v.assign(static_cast<std::size_t>(depth), T(0));
  f.domain = domain;
  f.image = image;
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c)
      for (int d = 0; d < depth; ++d) f.v[static_cast<std::size_t>(d)] += grid.at(r, c, d);
  for (T& x : f.v) x /= static_cast<T>(gh * gw);
  detail::l2_normalize(f.v);
  return f;
}

// Exact k-NN from every target feature into the source pool; ties broken
// by smaller global index in the pool. Every neighbor feature increments
// its owner image's count by one, so sum(w) == |Q| * k'.
template <typename T>
RelevanceWeights mine_relevance(const InstanceFeatureSet<T>& source,
                                const InstanceFeatureSet<T>& target, const HtrmConfig& cfg) {
  const int n = static_cast<int>(source.items.size());
  const int m = static_cast<int>(target.items.size());
  if (cfg.k_prime < 1) throw ArgError("mine_relevance: k_prime must be >= 1");
  if (n < cfg.k_prime)
    throw ArgError("mine_relevance: source pool smaller than k_prime (" + std::to_string(n) +
                   " < " + std::to_string(cfg.k_prime) + ")");
  if (m == 0) throw ArgError("mine_relevance: empty target pool");
  const int depth = static_cast<int>(source.items[0].v.size());
  for (const auto& f : source.items)
    if (static_cast<int>(f.v.size()) != depth)
      throw ShapeError("mine_relevance: inconsistent feature depth in source pool");
  for (const auto& f : target.items)
    if (static_cast<int>(f.v.size()) != depth)
      throw ShapeError("mine_relevance: inconsistent feature depth across pools");

  std::vector<T> src(static_cast<std::size_t>(n) * depth);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < depth; ++d)
      src[static_cast<std::size_t>(i) * depth + d] = source.items[static_cast<std::size_t>(i)].v[static_cast<std::size_t>(d)];
  std::vector<T> qry(static_cast<std::size_t>(m) * depth);
  for (int i = 0; i < m; ++i)
    for (int d = 0; d < depth; ++d)
      qry[static_cast<std::size_t>(i) * depth + d] = target.items[static_cast<std::size_t>(i)].v[static_cast<std::size_t>(d)];

  std::vector<int> neighbors(static_cast<std::size_t>(m) * cfg.k_prime);
  kernels::knn_cosine(src.data(), n, qry.data(), m, depth, cfg.k_prime, neighbors.data());

  RelevanceWeights out;
  for (const auto& f : source.items) out.entries[{f.domain, f.image}];  // roster, w = 0
  // aggregation in target-feature order keeps the result independent of
  // the parallel query schedule
  std::vector<std::pair<std::string, int>> seen;
  for (int q = 0; q < m; ++q) {
    seen.clear();
    for (int j = 0; j < cfg.k_prime; ++j) {
      const InstanceFeature<T>& f =
          source.items[static_cast<std::size_t>(neighbors[static_cast<std::size_t>(q) * cfg.k_prime + j])];
      const std::pair<std::string, int> key{f.domain, f.image};
      if (cfg.count_unique_queries) {
        bool dup = false;
        for (const auto& s : seen)
          if (s == key) {
            dup = true;
            break;
          }
        if (dup) continue;
        seen.push_back(key);
      }
      out.entries[key].w += 1;
    }
  }
  for (auto& [key, e] : out.entries) e.alpha = weight_from_count(e.w, cfg);
  return out;
}

// Mean alpha per domain over a full image roster (images that were never
// hit count as alpha = 0).
inline double mean_alpha(const RelevanceWeights& weights, const std::string& domain,
                         int image_count) {
  if (image_count <= 0) throw ArgError("mean_alpha: empty roster");
  double sum = 0;
  for (int i = 0; i < image_count; ++i) sum += weights.alpha_of(domain, i);
  return sum / image_count;
}

}  // namespace trkp
