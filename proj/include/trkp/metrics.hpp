#pragma once

#include <map>
#include <vector>

#include "trkp/detection.hpp"
#include "trkp/scenes.hpp"

namespace trkp {

// Intersection over union of two boxes; 0 when disjoint.
double iou(const BoxLabel& a, const BoxLabel& b);

struct EvalResult {
  std::map<int, double> per_class_ap;  // classes with at least one ground truth
  double map = 0;
  int matched = 0;              // matched detections (true positives)
  int unmatched_detections = 0;  // false positives
  int unmatched_gt = 0;          // missed ground truths
};

// All-points interpolated average precision for one class. Detections
// are ranked by descending score with ties kept in input order; matching
// is greedy one-to-one against the highest-IoU unmatched ground truth of
// the same image at IoU >= iou_threshold.
struct EvalDetection {
  int image = 0;
  BoxLabel box;
  double score = 0;
};

double average_precision(std::vector<EvalDetection> dets,
                         const std::vector<std::vector<BoxLabel>>& gt_per_image,
                         double iou_threshold = 0.5, int* matched_out = nullptr);

// Per-class AP over a dataset plus their mean over classes with >= 1
// ground truth.
EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<std::vector<BoxLabel>>& gt_per_image,
                               int classes, double iou_threshold = 0.5);

// Runs `detect` (decode + NMS of some model) over every scene.
template <typename DetectFn>
EvalResult evaluate(DetectFn&& detect, const std::vector<Scene>& scenes, int classes,
                    double iou_threshold = 0.5) {
  std::vector<std::vector<Detection>> dets(scenes.size());
  std::vector<std::vector<BoxLabel>> gts(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    dets[static_cast<std::size_t>(i)] = detect(scenes[static_cast<std::size_t>(i)]);
    gts[static_cast<std::size_t>(i)] = scenes[static_cast<std::size_t>(i)].boxes;
  }
  return evaluate_detections(dets, gts, classes, iou_threshold);
}

}  // namespace trkp
