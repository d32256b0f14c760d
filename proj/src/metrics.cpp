#include "trkp/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "trkp/detector.hpp"
#include "trkp/error.hpp"

namespace trkp {

double iou(const BoxLabel& a, const BoxLabel& b) {
  if (!(a.xmin < a.xmax) || !(a.ymin < a.ymax) || !(b.xmin < b.xmax) || !(b.ymin < b.ymax))
    throw ArgError("iou: degenerate box");
  const double ix = std::max(0.0, double(std::min(a.xmax, b.xmax)) - std::max(a.xmin, b.xmin));
  const double iy = std::max(0.0, double(std::min(a.ymax, b.ymax)) - std::max(a.ymin, b.ymin));
  const double inter = ix * iy;
  if (inter <= 0) return 0.0;
  const double uni = double(a.area()) + double(b.area()) - inter;
  return inter / uni;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.cell < b.cell;
  });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.box.class_id == d.box.class_id && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double average_precision(std::vector<EvalDetection> dets,
                         const std::vector<std::vector<BoxLabel>>& gt_per_image,
                         double iou_threshold, int* matched_out) {
  std::size_t total_gt = 0;
  for (const auto& g : gt_per_image) total_gt += g.size();
  if (matched_out) *matched_out = 0;
  if (total_gt == 0) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const EvalDetection& a, const EvalDetection& b) { return a.score > b.score; });

  std::vector<std::vector<char>> used(gt_per_image.size());
  for (std::size_t i = 0; i < gt_per_image.size(); ++i)
    used[i].assign(gt_per_image[i].size(), 0);

  std::vector<char> tp(dets.size(), 0);
  int matched = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const EvalDetection& d = dets[i];
    const auto& gts = gt_per_image[static_cast<std::size_t>(d.image)];
    double best_iou = 0.0;
    int best = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[static_cast<std::size_t>(d.image)][j]) continue;
      const double v = iou(d.box, gts[j]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(best)] = 1;
      tp[i] = 1;
      ++matched;
    }
  }
  if (matched_out) *matched_out = matched;

  // precision-recall points, then the area under the upper envelope
  std::vector<double> prec(dets.size()), rec(dets.size());
  int cum_tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    cum_tp += tp[i];
    prec[i] = double(cum_tp) / double(i + 1);
    rec[i] = double(cum_tp) / double(total_gt);
  }
  for (int i = static_cast<int>(dets.size()) - 2; i >= 0; --i)
    prec[static_cast<std::size_t>(i)] =
        std::max(prec[static_cast<std::size_t>(i)], prec[static_cast<std::size_t>(i) + 1]);
  double ap = 0.0, prev_rec = 0.0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    ap += (rec[i] - prev_rec) * prec[i];
    prev_rec = rec[i];
  }
  return ap;
}

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<std::vector<BoxLabel>>& gt_per_image,
                               int classes, double iou_threshold) {
  if (dets_per_image.size() != gt_per_image.size())
    throw ArgError("evaluate_detections: image count mismatch");
  EvalResult res;
  int total_dets = 0, total_gt = 0;
  double ap_sum = 0;
  int ap_classes = 0;
  for (int cls = 0; cls < classes; ++cls) {
    std::vector<EvalDetection> dets;
    std::vector<std::vector<BoxLabel>> gts(gt_per_image.size());
    std::size_t gt_count = 0;
    for (std::size_t img = 0; img < gt_per_image.size(); ++img) {
      for (const Detection& d : dets_per_image[img])
        if (d.box.class_id == cls) dets.push_back({static_cast<int>(img), d.box, d.score});
      for (const BoxLabel& g : gt_per_image[img])
        if (g.class_id == cls) gts[img].push_back(g);
      gt_count += gts[img].size();
    }
    if (gt_count == 0) continue;  // classes without ground truth are skipped
    int matched = 0;
    const double ap = average_precision(dets, gts, iou_threshold, &matched);
    res.per_class_ap[cls] = ap;
    res.matched += matched;
    total_dets += static_cast<int>(dets.size());
    total_gt += static_cast<int>(gt_count);
    ap_sum += ap;
    ++ap_classes;
  }
  res.unmatched_detections = total_dets - res.matched;
  res.unmatched_gt = total_gt - res.matched;
  res.map = ap_classes == 0 ? 0.0 : ap_sum / ap_classes;
  return res;
}

}  // namespace trkp
