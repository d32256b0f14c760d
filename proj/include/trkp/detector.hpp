#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "trkp/autodiff.hpp"
#include "trkp/detection.hpp"
#include "trkp/rng.hpp"
#include "trkp/scenes.hpp"

namespace trkp {

// Single-stage grid detector: three stride-2 convolutions map the image
// to an (h/8, w/8, depth) feature grid and a per-cell affine head emits
// C class logits, one objectness logit and four box offsets per cell.
// Cells play the role of proposals: a cell is positive iff a ground
// truth box center falls in it.
struct DetectorLayout {
  int image_h = 64, image_w = 64;
  int classes = 3;
  int depth = 32;  // feature channels out of the base network
  int c1 = 8, c2 = 16;
  int hidden = 64;  // head hidden width

  static constexpr int kCellPx = 8;  // three stride-2 layers

  int grid_h() const { return image_h / kCellPx; }
  int grid_w() const { return image_w / kCellPx; }
  int cells() const { return grid_h() * grid_w(); }
  int head_out() const { return classes + 5; }
  // per-cell layout: [0,classes) class logits, [classes] objectness,
  // [classes+1, classes+5) offsets tx, ty, tw, th
  int obj_slot() const { return classes; }
  int off_slot() const { return classes + 1; }
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

// ---------------------------------------------------------------------
// loss term primitives (documented unit values live in the tests)

inline double focal_pos_term(double p, const FocalParams& fp) {
  return -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
}

inline double focal_neg_term(double p, const FocalParams& fp) {
  return -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * std::log(1.0 - p);
}

inline double smooth_l1_term(double err, double delta) {
  const double a = std::abs(err);
  return a <= delta ? 0.5 * err * err : delta * (a - 0.5 * delta);
}

// ---------------------------------------------------------------------
// target assignment

struct CellTarget {
  int cell = 0;
  int class_id = 0;
  float t[4] = {0, 0, 0, 0};  // tx, ty, tw, th in cell units
};

struct CellTargets {
  int cells = 0;
  int classes = 0;
  std::vector<CellTarget> positives;  // sorted by cell, one entry per cell
};

inline void encode_box(const BoxLabel& box, const DetectorLayout& lay, int& cell, float t[4]) {
  const double cs = DetectorLayout::kCellPx;
  const double cx = box.cx(), cy = box.cy();
  int gx = static_cast<int>(cx / cs);
  int gy = static_cast<int>(cy / cs);
  gx = std::min(gx, lay.grid_w() - 1);
  gy = std::min(gy, lay.grid_h() - 1);
  cell = gy * lay.grid_w() + gx;
  t[0] = static_cast<float>(cx / cs - gx);
  t[1] = static_cast<float>(cy / cs - gy);
  t[2] = static_cast<float>(box.width() / cs);
  t[3] = static_cast<float>(box.height() / cs);
}

inline BoxLabel decode_box(int cell, const float t[4], const DetectorLayout& lay, int class_id) {
  const double cs = DetectorLayout::kCellPx;
  const int gy = cell / lay.grid_w(), gx = cell % lay.grid_w();
  const double cx = (gx + double(t[0])) * cs;
  const double cy = (gy + double(t[1])) * cs;
  const double bw = std::max(double(t[2]), 1e-4) * cs;
  const double bh = std::max(double(t[3]), 1e-4) * cs;
  auto clampx = [&](double v) { return std::min(double(lay.image_w), std::max(0.0, v)); };
  auto clampy = [&](double v) { return std::min(double(lay.image_h), std::max(0.0, v)); };
  BoxLabel b;
  b.xmin = static_cast<float>(clampx(cx - 0.5 * bw));
  b.xmax = static_cast<float>(clampx(cx + 0.5 * bw));
  b.ymin = static_cast<float>(clampy(cy - 0.5 * bh));
  b.ymax = static_cast<float>(clampy(cy + 0.5 * bh));
  if (b.xmax - b.xmin < 1e-3f) {
    b.xmin = std::min(b.xmin, lay.image_w - 1e-3f);
    b.xmax = b.xmin + 1e-3f;
  }
  if (b.ymax - b.ymin < 1e-3f) {
    b.ymin = std::min(b.ymin, lay.image_h - 1e-3f);
    b.ymax = b.ymin + 1e-3f;
  }
  b.class_id = class_id;
  return b;
}

// Center-in-cell assignment; collisions resolved by smaller class id,
// then smaller box area, then earlier box index.
inline CellTargets assign_targets(const std::vector<BoxLabel>& boxes, const DetectorLayout& lay) {
  CellTargets out;
  out.cells = lay.cells();
  out.classes = lay.classes;
  std::vector<int> winner(static_cast<std::size_t>(lay.cells()), -1);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BoxLabel& b = boxes[i];
    if (!(b.xmin < b.xmax) || !(b.ymin < b.ymax) || b.xmin < 0 || b.ymin < 0 ||
        b.xmax > float(lay.image_w) || b.ymax > float(lay.image_h))
      throw ArgError("assign_targets: box outside image or degenerate");
    if (b.class_id < 0 || b.class_id >= lay.classes)
      throw ArgError("assign_targets: class id out of range");
    int cell;
    float t[4];
    encode_box(b, lay, cell, t);
    int& win = winner[static_cast<std::size_t>(cell)];
    if (win >= 0) {
      const BoxLabel& prev = boxes[static_cast<std::size_t>(win)];
      const bool replace = b.class_id != prev.class_id ? b.class_id < prev.class_id
                                                       : b.area() < prev.area();
      if (!replace) continue;
    }
    win = static_cast<int>(i);
  }
  for (int c = 0; c < lay.cells(); ++c)
    if (winner[static_cast<std::size_t>(c)] >= 0) {
      const BoxLabel& b = boxes[static_cast<std::size_t>(winner[static_cast<std::size_t>(c)])];
      CellTarget ct;
      float t[4];
      int cell;
      encode_box(b, lay, cell, t);
      ct.cell = c;
      ct.class_id = b.class_id;
      for (int j = 0; j < 4; ++j) ct.t[j] = t[j];
      out.positives.push_back(ct);
    }
  return out;
}

// ---------------------------------------------------------------------
// networks

struct BoundIds {
  std::vector<int> ids;
};

template <typename T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, CounterRng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double std_dev = gain * std::sqrt(2.0 / fan_in);
  for (int i = 0; i < t.size(); ++i) t[i] = static_cast<T>(std_dev * rng.normal());
  return t;
}

template <typename T>
struct BaseNet {
  Tensor<T> w1, b1, w2, b2, w3, b3;

  static BaseNet init(const DetectorLayout& lay, std::uint64_t seed, std::uint64_t stream) {
    CounterRng rng(seed, stream);
    BaseNet n;
    n.w1 = he_normal<T>({3, 3, 1, lay.c1}, 9, rng);
    n.b1 = Tensor<T>(std::vector<int>{lay.c1});
    n.w2 = he_normal<T>({3, 3, lay.c1, lay.c2}, 9 * lay.c1, rng);
    n.b2 = Tensor<T>(std::vector<int>{lay.c2});
    n.w3 = he_normal<T>({3, 3, lay.c2, lay.depth}, 9 * lay.c2, rng);
    n.b3 = Tensor<T>(std::vector<int>{lay.depth});
    return n;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> params(const std::string& prefix) {
    return {{prefix + "w1", &w1}, {prefix + "b1", &b1}, {prefix + "w2", &w2},
            {prefix + "b2", &b2}, {prefix + "w3", &w3}, {prefix + "b3", &b3}};
  }

  BoundIds bind(Tape<T>& t) const {
    return {{t.leaf(w1, "base.w1"), t.leaf(b1, "base.b1"), t.leaf(w2, "base.w2"),
             t.leaf(b2, "base.b2"), t.leaf(w3, "base.w3"), t.leaf(b3, "base.b3")}};
  }

  // image node (h, w, 1) -> feature grid node (h/8, w/8, depth)
  int forward(Tape<T>& t, const BoundIds& p, int image) const {
    int x = t.relu(t.conv2d(image, p.ids[0], p.ids[1], 2, 1));
    x = t.relu(t.conv2d(x, p.ids[2], p.ids[3], 2, 1));
    return t.relu(t.conv2d(x, p.ids[4], p.ids[5], 2, 1));
  }

  Tensor<T> infer(const Tensor<T>& image) const {
    Tape<T> t;
    const BoundIds p = bind(t);
    return t.value(forward(t, p, t.leaf(image, "image")));
  }
};

template <typename T>
struct DetHead {
  Tensor<T> w1, b1, w2, b2;

  static DetHead init(const DetectorLayout& lay, std::uint64_t seed, std::uint64_t stream) {
    CounterRng rng(seed, stream);
    DetHead h;
    h.w1 = he_normal<T>({lay.depth, lay.hidden}, lay.depth, rng);
    h.b1 = Tensor<T>(std::vector<int>{lay.hidden});
    h.w2 = he_normal<T>({lay.hidden, lay.head_out()}, lay.hidden, rng, 0.05);
    h.b2 = Tensor<T>(std::vector<int>{lay.head_out()});
    // start near "no object": negative objectness bias keeps an
    // untrained detector silent; offsets default to a centered unit box
    h.b2[lay.obj_slot()] = T(-3);
    for (int j = 0; j < 4; ++j) h.b2[lay.off_slot() + j] = T(0.5);
    return h;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> params(const std::string& prefix) {
    return {{prefix + "w1", &w1}, {prefix + "b1", &b1}, {prefix + "w2", &w2}, {prefix + "b2", &b2}};
  }

  BoundIds bind(Tape<T>& t) const {
    return {{t.leaf(w1, "head.w1"), t.leaf(b1, "head.b1"), t.leaf(w2, "head.w2"),
             t.leaf(b2, "head.b2")}};
  }

  // grid node (gh, gw, depth) -> head output node (cells, classes + 5)
  int forward(Tape<T>& t, const BoundIds& p, int grid, const DetectorLayout& lay) const {
    const int flat = t.reshape(grid, {lay.cells(), lay.depth});
    const int hidden = t.relu(t.affine(flat, p.ids[0], p.ids[1]));
    return t.affine(hidden, p.ids[2], p.ids[3]);
  }

  Tensor<T> infer(const Tensor<T>& grid, const DetectorLayout& lay) const {
    Tape<T> t;
    const BoundIds p = bind(t);
    return t.value(forward(t, p, t.leaf(grid, "grid"), lay));
  }
};

// ---------------------------------------------------------------------
// detection loss: focal on objectness at every cell plus focal softmax
// cross-entropy on the class at positive cells; smooth-L1 on the four
// offsets at positive cells, normalized by the positive count (min 1).

struct LossBreakdown {
  double cls = 0;
  double reg = 0;
  double total() const { return cls + reg; }
};

template <typename T>
struct DetLossNodes {
  int cls_node = -1;
  int reg_node = -1;
  int total_node = -1;
  LossBreakdown values;
};

namespace detail {

inline double softplus(double x) {
  if (x > 30) return x;
  if (x < -30) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
struct ClsLossCtx {
  std::vector<int> cell_class;  // -1 for negative cells
  FocalParams fp;
  int classes = 0;
};

template <typename T>
int push_cls_loss(Tape<T>& t, int head, const CellTargets& targets, const FocalParams& fp,
                  double* value_out) {
  const Tensor<T>& out = t.value(head);
  const int cells = out.dim(0);
  const int classes = targets.classes;
  const int obj = classes;
  auto ctx = std::make_shared<ClsLossCtx<T>>();
  ctx->cell_class.assign(static_cast<std::size_t>(cells), -1);
  for (const CellTarget& p : targets.positives)
    ctx->cell_class[static_cast<std::size_t>(p.cell)] = p.class_id;
  ctx->fp = fp;
  ctx->classes = classes;

  double total = 0;
  std::vector<double> q(static_cast<std::size_t>(classes));
  for (int c = 0; c < cells; ++c) {
    const double z = static_cast<double>(out.at(c, obj));
    const bool pos = ctx->cell_class[static_cast<std::size_t>(c)] >= 0;
    // log sigmoid via softplus keeps saturated logits finite
    const double logp = -softplus(-z), log1mp = -softplus(z);
    const double p = std::exp(logp);
    if (pos) {
      total += -fp.alpha * std::pow(1.0 - p, fp.gamma) * logp;
      double mx = static_cast<double>(out.at(c, 0));
      for (int k = 1; k < classes; ++k) mx = std::max(mx, static_cast<double>(out.at(c, k)));
      double sum = 0;
      for (int k = 0; k < classes; ++k) {
        q[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(out.at(c, k)) - mx);
        sum += q[static_cast<std::size_t>(k)];
      }
      const int truth = ctx->cell_class[static_cast<std::size_t>(c)];
      const double qt = q[static_cast<std::size_t>(truth)] / sum;
      const double logq = static_cast<double>(out.at(c, truth)) - mx - std::log(sum);
      total += -fp.alpha * std::pow(1.0 - qt, fp.gamma) * logq;
    } else {
      total += -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * log1mp;
    }
  }
  *value_out = total;

  auto back = [ctx](Tape<T>& tp, int self) {
    const T g = tp.grad(self)[0];
    const int parent = tp.parents(self)[0];
    const Tensor<T>& h = tp.value(parent);
    Tensor<T>& gh = tp.grad_mut(parent);
    const int classes = ctx->classes;
    const int obj = classes;
    const double alpha = ctx->fp.alpha, gamma = ctx->fp.gamma;
    const int cells = h.dim(0);
    std::vector<double> q(static_cast<std::size_t>(classes));
    for (int c = 0; c < cells; ++c) {
      const double z = static_cast<double>(h.at(c, obj));
      const double logp = -softplus(-z), log1mp = -softplus(z);
      const double p = std::exp(logp);
      const int truth = ctx->cell_class[static_cast<std::size_t>(c)];
      double dz;
      if (truth >= 0) {
        dz = -alpha * std::pow(1.0 - p, gamma) * ((1.0 - p) - gamma * p * logp);
        double mx = static_cast<double>(h.at(c, 0));
        for (int k = 1; k < classes; ++k) mx = std::max(mx, static_cast<double>(h.at(c, k)));
        double sum = 0;
        for (int k = 0; k < classes; ++k) {
          q[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(h.at(c, k)) - mx);
          sum += q[static_cast<std::size_t>(k)];
        }
        const double qt = q[static_cast<std::size_t>(truth)] / sum;
        const double logq = static_cast<double>(h.at(c, truth)) - mx - std::log(sum);
        const double kappa =
            -alpha * std::pow(1.0 - qt, gamma - 1.0) * ((1.0 - qt) - gamma * qt * logq);
        for (int k = 0; k < classes; ++k) {
          const double qk = q[static_cast<std::size_t>(k)] / sum;
          const double delta = k == truth ? 1.0 : 0.0;
          gh.at(c, k) += g * static_cast<T>(kappa * (delta - qk));
        }
      } else {
        dz = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log1mp);
      }
      gh.at(c, obj) += g * static_cast<T>(dz);
    }
  };
  return t.custom(Tensor<T>::scalar(static_cast<T>(total)), {head}, back, "focal_cls_loss");
}

template <typename T>
int push_reg_loss(Tape<T>& t, int head, const CellTargets& targets, double delta,
                  double* value_out) {
  const int classes = targets.classes;
  const int off = classes + 1;
  const double norm = 1.0 / std::max<std::size_t>(1, targets.positives.size());
  auto pos = std::make_shared<std::vector<CellTarget>>(targets.positives);

  const Tensor<T>& out = t.value(head);
  double total = 0;
  for (const CellTarget& p : *pos)
    for (int j = 0; j < 4; ++j)
      total += smooth_l1_term(static_cast<double>(out.at(p.cell, off + j)) - double(p.t[j]), delta);
  total *= norm;
  *value_out = total;

  auto back = [pos, delta, norm, off](Tape<T>& tp, int self) {
    const T g = tp.grad(self)[0];
    const int parent = tp.parents(self)[0];
    const Tensor<T>& h = tp.value(parent);
    Tensor<T>& gh = tp.grad_mut(parent);
    for (const CellTarget& p : *pos)
      for (int j = 0; j < 4; ++j) {
        const double err = static_cast<double>(h.at(p.cell, off + j)) - double(p.t[j]);
        const double d = std::abs(err) <= delta ? err : (err > 0 ? delta : -delta);
        gh.at(p.cell, off + j) += g * static_cast<T>(d * norm);
      }
  };
  return t.custom(Tensor<T>::scalar(static_cast<T>(total)), {head}, back, "smooth_l1_reg_loss");
}

}  // namespace detail

template <typename T>
DetLossNodes<T> detection_loss(Tape<T>& t, int head, const CellTargets& targets,
                               const FocalParams& fp = {}, double delta = 1.0) {
  DetLossNodes<T> n;
  n.cls_node = detail::push_cls_loss(t, head, targets, fp, &n.values.cls);
  n.reg_node = detail::push_reg_loss(t, head, targets, delta, &n.values.reg);
  n.total_node = t.add(n.cls_node, n.reg_node);
  return n;
}

template <typename T>
DetLossNodes<T> detection_loss(Tape<T>& t, int head, const std::vector<BoxLabel>& boxes,
                               const DetectorLayout& lay, const FocalParams& fp = {},
                               double delta = 1.0) {
  return detection_loss(t, head, assign_targets(boxes, lay), fp, delta);
}

// ---------------------------------------------------------------------
// decoding and non-maximum suppression

// One candidate per cell with score >= threshold. Score is
// sigmoid(objectness) times the best softmax class probability.
template <typename T>
std::vector<Detection> decode(const Tensor<T>& head_out, const DetectorLayout& lay,
                              double score_threshold) {
  std::vector<Detection> dets;
  const int classes = lay.classes;
  for (int c = 0; c < lay.cells(); ++c) {
    const double z = static_cast<double>(head_out.at(c, lay.obj_slot()));
    const double obj = 1.0 / (1.0 + std::exp(-z));
    double mx = static_cast<double>(head_out.at(c, 0));
    int best = 0;
    for (int k = 1; k < classes; ++k)
      if (static_cast<double>(head_out.at(c, k)) > mx) {
        mx = static_cast<double>(head_out.at(c, k));
        best = k;
      }
    double sum = 0;
    for (int k = 0; k < classes; ++k)
      sum += std::exp(static_cast<double>(head_out.at(c, k)) - mx);
    const double score = obj * (1.0 / sum);  // exp(mx - mx) / sum
    if (score < score_threshold) continue;
    float tvals[4];
    for (int j = 0; j < 4; ++j)
      tvals[j] = static_cast<float>(head_out.at(c, lay.off_slot() + j));
    Detection d;
    d.box = decode_box(c, tvals, lay, best);
    d.score = score;
    d.cell = c;
    dets.push_back(d);
  }
  return dets;
}

// Greedy by descending score (ties to the lower cell index); suppresses
// same-class boxes overlapping a kept box by more than iou_threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold = 0.5);

}  // namespace trkp
