#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trkp/amsd.hpp"
#include "trkp/detector.hpp"
#include "trkp/metrics.hpp"

namespace trkp {

// Teacher-to-student adaptation: per-cell head outputs are averaged
// across the teacher heads before decoding, thresholded and NMS'd into
// pseudo labels; the student trains on them while the teacher tracks the
// student by per-step EMA.

struct DistillConfig {
  double confidence_threshold = 0.7;
  double ema = 0.99;  // desk-scale default; 0.9999 suits long schedules
  int epochs = 10;
  double learning_rate = 0.01;
  int batch_size = 16;
  double momentum = 0.9;
  double lr_decay = 0.1;
  double decay_at = 0.8;
  double nms_iou = 0.5;
  std::uint64_t seed = 0;
  FocalParams focal;
  double smooth_l1_delta = 1.0;
};

struct EvalSettings {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  double match_iou = 0.5;
};

template <typename T>
struct StudentModel {
  DetectorLayout layout;
  BaseNet<T> base;
  DetHead<T> head;

  static StudentModel init(const DetectorLayout& lay, std::uint64_t seed) {
    StudentModel m;
    m.layout = lay;
    m.base = BaseNet<T>::init(lay, seed, rng_stream::kModelInit + 100);
    m.head = DetHead<T>::init(lay, seed, rng_stream::kModelInit + 101);
    return m;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> params() {
    auto out = base.params("base.");
    auto hp = head.params("head.");
    out.insert(out.end(), hp.begin(), hp.end());
    return out;
  }
};

struct PseudoLabel {
  int image = 0;
  std::vector<Detection> boxes;  // post-threshold, post-NMS

  std::vector<BoxLabel> as_boxes() const {
    std::vector<BoxLabel> out;
    out.reserve(boxes.size());
    for (const Detection& d : boxes) out.push_back(d.box);
    return out;
  }
};

// Mean of the K per-cell head outputs. Summands are sorted per element
// first, which makes the result independent of head order, bit for bit.
template <typename T>
Tensor<T> average_head_outputs(std::vector<Tensor<T>> outs) {
  if (outs.empty()) throw ArgError("average_head_outputs: no head outputs");
  Tensor<T> avg(outs[0].shape());
  const int k = static_cast<int>(outs.size());
  std::vector<T> vals(static_cast<std::size_t>(k));
  for (int i = 0; i < avg.size(); ++i) {
    for (int h = 0; h < k; ++h) vals[static_cast<std::size_t>(h)] = outs[static_cast<std::size_t>(h)][i];
    std::sort(vals.begin(), vals.end());
    T acc = T(0);
    for (T v : vals) acc += v;
    avg[i] = acc / static_cast<T>(k);
  }
  return avg;
}

template <typename T>
std::vector<Detection> teacher_detections(const TeacherModel<T>& teacher, const Scene& scene,
                                          double score_threshold, double nms_iou) {
  const Tensor<T> grid = teacher.base.infer(scene.image.template cast<T>());
  std::vector<Tensor<T>> outs;
  outs.reserve(teacher.heads.size());
  for (const DetHead<T>& h : teacher.heads) outs.push_back(h.infer(grid, teacher.layout));
  const Tensor<T> avg = average_head_outputs(std::move(outs));
  return nms(decode(avg, teacher.layout, score_threshold), nms_iou);
}

template <typename T>
std::vector<Detection> student_detections(const StudentModel<T>& student, const Scene& scene,
                                          double score_threshold, double nms_iou) {
  const Tensor<T> grid = student.base.infer(scene.image.template cast<T>());
  return nms(decode(student.head.infer(grid, student.layout), student.layout, score_threshold),
             nms_iou);
}

template <typename T>
std::vector<PseudoLabel> generate_pseudo_labels(const TeacherModel<T>& teacher,
                                                const std::vector<Scene>& scenes,
                                                const DistillConfig& cfg) {
  std::vector<PseudoLabel> out(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    out[static_cast<std::size_t>(i)].image = i;
    out[static_cast<std::size_t>(i)].boxes = teacher_detections(
        teacher, scenes[static_cast<std::size_t>(i)], cfg.confidence_threshold, cfg.nms_iou);
  }
  return out;
}

// theta_teacher <- m * theta_teacher + (1 - m) * theta_student. The base
// tracks the student base; every teacher head receives the same pull
// from the single student head.
template <typename T>
void ema_update(TeacherModel<T>& teacher, const StudentModel<T>& student, double m) {
  if (m < 0 || m > 1) throw ArgError("ema_update: coefficient outside [0, 1]");
  auto& st = const_cast<StudentModel<T>&>(student);
  auto blend = [&](Tensor<T>& t, const Tensor<T>& s) {
    if (!t.same_shape(s))
      throw ShapeError("ema_update: teacher/student parameter shapes differ");
    const T mm = static_cast<T>(m), inv = static_cast<T>(1.0 - m);
    for (int i = 0; i < t.size(); ++i) t[i] = mm * t[i] + inv * s[i];
  };
  auto tb = teacher.base.params("");
  auto sb = st.base.params("");
  for (std::size_t i = 0; i < tb.size(); ++i) blend(*tb[i].second, *sb[i].second);
  auto sh = st.head.params("");
  for (DetHead<T>& th : teacher.heads) {
    auto tp = th.params("");
    for (std::size_t i = 0; i < tp.size(); ++i) blend(*tp[i].second, *sh[i].second);
  }
}

struct StudentTrainRow {
  int epoch = 0;
  double loss = 0;
  double lr = 0;
};

namespace detail {

inline void shuffle_indices(std::vector<int>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.next_below(static_cast<std::uint32_t>(i))]);
}

// One epoch of student SGD at a fixed learning rate; on_step fires after
// every optimizer update (EMA hooks in here).
template <typename T>
double student_epoch(StudentModel<T>& student, const std::vector<Scene>& scenes,
                     const std::vector<PseudoLabel>& pseudo, const DistillConfig& cfg,
                     double lr, int epoch, Sgd<T>& opt, long& step,
                     const std::function<void()>& on_step) {
  std::vector<int> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  CounterRng rng(cfg.seed, rng_stream::kShuffleBase + static_cast<std::uint64_t>(epoch));
  shuffle_indices(order, rng);

  auto named = student.params();
  std::vector<Tensor<T>*> params;
  for (auto& [n, p] : named) params.push_back(p);

  double loss_sum = 0;
  int loss_n = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
    const int bs = static_cast<int>(end - begin);
    std::vector<std::vector<Tensor<T>>> grads(static_cast<std::size_t>(bs));
    std::vector<double> losses(static_cast<std::size_t>(bs), 0.0);

#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < bs; ++s) {
      const int idx = order[begin + static_cast<std::size_t>(s)];
      const Scene& scene = scenes[static_cast<std::size_t>(idx)];
      Tape<T> tape;
      BoundIds bb = student.base.bind(tape);
      BoundIds hb = student.head.bind(tape);
      const int image = tape.leaf(scene.image.template cast<T>(), "image");
      const int grid = student.base.forward(tape, bb, image);
      const int head = student.head.forward(tape, hb, grid, student.layout);
      // an image with no pseudo boxes still supervises the background
      const CellTargets targets =
          assign_targets(pseudo[static_cast<std::size_t>(idx)].as_boxes(), student.layout);
      const DetLossNodes<T> loss =
          detection_loss(tape, head, targets, cfg.focal, cfg.smooth_l1_delta);
      tape.backward(loss.total_node);
      std::vector<int> ids = bb.ids;
      ids.insert(ids.end(), hb.ids.begin(), hb.ids.end());
      auto& slot = grads[static_cast<std::size_t>(s)];
      slot.reserve(ids.size());
      for (int id : ids) slot.push_back(tape.grad(id));
      losses[static_cast<std::size_t>(s)] = loss.values.total();
    }

    std::vector<Tensor<T>> batch_grads;
    batch_grads.reserve(params.size());
    for (Tensor<T>* p : params) batch_grads.emplace_back(p->shape());
    double batch_loss = 0;
    for (int s = 0; s < bs; ++s) {
      const auto& slot = grads[static_cast<std::size_t>(s)];
      for (std::size_t p = 0; p < params.size(); ++p)
        for (int j = 0; j < batch_grads[p].size(); ++j) batch_grads[p][j] += slot[p][j];
      batch_loss += losses[static_cast<std::size_t>(s)];
      loss_sum += losses[static_cast<std::size_t>(s)];
      ++loss_n;
    }
    const T inv = static_cast<T>(1) / static_cast<T>(bs);
    for (auto& g : batch_grads)
      for (int j = 0; j < g.size(); ++j) g[j] *= inv;
    ++step;
    if (!std::isfinite(batch_loss))
      throw DivergedError("train_student: non-finite loss at step " + std::to_string(step));
    opt.step(params, batch_grads, lr, cfg.momentum);
    if (on_step) on_step();
  }
  return loss_n ? loss_sum / loss_n : 0.0;
}

}  // namespace detail

// Trains on a fixed pseudo-labeled target set (Eq-style distillation).
template <typename T>
std::vector<StudentTrainRow> train_student(StudentModel<T>& student,
                                           const std::vector<Scene>& scenes,
                                           const std::vector<PseudoLabel>& pseudo,
                                           const DistillConfig& cfg,
                                           const std::function<void()>& on_step = nullptr) {
  if (scenes.empty()) throw ArgError("train_student: empty target set");
  if (pseudo.size() != scenes.size())
    throw ArgError("train_student: pseudo-label count must match scenes");
  bool any = false;
  for (const PseudoLabel& p : pseudo) any = any || !p.boxes.empty();
  if (!any)
    throw ArgError("train_student: no supervision (every pseudo-label set is empty)");
  Sgd<T> opt;
  long step = 0;
  std::vector<StudentTrainRow> rows;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.learning_rate, cfg.lr_decay, cfg.decay_at, epoch, cfg.epochs);
    StudentTrainRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss = detail::student_epoch(student, scenes, pseudo, cfg, lr, epoch, opt, step, on_step);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------
// full adaptation round

struct AdaptationRow {
  int epoch = 0;
  double target_map = 0;
  int pseudo_boxes = 0;
  double mean_pseudo_score = 0;
};

struct AdaptationOptions {
  bool use_htrm = true;
  HtrmConfig htrm;
  AmsdConfig finetune;   // teacher fine-tune phase; epochs may be 0
  DistillConfig distill;
  EvalSettings eval;
};

template <typename T>
struct AdaptationResult {
  StudentModel<T> student;
  std::vector<AdaptationRow> rows;
  RelevanceWeights weights;                 // empty when HTRM is off
  std::vector<TeacherTrainRow> finetune_log;
  InstanceFeatureSet<T> source_features;    // pools behind the mined weights
  InstanceFeatureSet<T> target_features;
};

// Pool instance features of every source ground-truth box under the
// teacher's base network.
template <typename T>
InstanceFeatureSet<T> pool_source_features(const TeacherModel<T>& teacher,
                                           const std::vector<Dataset>& sources,
                                           bool image_level) {
  InstanceFeatureSet<T> set;
  for (const Dataset& ds : sources) {
    std::vector<std::vector<InstanceFeature<T>>> per_image(ds.scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(ds.scenes.size()); ++i) {
      const Scene& s = ds.scenes[static_cast<std::size_t>(i)];
      const Tensor<T> grid = teacher.base.infer(s.image.template cast<T>());
      if (image_level)
        per_image[static_cast<std::size_t>(i)] = {pool_image_feature(grid, ds.domain_id, i)};
      else
        per_image[static_cast<std::size_t>(i)] =
            pool_instance_features(grid, s.boxes, ds.domain_id, i);
    }
    for (auto& v : per_image)
      for (auto& f : v) set.items.push_back(std::move(f));
  }
  return set;
}

// The target pool is bootstrapped from the teacher: its base features
// under its own pseudo boxes (the student has not been distilled yet at
// mining time).
template <typename T>
InstanceFeatureSet<T> pool_target_features(const TeacherModel<T>& teacher,
                                           const std::vector<Scene>& target,
                                           const DistillConfig& cfg, bool image_level) {
  InstanceFeatureSet<T> set;
  set.target_pool = true;
  std::vector<std::vector<InstanceFeature<T>>> per_image(target.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(target.size()); ++i) {
    const Scene& s = target[static_cast<std::size_t>(i)];
    const Tensor<T> grid = teacher.base.infer(s.image.template cast<T>());
    if (image_level) {
      per_image[static_cast<std::size_t>(i)] = {pool_image_feature(grid, std::string(), i)};
    } else {
      const std::vector<Detection> dets =
          teacher_detections(teacher, s, cfg.confidence_threshold, cfg.nms_iou);
      std::vector<BoxLabel> boxes;
      for (const Detection& d : dets) boxes.push_back(d.box);
      per_image[static_cast<std::size_t>(i)] =
          pool_instance_features(grid, boxes, std::string(), i);
    }
  }
  for (auto& v : per_image)
    for (auto& f : v) set.items.push_back(std::move(f));
  return set;
}

// Mining -> weighted teacher fine-tune -> distillation with per-epoch
// pseudo-label refresh and per-step EMA; per-epoch target mAP of the
// student on the held-out target split.
template <typename T>
AdaptationResult<T> run_adaptation_round(TeacherModel<T>& teacher,
                                         const std::vector<Dataset>& sources,
                                         const std::vector<Scene>& target_train,
                                         const std::vector<Scene>& target_eval,
                                         const AdaptationOptions& opts) {
  AdaptationResult<T> res{StudentModel<T>::init(teacher.layout, 0), {}, {}, {}, {}, {}};

  const RelevanceWeights* weights = nullptr;
  if (opts.use_htrm) {
    res.source_features = pool_source_features(teacher, sources, opts.htrm.image_level);
    res.target_features =
        pool_target_features(teacher, target_train, opts.distill, opts.htrm.image_level);
    if (res.target_features.items.empty())
      throw StageError("run_adaptation_round: no target instances to mine "
                       "(teacher produced no pseudo boxes)");
    res.weights = mine_relevance(res.source_features, res.target_features, opts.htrm);
    weights = &res.weights;
  }

  if (opts.finetune.epochs > 0)
    res.finetune_log = train_teacher(teacher, sources, opts.finetune, weights);

  // student starts from the teacher: base copied, head the head average
  res.student.layout = teacher.layout;
  res.student.base = teacher.base;
  {
    std::vector<Tensor<T>> w1s, b1s, w2s, b2s;
    for (const DetHead<T>& h : teacher.heads) {
      w1s.push_back(h.w1);
      b1s.push_back(h.b1);
      w2s.push_back(h.w2);
      b2s.push_back(h.b2);
    }
    res.student.head.w1 = average_head_outputs(std::move(w1s));
    res.student.head.b1 = average_head_outputs(std::move(b1s));
    res.student.head.w2 = average_head_outputs(std::move(w2s));
    res.student.head.b2 = average_head_outputs(std::move(b2s));
  }

  Sgd<T> opt;
  long step = 0;
  DistillConfig cfg = opts.distill;
  for (int epoch = 0; epoch < opts.distill.epochs; ++epoch) {
    const std::vector<PseudoLabel> pseudo = generate_pseudo_labels(teacher, target_train, cfg);
    int boxes = 0;
    double score_sum = 0;
    for (const PseudoLabel& p : pseudo) {
      boxes += static_cast<int>(p.boxes.size());
      for (const Detection& d : p.boxes) score_sum += d.score;
    }
    const double lr =
        scheduled_lr(cfg.learning_rate, cfg.lr_decay, cfg.decay_at, epoch, cfg.epochs);
    detail::student_epoch(res.student, target_train, pseudo, cfg, lr, epoch, opt, step,
                          [&]() { ema_update(teacher, res.student, cfg.ema); });
    const EvalResult ev = evaluate(
        [&](const Scene& s) {
          return student_detections(res.student, s, opts.eval.score_threshold, opts.eval.nms_iou);
        },
        target_eval, teacher.layout.classes, opts.eval.match_iou);

    AdaptationRow row;
    row.epoch = epoch;
    row.target_map = ev.map;
    row.pseudo_boxes = boxes;
    row.mean_pseudo_score = boxes ? score_sum / boxes : 0.0;
    res.rows.push_back(row);
  }
  return res;
}

// student checkpoints

template <typename T>
NamedTensors student_to_named(const StudentModel<T>& model) {
  NamedTensors out;
  Tensor<float> meta(std::vector<int>{2});
  meta[0] = static_cast<float>(model.layout.image_h);
  meta[1] = static_cast<float>(model.layout.image_w);
  out.items.emplace_back("meta.image", meta);
  auto& m = const_cast<StudentModel<T>&>(model);
  for (auto& [name, p] : m.params()) out.items.emplace_back(name, p->template cast<float>());
  return out;
}

template <typename T>
StudentModel<T> student_from_named(const NamedTensors& nt) {
  StudentModel<T> m;
  const Tensor<float>& meta = nt.find("meta.image");
  const Tensor<float>& w1 = nt.find("base.w1");
  const Tensor<float>& w2 = nt.find("base.w2");
  const Tensor<float>& w3 = nt.find("base.w3");
  const Tensor<float>& hw2 = nt.find("head.w2");
  m.layout.image_h = static_cast<int>(meta[0]);
  m.layout.image_w = static_cast<int>(meta[1]);
  m.layout.c1 = w1.dim(3);
  m.layout.c2 = w2.dim(3);
  m.layout.depth = w3.dim(3);
  m.layout.hidden = hw2.dim(0);
  m.layout.classes = hw2.dim(1) - 5;
  for (auto& [name, p] : m.params()) *p = nt.find(name).cast<T>();
  return m;
}

}  // namespace trkp
