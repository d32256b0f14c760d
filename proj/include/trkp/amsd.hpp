#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "trkp/autodiff.hpp"
#include "trkp/checkpoint.hpp"
#include "trkp/detector.hpp"
#include "trkp/htrm.hpp"
#include "trkp/rng.hpp"
#include "trkp/scenes.hpp"

namespace trkp {

// Adversarial multi-source disentanglement. The teacher owns one
// detection head per source domain over a shared base network. Each
// sample trains its own head normally and, through a gradient reversal
// layer between base and heads, trains every other head on the same
// features while pushing the base to make those heads fail.

struct AmsdConfig {
  double lambda = 0.2;  // adversarial trade-off
  double mu = 0.01;     // reversal factor
  double learning_rate = 0.01;
  int batch_size = 16;
  int epochs = 10;
  bool disentangle_cls = true;
  bool disentangle_reg = true;
  double momentum = 0.9;
  double lr_decay = 0.1;     // one-shot decay ...
  double decay_at = 0.8;     // ... at this fraction of the epochs
  std::uint64_t seed = 0;    // shuffle stream
  FocalParams focal;
  double smooth_l1_delta = 1.0;
};

template <typename T>
struct TeacherModel {
  DetectorLayout layout;
  BaseNet<T> base;
  std::vector<DetHead<T>> heads;
  std::vector<std::string> domains;  // one entry per source dataset
  std::vector<int> head_map;         // domain index -> head index

  // shared_head = true builds the source-combined configuration: one
  // detection head consuming every source (no disentanglement possible).
  static TeacherModel init(const DetectorLayout& lay, const std::vector<std::string>& domain_ids,
                           std::uint64_t seed, bool shared_head = false) {
    if (domain_ids.empty()) throw ArgError("TeacherModel: need at least one domain");
    TeacherModel m;
    m.layout = lay;
    m.base = BaseNet<T>::init(lay, seed, rng_stream::kModelInit);
    m.domains = domain_ids;
    const std::size_t head_count = shared_head ? 1 : domain_ids.size();
    for (std::size_t k = 0; k < head_count; ++k)
      m.heads.push_back(DetHead<T>::init(lay, seed, rng_stream::kModelInit + 10 + k));
    for (std::size_t k = 0; k < domain_ids.size(); ++k)
      m.head_map.push_back(shared_head ? 0 : static_cast<int>(k));
    return m;
  }

  int head_count() const { return static_cast<int>(heads.size()); }
  int source_count() const { return static_cast<int>(domains.size()); }

  int head_of_source(int source) const {
    if (source < 0 || source >= source_count())
      throw LookupError("TeacherModel: source index out of range");
    return head_map[static_cast<std::size_t>(source)];
  }

  int source_index(const std::string& domain) const {
    for (std::size_t k = 0; k < domains.size(); ++k)
      if (domains[k] == domain) return static_cast<int>(k);
    throw LookupError("TeacherModel: unknown domain id '" + domain + "'");
  }

  int head_index(const std::string& domain) const { return head_of_source(source_index(domain)); }

  std::vector<std::pair<std::string, Tensor<T>*>> params() {
    auto out = base.params("base.");
    for (std::size_t k = 0; k < heads.size(); ++k) {
      auto hp = heads[k].params("heads." + std::to_string(k) + ".");
      out.insert(out.end(), hp.begin(), hp.end());
    }
    return out;
  }
};

template <typename T>
struct TeacherBound {
  BoundIds base;
  std::vector<BoundIds> heads;

  std::vector<int> all_ids() const {
    std::vector<int> out = base.ids;
    for (const BoundIds& h : heads) out.insert(out.end(), h.ids.begin(), h.ids.end());
    return out;
  }
};

template <typename T>
TeacherBound<T> bind_teacher(Tape<T>& t, const TeacherModel<T>& m) {
  TeacherBound<T> b;
  b.base = m.base.bind(t);
  for (const DetHead<T>& h : m.heads) b.heads.push_back(h.bind(t));
  return b;
}

struct AmsdLossInfo {
  int node = -1;        // alpha * (own + lambda/(K-1) * sum of adversarial terms)
  LossBreakdown own;    // unweighted own-head breakdown
  double adv = 0;       // unweighted adversarial sum (before lambda/(K-1))
  double value = 0;     // weighted total
};

// Eq-style per-sample loss. The adversarial sum runs over every other
// head on GRL-reversed features; a disabled cls/reg switch drops that
// branch from the adversarial sum only.
template <typename T>
AmsdLossInfo amsd_loss(Tape<T>& t, const TeacherModel<T>& model, const TeacherBound<T>& bound,
                       const Scene& scene, int source, double alpha, const AmsdConfig& cfg) {
  const int K = model.head_count();
  if (source < 0 || source >= K) throw LookupError("amsd_loss: source index out of range");
  const int image = t.leaf(scene.image.template cast<T>(), "image");
  const int grid = model.base.forward(t, bound.base, image);
  const CellTargets targets = assign_targets(scene.boxes, model.layout);

  const int own_head = model.heads[static_cast<std::size_t>(source)].forward(
      t, bound.heads[static_cast<std::size_t>(source)], grid, model.layout);
  const DetLossNodes<T> own =
      detection_loss(t, own_head, targets, cfg.focal, cfg.smooth_l1_delta);

  AmsdLossInfo info;
  info.own = own.values;
  int total = own.total_node;

  const bool any_branch = cfg.disentangle_cls || cfg.disentangle_reg;
  if (K >= 2 && cfg.lambda > 0 && any_branch) {
    const int reversed = t.grl(grid, GrlConfig{cfg.mu});
    int adv_sum = -1;
    for (int j = 0; j < K; ++j) {
      if (j == source) continue;
      const int other = model.heads[static_cast<std::size_t>(j)].forward(
          t, bound.heads[static_cast<std::size_t>(j)], reversed, model.layout);
      const DetLossNodes<T> other_loss =
          detection_loss(t, other, targets, cfg.focal, cfg.smooth_l1_delta);
      int branch = -1;
      if (cfg.disentangle_cls && cfg.disentangle_reg)
        branch = other_loss.total_node;
      else if (cfg.disentangle_cls)
        branch = other_loss.cls_node;
      else
        branch = other_loss.reg_node;
      info.adv += t.value(branch)[0];
      adv_sum = adv_sum < 0 ? branch : t.add(adv_sum, branch);
    }
    const int adv_term = t.scale(adv_sum, static_cast<T>(cfg.lambda / (K - 1)));
    total = t.add(total, adv_term);
  }

  if (alpha != 1.0) total = t.scale(total, static_cast<T>(alpha));
  info.node = total;
  info.value = static_cast<double>(t.value(total)[0]);
  return info;
}

// Convenience overload resolving the sample's domain id.
template <typename T>
AmsdLossInfo amsd_loss(Tape<T>& t, const TeacherModel<T>& model, const TeacherBound<T>& bound,
                       const Scene& scene, const std::string& domain_id, double alpha,
                       const AmsdConfig& cfg) {
  return amsd_loss(t, model, bound, scene, model.head_index(domain_id), alpha, cfg);
}

// ---------------------------------------------------------------------
// SGD with momentum: v = m*v + g; p -= lr*v

template <typename T>
class Sgd {
 public:
  void step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, double lr,
            double momentum) {
    if (vel_.empty()) {
      vel_.reserve(params.size());
      for (Tensor<T>* p : params) vel_.emplace_back(p->shape());
    }
    if (params.size() != grads.size() || params.size() != vel_.size())
      throw ShapeError("Sgd: parameter/gradient count mismatch");
    const T m = static_cast<T>(momentum);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      Tensor<T>& v = vel_[i];
      const Tensor<T>& g = grads[i];
      if (!p.same_shape(g)) throw ShapeError("Sgd: gradient shape mismatch");
      for (int j = 0; j < p.size(); ++j) {
        v[j] = m * v[j] + g[j];
        p[j] -= rate * v[j];
      }
    }
  }

 private:
  std::vector<Tensor<T>> vel_;
};

inline double scheduled_lr(const double base, double decay, double decay_at, int epoch,
                           int total_epochs) {
  const int decay_epoch = static_cast<int>(decay_at * total_epochs);
  return epoch >= decay_epoch && decay_epoch > 0 ? base * decay : base;
}

// ---------------------------------------------------------------------

struct TeacherTrainRow {
  int epoch = 0;
  std::vector<double> own_per_source;  // weighted mean own-head loss
  double adv = 0;                      // weighted mean adversarial term
  double total = 0;
  double lr = 0;
};

namespace detail {

struct SampleRef {
  int source = 0;
  int index = 0;
  double alpha = 1.0;
};

template <typename T>
void shuffle(std::vector<SampleRef>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.next_below(static_cast<std::uint32_t>(i))]);
}

}  // namespace detail

// Shuffled mixed-source SGD over Eq-style weighted sample losses; the
// per-step loss is the batch mean. Returns one row per epoch.
template <typename T>
std::vector<TeacherTrainRow> train_teacher(TeacherModel<T>& model,
                                           const std::vector<Dataset>& sources,
                                           const AmsdConfig& cfg,
                                           const RelevanceWeights* weights = nullptr) {
  if (sources.size() != model.heads.size())
    throw ArgError("train_teacher: dataset count must match head count");
  std::vector<detail::SampleRef> all;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sources[k].scenes.empty())
      throw ArgError("train_teacher: empty dataset for domain '" + sources[k].domain_id + "'");
    if (sources[k].domain_id != model.domains[k])
      throw ArgError("train_teacher: dataset order must match model domains");
    for (std::size_t i = 0; i < sources[k].scenes.size(); ++i) {
      detail::SampleRef s;
      s.source = static_cast<int>(k);
      s.index = static_cast<int>(i);
      s.alpha = weights ? weights->alpha_of(sources[k].domain_id, static_cast<int>(i)) : 1.0;
      all.push_back(s);
    }
  }

  auto named = model.params();
  std::vector<Tensor<T>*> params;
  for (auto& [n, p] : named) params.push_back(p);
  Sgd<T> opt;

  const int K = model.head_count();
  std::vector<TeacherTrainRow> rows;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng shuffle_rng(cfg.seed, rng_stream::kShuffleBase + static_cast<std::uint64_t>(epoch));
    detail::shuffle<T>(all, shuffle_rng);
    const double lr = scheduled_lr(cfg.learning_rate, cfg.lr_decay, cfg.decay_at, epoch, cfg.epochs);

    std::vector<double> own_sum(static_cast<std::size_t>(K), 0.0);
    std::vector<int> own_n(static_cast<std::size_t>(K), 0);
    double adv_sum = 0, total_sum = 0;
    int total_n = 0;

    for (std::size_t begin = 0; begin < all.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(all.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const int bs = static_cast<int>(end - begin);
      std::vector<std::vector<Tensor<T>>> grads(static_cast<std::size_t>(bs));
      std::vector<AmsdLossInfo> infos(static_cast<std::size_t>(bs));

#pragma omp parallel for schedule(dynamic)
      for (int s = 0; s < bs; ++s) {
        const detail::SampleRef& ref = all[begin + static_cast<std::size_t>(s)];
        if (ref.alpha == 0.0) continue;  // contributes exactly zero loss and gradient
        const Scene& scene = sources[static_cast<std::size_t>(ref.source)]
                                 .scenes[static_cast<std::size_t>(ref.index)];
        Tape<T> tape;
        const TeacherBound<T> bound = bind_teacher(tape, model);
        AmsdLossInfo info = amsd_loss(tape, model, bound, scene, ref.source, ref.alpha, cfg);
        tape.backward(info.node);
        const std::vector<int> ids = bound.all_ids();
        auto& slot = grads[static_cast<std::size_t>(s)];
        slot.reserve(ids.size());
        for (int id : ids) slot.push_back(tape.grad(id));
        infos[static_cast<std::size_t>(s)] = info;
      }

      // deterministic reduction in sample-index order
      std::vector<Tensor<T>> batch_grads;
      batch_grads.reserve(params.size());
      for (Tensor<T>* p : params) batch_grads.emplace_back(p->shape());
      double batch_loss = 0;
      for (int s = 0; s < bs; ++s) {
        const detail::SampleRef& ref = all[begin + static_cast<std::size_t>(s)];
        const AmsdLossInfo& info = infos[static_cast<std::size_t>(s)];
        if (ref.alpha != 0.0) {
          const auto& slot = grads[static_cast<std::size_t>(s)];
          for (std::size_t p = 0; p < params.size(); ++p)
            for (int j = 0; j < batch_grads[p].size(); ++j) batch_grads[p][j] += slot[p][j];
        }
        batch_loss += info.value;
        own_sum[static_cast<std::size_t>(ref.source)] += ref.alpha * info.own.total();
        own_n[static_cast<std::size_t>(ref.source)] += 1;
        adv_sum += ref.alpha * info.adv * (K >= 2 ? cfg.lambda / (K - 1) : 0.0);
        total_sum += info.value;
        ++total_n;
      }
      const T inv = static_cast<T>(1) / static_cast<T>(bs);
      for (auto& g : batch_grads)
        for (int j = 0; j < g.size(); ++j) g[j] *= inv;
      ++step;
      if (!std::isfinite(batch_loss))
        throw DivergedError("train_teacher: non-finite loss at step " + std::to_string(step));
      opt.step(params, batch_grads, lr, cfg.momentum);
    }

    TeacherTrainRow row;
    row.epoch = epoch;
    for (int k = 0; k < K; ++k)
      row.own_per_source.push_back(
          own_n[static_cast<std::size_t>(k)] ? own_sum[static_cast<std::size_t>(k)] / own_n[static_cast<std::size_t>(k)] : 0.0);
    row.adv = total_n ? adv_sum / total_n : 0.0;
    row.total = total_n ? total_sum / total_n : 0.0;
    row.lr = lr;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------
// checkpoint conversion

template <typename T>
NamedTensors teacher_to_named(const TeacherModel<T>& model) {
  NamedTensors out;
  Tensor<float> meta(std::vector<int>{2});
  meta[0] = static_cast<float>(model.layout.image_h);
  meta[1] = static_cast<float>(model.layout.image_w);
  out.items.emplace_back("meta.image", meta);
  auto& m = const_cast<TeacherModel<T>&>(model);
  for (auto& [name, p] : m.params()) out.items.emplace_back(name, p->template cast<float>());
  for (std::size_t k = 0; k < model.domains.size(); ++k)
    out.items.emplace_back("domains." + std::to_string(k) + "." + model.domains[k],
                           Tensor<float>::scalar(0.f));
  return out;
}

template <typename T>
TeacherModel<T> teacher_from_named(const NamedTensors& nt) {
  TeacherModel<T> m;
  const Tensor<float>& meta = nt.find("meta.image");
  const Tensor<float>& w1 = nt.find("base.w1");
  const Tensor<float>& w2 = nt.find("base.w2");
  const Tensor<float>& w3 = nt.find("base.w3");
  int K = 0;
  while (nt.contains("heads." + std::to_string(K) + ".w1")) ++K;
  if (K == 0) throw ParseError("teacher checkpoint has no heads");
  const Tensor<float>& hw2 = nt.find("heads.0.w2");
  m.layout.image_h = static_cast<int>(meta[0]);
  m.layout.image_w = static_cast<int>(meta[1]);
  m.layout.c1 = w1.dim(3);
  m.layout.c2 = w2.dim(3);
  m.layout.depth = w3.dim(3);
  m.layout.hidden = hw2.dim(0);
  m.layout.classes = hw2.dim(1) - 5;
  m.domains.assign(static_cast<std::size_t>(K), "");
  for (const auto& [name, t] : nt.items)
    if (name.rfind("domains.", 0) == 0) {
      const std::size_t dot = name.find('.', 8);
      if (dot == std::string::npos) throw ParseError("bad domain tensor name: " + name);
      const int k = std::stoi(name.substr(8, dot - 8));
      if (k < 0 || k >= K) throw ParseError("bad domain index in checkpoint");
      m.domains[static_cast<std::size_t>(k)] = name.substr(dot + 1);
    }
  for (const std::string& d : m.domains)
    if (d.empty()) throw ParseError("teacher checkpoint is missing a domain id");
  m.heads.resize(static_cast<std::size_t>(K));
  for (auto& [name, p] : m.params()) {
    const Tensor<float>& src = nt.find(name);
    *p = src.cast<T>();
  }
  return m;
}

}  // namespace trkp
