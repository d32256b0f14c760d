#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "trkp/error.hpp"
#include "trkp/kernels.hpp"
#include "trkp/tensor.hpp"

namespace trkp {

// Gradient reversal: identity forward, upstream gradient multiplied by
// -mu on the way down.
struct GrlConfig {
  double mu = 0.01;
};

// Reverse-mode tape over dense tensors. Nodes are appended in forward
// order, which is a topological order by construction; backward() walks
// the tape once in reverse and accumulates gradients additively into
// each parent. Gradient accumulators are re-zeroed at the start of every
// backward pass, so repeated calls give identical results.
//
// One tape per graph; separate tapes may run on separate threads.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;  // empty for leaves
    const char* op = "";
  };

  int size() const { return static_cast<int>(nodes_.size()); }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  Tensor<T>& grad_mut(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const std::vector<int>& parents(int id) const { return nodes_[static_cast<std::size_t>(id)].parents; }

  // Leaf holding a copy of v. Gradients accumulate into grad(id).
  int leaf(const Tensor<T>& v, const char* op = "leaf") {
    return push(Tensor<T>(v), {}, nullptr, op);
  }

  // Escape hatch for fused ops (detector losses) and test-only nodes.
  int custom(Tensor<T> value, std::vector<int> parents,
             std::function<void(Tape&, int)> back, const char* op) {
    return push(std::move(value), std::move(parents), std::move(back), op);
  }

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(std::move(out), {a, b},
                [](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  Tensor<T>& gb = t.grad_mut(t.parents(self)[1]);
                  for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                  }
                },
                "add");
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return push(std::move(out), {a, b},
                [](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  Tensor<T>& gb = t.grad_mut(t.parents(self)[1]);
                  for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                  }
                },
                "sub");
  }

  int mul(int a, int b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(std::move(out), {a, b},
                [](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const int pa = t.parents(self)[0], pb = t.parents(self)[1];
                  const Tensor<T>& va = t.value(pa);
                  const Tensor<T>& vb2 = t.value(pb);
                  Tensor<T>& ga = t.grad_mut(pa);
                  Tensor<T>& gb = t.grad_mut(pb);
                  for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * vb2[i];
                    gb[i] += g[i] * va[i];
                  }
                },
                "mul");
  }

  // scalar-tensor product (the only broadcasting supported)
  int scale(int a, T s) {
    Tensor<T> out = value(a);
    for (int i = 0; i < out.size(); ++i) out[i] *= s;
    return push(std::move(out), {a},
                [s](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                },
                "scale");
  }

  int relu(int a) {
    Tensor<T> out = value(a);
    for (int i = 0; i < out.size(); ++i)
      if (out[i] < T(0)) out[i] = T(0);
    return push(std::move(out), {a},
                [](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const int pa = t.parents(self)[0];
                  const Tensor<T>& va = t.value(pa);
                  Tensor<T>& ga = t.grad_mut(pa);
                  for (int i = 0; i < g.size(); ++i)
                    if (va[i] > T(0)) ga[i] += g[i];
                },
                "relu");
  }

  int sigmoid(int a) {
    Tensor<T> out = value(a);
    for (int i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
    return push(std::move(out), {a},
                [](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const Tensor<T>& y = t.value(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * y[i] * (T(1) - y[i]);
                },
                "sigmoid");
  }

  // softmax over the last axis
  int softmax_last(int a) {
    const Tensor<T>& v = value(a);
    if (v.ndim() < 1) throw ShapeError("softmax_last: rank-0 operand");
    const int cols = v.dim(v.ndim() - 1);
    const int rows = v.size() / cols;
    Tensor<T> out = v;
    for (int r = 0; r < rows; ++r) softmax_row(out.data() + static_cast<std::size_t>(r) * cols, cols);
    return push(std::move(out), {a},
                [cols, rows](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const Tensor<T>& y = t.value(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int r = 0; r < rows; ++r) {
                    const std::size_t off = static_cast<std::size_t>(r) * cols;
                    T dot = T(0);
                    for (int c = 0; c < cols; ++c) dot += g[static_cast<int>(off) + c] * y[static_cast<int>(off) + c];
                    for (int c = 0; c < cols; ++c)
                      ga[static_cast<int>(off) + c] +=
                          y[static_cast<int>(off) + c] * (g[static_cast<int>(off) + c] - dot);
                  }
                },
                "softmax");
  }

  int matmul(int a, int b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
      throw ShapeError("matmul: incompatible shapes " + va.shape_str() + " x " + vb.shape_str());
    const int n = va.dim(0), k = va.dim(1), m = vb.dim(1);
    Tensor<T> out(std::vector<int>{n, m});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        T acc = T(0);
        for (int p = 0; p < k; ++p) acc += va.at(i, p) * vb.at(p, j);
        out.at(i, j) = acc;
      }
    return push(std::move(out), {a, b},
                [n, k, m](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const int pa = t.parents(self)[0], pb = t.parents(self)[1];
                  const Tensor<T>& va2 = t.value(pa);
                  const Tensor<T>& vb2 = t.value(pb);
                  Tensor<T>& ga = t.grad_mut(pa);
                  Tensor<T>& gb = t.grad_mut(pb);
                  for (int i = 0; i < n; ++i)
                    for (int p = 0; p < k; ++p) {
                      T acc = T(0);
                      for (int j = 0; j < m; ++j) acc += g.at(i, j) * vb2.at(p, j);
                      ga.at(i, p) += acc;
                    }
                  for (int p = 0; p < k; ++p)
                    for (int j = 0; j < m; ++j) {
                      T acc = T(0);
                      for (int i = 0; i < n; ++i) acc += va2.at(i, p) * g.at(i, j);
                      gb.at(p, j) += acc;
                    }
                },
                "matmul");
  }

  // y = x @ w + b with x (n,k), w (k,m), b (m)
  int affine(int x, int w, int b) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    if (vx.ndim() != 2 || vw.ndim() != 2 || vb.ndim() != 1 || vx.dim(1) != vw.dim(0) ||
        vw.dim(1) != vb.dim(0))
      throw ShapeError("affine: incompatible shapes " + vx.shape_str() + ", " + vw.shape_str() +
                       ", " + vb.shape_str());
    const int n = vx.dim(0), k = vx.dim(1), m = vw.dim(1);
    Tensor<T> out(std::vector<int>{n, m});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        T acc = vb[j];
        for (int p = 0; p < k; ++p) acc += vx.at(i, p) * vw.at(p, j);
        out.at(i, j) = acc;
      }
    return push(std::move(out), {x, w, b},
                [n, k, m](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const int px = t.parents(self)[0], pw = t.parents(self)[1], pb = t.parents(self)[2];
                  const Tensor<T>& vx2 = t.value(px);
                  const Tensor<T>& vw2 = t.value(pw);
                  Tensor<T>& gx = t.grad_mut(px);
                  Tensor<T>& gw = t.grad_mut(pw);
                  Tensor<T>& gb = t.grad_mut(pb);
                  for (int i = 0; i < n; ++i)
                    for (int p = 0; p < k; ++p) {
                      T acc = T(0);
                      for (int j = 0; j < m; ++j) acc += g.at(i, j) * vw2.at(p, j);
                      gx.at(i, p) += acc;
                    }
                  for (int p = 0; p < k; ++p)
                    for (int j = 0; j < m; ++j) {
                      T acc = T(0);
                      for (int i = 0; i < n; ++i) acc += vx2.at(i, p) * g.at(i, j);
                      gw.at(p, j) += acc;
                    }
                  for (int j = 0; j < m; ++j) {
                    T acc = T(0);
                    for (int i = 0; i < n; ++i) acc += g.at(i, j);
                    gb[j] += acc;
                  }
                },
                "affine");
  }

  // x (h,w,cin), weight (kh,kw,cin,cout), bias (cout)
  int conv2d(int x, int w, int b, int stride, int pad) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    if (vx.ndim() != 3 || vw.ndim() != 4 || vb.ndim() != 1 || vx.dim(2) != vw.dim(2) ||
        vw.dim(3) != vb.dim(0))
      throw ShapeError("conv2d: incompatible shapes " + vx.shape_str() + ", " + vw.shape_str() +
                       ", " + vb.shape_str());
    kernels::ConvDims d;
    d.h = vx.dim(0);
    d.w = vx.dim(1);
    d.cin = vx.dim(2);
    d.kh = vw.dim(0);
    d.kw = vw.dim(1);
    d.cout = vw.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (d.out_h() <= 0 || d.out_w() <= 0) throw ShapeError("conv2d: empty output");
    Tensor<T> out(std::vector<int>{d.out_h(), d.out_w(), d.cout});
    kernels::conv2d_forward(d, vx.data(), vw.data(), vb.data(), out.data());
    return push(std::move(out), {x, w, b},
                [d](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  const int px = t.parents(self)[0], pw = t.parents(self)[1], pb = t.parents(self)[2];
                  kernels::conv2d_grad_input(d, g.data(), t.value(pw).data(), t.grad_mut(px).data());
                  kernels::conv2d_grad_weight(d, t.value(px).data(), g.data(), t.grad_mut(pw).data());
                  kernels::conv2d_grad_bias(d, g.data(), t.grad_mut(pb).data());
                },
                "conv2d");
  }

  int reduce_sum(int a) {
    const Tensor<T>& v = value(a);
    T acc = T(0);
    for (int i = 0; i < v.size(); ++i) acc += v[i];
    return push(Tensor<T>::scalar(acc), {a},
                [](Tape& t, int self) {
                  const T g = t.grad(self)[0];
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int i = 0; i < ga.size(); ++i) ga[i] += g;
                },
                "sum");
  }

  int reduce_mean(int a) {
    const Tensor<T>& v = value(a);
    T acc = T(0);
    for (int i = 0; i < v.size(); ++i) acc += v[i];
    const T inv = T(1) / static_cast<T>(v.size());
    return push(Tensor<T>::scalar(acc * inv), {a},
                [inv](Tape& t, int self) {
                  const T g = t.grad(self)[0] * inv;
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int i = 0; i < ga.size(); ++i) ga[i] += g;
                },
                "mean");
  }

  int reshape(int a, std::vector<int> shape) {
    const Tensor<T>& v = value(a);
    Tensor<T> out(shape);
    if (out.size() != v.size())
      throw ShapeError("reshape: element count mismatch " + v.shape_str());
    for (int i = 0; i < v.size(); ++i) out[i] = v[i];
    return push(std::move(out), {a},
                [](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
                },
                "reshape");
  }

  // Forward output is the input, bit for bit. Backward hands -mu times
  // the upstream gradient to the input.
  int grl(int a, const GrlConfig& cfg) {
    if (cfg.mu < 0) throw ArgError("grl: mu must be non-negative");
    const T neg_mu = static_cast<T>(-cfg.mu);
    return push(Tensor<T>(value(a)), {a},
                [neg_mu](Tape& t, int self) {
                  const Tensor<T>& g = t.grad(self);
                  Tensor<T>& ga = t.grad_mut(t.parents(self)[0]);
                  for (int i = 0; i < g.size(); ++i) ga[i] += neg_mu * g[i];
                },
                "grl");
  }

  // Zeroes every accumulator, seeds d(loss)/d(loss) = 1 and walks the
  // ancestry of `loss` once in reverse creation order.
  void backward(int loss) {
    if (value(loss).size() != 1)
      throw ArgError("backward: loss must be a scalar, got shape " + value(loss).shape_str());
    std::vector<char> live(nodes_.size(), 0);
    std::vector<int> stack{loss};
    live[static_cast<std::size_t>(loss)] = 1;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[static_cast<std::size_t>(id)].parents)
        if (!live[static_cast<std::size_t>(p)]) {
          live[static_cast<std::size_t>(p)] = 1;
          stack.push_back(p);
        }
    }
    for (auto& n : nodes_) n.grad.fill(T(0));
    nodes_[static_cast<std::size_t>(loss)].grad[0] = T(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (live[static_cast<std::size_t>(id)] && n.back) n.back(*this, id);
    }
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

 private:
  int push(Tensor<T> value, std::vector<int> parents, std::function<void(Tape&, int)> back,
           const char* op) {
    Node n;
    n.grad = Tensor<T>(value.shape());
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void softmax_row(T* row, int n) {
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (int i = 0; i < n; ++i) row[i] /= sum;
  }

  void check_same_shape(int a, int b, const char* op) {
    if (!value(a).same_shape(value(b)))
      throw ShapeError(std::string(op) + ": shape mismatch " + value(a).shape_str() + " vs " +
                       value(b).shape_str());
  }

  std::vector<Node> nodes_;
};

}  // namespace trkp
