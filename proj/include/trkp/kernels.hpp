#pragma once

#include <algorithm>
#include <utility>
#include <vector>

// Hot numeric loops, written in gather form: every output element is
// produced by exactly one loop iteration that runs its reductions in a
// fixed order. The OpenMP versions therefore match the serial reference
// implementations (kernels::serial) bit for bit at any thread count.
// tools/trkp_bench compares the two.

namespace trkp::kernels {

struct ConvDims {
  int h = 0, w = 0, cin = 0;   // input height, width, channels
  int kh = 0, kw = 0, cout = 0;
  int stride = 1, pad = 0;

  int out_h() const { return (h + 2 * pad - kh) / stride + 1; }
  int out_w() const { return (w + 2 * pad - kw) / stride + 1; }
};

namespace detail {

template <typename T>
inline T conv_forward_one(const ConvDims& d, const T* x, const T* wt, const T* b,
                          int oy, int ox, int oc) {
  T acc = b[oc];
  for (int ky = 0; ky < d.kh; ++ky) {
    const int iy = oy * d.stride + ky - d.pad;
    if (iy < 0 || iy >= d.h) continue;
    for (int kx = 0; kx < d.kw; ++kx) {
      const int ix = ox * d.stride + kx - d.pad;
      if (ix < 0 || ix >= d.w) continue;
      const T* xp = x + (static_cast<std::size_t>(iy) * d.w + ix) * d.cin;
      const T* wp = wt + ((static_cast<std::size_t>(ky) * d.kw + kx) * d.cin) * d.cout + oc;
      for (int ic = 0; ic < d.cin; ++ic) acc += xp[ic] * wp[static_cast<std::size_t>(ic) * d.cout];
    }
  }
  return acc;
}

template <typename T>
inline T conv_grad_input_one(const ConvDims& d, const T* gy, const T* wt,
                             int iy, int ix, int ic) {
  const int oh = d.out_h(), ow = d.out_w();
  T acc = T(0);
  for (int ky = 0; ky < d.kh; ++ky) {
    const int oy_num = iy + d.pad - ky;
    if (oy_num < 0 || oy_num % d.stride != 0) continue;
    const int oy = oy_num / d.stride;
    if (oy >= oh) continue;
    for (int kx = 0; kx < d.kw; ++kx) {
      const int ox_num = ix + d.pad - kx;
      if (ox_num < 0 || ox_num % d.stride != 0) continue;
      const int ox = ox_num / d.stride;
      if (ox >= ow) continue;
      const T* gp = gy + (static_cast<std::size_t>(oy) * ow + ox) * d.cout;
      const T* wp = wt + ((static_cast<std::size_t>(ky) * d.kw + kx) * d.cin + ic) * d.cout;
      for (int oc = 0; oc < d.cout; ++oc) acc += gp[oc] * wp[oc];
    }
  }
  return acc;
}

template <typename T>
inline T conv_grad_weight_one(const ConvDims& d, const T* x, const T* gy,
                              int ky, int kx, int ic, int oc) {
  const int oh = d.out_h(), ow = d.out_w();
  T acc = T(0);
  for (int oy = 0; oy < oh; ++oy) {
    const int iy = oy * d.stride + ky - d.pad;
    if (iy < 0 || iy >= d.h) continue;
    for (int ox = 0; ox < ow; ++ox) {
      const int ix = ox * d.stride + kx - d.pad;
      if (ix < 0 || ix >= d.w) continue;
      acc += gy[(static_cast<std::size_t>(oy) * ow + ox) * d.cout + oc] *
             x[(static_cast<std::size_t>(iy) * d.w + ix) * d.cin + ic];
    }
  }
  return acc;
}

// distances to every source vector, then the k closest by (distance, index)
template <typename T>
inline void knn_one_query(const T* src, int n, int dvec, int k, const T* q,
                          std::vector<std::pair<T, int>>& scratch, int* out) {
  scratch.clear();
  scratch.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* s = src + static_cast<std::size_t>(i) * dvec;
    T dot = T(0);
    for (int c = 0; c < dvec; ++c) dot += q[c] * s[c];
    scratch.emplace_back(T(1) - dot, i);
  }
  std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
  for (int j = 0; j < k; ++j) out[j] = scratch[static_cast<std::size_t>(j)].second;
}

}  // namespace detail

// y[oy,ox,oc] = b[oc] + sum_{ky,kx,ic} x[oy*s+ky-p, ox*s+kx-p, ic] * w[ky,kx,ic,oc]
template <typename T>
void conv2d_forward(const ConvDims& d, const T* x, const T* wt, const T* b, T* y) {
  const int oh = d.out_h(), ow = d.out_w();
#pragma omp parallel for collapse(2)
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int oc = 0; oc < d.cout; ++oc)
        y[(static_cast<std::size_t>(oy) * ow + ox) * d.cout + oc] =
            detail::conv_forward_one(d, x, wt, b, oy, ox, oc);
}

// accumulates into gx
template <typename T>
void conv2d_grad_input(const ConvDims& d, const T* gy, const T* wt, T* gx) {
#pragma omp parallel for collapse(2)
  for (int iy = 0; iy < d.h; ++iy)
    for (int ix = 0; ix < d.w; ++ix)
      for (int ic = 0; ic < d.cin; ++ic)
        gx[(static_cast<std::size_t>(iy) * d.w + ix) * d.cin + ic] +=
            detail::conv_grad_input_one(d, gy, wt, iy, ix, ic);
}

// accumulates into gw
template <typename T>
void conv2d_grad_weight(const ConvDims& d, const T* x, const T* gy, T* gw) {
#pragma omp parallel for collapse(2)
  for (int ky = 0; ky < d.kh; ++ky)
    for (int kx = 0; kx < d.kw; ++kx)
      for (int ic = 0; ic < d.cin; ++ic)
        for (int oc = 0; oc < d.cout; ++oc)
          gw[((static_cast<std::size_t>(ky) * d.kw + kx) * d.cin + ic) * d.cout + oc] +=
              detail::conv_grad_weight_one(d, x, gy, ky, kx, ic, oc);
}

// accumulates into gb
template <typename T>
void conv2d_grad_bias(const ConvDims& d, const T* gy, T* gb) {
  const int cells = d.out_h() * d.out_w();
#pragma omp parallel for
  for (int oc = 0; oc < d.cout; ++oc) {
    T acc = T(0);
    for (int i = 0; i < cells; ++i) acc += gy[static_cast<std::size_t>(i) * d.cout + oc];
    gb[oc] += acc;
  }
}

// Exact k-nearest-neighbour search under cosine distance (1 - dot on unit
// vectors). Ties broken by smaller source index. out has m*k entries.
template <typename T>
void knn_cosine(const T* src, int n, const T* qry, int m, int dvec, int k, int* out) {
#pragma omp parallel
  {
    std::vector<std::pair<T, int>> scratch;
#pragma omp for
    for (int q = 0; q < m; ++q)
      detail::knn_one_query(src, n, dvec, k, qry + static_cast<std::size_t>(q) * dvec,
                            scratch, out + static_cast<std::size_t>(q) * k);
  }
}

// Serial reference implementations, kept for correctness tests and the
// benchmark. Must stay loop-for-loop equivalent to the parallel versions.
namespace serial {

template <typename T>
void conv2d_forward(const ConvDims& d, const T* x, const T* wt, const T* b, T* y) {
  const int oh = d.out_h(), ow = d.out_w();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int oc = 0; oc < d.cout; ++oc)
        y[(static_cast<std::size_t>(oy) * ow + ox) * d.cout + oc] =
            detail::conv_forward_one(d, x, wt, b, oy, ox, oc);
}

template <typename T>
void conv2d_grad_input(const ConvDims& d, const T* gy, const T* wt, T* gx) {
  for (int iy = 0; iy < d.h; ++iy)
    for (int ix = 0; ix < d.w; ++ix)
      for (int ic = 0; ic < d.cin; ++ic)
        gx[(static_cast<std::size_t>(iy) * d.w + ix) * d.cin + ic] +=
            detail::conv_grad_input_one(d, gy, wt, iy, ix, ic);
}

template <typename T>
void conv2d_grad_weight(const ConvDims& d, const T* x, const T* gy, T* gw) {
  for (int ky = 0; ky < d.kh; ++ky)
    for (int kx = 0; kx < d.kw; ++kx)
      for (int ic = 0; ic < d.cin; ++ic)
        for (int oc = 0; oc < d.cout; ++oc)
          gw[((static_cast<std::size_t>(ky) * d.kw + kx) * d.cin + ic) * d.cout + oc] +=
              detail::conv_grad_weight_one(d, x, gy, ky, kx, ic, oc);
}

template <typename T>
void conv2d_grad_bias(const ConvDims& d, const T* gy, T* gb) {
  const int cells = d.out_h() * d.out_w();
  for (int oc = 0; oc < d.cout; ++oc) {
    T acc = T(0);
    for (int i = 0; i < cells; ++i) acc += gy[static_cast<std::size_t>(i) * d.cout + oc];
    gb[oc] += acc;
  }
}

template <typename T>
void knn_cosine(const T* src, int n, const T* qry, int m, int dvec, int k, int* out) {
  std::vector<std::pair<T, int>> scratch;
  for (int q = 0; q < m; ++q) {
    scratch.clear();
    for (int i = 0; i < n; ++i) {
      const T* s = src + static_cast<std::size_t>(i) * dvec;
      const T* qp = qry + static_cast<std::size_t>(q) * dvec;
      T dot = T(0);
      for (int c = 0; c < dvec; ++c) dot += qp[c] * s[c];
      scratch.emplace_back(T(1) - dot, i);
    }
    std::sort(scratch.begin(), scratch.end());
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(q) * k + j] = scratch[static_cast<std::size_t>(j)].second;
  }
}

}  // namespace serial
}  // namespace trkp::kernels
