#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

#include "hran/errors.hpp"

namespace hran {

// Dense rank-4 array in row-major (n, c, h, w) order. The one value type for
// activations, per-op weight views and gradients. Instantiated for float
// (production) and double (gradient-check mode).
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
    assert(n_ >= 0 && c_ >= 0 && h_ >= 0 && w_ >= 0);
  }

  std::int64_t size() const { return static_cast<std::int64_t>(n) * c * h * w; }

  std::array<int, 4> dims() const { return {n, c, h, w}; }

  bool same_dims(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::size_t index(int in, int ic, int iy, int ix) const {
    assert(in >= 0 && in < n && ic >= 0 && ic < c && iy >= 0 && iy < h && ix >= 0 && ix < w);
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }

  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  void fill(T v) { data.assign(data.size(), v); }

  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Geometry of a stride-1 2-D convolution. Padding follows the same-padding
// rule pad = d*(k-1)/2 so spatial extent is preserved everywhere in this
// architecture.
struct ConvSpec {
  int out_channels = 0;
  int in_channels = 0;
  int kh = 0, kw = 0;
  int dilation = 1;
  int pad = 0;

  static ConvSpec same(int out_c, int in_c, int k, int dilation = 1) {
    ConvSpec s;
    s.out_channels = out_c;
    s.in_channels = in_c;
    s.kh = k;
    s.kw = k;
    s.dilation = dilation;
    s.pad = dilation * (k - 1) / 2;
    return s;
  }
};

// Value tensor paired with its gradient accumulator; dims always match.
template <typename T>
struct GradPair {
  Tensor4<T> value;
  Tensor4<T> grad;
};

template <typename T>
inline void check_same_dims(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(op) + ": dims " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace hran
