#include "hran/kernels.hpp"

#include <cmath>
#include <cstdint>

namespace hran {

void check_conv_args(const ConvSpec& spec, int in_c, const std::array<int, 4>& wdims,
                     std::size_t bias_len) {
  if (in_c != spec.in_channels) {
    throw ShapeError("conv2d: input channel axis is " + std::to_string(in_c) +
                     ", spec expects " + std::to_string(spec.in_channels));
  }
  if (wdims[0] != spec.out_channels || wdims[1] != spec.in_channels || wdims[2] != spec.kh ||
      wdims[3] != spec.kw) {
    throw ShapeError("conv2d: weight dims (" + std::to_string(wdims[0]) + "," +
                     std::to_string(wdims[1]) + "," + std::to_string(wdims[2]) + "," +
                     std::to_string(wdims[3]) + ") do not match spec (" +
                     std::to_string(spec.out_channels) + "," + std::to_string(spec.in_channels) +
                     "," + std::to_string(spec.kh) + "," + std::to_string(spec.kw) + ")");
  }
  if (bias_len != static_cast<std::size_t>(spec.out_channels)) {
    throw ShapeError("conv2d: bias axis has " + std::to_string(bias_len) + " entries, expected " +
                     std::to_string(spec.out_channels));
  }
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                  std::span<const T> bias) {
  check_conv_args(spec, input.c, weight.dims(), bias.size());
  const int N = input.n, IC = spec.in_channels, OC = spec.out_channels;
  const int H = input.h, W = input.w;
  const int KH = spec.kh, KW = spec.kw, D = spec.dilation, P = spec.pad;
  Tensor4<T> out(N, OC, H, W);

  const T* in = input.data.data();
  const T* wt = weight.data.data();
  T* op = out.data.data();
  const std::int64_t rows = static_cast<std::int64_t>(N) * OC * H;

#pragma omp parallel for schedule(static)
  for (std::int64_t row = 0; row < rows; ++row) {
    const int y = static_cast<int>(row % H);
    const int o = static_cast<int>((row / H) % OC);
    const int b = static_cast<int>(row / (static_cast<std::int64_t>(H) * OC));
    T* orow = op + (static_cast<std::size_t>(row)) * W;
    for (int x = 0; x < W; ++x) orow[x] = bias[o];
    // tap loops outside, x inside: each output element still accumulates in
    // fixed (i, ky, kx) order, but the x sweep vectorizes
    for (int i = 0; i < IC; ++i) {
      const T* ich = in + ((static_cast<std::size_t>(b) * IC + i) * H) * W;
      const T* wch = wt + ((static_cast<std::size_t>(o) * IC + i) * KH) * KW;
      for (int ky = 0; ky < KH; ++ky) {
        const int sy = y + D * ky - P;
        if (sy < 0 || sy >= H) continue;
        const T* irow = ich + static_cast<std::size_t>(sy) * W;
        const T* wrow = wch + static_cast<std::size_t>(ky) * KW;
        for (int kx = 0; kx < KW; ++kx) {
          const int off = D * kx - P;
          const int xlo = off < 0 ? -off : 0;
          const int xhi = W < W - off ? W : W - off;
          const T wv = wrow[kx];
          for (int x = xlo; x < xhi; ++x) orow[x] += wv * irow[x + off];
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                        const Tensor4<T>& upstream) {
  check_conv_args(spec, input.c, weight.dims(), static_cast<std::size_t>(spec.out_channels));
  if (upstream.n != input.n || upstream.c != spec.out_channels || upstream.h != input.h ||
      upstream.w != input.w) {
    throw ShapeError("conv2d_vjp: upstream dims " + upstream.shape_str() +
                     " do not match forward output (" + std::to_string(input.n) + "," +
                     std::to_string(spec.out_channels) + "," + std::to_string(input.h) + "," +
                     std::to_string(input.w) + ")");
  }
  const int N = input.n, IC = spec.in_channels, OC = spec.out_channels;
  const int H = input.h, W = input.w;
  const int KH = spec.kh, KW = spec.kw, D = spec.dilation, P = spec.pad;

  ConvGrads<T> g;
  g.input = Tensor4<T>(N, IC, H, W);
  g.weight = Tensor4<T>(OC, IC, KH, KW);
  g.bias.assign(static_cast<std::size_t>(OC), T(0));

  const T* in = input.data.data();
  const T* wt = weight.data.data();
  const T* up = upstream.data.data();

  // grad wrt input: gather over (o, ky, kx), one task per input row
  {
    T* gi = g.input.data.data();
    const std::int64_t rows = static_cast<std::int64_t>(N) * IC * H;
#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < rows; ++row) {
      const int y = static_cast<int>(row % H);
      const int i = static_cast<int>((row / H) % IC);
      const int b = static_cast<int>(row / (static_cast<std::int64_t>(H) * IC));
      T* grow = gi + static_cast<std::size_t>(row) * W;
      for (int x = 0; x < W; ++x) grow[x] = T(0);
      for (int o = 0; o < OC; ++o) {
        const T* uch = up + ((static_cast<std::size_t>(b) * OC + o) * H) * W;
        const T* wch = wt + ((static_cast<std::size_t>(o) * IC + i) * KH) * KW;
        for (int ky = 0; ky < KH; ++ky) {
          const int oy = y - D * ky + P;
          if (oy < 0 || oy >= H) continue;
          const T* urow = uch + static_cast<std::size_t>(oy) * W;
          const T* wrow = wch + static_cast<std::size_t>(ky) * KW;
          for (int kx = 0; kx < KW; ++kx) {
            const int off = P - D * kx;  // upstream column = x + off
            const int xlo = off < 0 ? -off : 0;
            const int xhi = W < W - off ? W : W - off;
            const T wv = wrow[kx];
            for (int x = xlo; x < xhi; ++x) grow[x] += wv * urow[x + off];
          }
        }
      }
    }
  }

  // grad wrt weight: one task per weight element, fixed (n, y, x) order
  {
    T* gw = g.weight.data.data();
    const std::int64_t wcount = static_cast<std::int64_t>(OC) * IC * KH * KW;
#pragma omp parallel for schedule(static)
    for (std::int64_t widx = 0; widx < wcount; ++widx) {
      const int kx = static_cast<int>(widx % KW);
      const int ky = static_cast<int>((widx / KW) % KH);
      const int i = static_cast<int>((widx / (KW * KH)) % IC);
      const int o = static_cast<int>(widx / (static_cast<std::int64_t>(KW) * KH * IC));
      const int off = D * kx - P;  // input column = x + off
      const int xlo = off < 0 ? -off : 0;
      const int xhi = W < W - off ? W : W - off;
      T acc = T(0);
      for (int b = 0; b < N; ++b) {
        const T* uch = up + ((static_cast<std::size_t>(b) * OC + o) * H) * W;
        const T* ich = in + ((static_cast<std::size_t>(b) * IC + i) * H) * W;
        for (int y = 0; y < H; ++y) {
          const int sy = y + D * ky - P;
          if (sy < 0 || sy >= H) continue;
          const T* urow = uch + static_cast<std::size_t>(y) * W;
          const T* irow = ich + static_cast<std::size_t>(sy) * W;
          for (int x = xlo; x < xhi; ++x) acc += urow[x] * irow[x + off];
        }
      }
      gw[widx] = acc;
    }
  }

  // grad wrt bias: sum of upstream per output channel
  {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < OC; ++o) {
      T acc = T(0);
      for (int b = 0; b < N; ++b) {
        const T* uch = up + ((static_cast<std::size_t>(b) * OC + o) * H) * W;
        for (std::int64_t k = 0; k < static_cast<std::int64_t>(H) * W; ++k) acc += uch[k];
      }
      g.bias[static_cast<std::size_t>(o)] = acc;
    }
  }
  return g;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope) {
  Tensor4<T> out(x.n, x.c, x.h, x.w);
  const T* xi = x.data.data();
  T* oi = out.data.data();
  const std::int64_t count = x.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < count; ++k) {
    const T v = xi[k];
    oi[k] = v > T(0) ? v : slope * v;
  }
  return out;
}

template <typename T>
Tensor4<T> leaky_relu_vjp(const Tensor4<T>& x, T slope, const Tensor4<T>& upstream) {
  check_same_dims(x, upstream, "leaky_relu_vjp");
  Tensor4<T> out(x.n, x.c, x.h, x.w);
  const T* xi = x.data.data();
  const T* ui = upstream.data.data();
  T* oi = out.data.data();
  const std::int64_t count = x.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < count; ++k) {
    oi[k] = xi[k] > T(0) ? ui[k] : slope * ui[k];
  }
  return out;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> out(x.n, x.c, x.h, x.w);
  const T* xi = x.data.data();
  T* oi = out.data.data();
  const std::int64_t count = x.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < count; ++k) {
    const T v = xi[k];
    if (v >= T(0)) {
      oi[k] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      oi[k] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor4<T> sigmoid_vjp(const Tensor4<T>& y, const Tensor4<T>& upstream) {
  check_same_dims(y, upstream, "sigmoid_vjp");
  Tensor4<T> out(y.n, y.c, y.h, y.w);
  const T* yi = y.data.data();
  const T* ui = upstream.data.data();
  T* oi = out.data.data();
  const std::int64_t count = y.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < count; ++k) {
    oi[k] = ui[k] * yi[k] * (T(1) - yi[k]);
  }
  return out;
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
  if (x.h < 1 || x.w < 1) {
    throw ShapeError("global_avg_pool: empty spatial extent " + x.shape_str());
  }
  Tensor4<T> out(x.n, x.c, 1, 1);
  const T* xi = x.data.data();
  T* oi = out.data.data();
  const std::int64_t planes = static_cast<std::int64_t>(x.n) * x.c;
  const std::int64_t hw = static_cast<std::int64_t>(x.h) * x.w;
  const T inv = T(1) / static_cast<T>(hw);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* plane = xi + p * hw;
    T acc = T(0);
    for (std::int64_t k = 0; k < hw; ++k) acc += plane[k];
    oi[p] = acc * inv;
  }
  return out;
}

template <typename T>
Tensor4<T> global_avg_pool_vjp(int h, int w, const Tensor4<T>& upstream) {
  if (upstream.h != 1 || upstream.w != 1) {
    throw ShapeError("global_avg_pool_vjp: upstream must be (n,c,1,1), got " +
                     upstream.shape_str());
  }
  Tensor4<T> out(upstream.n, upstream.c, h, w);
  const T* ui = upstream.data.data();
  T* oi = out.data.data();
  const std::int64_t planes = static_cast<std::int64_t>(upstream.n) * upstream.c;
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const T inv = T(1) / static_cast<T>(hw);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T v = ui[p] * inv;
    T* plane = oi + p * hw;
    for (std::int64_t k = 0; k < hw; ++k) plane[k] = v;
  }
  return out;
}

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int r) {
  if (r < 1 || x.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channel axis " + std::to_string(x.c) +
                     " not divisible by r^2 = " + std::to_string(r * r));
  }
  const int OC = x.c / (r * r);
  Tensor4<T> out(x.n, OC, x.h * r, x.w * r);
  const T* xi = x.data.data();
  T* oi = out.data.data();
  const std::int64_t in_hw = static_cast<std::int64_t>(x.h) * x.w;
  const std::int64_t out_hw = static_cast<std::int64_t>(out.h) * out.w;
  const std::int64_t planes = static_cast<std::int64_t>(x.n) * x.c;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const int ic = static_cast<int>(p % x.c);
    const int b = static_cast<int>(p / x.c);
    const int o = ic / (r * r);
    const int dy = (ic % (r * r)) / r;
    const int dx = ic % r;
    const T* src = xi + p * in_hw;
    T* dst = oi + (static_cast<std::int64_t>(b) * OC + o) * out_hw + dy * out.w + dx;
    for (int y = 0; y < x.h; ++y) {
      T* drow = dst + static_cast<std::int64_t>(y) * r * out.w;
      const T* srow = src + static_cast<std::int64_t>(y) * x.w;
      for (int xx = 0; xx < x.w; ++xx) drow[static_cast<std::int64_t>(xx) * r] = srow[xx];
    }
  }
  return out;
}

template <typename T>
Tensor4<T> pixel_unshuffle(const Tensor4<T>& x, int r) {
  if (r < 1 || x.h % r != 0 || x.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial axes " + x.shape_str() + " not divisible by r = " +
                     std::to_string(r));
  }
  Tensor4<T> out(x.n, x.c * r * r, x.h / r, x.w / r);
  const T* xi = x.data.data();
  T* oi = out.data.data();
  const std::int64_t in_hw = static_cast<std::int64_t>(x.h) * x.w;
  const std::int64_t out_hw = static_cast<std::int64_t>(out.h) * out.w;
  const std::int64_t planes = static_cast<std::int64_t>(out.n) * out.c;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const int oc = static_cast<int>(p % out.c);
    const int b = static_cast<int>(p / out.c);
    const int ic = oc / (r * r);
    const int dy = (oc % (r * r)) / r;
    const int dx = oc % r;
    T* dst = oi + p * out_hw;
    const T* src = xi + (static_cast<std::int64_t>(b) * x.c + ic) * in_hw + dy * x.w + dx;
    for (int y = 0; y < out.h; ++y) {
      const T* srow = src + static_cast<std::int64_t>(y) * r * x.w;
      T* drow = dst + static_cast<std::int64_t>(y) * out.w;
      for (int xx = 0; xx < out.w; ++xx) drow[xx] = srow[static_cast<std::int64_t>(xx) * r];
    }
  }
  return out;
}

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  int total_c = 0;
  for (const auto* x : xs) {
    if (x->n != xs[0]->n || x->h != xs[0]->h || x->w != xs[0]->w) {
      throw ShapeError("concat_channels: batch/spatial axes differ, " + xs[0]->shape_str() +
                       " vs " + x->shape_str());
    }
    total_c += x->c;
  }
  Tensor4<T> out(xs[0]->n, total_c, xs[0]->h, xs[0]->w);
  const std::int64_t hw = static_cast<std::int64_t>(out.h) * out.w;
  int c0 = 0;
  for (const auto* x : xs) {
    const std::int64_t planes = static_cast<std::int64_t>(x->n) * x->c;
    const T* xi = x->data.data();
    T* oi = out.data.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const int ic = static_cast<int>(p % x->c);
      const int b = static_cast<int>(p / x->c);
      const T* src = xi + p * hw;
      T* dst = oi + ((static_cast<std::size_t>(b) * total_c + c0 + ic)) * hw;
      for (std::int64_t k = 0; k < hw; ++k) dst[k] = src[k];
    }
    c0 += x->c;
  }
  return out;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  return concat_channels<T>({&a, &b});
}

template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& x, const std::vector<int>& sizes) {
  int total = 0;
  for (int s : sizes) total += s;
  if (total != x.c) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) +
                     ", channel axis is " + std::to_string(x.c));
  }
  std::vector<Tensor4<T>> out;
  out.reserve(sizes.size());
  const std::int64_t hw = static_cast<std::int64_t>(x.h) * x.w;
  int c0 = 0;
  for (int s : sizes) {
    Tensor4<T> part(x.n, s, x.h, x.w);
    const T* xi = x.data.data();
    T* pi = part.data.data();
    const std::int64_t planes = static_cast<std::int64_t>(x.n) * s;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const int ic = static_cast<int>(p % s);
      const int b = static_cast<int>(p / s);
      const T* src = xi + ((static_cast<std::size_t>(b) * x.c + c0 + ic)) * hw;
      T* dst = pi + p * hw;
      for (std::int64_t k = 0; k < hw; ++k) dst[k] = src[k];
    }
    c0 += s;
    out.push_back(std::move(part));
  }
  return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& x, const Tensor4<T>& y) {
  check_same_dims(x, y, "add");
  Tensor4<T> out(x.n, x.c, x.h, x.w);
  const T* xi = x.data.data();
  const T* yi = y.data.data();
  T* oi = out.data.data();
  const std::int64_t count = x.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < count; ++k) oi[k] = xi[k] + yi[k];
  return out;
}

template <typename T>
void add_inplace(Tensor4<T>& x, const Tensor4<T>& y) {
  check_same_dims(x, y, "add_inplace");
  T* xi = x.data.data();
  const T* yi = y.data.data();
  const std::int64_t count = x.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < count; ++k) xi[k] += yi[k];
}

template <typename T>
Tensor4<T> mul_broadcast(const Tensor4<T>& x, const Tensor4<T>& gate) {
  if (gate.n != x.n || gate.c != x.c || gate.h != 1 || gate.w != 1) {
    throw ShapeError("mul_broadcast: gate dims " + gate.shape_str() + " must be (" +
                     std::to_string(x.n) + "," + std::to_string(x.c) + ",1,1)");
  }
  Tensor4<T> out(x.n, x.c, x.h, x.w);
  const T* xi = x.data.data();
  const T* gi = gate.data.data();
  T* oi = out.data.data();
  const std::int64_t planes = static_cast<std::int64_t>(x.n) * x.c;
  const std::int64_t hw = static_cast<std::int64_t>(x.h) * x.w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T g = gi[p];
    const T* src = xi + p * hw;
    T* dst = oi + p * hw;
    for (std::int64_t k = 0; k < hw; ++k) dst[k] = src[k] * g;
  }
  return out;
}

template <typename T>
MulBroadcastGrads<T> mul_broadcast_vjp(const Tensor4<T>& x, const Tensor4<T>& gate,
                                       const Tensor4<T>& upstream) {
  check_same_dims(x, upstream, "mul_broadcast_vjp");
  MulBroadcastGrads<T> g;
  g.x = Tensor4<T>(x.n, x.c, x.h, x.w);
  g.gate = Tensor4<T>(x.n, x.c, 1, 1);
  const T* xi = x.data.data();
  const T* gi = gate.data.data();
  const T* ui = upstream.data.data();
  T* gxi = g.x.data.data();
  T* ggi = g.gate.data.data();
  const std::int64_t planes = static_cast<std::int64_t>(x.n) * x.c;
  const std::int64_t hw = static_cast<std::int64_t>(x.h) * x.w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T gv = gi[p];
    const T* xs = xi + p * hw;
    const T* us = ui + p * hw;
    T* gx = gxi + p * hw;
    T acc = T(0);
    for (std::int64_t k = 0; k < hw; ++k) {
      gx[k] = us[k] * gv;
      acc += us[k] * xs[k];
    }
    ggi[p] = acc;
  }
  return g;
}

namespace ref {

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                  std::span<const T> bias) {
  check_conv_args(spec, input.c, weight.dims(), bias.size());
  Tensor4<T> out(input.n, spec.out_channels, input.h, input.w);
  for (int b = 0; b < input.n; ++b)
    for (int o = 0; o < spec.out_channels; ++o)
      for (int y = 0; y < input.h; ++y)
        for (int x = 0; x < input.w; ++x) {
          T acc = bias[o];
          for (int i = 0; i < spec.in_channels; ++i)
            for (int ky = 0; ky < spec.kh; ++ky)
              for (int kx = 0; kx < spec.kw; ++kx) {
                const int sy = y + spec.dilation * ky - spec.pad;
                const int sx = x + spec.dilation * kx - spec.pad;
                if (sy < 0 || sy >= input.h || sx < 0 || sx >= input.w) continue;
                acc += weight.at(o, i, ky, kx) * input.at(b, i, sy, sx);
              }
          out.at(b, o, y, x) = acc;
        }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                        const Tensor4<T>& upstream) {
  ConvGrads<T> g;
  g.input = Tensor4<T>(input.n, input.c, input.h, input.w);
  g.weight = Tensor4<T>(spec.out_channels, spec.in_channels, spec.kh, spec.kw);
  g.bias.assign(static_cast<std::size_t>(spec.out_channels), T(0));
  for (int b = 0; b < input.n; ++b)
    for (int o = 0; o < spec.out_channels; ++o)
      for (int y = 0; y < input.h; ++y)
        for (int x = 0; x < input.w; ++x) {
          const T u = upstream.at(b, o, y, x);
          g.bias[static_cast<std::size_t>(o)] += u;
          for (int i = 0; i < spec.in_channels; ++i)
            for (int ky = 0; ky < spec.kh; ++ky)
              for (int kx = 0; kx < spec.kw; ++kx) {
                const int sy = y + spec.dilation * ky - spec.pad;
                const int sx = x + spec.dilation * kx - spec.pad;
                if (sy < 0 || sy >= input.h || sx < 0 || sx >= input.w) continue;
                g.input.at(b, i, sy, sx) += weight.at(o, i, ky, kx) * u;
                g.weight.at(o, i, ky, kx) += input.at(b, i, sy, sx) * u;
              }
        }
  return g;
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
  if (x.h < 1 || x.w < 1) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor4<T> out(x.n, x.c, 1, 1);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c) {
      T acc = T(0);
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) acc += x.at(b, c, y, xx);
      out.at(b, c, 0, 0) = acc * (T(1) / static_cast<T>(static_cast<std::int64_t>(x.h) * x.w));
    }
  return out;
}

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int r) {
  if (r < 1 || x.c % (r * r) != 0) throw ShapeError("pixel_shuffle: bad channel count");
  Tensor4<T> out(x.n, x.c / (r * r), x.h * r, x.w * r);
  for (int b = 0; b < x.n; ++b)
    for (int o = 0; o < out.c; ++o)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              out.at(b, o, y * r + dy, xx * r + dx) = x.at(b, o * r * r + dy * r + dx, y, xx);
  return out;
}

}  // namespace ref

// Instantiations: float is the production scalar, double is the
// gradient-check mode used by the test suites.
#define HRAN_INSTANTIATE_KERNELS(T)                                                              \
  template Tensor4<T> conv2d<T>(const Tensor4<T>&, const ConvSpec&, const Tensor4<T>&,           \
                                std::span<const T>);                                             \
  template ConvGrads<T> conv2d_vjp<T>(const Tensor4<T>&, const ConvSpec&, const Tensor4<T>&,     \
                                      const Tensor4<T>&);                                        \
  template Tensor4<T> leaky_relu<T>(const Tensor4<T>&, T);                                       \
  template Tensor4<T> leaky_relu_vjp<T>(const Tensor4<T>&, T, const Tensor4<T>&);                \
  template Tensor4<T> sigmoid<T>(const Tensor4<T>&);                                             \
  template Tensor4<T> sigmoid_vjp<T>(const Tensor4<T>&, const Tensor4<T>&);                      \
  template Tensor4<T> global_avg_pool<T>(const Tensor4<T>&);                                     \
  template Tensor4<T> global_avg_pool_vjp<T>(int, int, const Tensor4<T>&);                       \
  template Tensor4<T> pixel_shuffle<T>(const Tensor4<T>&, int);                                  \
  template Tensor4<T> pixel_unshuffle<T>(const Tensor4<T>&, int);                                \
  template Tensor4<T> concat_channels<T>(const std::vector<const Tensor4<T>*>&);                 \
  template Tensor4<T> concat_channels<T>(const Tensor4<T>&, const Tensor4<T>&);                  \
  template std::vector<Tensor4<T>> split_channels<T>(const Tensor4<T>&, const std::vector<int>&);\
  template Tensor4<T> add<T>(const Tensor4<T>&, const Tensor4<T>&);                              \
  template void add_inplace<T>(Tensor4<T>&, const Tensor4<T>&);                                  \
  template Tensor4<T> mul_broadcast<T>(const Tensor4<T>&, const Tensor4<T>&);                    \
  template MulBroadcastGrads<T> mul_broadcast_vjp<T>(const Tensor4<T>&, const Tensor4<T>&,       \
                                                     const Tensor4<T>&);                         \
  namespace ref {                                                                                \
  template Tensor4<T> conv2d<T>(const Tensor4<T>&, const ConvSpec&, const Tensor4<T>&,           \
                                std::span<const T>);                                             \
  template ConvGrads<T> conv2d_vjp<T>(const Tensor4<T>&, const ConvSpec&, const Tensor4<T>&,     \
                                      const Tensor4<T>&);                                        \
  template Tensor4<T> global_avg_pool<T>(const Tensor4<T>&);                                     \
  template Tensor4<T> pixel_shuffle<T>(const Tensor4<T>&, int);                                  \
  }

HRAN_INSTANTIATE_KERNELS(float)
HRAN_INSTANTIATE_KERNELS(double)

}  // namespace hran
