#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unistd.h>
#include <vector>

#include "hran/rng.hpp"
#include "hran/tensor.hpp"

namespace testutil {

template <typename T>
hran::Tensor4<T> random_tensor(hran::Rng& rng, int n, int c, int h, int w, double lo = -1.0,
                               double hi = 1.0) {
  hran::Tensor4<T> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<T>(lo + (hi - lo) * rng.next_double());
  return t;
}

template <typename T>
std::vector<T> random_vec(hran::Rng& rng, std::size_t len, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(len);
  for (auto& x : v) x = static_cast<T>(lo + (hi - lo) * rng.next_double());
  return v;
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::fabs(got), std::fabs(want), 1e-12});
  return std::fabs(got - want) / denom;
}

// gradient-check comparison: relative error with the denominator floored so
// near-zero gradients are judged on absolute agreement
inline double grad_rel_err(double analytic, double fd, double floor = 1e-6) {
  const double denom = std::max({std::fabs(analytic), std::fabs(fd), floor});
  return std::fabs(analytic - fd) / denom;
}

inline bool grad_close(double analytic, double fd, double rel_tol) {
  return grad_rel_err(analytic, fd) < rel_tol;
}

template <typename T>
double max_abs_diff(const hran::Tensor4<T>& a, const hran::Tensor4<T>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    m = std::max(m, std::fabs(static_cast<double>(a.data[k]) - static_cast<double>(b.data[k])));
  }
  return m;
}

template <typename T>
bool bit_equal(const hran::Tensor4<T>& a, const hran::Tensor4<T>& b) {
  return a.same_dims(b) && a.data == b.data;
}

inline std::string temp_dir(const std::string& tag) {
  const std::string d = std::string("/tmp/hran_test_") + tag + "_" + std::to_string(::getpid());
  return d;
}

// direct (non-separable) evaluation of the scaled cubic kernel at every
// contributing source pixel; brute-force counterpart of the production
// two-pass resampler
inline double cubic_kernel_a05(double x) {
  x = std::fabs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

inline hran::Tensor4<float> bicubic_direct_oracle(const hran::Tensor4<float>& in, int out_h,
                                                  int out_w) {
  hran::Tensor4<float> out(in.n, in.c, out_h, out_w);
  const double sy = static_cast<double>(out_h) / in.h;
  const double sx = static_cast<double>(out_w) / in.w;
  const double ky = sy < 1.0 ? sy : 1.0;
  const double kx = sx < 1.0 ? sx : 1.0;
  const double wy = 4.0 / ky, wx = 4.0 / kx;

  for (int b = 0; b < in.n; ++b)
    for (int c = 0; c < in.c; ++c)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const double uy = (oy + 0.5) / sy - 0.5;
          const double ux = (ox + 0.5) / sx - 0.5;
          double acc = 0.0, wsum = 0.0;
          const int ly = static_cast<int>(std::floor(uy - wy / 2.0));
          const int lx = static_cast<int>(std::floor(ux - wx / 2.0));
          for (int iy = ly; iy < ly + static_cast<int>(std::ceil(wy)) + 2; ++iy) {
            for (int ix = lx; ix < lx + static_cast<int>(std::ceil(wx)) + 2; ++ix) {
              const double wgt =
                  ky * cubic_kernel_a05(ky * (uy - iy)) * kx * cubic_kernel_a05(kx * (ux - ix));
              const int cy = std::clamp(iy, 0, in.h - 1);
              const int cx = std::clamp(ix, 0, in.w - 1);
              acc += wgt * in.at(b, c, cy, cx);
              wsum += wgt;
            }
          }
          out.at(b, c, oy, ox) = static_cast<float>(acc / wsum);
        }
  return out;
}

}  // namespace testutil

#include "hran/model.hpp"

namespace testutil {

// A point where finite differences are trustworthy for a piecewise-linear
// net: small weights plus channel biases alternating +-0.7 keep every
// pre-activation far outside the +-h perturbation band of the LeakyReLU
// kink while still exercising both branches.
template <typename T>
void condition_store_for_fd(hran::ParamStore<T>& store, hran::Rng& rng) {
  for (std::size_t i = 0; i < store.count(); ++i) {
    auto& p = store.param(i);
    if (p.shape.size() == 4) {
      for (auto& v : p.pv.value.data) {
        v = static_cast<T>(0.1 * (2.0 * rng.next_double() - 1.0));
      }
    } else {
      for (std::size_t k = 0; k < p.pv.value.data.size(); ++k) {
        p.pv.value.data[k] = static_cast<T>((k % 2 == 0) ? 0.7 : -0.7);
      }
    }
  }
}

template <typename T>
double min_abs_preactivation(const hran::HranCache<T>& c) {
  double m = 1e30;
  auto scan = [&m](const hran::Tensor4<T>& t) {
    for (T v : t.data) m = std::min(m, std::fabs(static_cast<double>(v)));
  };
  for (const auto& rg : c.rgs) {
    for (const auto& hb : rg.hrabs) {
      scan(hb.sa.pre1_d1);
      scan(hb.sa.pre1_sum);
      scan(hb.sa.pre2_d1);
      scan(hb.sa.pre2_sum);
      scan(hb.ca.pre_act);
    }
  }
  return m;
}

}  // namespace testutil
