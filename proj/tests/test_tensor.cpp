#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "hran/kernels.hpp"
#include "hran/rng.hpp"
#include "hran/threading.hpp"
#include "test_util.hpp"

using namespace hran;
using testutil::bit_equal;
using testutil::grad_close;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::random_vec;

namespace {

template <typename T>
std::span<const T> vspan(const std::vector<T>& v) {
  return std::span<const T>(v.data(), v.size());
}

// scalar objective sum(upstream . f(inputs)) used by all finite-difference
// checks
double dot(const Tensor4<double>& a, const Tensor4<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) s += a.data[k] * b.data[k];
  return s;
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel reproduces the input bit-exactly") {
  Rng rng(1);
  const int C = 5;
  auto in = random_tensor<float>(rng, 2, C, 6, 7);
  ConvSpec spec = ConvSpec::same(C, C, 1);
  Tensor4<float> w(C, C, 1, 1);
  for (int o = 0; o < C; ++o) w.at(o, o, 0, 0) = 1.0f;
  std::vector<float> b(C, 0.0f);
  auto out = conv2d(in, spec, w, vspan(b));
  CHECK(bit_equal(out, in));
}

TEST_CASE("conv2d all-zero weight gives per-channel bias") {
  Rng rng(2);
  auto in = random_tensor<float>(rng, 1, 3, 4, 4);
  ConvSpec spec = ConvSpec::same(2, 3, 3);
  Tensor4<float> w(2, 3, 3, 3);
  std::vector<float> b = {0.25f, -1.5f};
  auto out = conv2d(in, spec, w, vspan(b));
  for (int o = 0; o < 2; ++o)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(out.at(0, o, y, x) == b[static_cast<std::size_t>(o)]);
}

TEST_CASE("dilated 3x3 conv center tap matches a direct summation oracle") {
  // 5x5 input of 0..24, kernel of ones, d=2, pad=2
  Tensor4<float> in(1, 1, 5, 5);
  for (int k = 0; k < 25; ++k) in.data[static_cast<std::size_t>(k)] = static_cast<float>(k);
  ConvSpec spec = ConvSpec::same(1, 1, 3, 2);
  Tensor4<float> w(1, 1, 3, 3, 1.0f);
  std::vector<float> b = {0.0f};
  auto out = conv2d(in, spec, w, vspan(b));

  // direct nested-loop oracle over all taps at stride-2 offsets
  float want = 0.0f;
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) {
      const int sy = 2 + 2 * ky - 2, sx = 2 + 2 * kx - 2;
      if (sy >= 0 && sy < 5 && sx >= 0 && sx < 5) want += in.at(0, 0, sy, sx);
    }
  CHECK(out.at(0, 0, 2, 2) == doctest::Approx(want));
  CHECK(want == doctest::Approx(108.0f));  // all 9 taps in range: sum of 4*k grid
}

TEST_CASE("conv2d shape errors name the offending axis") {
  Tensor4<float> in(1, 3, 4, 4);
  ConvSpec spec = ConvSpec::same(2, 5, 3);
  Tensor4<float> w(2, 5, 3, 3);
  std::vector<float> b(2, 0.0f);
  CHECK_THROWS_WITH_AS(conv2d(in, spec, w, vspan(b)),
                       doctest::Contains("channel axis"), ShapeError);
  ConvSpec spec2 = ConvSpec::same(2, 3, 3);
  CHECK_THROWS_AS(conv2d(in, spec2, w, vspan(b)), ShapeError);  // weight mismatch
}

TEST_CASE("conv2d_vjp trivial cases") {
  Rng rng(3);
  const int C = 4;
  auto in = random_tensor<float>(rng, 1, C, 5, 5);
  ConvSpec spec = ConvSpec::same(C, C, 1);
  Tensor4<float> w(C, C, 1, 1);
  for (int o = 0; o < C; ++o) w.at(o, o, 0, 0) = 1.0f;

  SUBCASE("zero upstream zeroes every gradient") {
    Tensor4<float> up(1, C, 5, 5);
    auto g = conv2d_vjp(in, spec, w, up);
    for (float v : g.input.data) CHECK(v == 0.0f);
    for (float v : g.weight.data) CHECK(v == 0.0f);
    for (float v : g.bias) CHECK(v == 0.0f);
  }
  SUBCASE("identity kernel passes upstream through bit-exactly") {
    auto up = random_tensor<float>(rng, 1, C, 5, 5);
    auto g = conv2d_vjp(in, spec, w, up);
    CHECK(bit_equal(g.input, up));
  }
}

TEST_CASE("conv2d_vjp matches central finite differences (64-bit mode)") {
  Rng rng(4);
  auto in = random_tensor<double>(rng, 2, 3, 6, 6);
  ConvSpec spec = ConvSpec::same(4, 3, 3, 2);
  auto w = random_tensor<double>(rng, 4, 3, 3, 3);
  auto b = random_vec<double>(rng, 4);
  auto up = random_tensor<double>(rng, 2, 4, 6, 6);

  auto g = conv2d_vjp(in, spec, w, up);
  const double h = 1e-3;
  auto objective = [&]() { return dot(conv2d(in, spec, w, vspan(b)), up); };

  for (std::size_t k = 0; k < in.data.size(); k += 7) {
    const double save = in.data[k];
    in.data[k] = save + h;
    const double fp = objective();
    in.data[k] = save - h;
    const double fm = objective();
    in.data[k] = save;
    CHECK(grad_close(g.input.data[k], (fp - fm) / (2 * h), 1e-4));
  }
  for (std::size_t k = 0; k < w.data.size(); k += 5) {
    const double save = w.data[k];
    w.data[k] = save + h;
    const double fp = objective();
    w.data[k] = save - h;
    const double fm = objective();
    w.data[k] = save;
    CHECK(grad_close(g.weight.data[k], (fp - fm) / (2 * h), 1e-4));
  }
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double save = b[k];
    b[k] = save + h;
    const double fp = objective();
    b[k] = save - h;
    const double fm = objective();
    b[k] = save;
    CHECK(grad_close(g.bias[k], (fp - fm) / (2 * h), 1e-4));
  }
}

TEST_CASE("conv2d same-padding preserves spatial dims for all used geometries") {
  Rng rng(5);
  for (int kh : {1, 3}) {
    for (int d : {1, 2}) {
      for (int h : {1, 2, 5, 9}) {
        auto in = random_tensor<float>(rng, 1, 2, h, h + 1);
        ConvSpec spec = ConvSpec::same(3, 2, kh, d);
        auto w = random_tensor<float>(rng, 3, 2, kh, kh);
        auto b = random_vec<float>(rng, 3);
        auto out = conv2d(in, spec, w, vspan(b));
        CHECK(out.h == in.h);
        CHECK(out.w == in.w);
        CHECK(out.c == 3);
      }
    }
  }
}

TEST_CASE("conv2d is linear within 4-ulp accumulation tolerance") {
  Rng rng(6);
  auto x = random_tensor<float>(rng, 1, 3, 6, 6);
  auto y = random_tensor<float>(rng, 1, 3, 6, 6);
  ConvSpec spec = ConvSpec::same(4, 3, 3, 2);
  auto w = random_tensor<float>(rng, 4, 3, 3, 3);
  std::vector<float> b(4, 0.0f);
  const float alpha = 0.7f, beta = -1.3f;

  Tensor4<float> mix(1, 3, 6, 6);
  for (std::size_t k = 0; k < mix.data.size(); ++k)
    mix.data[k] = alpha * x.data[k] + beta * y.data[k];

  auto lhs = conv2d(mix, spec, w, vspan(b));
  auto cx = conv2d(x, spec, w, vspan(b));
  auto cy = conv2d(y, spec, w, vspan(b));

  // tolerance scales with the absolute accumulation magnitude
  Tensor4<float> absw(4, 3, 3, 3);
  for (std::size_t k = 0; k < absw.data.size(); ++k) absw.data[k] = std::fabs(w.data[k]);
  Tensor4<float> absx(1, 3, 6, 6), absy(1, 3, 6, 6);
  for (std::size_t k = 0; k < absx.data.size(); ++k) {
    absx.data[k] = std::fabs(x.data[k]);
    absy.data[k] = std::fabs(y.data[k]);
  }
  auto ax = conv2d(absx, spec, absw, vspan(b));
  auto ay = conv2d(absy, spec, absw, vspan(b));

  const float eps = std::numeric_limits<float>::epsilon();
  for (std::size_t k = 0; k < lhs.data.size(); ++k) {
    const float rhs = alpha * cx.data[k] + beta * cy.data[k];
    const float budget =
        4.0f * eps * (std::fabs(alpha) * ax.data[k] + std::fabs(beta) * ay.data[k]);
    CHECK(std::fabs(lhs.data[k] - rhs) <= budget);
  }
}

TEST_CASE("leaky_relu forward and vjp follow the piecewise definition") {
  Tensor4<float> x(1, 1, 1, 3);
  x.data = {2.0f, -1.0f, 0.0f};
  auto y = leaky_relu(x, 0.2f);
  CHECK(y.data[0] == 2.0f);
  CHECK(y.data[1] == doctest::Approx(-0.2f));
  CHECK(y.data[2] == 0.0f);

  Tensor4<float> xv(1, 1, 1, 2);
  xv.data = {-3.0f, 3.0f};
  Tensor4<float> up(1, 1, 1, 2);
  up.data = {1.7f, 1.7f};
  auto g = leaky_relu_vjp(xv, 0.2f, up);
  CHECK(g.data[0] == doctest::Approx(1.7f * 0.2f));
  CHECK(g.data[1] == doctest::Approx(1.7f));
}

TEST_CASE("sigmoid values, saturation and derivative") {
  Tensor4<float> x(1, 1, 1, 3);
  x.data = {0.0f, 40.0f, -40.0f};
  auto y = sigmoid(x);
  CHECK(y.data[0] == 0.5f);
  CHECK(y.data[1] == 1.0f);  // saturates cleanly, no overflow
  CHECK(y.data[2] >= 0.0f);
  CHECK(y.data[2] < 1e-15f);
  for (float v : y.data) CHECK(std::isfinite(v));

  Tensor4<float> up(1, 1, 1, 3, 1.0f);
  auto g = sigmoid_vjp(y, up);
  CHECK(g.data[0] == doctest::Approx(0.25f));
}

TEST_CASE("global_avg_pool examples and vjp spread") {
  SUBCASE("constant channel pools to the constant") {
    Tensor4<float> x(1, 2, 3, 3, 0.75f);
    auto z = global_avg_pool(x);
    CHECK(z.at(0, 0, 0, 0) == doctest::Approx(0.75f));
  }
  SUBCASE("2x2 channel 0,1,2,3 pools to 1.5") {
    Tensor4<float> x(1, 1, 2, 2);
    x.data = {0, 1, 2, 3};
    CHECK(global_avg_pool(x).data[0] == doctest::Approx(1.5f));
  }
  SUBCASE("vjp spreads g/(H*W) to every position") {
    Tensor4<float> up(1, 1, 1, 1);
    up.data = {6.0f};
    auto g = global_avg_pool_vjp(2, 3, up);
    for (float v : g.data) CHECK(v == doctest::Approx(1.0f));
  }
  SUBCASE("empty spatial extent is an error") {
    Tensor4<float> x(1, 1, 0, 3);
    CHECK_THROWS_AS(global_avg_pool(x), ShapeError);
  }
}

TEST_CASE("pixel_shuffle definition, round trip and bijection") {
  SUBCASE("r=1 is the identity") {
    Rng rng(7);
    auto x = random_tensor<float>(rng, 2, 3, 4, 5);
    CHECK(bit_equal(pixel_shuffle(x, 1), x));
  }
  SUBCASE("r=2 rearranges (1,4,1,1) to a 2x2 block") {
    Tensor4<float> x(1, 4, 1, 1);
    x.data = {10, 20, 30, 40};
    auto y = pixel_shuffle(x, 2);
    CHECK(y.c == 1);
    CHECK(y.h == 2);
    CHECK(y.w == 2);
    CHECK(y.data == std::vector<float>{10, 20, 30, 40});
  }
  SUBCASE("unshuffle(shuffle(x)) is the identity for r in {2,3}") {
    Rng rng(8);
    for (int r : {2, 3}) {
      auto x = random_tensor<float>(rng, 2, 2 * r * r, 3, 4);
      CHECK(bit_equal(pixel_unshuffle(pixel_shuffle(x, r), r), x));
    }
  }
  SUBCASE("multiset of values is preserved") {
    Rng rng(9);
    auto x = random_tensor<float>(rng, 1, 8, 3, 3);
    auto y = pixel_shuffle(x, 2);
    auto a = x.data;
    auto b = y.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  SUBCASE("bad channel count is an error") {
    Tensor4<float> x(1, 6, 2, 2);
    CHECK_THROWS_AS(pixel_shuffle(x, 2), ShapeError);
  }
}

TEST_CASE("concat_channels ordering and vjp split") {
  Rng rng(10);
  SUBCASE("single input passes through") {
    auto x = random_tensor<float>(rng, 1, 3, 2, 2);
    CHECK(bit_equal(concat_channels<float>({&x}), x));
  }
  SUBCASE("(1,2)+(1,3) stacks to (1,5) preserving order") {
    auto a = random_tensor<float>(rng, 1, 2, 1, 1);
    auto b = random_tensor<float>(rng, 1, 3, 1, 1);
    auto y = concat_channels(a, b);
    CHECK(y.c == 5);
    CHECK(y.data[0] == a.data[0]);
    CHECK(y.data[1] == a.data[1]);
    CHECK(y.data[2] == b.data[0]);
    CHECK(y.data[4] == b.data[2]);
  }
  SUBCASE("split is the exact inverse partition") {
    auto a = random_tensor<float>(rng, 2, 2, 3, 3);
    auto b = random_tensor<float>(rng, 2, 4, 3, 3);
    auto y = concat_channels(a, b);
    auto parts = split_channels(y, {2, 4});
    CHECK(bit_equal(parts[0], a));
    CHECK(bit_equal(parts[1], b));
  }
  SUBCASE("spatial mismatch is an error") {
    Tensor4<float> a(1, 2, 3, 3), b(1, 2, 4, 3);
    CHECK_THROWS_AS(concat_channels(a, b), ShapeError);
  }
}

TEST_CASE("add and mul_broadcast") {
  Rng rng(11);
  auto x = random_tensor<float>(rng, 2, 3, 4, 4);

  SUBCASE("gate of ones is the identity") {
    Tensor4<float> gate(2, 3, 1, 1, 1.0f);
    CHECK(bit_equal(mul_broadcast(x, gate), x));
  }
  SUBCASE("gate of 0.5 halves every element") {
    Tensor4<float> gate(2, 3, 1, 1, 0.5f);
    auto y = mul_broadcast(x, gate);
    for (std::size_t k = 0; k < x.data.size(); ++k)
      CHECK(y.data[k] == doctest::Approx(0.5f * x.data[k]));
  }
  SUBCASE("add requires identical dims") {
    Tensor4<float> y(2, 3, 4, 5);
    CHECK_THROWS_AS(add(x, y), ShapeError);
  }
  SUBCASE("mul_broadcast gate gradient matches finite differences") {
    Rng r2(12);
    auto xd = random_tensor<double>(r2, 1, 3, 4, 4);
    auto gate = random_tensor<double>(r2, 1, 3, 1, 1);
    auto up = random_tensor<double>(r2, 1, 3, 4, 4);
    auto g = mul_broadcast_vjp(xd, gate, up);
    const double h = 1e-3;
    for (std::size_t k = 0; k < gate.data.size(); ++k) {
      const double save = gate.data[k];
      gate.data[k] = save + h;
      const double fp = dot(mul_broadcast(xd, gate), up);
      gate.data[k] = save - h;
      const double fm = dot(mul_broadcast(xd, gate), up);
      gate.data[k] = save;
      CHECK(grad_close(g.gate.data[k], (fp - fm) / (2 * h), 1e-4));
    }
    // and the x gradient
    for (std::size_t k = 0; k < xd.data.size(); k += 5) {
      const double save = xd.data[k];
      xd.data[k] = save + h;
      const double fp = dot(mul_broadcast(xd, gate), up);
      xd.data[k] = save - h;
      const double fm = dot(mul_broadcast(xd, gate), up);
      xd.data[k] = save;
      CHECK(grad_close(g.x.data[k], (fp - fm) / (2 * h), 1e-4));
    }
  }
}

TEST_CASE("every elementwise vjp matches finite differences on random input") {
  Rng rng(13);
  const double h = 1e-3;

  SUBCASE("leaky_relu") {
    auto x = random_tensor<double>(rng, 1, 2, 4, 4);
    auto up = random_tensor<double>(rng, 1, 2, 4, 4);
    auto g = leaky_relu_vjp(x, 0.2, up);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      if (std::fabs(x.data[k]) < 2 * h) continue;  // kink
      const double save = x.data[k];
      x.data[k] = save + h;
      const double fp = dot(leaky_relu(x, 0.2), up);
      x.data[k] = save - h;
      const double fm = dot(leaky_relu(x, 0.2), up);
      x.data[k] = save;
      CHECK(grad_close(g.data[k], (fp - fm) / (2 * h), 1e-4));
    }
  }
  SUBCASE("sigmoid") {
    auto x = random_tensor<double>(rng, 1, 2, 4, 4);
    auto up = random_tensor<double>(rng, 1, 2, 4, 4);
    auto y = sigmoid(x);
    auto g = sigmoid_vjp(y, up);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      const double save = x.data[k];
      x.data[k] = save + h;
      const double fp = dot(sigmoid(x), up);
      x.data[k] = save - h;
      const double fm = dot(sigmoid(x), up);
      x.data[k] = save;
      CHECK(grad_close(g.data[k], (fp - fm) / (2 * h), 1e-4));
    }
  }
  SUBCASE("global_avg_pool") {
    auto x = random_tensor<double>(rng, 1, 2, 3, 4);
    auto up = random_tensor<double>(rng, 1, 2, 1, 1);
    auto g = global_avg_pool_vjp(3, 4, up);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      const double save = x.data[k];
      x.data[k] = save + h;
      const double fp = dot(global_avg_pool(x), up);
      x.data[k] = save - h;
      const double fm = dot(global_avg_pool(x), up);
      x.data[k] = save;
      CHECK(grad_close(g.data[k], (fp - fm) / (2 * h), 1e-4));
    }
  }
}

TEST_CASE("parallel and serial execution are bit-identical") {
  Rng rng(14);
  const int dflt = max_threads();
  auto in = random_tensor<float>(rng, 2, 4, 9, 11);
  ConvSpec spec = ConvSpec::same(6, 4, 3, 2);
  auto w = random_tensor<float>(rng, 6, 4, 3, 3);
  auto b = random_vec<float>(rng, 6);
  auto up = random_tensor<float>(rng, 2, 6, 9, 11);

  set_num_threads(4);
  auto out4 = conv2d(in, spec, w, vspan(b));
  auto g4 = conv2d_vjp(in, spec, w, up);
  auto lr4 = leaky_relu(in, 0.2f);
  auto gp4 = global_avg_pool(in);

  set_num_threads(1);
  auto out1 = conv2d(in, spec, w, vspan(b));
  auto g1 = conv2d_vjp(in, spec, w, up);
  auto lr1 = leaky_relu(in, 0.2f);
  auto gp1 = global_avg_pool(in);
  set_num_threads(dflt);

  CHECK(bit_equal(out1, out4));
  CHECK(bit_equal(g1.input, g4.input));
  CHECK(bit_equal(g1.weight, g4.weight));
  CHECK(g1.bias == g4.bias);
  CHECK(bit_equal(lr1, lr4));
  CHECK(bit_equal(gp1, gp4));

  // and the production path stays bit-compatible with the serial reference
  auto rout = ref::conv2d(in, spec, w, vspan(b));
  CHECK(bit_equal(out1, rout));
  auto rgp = ref::global_avg_pool(in);
  CHECK(bit_equal(gp1, rgp));
  auto x = random_tensor<float>(rng, 1, 8, 3, 3);
  CHECK(bit_equal(pixel_shuffle(x, 2), ref::pixel_shuffle(x, 2)));
}
