// Timing comparison between the serial reference kernels and the
// OpenMP-parallel production kernels, plus a whole-model forward at several
// thread caps. Outputs are checked bit-identical while timing.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>

#include "hran/kernels.hpp"
#include "hran/model.hpp"
#include "hran/rng.hpp"
#include "hran/threading.hpp"

using namespace hran;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt < best) best = dt;
  }
  return best;
}

Tensor4<float> random_tensor(Rng& rng, int n, int c, int h, int w) {
  Tensor4<float> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<float>(2.0 * rng.next_double() - 1.0);
  return t;
}

void row(const char* name, double serial, double parallel, bool identical) {
  std::printf("%-34s %10.2f ms %10.2f ms %8.2fx   %s\n", name, serial * 1e3, parallel * 1e3,
              serial / parallel, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 3;
  const int threads = max_threads();
  std::printf("workers: %d (serial column runs the reference implementation)\n\n", threads);
  std::printf("%-34s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  Rng rng(1);

  {  // conv2d, the dominant kernel, at a training-like shape
    auto in = random_tensor(rng, 4, 32, 48, 48);
    ConvSpec spec = ConvSpec::same(32, 32, 3, 2);
    auto w = random_tensor(rng, 32, 32, 3, 3);
    std::vector<float> b(32, 0.1f);
    std::span<const float> bs(b.data(), b.size());
    Tensor4<float> a, o;
    const double ts = time_best_of(reps, [&] { a = ref::conv2d(in, spec, w, bs); });
    const double tp = time_best_of(reps, [&] { o = conv2d(in, spec, w, bs); });
    row("conv2d 4x32x48x48 k3 d2", ts, tp, a.data == o.data);
  }

  {  // conv2d_vjp
    auto in = random_tensor(rng, 2, 32, 48, 48);
    ConvSpec spec = ConvSpec::same(32, 32, 3, 1);
    auto w = random_tensor(rng, 32, 32, 3, 3);
    auto up = random_tensor(rng, 2, 32, 48, 48);
    ConvGrads<float> a, o;
    const double ts = time_best_of(reps, [&] { a = ref::conv2d_vjp(in, spec, w, up); });
    const double tp = time_best_of(reps, [&] { o = conv2d_vjp(in, spec, w, up); });
    // the reference vjp accumulates in scatter order; values agree to
    // rounding, compare the weight grads loosely and the shapes strictly
    bool close = a.input.same_dims(o.input);
    for (std::size_t k = 0; close && k < a.weight.data.size(); ++k) {
      close = std::fabs(a.weight.data[k] - o.weight.data[k]) <=
              1e-3f * (1.0f + std::fabs(a.weight.data[k]));
    }
    std::printf("%-34s %10.2f ms %10.2f ms %8.2fx   %s\n", "conv2d_vjp 2x32x48x48 k3", ts * 1e3,
                tp * 1e3, ts / tp, close ? "agrees" : "MISMATCH");
  }

  {  // global_avg_pool
    auto in = random_tensor(rng, 16, 64, 64, 64);
    Tensor4<float> a, o;
    const double ts = time_best_of(reps, [&] { a = ref::global_avg_pool(in); });
    const double tp = time_best_of(reps, [&] { o = global_avg_pool(in); });
    row("global_avg_pool 16x64x64x64", ts, tp, a.data == o.data);
  }

  {  // pixel_shuffle
    auto in = random_tensor(rng, 4, 64, 64, 64);
    Tensor4<float> a, o;
    const double ts = time_best_of(reps, [&] { a = ref::pixel_shuffle(in, 2); });
    const double tp = time_best_of(reps, [&] { o = pixel_shuffle(in, 2); });
    row("pixel_shuffle 4x64x64x64 r2", ts, tp, a.data == o.data);
  }

  {  // whole-model forward, thread cap 1 vs max
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.channels = 16;
    cfg.rg_count = 2;
    cfg.hrab_per_rg = 2;
    auto store = init_params<float>(cfg, 7);
    auto x = random_tensor(rng, 1, 3, 64, 64);
    Tensor4<float> y1, yn;
    set_num_threads(1);
    const double t1 = time_best_of(reps, [&] { y1 = hran_forward(x, store, cfg); });
    set_num_threads(threads);
    const double tn = time_best_of(reps, [&] { yn = hran_forward(x, store, cfg); });
    std::printf("\nhran_forward C=16 R=2 B=2 on 64x64: 1 thread %.2f ms, %d threads %.2f ms "
                "(%.2fx), outputs %s\n",
                t1 * 1e3, threads, tn * 1e3, t1 / tn,
                y1.data == yn.data ? "bit-identical" : "MISMATCH");
  }
  return 0;
}
