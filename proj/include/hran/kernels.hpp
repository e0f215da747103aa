#pragma once

#include <span>
#include <vector>

#include "hran/tensor.hpp"

// Primitive differentiable kernels. Each kernel is a pure function over
// immutable inputs; the production versions parallelize across output
// elements but every output element is summed by one task in fixed
// (i, ky, kx) order, so results are bit-identical for any thread count.
// hran::ref holds the serial reference implementations kept for testing
// and for the kernel benchmark.

namespace hran {

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weight;
  std::vector<T> bias;
};

template <typename T>
struct MulBroadcastGrads {
  Tensor4<T> x;
  Tensor4<T> gate;
};

// Throws ShapeError naming the offending axis on any mismatch.
void check_conv_args(const ConvSpec& spec, int in_c, const std::array<int, 4>& wdims,
                     std::size_t bias_len);

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                  std::span<const T> bias);

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                        const Tensor4<T>& upstream);

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope);

// Needs the forward input (the derivative is picked by the sign of x).
template <typename T>
Tensor4<T> leaky_relu_vjp(const Tensor4<T>& x, T slope, const Tensor4<T>& upstream);

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x);

// Takes the forward *output* y: d/dx = y*(1-y).
template <typename T>
Tensor4<T> sigmoid_vjp(const Tensor4<T>& y, const Tensor4<T>& upstream);

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x);

template <typename T>
Tensor4<T> global_avg_pool_vjp(int h, int w, const Tensor4<T>& upstream);

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int r);

// Inverse rearrangement; also the vjp of pixel_shuffle.
template <typename T>
Tensor4<T> pixel_unshuffle(const Tensor4<T>& x, int r);

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& xs);

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);

// vjp of concat: splits upstream back into the original channel ranges.
template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& x, const std::vector<int>& sizes);

template <typename T>
Tensor4<T> add(const Tensor4<T>& x, const Tensor4<T>& y);

// In-place accumulate: x += y. Same shape contract as add.
template <typename T>
void add_inplace(Tensor4<T>& x, const Tensor4<T>& y);

// Per-channel scaling: gate has dims (n, c, 1, 1) and broadcasts over h, w.
template <typename T>
Tensor4<T> mul_broadcast(const Tensor4<T>& x, const Tensor4<T>& gate);

template <typename T>
MulBroadcastGrads<T> mul_broadcast_vjp(const Tensor4<T>& x, const Tensor4<T>& gate,
                                       const Tensor4<T>& upstream);

namespace ref {

// Serial reference path: direct nested loops straight off the definitions.
// Production kernels must stay bit-compatible with these on the test suite.

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                  std::span<const T> bias);

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& input, const ConvSpec& spec, const Tensor4<T>& weight,
                        const Tensor4<T>& upstream);

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x);

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int r);

}  // namespace ref

}  // namespace hran
