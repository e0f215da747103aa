#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <utility>

#include "hran/data.hpp"
#include "hran/model.hpp"

namespace hran {

struct TrainConfig {
  int batch = 16;
  int patch = 64;  // LR patch side
  float lr0 = 1e-4f;
  std::int64_t halve_every = 200000;
  std::int64_t max_iters = 0;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 10000;
  std::int64_t log_every = 100;
  int loss_window = 50;

  void validate() const;
};

// Mean absolute error plus its gradient: sign(pred-target)/N, sign(0)=0.
template <typename T>
std::pair<T, Tensor4<T>> l1_loss(const Tensor4<T>& pred, const Tensor4<T>& target);

// Step decay: lr0 * 0.5^floor(t / halve_every) with t counted from 0.
float lr_at(std::int64_t t, float lr0, std::int64_t halve_every);

// Standard Adam with bias correction; `step` is 1-based. Grads are zeroed
// afterward and the store version is bumped. A NaN gradient aborts the whole
// step (no parameter touched) naming the parameter.
void adam_step(ParamStore<float>& store, std::int64_t step, float lr, const TrainConfig& tc);

struct TrainResult {
  std::int64_t iterations = 0;
  double first_loss = 0.0;     // loss of the first iteration actually run
  double final_window = 0.0;   // mean of the trailing loss window
  std::string final_checkpoint;
};

// sample -> forward -> L1 -> backward -> adam, with periodic checkpoints
// (atomic) and a `iter<TAB>lr<TAB>loss` plain-text log. Resumable from a
// training checkpoint with bit-identical continuation.
TrainResult train_loop(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& ds,
                       const std::string& out_dir, const std::string& resume_path = "");

}  // namespace hran
