#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hran/kernels.hpp"
#include "hran/tensor.hpp"

namespace hran {

enum class FusionMode { BFF = 0, HFF = 1 };

struct ModelConfig {
  int scale = 4;
  int channels = 64;
  int rg_count = 4;
  int hrab_per_rg = 8;
  int dilation1 = 1;
  int dilation2 = 2;
  int ca_reduction = 4;
  float leaky_slope = 0.2f;
  FusionMode fusion = FusionMode::BFF;
  int in_channels = 3;
  int out_channels = 3;

  void validate() const;  // throws ConfigError

  bool same_architecture(const ModelConfig& o) const {
    return scale == o.scale && channels == o.channels && rg_count == o.rg_count &&
           hrab_per_rg == o.hrab_per_rg && ca_reduction == o.ca_reduction &&
           fusion == o.fusion && leaky_slope == o.leaky_slope;
  }

  static ModelConfig tiny(int s = 2) {
    ModelConfig c;
    c.scale = s;
    c.channels = 4;
    c.rg_count = 2;
    c.hrab_per_rg = 1;
    c.ca_reduction = 2;
    return c;
  }
};

// One learnable tensor with its gradient accumulator and Adam moments.
// Biases are stored as (len,1,1,1) tensors; `shape` keeps the logical
// (serialized) rank.
template <typename T>
struct Param {
  std::string name;
  std::vector<std::uint32_t> shape;
  GradPair<T> pv;
  Tensor4<T> m, v;

  Tensor4<T>& value() { return pv.value; }
  const Tensor4<T>& value() const { return pv.value; }
  Tensor4<T>& grad() { return pv.grad; }
  const Tensor4<T>& grad() const { return pv.grad; }
  std::int64_t count() const { return pv.value.size(); }
};

// Named parameters in fixed construction order. Single-writer: forward /
// backward / update must be externally serialized; concurrent forward-only
// use over a const store is fine.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, int n, int c, int h, int w,
                std::vector<std::uint32_t> logical_shape);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Param<T>& at(const std::string& name);
  const Param<T>& at(const std::string& name) const;

  std::size_t count() const { return params_.size(); }
  Param<T>& param(std::size_t i) { return params_[i]; }
  const Param<T>& param(std::size_t i) const { return params_[i]; }

  std::int64_t scalar_count() const;
  void zero_grads();

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t version_ = 0;
};

// Every conv layer of the network: name prefix plus geometry, in store
// construction order. Single source of truth for building, counting,
// checkpoint validation and the CLI breakdown.
struct LayerDef {
  std::string prefix;
  ConvSpec spec;
};
std::vector<LayerDef> model_layers(const ModelConfig& cfg);

// ---- per-block activation caches (saved forward state needed by backward)

template <typename T>
struct CaCache {
  int h = 0, w = 0;
  Tensor4<T> pooled;    // gap output, input of the down conv
  Tensor4<T> pre_act;   // down conv output, pre leaky
  Tensor4<T> mid;       // leaky output, input of the up conv
  Tensor4<T> gate;      // sigmoid output
};

template <typename T>
struct SaCache {
  Tensor4<T> pre1_d1;   // stage-1 d1 conv output (pre leaky)
  Tensor4<T> pre1_sum;  // stage-1 d2 conv output + s1 (pre leaky)
  Tensor4<T> cat1;      // [s1, s2], input of both stage-2 convs
  Tensor4<T> pre2_d1;
  Tensor4<T> pre2_sum;
  Tensor4<T> cat2;      // input of the 1x1 fuse conv
};

template <typename T>
struct HrabCache {
  Tensor4<T> input;
  SaCache<T> sa;
  CaCache<T> ca;
  Tensor4<T> sa_out;
};

template <typename T>
struct RgCache {
  Tensor4<T> input;
  std::vector<HrabCache<T>> hrabs;
  Tensor4<T> tail_input;
};

template <typename T>
struct FusionCache {
  std::vector<Tensor4<T>> merge_inputs;  // concat fed to each merge conv, forward order
  Tensor4<T> final_input;
};

template <typename T>
struct ReconCache {
  Tensor4<T> input;
  Tensor4<T> shuffled;
};

template <typename T>
struct HranCache {
  Tensor4<T> input;
  Tensor4<T> f0;
  std::vector<RgCache<T>> rgs;
  std::vector<Tensor4<T>> rg_outputs;
  FusionCache<T> fusion;
  ReconCache<T> recon;
  std::uint64_t store_version = 0;
  bool consumed = true;
};

// ---- block forwards / backwards
// Backward functions accumulate into store grads and return the gradient
// with respect to the block input.

template <typename T>
Tensor4<T> channel_attention_forward(const Tensor4<T>& f, const ParamStore<T>& store,
                                     const ModelConfig& cfg, const std::string& prefix,
                                     CaCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> channel_attention_backward(const Tensor4<T>& d_gate, const CaCache<T>& cache,
                                      ParamStore<T>& store, const ModelConfig& cfg,
                                      const std::string& prefix);

template <typename T>
Tensor4<T> spatial_attention_forward(const Tensor4<T>& f, const ParamStore<T>& store,
                                     const ModelConfig& cfg, const std::string& prefix,
                                     SaCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> spatial_attention_backward(const Tensor4<T>& d_out, const Tensor4<T>& f,
                                      const SaCache<T>& cache, ParamStore<T>& store,
                                      const ModelConfig& cfg, const std::string& prefix);

template <typename T>
Tensor4<T> hrab_forward(const Tensor4<T>& f, const ParamStore<T>& store, const ModelConfig& cfg,
                        const std::string& prefix, HrabCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> hrab_backward(const Tensor4<T>& d_out, const HrabCache<T>& cache, ParamStore<T>& store,
                         const ModelConfig& cfg, const std::string& prefix);

template <typename T>
Tensor4<T> residual_group_forward(const Tensor4<T>& f, const ParamStore<T>& store,
                                  const ModelConfig& cfg, int rg_index,
                                  RgCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> residual_group_backward(const Tensor4<T>& d_out, const RgCache<T>& cache,
                                   ParamStore<T>& store, const ModelConfig& cfg, int rg_index);

template <typename T>
Tensor4<T> bff_forward(const std::vector<Tensor4<T>>& rg_outputs, const ParamStore<T>& store,
                       const ModelConfig& cfg, FusionCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> hff_forward(const std::vector<Tensor4<T>>& rg_outputs, const ParamStore<T>& store,
                       const ModelConfig& cfg, FusionCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> fusion_forward(const std::vector<Tensor4<T>>& rg_outputs, const ParamStore<T>& store,
                          const ModelConfig& cfg, FusionCache<T>* cache = nullptr);
template <typename T>
std::vector<Tensor4<T>> fusion_backward(const Tensor4<T>& d_out, const FusionCache<T>& cache,
                                        ParamStore<T>& store, const ModelConfig& cfg);

template <typename T>
Tensor4<T> reconstruct(const Tensor4<T>& f, const ParamStore<T>& store, const ModelConfig& cfg,
                       ReconCache<T>* cache = nullptr);
template <typename T>
Tensor4<T> reconstruct_backward(const Tensor4<T>& d_out, const ReconCache<T>& cache,
                                ParamStore<T>& store, const ModelConfig& cfg);

// ---- whole network

template <typename T>
Tensor4<T> hran_forward(const Tensor4<T>& lr, const ParamStore<T>& store, const ModelConfig& cfg,
                        HranCache<T>* cache = nullptr);

// Zeroes all grads, then fills them with d(sum upstream . output)/d(theta).
// The cache is consumed; reuse or a stale store version is an error.
template <typename T>
void hran_backward(const Tensor4<T>& upstream, HranCache<T>& cache, ParamStore<T>& store,
                   const ModelConfig& cfg);

// ---- parameter management

template <typename T>
ParamStore<T> build_store(const ModelConfig& cfg);  // zero-filled

// He fan-in init adjusted for the LeakyReLU gain,
// std = sqrt(2 / ((1 + slope^2) * fan_in)); biases zero.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

std::int64_t param_count(const ModelConfig& cfg);

struct ParamGroup {
  std::string name;
  std::int64_t count;
};
std::vector<ParamGroup> param_breakdown(const ModelConfig& cfg);

// ---- checkpoint serialization (custom little-endian binary)

struct TrainSection {
  std::uint64_t iteration = 0;
  std::uint64_t rng_state = 0;
};

// Atomic: writes a temp file in the target directory, then renames.
// With `train` present the Adam moments and the train counters are
// appended after the model tensors.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamStore<float>& store, const TrainSection* train = nullptr);

struct Checkpoint {
  ModelConfig cfg;
  ParamStore<float> store;
  bool has_train = false;
  TrainSection train;
};

// Rejects wrong magic/version, and rejects a config mismatch against
// `expected` when given.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace hran
