#include "hran/model.hpp"

#include <cmath>
#include <span>
#include <stdexcept>

#include "hran/rng.hpp"

namespace hran {

namespace {

bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

// conv geometry per layer role
ConvSpec head1_spec(const ModelConfig& c) { return ConvSpec::same(c.channels, c.in_channels, 3); }
ConvSpec head2_spec(const ModelConfig& c) { return ConvSpec::same(c.channels, c.channels, 3); }
ConvSpec sa_stage1_spec(const ModelConfig& c, int d) {
  return ConvSpec::same(c.channels, c.channels, 3, d);
}
ConvSpec sa_stage2_spec(const ModelConfig& c, int d) {
  return ConvSpec::same(c.channels, 2 * c.channels, 3, d);
}
ConvSpec sa_fuse_spec(const ModelConfig& c) { return ConvSpec::same(c.channels, 2 * c.channels, 1); }
ConvSpec ca_down_spec(const ModelConfig& c) {
  return ConvSpec::same(c.channels / c.ca_reduction, c.channels, 1);
}
ConvSpec ca_up_spec(const ModelConfig& c) {
  return ConvSpec::same(c.channels, c.channels / c.ca_reduction, 1);
}
ConvSpec rg_tail_spec(const ModelConfig& c) { return ConvSpec::same(c.channels, c.channels, 3); }
ConvSpec bff_merge_spec(const ModelConfig& c) {
  return ConvSpec::same(c.channels, 2 * c.channels, 1);
}
ConvSpec hff_merge_spec(const ModelConfig& c) {
  return ConvSpec::same(c.channels, c.rg_count * c.channels, 1);
}
ConvSpec fuse_final_spec(const ModelConfig& c) { return ConvSpec::same(c.channels, c.channels, 1); }
ConvSpec recon_up_spec(const ModelConfig& c) {
  return ConvSpec::same(c.channels * c.scale * c.scale, c.channels, 3);
}
ConvSpec recon_out_spec(const ModelConfig& c) {
  return ConvSpec::same(c.out_channels, c.channels, 3);
}

std::string rg_prefix(int i) { return "rg." + std::to_string(i); }
std::string hrab_prefix(int i, int j) {
  return "rg." + std::to_string(i) + ".hrab." + std::to_string(j);
}

template <typename T>
std::span<const T> bias_span(const Tensor4<T>& b) {
  return std::span<const T>(b.data.data(), b.data.size());
}

template <typename T>
Tensor4<T> apply_conv(const ParamStore<T>& store, const std::string& prefix, const ConvSpec& spec,
                      const Tensor4<T>& in) {
  const auto& w = store.at(prefix + ".weight").value();
  const auto& b = store.at(prefix + ".bias").value();
  return conv2d(in, spec, w, bias_span(b));
}

// vjp through a conv layer; parameter grads accumulate into the store,
// the input grad is returned.
template <typename T>
Tensor4<T> conv_backward_acc(ParamStore<T>& store, const std::string& prefix,
                             const ConvSpec& spec, const Tensor4<T>& saved_input,
                             const Tensor4<T>& upstream) {
  auto& wp = store.at(prefix + ".weight");
  auto& bp = store.at(prefix + ".bias");
  ConvGrads<T> g = conv2d_vjp(saved_input, spec, wp.value(), upstream);
  add_inplace(wp.grad(), g.weight);
  auto& bg = bp.grad().data;
  for (std::size_t k = 0; k < bg.size(); ++k) bg[k] += g.bias[k];
  return std::move(g.input);
}

}  // namespace

void ModelConfig::validate() const {
  if (scale != 2 && scale != 3 && scale != 4 && scale != 8) {
    throw ConfigError("scale must be one of 2, 3, 4, 8; got " + std::to_string(scale));
  }
  if (channels < 1) throw ConfigError("channels must be positive");
  if (ca_reduction < 1 || channels % ca_reduction != 0) {
    throw ConfigError("channels (" + std::to_string(channels) +
                      ") must be divisible by ca_reduction (" + std::to_string(ca_reduction) +
                      ")");
  }
  if (rg_count < 1) throw ConfigError("rg_count must be >= 1");
  if (fusion == FusionMode::BFF && !is_power_of_two(rg_count)) {
    throw ConfigError("BFF fusion needs a power-of-two rg_count; got " +
                      std::to_string(rg_count));
  }
  if (hrab_per_rg < 1) throw ConfigError("hrab_per_rg must be >= 1");
  if (!(leaky_slope > 0.0f && leaky_slope < 1.0f)) {
    throw ConfigError("leaky_slope must lie in (0,1)");
  }
  if (dilation1 < 1 || dilation2 < 1) throw ConfigError("dilations must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("image channels must be >= 1");
}

std::vector<LayerDef> model_layers(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerDef> out;
  out.push_back({"head.conv1", head1_spec(cfg)});
  out.push_back({"head.conv2", head2_spec(cfg)});
  for (int i = 0; i < cfg.rg_count; ++i) {
    for (int j = 0; j < cfg.hrab_per_rg; ++j) {
      const std::string p = hrab_prefix(i, j);
      out.push_back({p + ".sa.stage1.d1", sa_stage1_spec(cfg, cfg.dilation1)});
      out.push_back({p + ".sa.stage1.d2", sa_stage1_spec(cfg, cfg.dilation2)});
      out.push_back({p + ".sa.stage2.d1", sa_stage2_spec(cfg, cfg.dilation1)});
      out.push_back({p + ".sa.stage2.d2", sa_stage2_spec(cfg, cfg.dilation2)});
      out.push_back({p + ".sa.fuse", sa_fuse_spec(cfg)});
      out.push_back({p + ".ca.down", ca_down_spec(cfg)});
      out.push_back({p + ".ca.up", ca_up_spec(cfg)});
    }
    out.push_back({rg_prefix(i) + ".tail", rg_tail_spec(cfg)});
  }
  if (cfg.fusion == FusionMode::BFF) {
    int level = 0;
    for (int width = cfg.rg_count; width > 1; width /= 2, ++level) {
      for (int k = 0; k < width / 2; ++k) {
        out.push_back({"fuse.merge." + std::to_string(level) + "." + std::to_string(k),
                       bff_merge_spec(cfg)});
      }
    }
  } else {
    out.push_back({"fuse.merge.0.0", hff_merge_spec(cfg)});
  }
  out.push_back({"fuse.final", fuse_final_spec(cfg)});
  out.push_back({"recon.up", recon_up_spec(cfg)});
  out.push_back({"recon.out", recon_out_spec(cfg)});
  return out;
}

// ---- ParamStore

template <typename T>
Param<T>& ParamStore<T>::add(const std::string& name, int n, int c, int h, int w,
                             std::vector<std::uint32_t> logical_shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Param<T> p;
  p.name = name;
  p.shape = std::move(logical_shape);
  p.pv.value = Tensor4<T>(n, c, h, w);
  p.pv.grad = Tensor4<T>(n, c, h, w);
  p.m = Tensor4<T>(n, c, h, w);
  p.v = Tensor4<T>(n, c, h, w);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

template <typename T>
Param<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter: " + name);
  return params_[it->second];
}

template <typename T>
const Param<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter: " + name);
  return params_[it->second];
}

template <typename T>
std::int64_t ParamStore<T>::scalar_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.count();
  return total;
}

template <typename T>
void ParamStore<T>::zero_grads() {
  for (auto& p : params_) p.pv.grad.fill(T(0));
}

// ---- blocks

template <typename T>
Tensor4<T> channel_attention_forward(const Tensor4<T>& f, const ParamStore<T>& store,
                                     const ModelConfig& cfg, const std::string& prefix,
                                     CaCache<T>* cache) {
  if (f.c != cfg.channels) {
    throw ShapeError("channel_attention: input channel axis is " + std::to_string(f.c) +
                     ", expected " + std::to_string(cfg.channels));
  }
  Tensor4<T> pooled = global_avg_pool(f);
  Tensor4<T> pre = apply_conv(store, prefix + ".down", ca_down_spec(cfg), pooled);
  Tensor4<T> mid = leaky_relu(pre, static_cast<T>(cfg.leaky_slope));
  Tensor4<T> pre2 = apply_conv(store, prefix + ".up", ca_up_spec(cfg), mid);
  Tensor4<T> gate = sigmoid(pre2);
  if (cache) {
    cache->h = f.h;
    cache->w = f.w;
    cache->pooled = std::move(pooled);
    cache->pre_act = std::move(pre);
    cache->mid = std::move(mid);
    cache->gate = gate;
  }
  return gate;
}

template <typename T>
Tensor4<T> channel_attention_backward(const Tensor4<T>& d_gate, const CaCache<T>& cache,
                                      ParamStore<T>& store, const ModelConfig& cfg,
                                      const std::string& prefix) {
  Tensor4<T> d_pre2 = sigmoid_vjp(cache.gate, d_gate);
  Tensor4<T> d_mid = conv_backward_acc(store, prefix + ".up", ca_up_spec(cfg), cache.mid, d_pre2);
  Tensor4<T> d_pre = leaky_relu_vjp(cache.pre_act, static_cast<T>(cfg.leaky_slope), d_mid);
  Tensor4<T> d_pooled =
      conv_backward_acc(store, prefix + ".down", ca_down_spec(cfg), cache.pooled, d_pre);
  return global_avg_pool_vjp(cache.h, cache.w, d_pooled);
}

template <typename T>
Tensor4<T> spatial_attention_forward(const Tensor4<T>& f, const ParamStore<T>& store,
                                     const ModelConfig& cfg, const std::string& prefix,
                                     SaCache<T>* cache) {
  if (f.c != cfg.channels) {
    throw ShapeError("spatial_attention: input channel axis is " + std::to_string(f.c) +
                     ", expected " + std::to_string(cfg.channels));
  }
  const T slope = static_cast<T>(cfg.leaky_slope);
  Tensor4<T> pre1_d1 = apply_conv(store, prefix + ".stage1.d1", sa_stage1_spec(cfg, cfg.dilation1), f);
  Tensor4<T> s1 = leaky_relu(pre1_d1, slope);
  Tensor4<T> pre1_sum =
      add(apply_conv(store, prefix + ".stage1.d2", sa_stage1_spec(cfg, cfg.dilation2), f), s1);
  Tensor4<T> s2 = leaky_relu(pre1_sum, slope);
  Tensor4<T> cat1 = concat_channels(s1, s2);

  Tensor4<T> pre2_d1 =
      apply_conv(store, prefix + ".stage2.d1", sa_stage2_spec(cfg, cfg.dilation1), cat1);
  Tensor4<T> s3 = leaky_relu(pre2_d1, slope);
  Tensor4<T> pre2_sum =
      add(apply_conv(store, prefix + ".stage2.d2", sa_stage2_spec(cfg, cfg.dilation2), cat1), s3);
  Tensor4<T> s4 = leaky_relu(pre2_sum, slope);
  Tensor4<T> cat2 = concat_channels(s3, s4);

  Tensor4<T> out = apply_conv(store, prefix + ".fuse", sa_fuse_spec(cfg), cat2);
  if (cache) {
    cache->pre1_d1 = std::move(pre1_d1);
    cache->pre1_sum = std::move(pre1_sum);
    cache->cat1 = std::move(cat1);
    cache->pre2_d1 = std::move(pre2_d1);
    cache->pre2_sum = std::move(pre2_sum);
    cache->cat2 = std::move(cat2);
  }
  return out;
}

template <typename T>
Tensor4<T> spatial_attention_backward(const Tensor4<T>& d_out, const Tensor4<T>& f,
                                      const SaCache<T>& cache, ParamStore<T>& store,
                                      const ModelConfig& cfg, const std::string& prefix) {
  const T slope = static_cast<T>(cfg.leaky_slope);
  const int C = cfg.channels;

  Tensor4<T> d_cat2 =
      conv_backward_acc(store, prefix + ".fuse", sa_fuse_spec(cfg), cache.cat2, d_out);
  auto d_s34 = split_channels(d_cat2, {C, C});

  Tensor4<T> d_pre2_sum = leaky_relu_vjp(cache.pre2_sum, slope, d_s34[1]);
  Tensor4<T> d_cat1 = conv_backward_acc(store, prefix + ".stage2.d2",
                                        sa_stage2_spec(cfg, cfg.dilation2), cache.cat1, d_pre2_sum);
  add_inplace(d_s34[0], d_pre2_sum);  // s3 also feeds the stage-2 sum
  Tensor4<T> d_pre2_d1 = leaky_relu_vjp(cache.pre2_d1, slope, d_s34[0]);
  add_inplace(d_cat1, conv_backward_acc(store, prefix + ".stage2.d1",
                                        sa_stage2_spec(cfg, cfg.dilation1), cache.cat1, d_pre2_d1));

  auto d_s12 = split_channels(d_cat1, {C, C});
  Tensor4<T> d_pre1_sum = leaky_relu_vjp(cache.pre1_sum, slope, d_s12[1]);
  Tensor4<T> d_f = conv_backward_acc(store, prefix + ".stage1.d2",
                                     sa_stage1_spec(cfg, cfg.dilation2), f, d_pre1_sum);
  add_inplace(d_s12[0], d_pre1_sum);
  Tensor4<T> d_pre1_d1 = leaky_relu_vjp(cache.pre1_d1, slope, d_s12[0]);
  add_inplace(d_f, conv_backward_acc(store, prefix + ".stage1.d1",
                                     sa_stage1_spec(cfg, cfg.dilation1), f, d_pre1_d1));
  return d_f;
}

template <typename T>
Tensor4<T> hrab_forward(const Tensor4<T>& f, const ParamStore<T>& store, const ModelConfig& cfg,
                        const std::string& prefix, HrabCache<T>* cache) {
  SaCache<T>* sa_cache = cache ? &cache->sa : nullptr;
  CaCache<T>* ca_cache = cache ? &cache->ca : nullptr;
  Tensor4<T> sa_out = spatial_attention_forward(f, store, cfg, prefix + ".sa", sa_cache);
  Tensor4<T> gate = channel_attention_forward(f, store, cfg, prefix + ".ca", ca_cache);
  Tensor4<T> out = add(mul_broadcast(sa_out, gate), f);
  if (cache) {
    cache->input = f;
    cache->sa_out = std::move(sa_out);
  }
  return out;
}

template <typename T>
Tensor4<T> hrab_backward(const Tensor4<T>& d_out, const HrabCache<T>& cache, ParamStore<T>& store,
                         const ModelConfig& cfg, const std::string& prefix) {
  MulBroadcastGrads<T> dm = mul_broadcast_vjp(cache.sa_out, cache.ca.gate, d_out);
  Tensor4<T> d_f =
      spatial_attention_backward(dm.x, cache.input, cache.sa, store, cfg, prefix + ".sa");
  add_inplace(d_f, channel_attention_backward(dm.gate, cache.ca, store, cfg, prefix + ".ca"));
  add_inplace(d_f, d_out);  // short skip
  return d_f;
}

template <typename T>
Tensor4<T> residual_group_forward(const Tensor4<T>& f, const ParamStore<T>& store,
                                  const ModelConfig& cfg, int rg_index, RgCache<T>* cache) {
  const std::string rp = rg_prefix(rg_index);
  if (cache) {
    cache->input = f;
    cache->hrabs.assign(static_cast<std::size_t>(cfg.hrab_per_rg), HrabCache<T>{});
  }
  Tensor4<T> x = f;
  for (int j = 0; j < cfg.hrab_per_rg; ++j) {
    HrabCache<T>* hc = cache ? &cache->hrabs[static_cast<std::size_t>(j)] : nullptr;
    x = hrab_forward(x, store, cfg, hrab_prefix(rg_index, j), hc);
  }
  if (cache) cache->tail_input = x;
  Tensor4<T> out = add(apply_conv(store, rp + ".tail", rg_tail_spec(cfg), x), f);
  return out;
}

template <typename T>
Tensor4<T> residual_group_backward(const Tensor4<T>& d_out, const RgCache<T>& cache,
                                   ParamStore<T>& store, const ModelConfig& cfg, int rg_index) {
  Tensor4<T> d_x = conv_backward_acc(store, rg_prefix(rg_index) + ".tail", rg_tail_spec(cfg),
                                     cache.tail_input, d_out);
  for (int j = cfg.hrab_per_rg - 1; j >= 0; --j) {
    d_x = hrab_backward(d_x, cache.hrabs[static_cast<std::size_t>(j)], store, cfg,
                        hrab_prefix(rg_index, j));
  }
  add_inplace(d_x, d_out);  // long skip
  return d_x;
}

template <typename T>
Tensor4<T> bff_forward(const std::vector<Tensor4<T>>& rg_outputs, const ParamStore<T>& store,
                       const ModelConfig& cfg, FusionCache<T>* cache) {
  if (static_cast<int>(rg_outputs.size()) != cfg.rg_count || !is_power_of_two(cfg.rg_count)) {
    throw ConfigError("bff_forward: needs a power-of-two number of inputs matching rg_count");
  }
  if (cache) cache->merge_inputs.clear();
  std::vector<Tensor4<T>> level = rg_outputs;
  int li = 0;
  while (level.size() > 1) {
    std::vector<Tensor4<T>> next;
    next.reserve(level.size() / 2);
    for (std::size_t k = 0; k * 2 < level.size(); ++k) {
      Tensor4<T> cat = concat_channels(level[2 * k], level[2 * k + 1]);
      const std::string name = "fuse.merge." + std::to_string(li) + "." + std::to_string(k);
      next.push_back(apply_conv(store, name, bff_merge_spec(cfg), cat));
      if (cache) cache->merge_inputs.push_back(std::move(cat));
    }
    level = std::move(next);
    ++li;
  }
  if (cache) cache->final_input = level[0];
  return apply_conv(store, "fuse.final", fuse_final_spec(cfg), level[0]);
}

template <typename T>
Tensor4<T> hff_forward(const std::vector<Tensor4<T>>& rg_outputs, const ParamStore<T>& store,
                       const ModelConfig& cfg, FusionCache<T>* cache) {
  if (static_cast<int>(rg_outputs.size()) != cfg.rg_count) {
    throw ConfigError("hff_forward: expects rg_count inputs");
  }
  std::vector<const Tensor4<T>*> ptrs;
  ptrs.reserve(rg_outputs.size());
  for (const auto& t : rg_outputs) ptrs.push_back(&t);
  Tensor4<T> cat = concat_channels(ptrs);
  Tensor4<T> mid = apply_conv(store, "fuse.merge.0.0", hff_merge_spec(cfg), cat);
  if (cache) {
    cache->merge_inputs.clear();
    cache->merge_inputs.push_back(std::move(cat));
    cache->final_input = mid;
  }
  return apply_conv(store, "fuse.final", fuse_final_spec(cfg), mid);
}

template <typename T>
Tensor4<T> fusion_forward(const std::vector<Tensor4<T>>& rg_outputs, const ParamStore<T>& store,
                          const ModelConfig& cfg, FusionCache<T>* cache) {
  return cfg.fusion == FusionMode::BFF ? bff_forward(rg_outputs, store, cfg, cache)
                                       : hff_forward(rg_outputs, store, cfg, cache);
}

template <typename T>
std::vector<Tensor4<T>> fusion_backward(const Tensor4<T>& d_out, const FusionCache<T>& cache,
                                        ParamStore<T>& store, const ModelConfig& cfg) {
  Tensor4<T> d_final_in =
      conv_backward_acc(store, "fuse.final", fuse_final_spec(cfg), cache.final_input, d_out);
  const int C = cfg.channels;
  if (cfg.fusion == FusionMode::HFF) {
    Tensor4<T> d_cat = conv_backward_acc(store, "fuse.merge.0.0", hff_merge_spec(cfg),
                                         cache.merge_inputs[0], d_final_in);
    return split_channels(d_cat, std::vector<int>(static_cast<std::size_t>(cfg.rg_count), C));
  }
  // walk the merge tree top-down; merge_inputs is in forward (bottom-up) order
  int levels = 0;
  for (int w = cfg.rg_count; w > 1; w /= 2) ++levels;
  std::vector<std::size_t> level_offset(static_cast<std::size_t>(levels), 0);
  {
    std::size_t off = 0;
    int w = cfg.rg_count;
    for (int l = 0; l < levels; ++l) {
      level_offset[static_cast<std::size_t>(l)] = off;
      off += static_cast<std::size_t>(w / 2);
      w /= 2;
    }
  }
  std::vector<Tensor4<T>> d_level;
  d_level.push_back(std::move(d_final_in));
  for (int l = levels - 1; l >= 0; --l) {
    std::vector<Tensor4<T>> d_prev;
    d_prev.reserve(d_level.size() * 2);
    for (std::size_t k = 0; k < d_level.size(); ++k) {
      const std::string name = "fuse.merge." + std::to_string(l) + "." + std::to_string(k);
      Tensor4<T> d_cat =
          conv_backward_acc(store, name, bff_merge_spec(cfg),
                            cache.merge_inputs[level_offset[static_cast<std::size_t>(l)] + k],
                            d_level[k]);
      auto halves = split_channels(d_cat, {C, C});
      d_prev.push_back(std::move(halves[0]));
      d_prev.push_back(std::move(halves[1]));
    }
    d_level = std::move(d_prev);
  }
  return d_level;
}

template <typename T>
Tensor4<T> reconstruct(const Tensor4<T>& f, const ParamStore<T>& store, const ModelConfig& cfg,
                       ReconCache<T>* cache) {
  Tensor4<T> up = apply_conv(store, "recon.up", recon_up_spec(cfg), f);
  Tensor4<T> shuffled = pixel_shuffle(up, cfg.scale);
  Tensor4<T> out = apply_conv(store, "recon.out", recon_out_spec(cfg), shuffled);
  if (cache) {
    cache->input = f;
    cache->shuffled = std::move(shuffled);
  }
  return out;
}

template <typename T>
Tensor4<T> reconstruct_backward(const Tensor4<T>& d_out, const ReconCache<T>& cache,
                                ParamStore<T>& store, const ModelConfig& cfg) {
  Tensor4<T> d_shuffled =
      conv_backward_acc(store, "recon.out", recon_out_spec(cfg), cache.shuffled, d_out);
  Tensor4<T> d_up = pixel_unshuffle(d_shuffled, cfg.scale);
  return conv_backward_acc(store, "recon.up", recon_up_spec(cfg), cache.input, d_up);
}

template <typename T>
Tensor4<T> hran_forward(const Tensor4<T>& lr, const ParamStore<T>& store, const ModelConfig& cfg,
                        HranCache<T>* cache) {
  cfg.validate();
  if (lr.c != cfg.in_channels) {
    throw ShapeError("hran_forward: input channel axis is " + std::to_string(lr.c) +
                     ", expected " + std::to_string(cfg.in_channels));
  }
  if (lr.n < 1 || lr.h < 1 || lr.w < 1) {
    throw ShapeError("hran_forward: degenerate input dims " + lr.shape_str());
  }

  Tensor4<T> f0 = apply_conv(store, "head.conv1", head1_spec(cfg), lr);
  Tensor4<T> f1 = apply_conv(store, "head.conv2", head2_spec(cfg), f0);

  if (cache) {
    cache->input = lr;
    cache->f0 = f0;
    cache->rgs.assign(static_cast<std::size_t>(cfg.rg_count), RgCache<T>{});
    cache->rg_outputs.clear();
  }

  std::vector<Tensor4<T>> rg_outputs;
  rg_outputs.reserve(static_cast<std::size_t>(cfg.rg_count));
  Tensor4<T> x = std::move(f1);
  for (int i = 0; i < cfg.rg_count; ++i) {
    RgCache<T>* rc = cache ? &cache->rgs[static_cast<std::size_t>(i)] : nullptr;
    x = residual_group_forward(x, store, cfg, i, rc);
    rg_outputs.push_back(x);
  }

  FusionCache<T>* fc = cache ? &cache->fusion : nullptr;
  Tensor4<T> fused = fusion_forward(rg_outputs, store, cfg, fc);
  Tensor4<T> fdf = add(fused, f0);  // global skip

  ReconCache<T>* rc = cache ? &cache->recon : nullptr;
  Tensor4<T> out = reconstruct(fdf, store, cfg, rc);

  if (cache) {
    cache->rg_outputs = std::move(rg_outputs);
    cache->store_version = store.version();
    cache->consumed = false;
  }
  return out;
}

template <typename T>
void hran_backward(const Tensor4<T>& upstream, HranCache<T>& cache, ParamStore<T>& store,
                   const ModelConfig& cfg) {
  if (cache.consumed) {
    throw std::logic_error("hran_backward: cache already consumed; run forward again");
  }
  if (cache.store_version != store.version()) {
    throw std::logic_error("hran_backward: cache is stale (parameters updated since forward)");
  }
  cache.consumed = true;
  store.zero_grads();

  Tensor4<T> d_fdf = reconstruct_backward(upstream, cache.recon, store, cfg);

  // global skip: d_fdf feeds both the fusion output and F0
  std::vector<Tensor4<T>> d_rg = fusion_backward(d_fdf, cache.fusion, store, cfg);

  // trunk: rg_outputs[i] feeds rg i+1 and the fusion tap
  Tensor4<T> d_chain = std::move(d_rg[static_cast<std::size_t>(cfg.rg_count - 1)]);
  for (int i = cfg.rg_count - 1; i >= 0; --i) {
    d_chain =
        residual_group_backward(d_chain, cache.rgs[static_cast<std::size_t>(i)], store, cfg, i);
    if (i > 0) add_inplace(d_chain, d_rg[static_cast<std::size_t>(i - 1)]);
  }

  Tensor4<T> d_f0 = conv_backward_acc(store, "head.conv2", head2_spec(cfg), cache.f0, d_chain);
  add_inplace(d_f0, d_fdf);  // global skip tap on F0
  conv_backward_acc(store, "head.conv1", head1_spec(cfg), cache.input, d_f0);
}

// ---- parameter management

template <typename T>
ParamStore<T> build_store(const ModelConfig& cfg) {
  ParamStore<T> store;
  for (const LayerDef& l : model_layers(cfg)) {
    const ConvSpec& s = l.spec;
    store.add(l.prefix + ".weight", s.out_channels, s.in_channels, s.kh, s.kw,
              {static_cast<std::uint32_t>(s.out_channels), static_cast<std::uint32_t>(s.in_channels),
               static_cast<std::uint32_t>(s.kh), static_cast<std::uint32_t>(s.kw)});
    store.add(l.prefix + ".bias", s.out_channels, 1, 1, 1,
              {static_cast<std::uint32_t>(s.out_channels)});
  }
  return store;
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<T> store = build_store<T>(cfg);
  Rng rng(seed);
  const double slope = static_cast<double>(cfg.leaky_slope);
  for (std::size_t i = 0; i < store.count(); ++i) {
    Param<T>& p = store.param(i);
    if (p.shape.size() != 4) continue;  // biases stay zero
    const double fan_in =
        static_cast<double>(p.shape[1]) * static_cast<double>(p.shape[2]) * p.shape[3];
    const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    for (auto& v : p.pv.value.data) v = static_cast<T>(rng.normal() * stddev);
  }
  return store;
}

std::int64_t param_count(const ModelConfig& cfg) {
  std::int64_t total = 0;
  for (const LayerDef& l : model_layers(cfg)) {
    const ConvSpec& s = l.spec;
    total += static_cast<std::int64_t>(s.out_channels) * s.in_channels * s.kh * s.kw +
             s.out_channels;
  }
  return total;
}

std::vector<ParamGroup> param_breakdown(const ModelConfig& cfg) {
  std::vector<ParamGroup> groups;
  auto bucket = [&groups](const std::string& name) -> ParamGroup& {
    for (auto& g : groups)
      if (g.name == name) return g;
    groups.push_back({name, 0});
    return groups.back();
  };
  for (const LayerDef& l : model_layers(cfg)) {
    const ConvSpec& s = l.spec;
    const std::int64_t n =
        static_cast<std::int64_t>(s.out_channels) * s.in_channels * s.kh * s.kw + s.out_channels;
    std::string top = l.prefix.substr(0, l.prefix.find('.'));
    if (top == "rg") {
      const auto second = l.prefix.find('.', 3);
      top = l.prefix.substr(0, second);
    }
    bucket(top).count += n;
  }
  return groups;
}

// explicit instantiations

#define HRAN_INSTANTIATE_MODEL(T)                                                              \
  template struct Param<T>;                                                                    \
  template class ParamStore<T>;                                                                \
  template Tensor4<T> channel_attention_forward<T>(const Tensor4<T>&, const ParamStore<T>&,    \
                                                   const ModelConfig&, const std::string&,     \
                                                   CaCache<T>*);                               \
  template Tensor4<T> channel_attention_backward<T>(const Tensor4<T>&, const CaCache<T>&,      \
                                                    ParamStore<T>&, const ModelConfig&,        \
                                                    const std::string&);                       \
  template Tensor4<T> spatial_attention_forward<T>(const Tensor4<T>&, const ParamStore<T>&,    \
                                                   const ModelConfig&, const std::string&,     \
                                                   SaCache<T>*);                               \
  template Tensor4<T> spatial_attention_backward<T>(const Tensor4<T>&, const Tensor4<T>&,      \
                                                    const SaCache<T>&, ParamStore<T>&,         \
                                                    const ModelConfig&, const std::string&);   \
  template Tensor4<T> hrab_forward<T>(const Tensor4<T>&, const ParamStore<T>&,                 \
                                      const ModelConfig&, const std::string&, HrabCache<T>*);  \
  template Tensor4<T> hrab_backward<T>(const Tensor4<T>&, const HrabCache<T>&, ParamStore<T>&, \
                                       const ModelConfig&, const std::string&);                \
  template Tensor4<T> residual_group_forward<T>(const Tensor4<T>&, const ParamStore<T>&,       \
                                                const ModelConfig&, int, RgCache<T>*);         \
  template Tensor4<T> residual_group_backward<T>(const Tensor4<T>&, const RgCache<T>&,         \
                                                 ParamStore<T>&, const ModelConfig&, int);     \
  template Tensor4<T> bff_forward<T>(const std::vector<Tensor4<T>>&, const ParamStore<T>&,     \
                                     const ModelConfig&, FusionCache<T>*);                     \
  template Tensor4<T> hff_forward<T>(const std::vector<Tensor4<T>>&, const ParamStore<T>&,     \
                                     const ModelConfig&, FusionCache<T>*);                     \
  template Tensor4<T> fusion_forward<T>(const std::vector<Tensor4<T>>&, const ParamStore<T>&,  \
                                        const ModelConfig&, FusionCache<T>*);                  \
  template std::vector<Tensor4<T>> fusion_backward<T>(const Tensor4<T>&, const FusionCache<T>&,\
                                                      ParamStore<T>&, const ModelConfig&);     \
  template Tensor4<T> reconstruct<T>(const Tensor4<T>&, const ParamStore<T>&,                  \
                                     const ModelConfig&, ReconCache<T>*);                      \
  template Tensor4<T> reconstruct_backward<T>(const Tensor4<T>&, const ReconCache<T>&,         \
                                              ParamStore<T>&, const ModelConfig&);             \
  template Tensor4<T> hran_forward<T>(const Tensor4<T>&, const ParamStore<T>&,                 \
                                      const ModelConfig&, HranCache<T>*);                      \
  template void hran_backward<T>(const Tensor4<T>&, HranCache<T>&, ParamStore<T>&,             \
                                 const ModelConfig&);                                          \
  template ParamStore<T> build_store<T>(const ModelConfig&);                                   \
  template ParamStore<T> init_params<T>(const ModelConfig&, std::uint64_t);

HRAN_INSTANTIATE_MODEL(float)
HRAN_INSTANTIATE_MODEL(double)

}  // namespace hran
