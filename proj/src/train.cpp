#include "hran/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace hran {

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("batch must be positive");
  if (patch < 1) throw ConfigError("patch must be positive");
  if (!(lr0 > 0.0f)) throw ConfigError("lr0 must be > 0");
  if (halve_every < 1) throw ConfigError("halve_every must be positive");
  if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (log_every < 1) throw ConfigError("log_every must be positive");
  if (loss_window < 1) throw ConfigError("loss_window must be positive");
}

template <typename T>
std::pair<T, Tensor4<T>> l1_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
  check_same_dims(pred, target, "l1_loss");
  const std::int64_t count = pred.size();
  Tensor4<T> grad(pred.n, pred.c, pred.h, pred.w);
  const T invn = T(1) / static_cast<T>(count);
  // serial fixed-order sum keeps the loss value thread-count invariant
  double acc = 0.0;
  for (std::int64_t k = 0; k < count; ++k) {
    const T d = pred.data[static_cast<std::size_t>(k)] - target.data[static_cast<std::size_t>(k)];
    acc += std::fabs(static_cast<double>(d));
    grad.data[static_cast<std::size_t>(k)] = d > T(0) ? invn : (d < T(0) ? -invn : T(0));
  }
  return {static_cast<T>(acc * static_cast<double>(invn)), std::move(grad)};
}

template std::pair<float, Tensor4<float>> l1_loss<float>(const Tensor4<float>&,
                                                         const Tensor4<float>&);
template std::pair<double, Tensor4<double>> l1_loss<double>(const Tensor4<double>&,
                                                            const Tensor4<double>&);

float lr_at(std::int64_t t, float lr0, std::int64_t halve_every) {
  if (t < 0) throw ConfigError("lr_at: negative iteration");
  const std::int64_t halvings = t / halve_every;
  return std::ldexp(lr0, halvings > 200 ? -200 : -static_cast<int>(halvings));
}

void adam_step(ParamStore<float>& store, std::int64_t step, float lr, const TrainConfig& tc) {
  if (step < 1) throw ConfigError("adam_step: step index is 1-based");
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Param<float>& p = store.param(i);
    for (const float g : p.pv.grad.data) {
      if (std::isnan(g)) {
        throw NumericError("NaN gradient in parameter '" + p.name + "'; aborting update");
      }
    }
  }
  const double b1 = tc.adam_beta1, b2 = tc.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < store.count(); ++i) {
    Param<float>& p = store.param(i);
    float* m = p.m.data.data();
    float* v = p.v.data.data();
    float* th = p.pv.value.data.data();
    float* gr = p.pv.grad.data.data();
    const std::int64_t count = p.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < count; ++k) {
      const double g = gr[k];
      const double mk = b1 * m[k] + (1.0 - b1) * g;
      const double vk = b2 * v[k] + (1.0 - b2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      th[k] = static_cast<float>(th[k] - lr * mhat / (std::sqrt(vhat) + tc.adam_eps));
      gr[k] = 0.0f;
    }
  }
  store.bump_version();
}

namespace {

Tensor4<float> assemble(const std::vector<PatchPair>& pairs, bool hr_side) {
  const Tensor4<float>& first = hr_side ? pairs[0].hr : pairs[0].lr;
  Tensor4<float> out(static_cast<int>(pairs.size()), first.c, first.h, first.w);
  const std::size_t plane = first.data.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor4<float>& src = hr_side ? pairs[i].hr : pairs[i].lr;
    std::copy(src.data.begin(), src.data.end(), out.data.begin() + i * plane);
  }
  return out;
}

}  // namespace

TrainResult train_loop(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& ds,
                       const std::string& out_dir, const std::string& resume_path) {
  mcfg.validate();
  tcfg.validate();
  if (ds.entries.empty()) throw DataError("train_loop: empty dataset");
  fs::create_directories(out_dir);

  ParamStore<float> store;
  Rng rng(tcfg.seed);
  std::int64_t start = 0;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path, &mcfg);
    if (!ck.has_train) throw ConfigError(resume_path + ": not a training checkpoint, cannot resume");
    store = std::move(ck.store);
    rng.state = ck.train.rng_state;
    start = static_cast<std::int64_t>(ck.train.iteration);
  } else {
    store = init_params<float>(mcfg, tcfg.seed);
  }

  const std::string log_path = out_dir + "/train.log";
  std::ofstream log(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot open loss log: " + log_path);

  auto write_ckpt = [&](const std::string& name, std::int64_t iter) {
    TrainSection ts;
    ts.iteration = static_cast<std::uint64_t>(iter);
    ts.rng_state = rng.state;
    save_checkpoint(out_dir + "/" + name, mcfg, store, &ts);
  };

  TrainResult res;
  std::deque<double> window;
  for (std::int64_t t = start; t < tcfg.max_iters; ++t) {
    auto pairs = sample_batch(ds, rng, tcfg.batch, tcfg.patch, mcfg.scale);
    Tensor4<float> lr_batch = assemble(pairs, false);
    Tensor4<float> hr_batch = assemble(pairs, true);

    HranCache<float> cache;
    Tensor4<float> pred = hran_forward(lr_batch, store, mcfg, &cache);
    auto [loss, dloss] = l1_loss(pred, hr_batch);
    hran_backward(dloss, cache, store, mcfg);

    const float lr = lr_at(t, tcfg.lr0, tcfg.halve_every);
    adam_step(store, t + 1, lr, tcfg);

    const std::int64_t iter = t + 1;
    if (t == start) res.first_loss = loss;
    window.push_back(loss);
    if (static_cast<int>(window.size()) > tcfg.loss_window) window.pop_front();

    if (iter % tcfg.log_every == 0 || iter == tcfg.max_iters) {
      char line[96];
      std::snprintf(line, sizeof(line), "%lld\t%.8e\t%.8e\n", static_cast<long long>(iter),
                    static_cast<double>(lr), static_cast<double>(loss));
      log << line;
      log.flush();
    }
    if (iter % tcfg.checkpoint_every == 0 && iter != tcfg.max_iters) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%08lld.ckpt", static_cast<long long>(iter));
      write_ckpt(name, iter);
    }
    res.iterations = iter;
  }

  double wsum = 0.0;
  for (double v : window) wsum += v;
  res.final_window = window.empty() ? 0.0 : wsum / static_cast<double>(window.size());

  write_ckpt("final.ckpt", tcfg.max_iters > start ? tcfg.max_iters : start);
  res.final_checkpoint = out_dir + "/final.ckpt";
  res.iterations = tcfg.max_iters > start ? tcfg.max_iters - start : 0;
  return res;
}

}  // namespace hran
