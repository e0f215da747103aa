#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "hran/data.hpp"
#include "hran/metrics.hpp"
#include "hran/model.hpp"
#include "hran/threading.hpp"
#include "hran/train.hpp"

namespace fs = std::filesystem;
using namespace hran;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitPartialEval = 5;

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string dataset;
  std::string lr_dir;
  std::string out_dir = "out";
};

FusionMode parse_fusion(const std::string& v) {
  if (v == "bff" || v == "BFF") return FusionMode::BFF;
  if (v == "hff" || v == "HFF") return FusionMode::HFF;
  throw ConfigError("fusion_mode must be 'bff' or 'hff', got '" + v + "'");
}

// flat `key = value` UTF-8 text; '#' starts a comment; unknown keys error
void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "scale") rc.model.scale = std::stoi(val);
      else if (key == "channels") rc.model.channels = std::stoi(val);
      else if (key == "rg_count") rc.model.rg_count = std::stoi(val);
      else if (key == "hrab_per_rg") rc.model.hrab_per_rg = std::stoi(val);
      else if (key == "ca_reduction") rc.model.ca_reduction = std::stoi(val);
      else if (key == "leaky_slope") rc.model.leaky_slope = std::stof(val);
      else if (key == "fusion_mode") rc.model.fusion = parse_fusion(val);
      else if (key == "batch") rc.train.batch = std::stoi(val);
      else if (key == "patch") rc.train.patch = std::stoi(val);
      else if (key == "lr0") rc.train.lr0 = std::stof(val);
      else if (key == "halve_every") rc.train.halve_every = std::stoll(val);
      else if (key == "max_iters") rc.train.max_iters = std::stoll(val);
      else if (key == "seed") rc.train.seed = std::stoull(val);
      else if (key == "checkpoint_every") rc.train.checkpoint_every = std::stoll(val);
      else if (key == "log_every") rc.train.log_every = std::stoll(val);
      else if (key == "dataset") rc.dataset = val;
      else if (key == "lr_dir") rc.lr_dir = val;
      else if (key == "out_dir") rc.out_dir = val;
      else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": bad value for '" + key + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": value out of range for '" + key +
                        "'");
    }
  }
}

// model flags shared by train and params
struct ModelFlags {
  int scale = 0, channels = 0, rg = 0, hrab = 0, reduction = 0;
  std::string fusion;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--scale", scale, "Upscale factor (2, 3, 4 or 8)");
    cmd->add_option("--channels", channels, "Feature channels C");
    cmd->add_option("--rg", rg, "Residual group count R");
    cmd->add_option("--hrab", hrab, "HRAB blocks per residual group B");
    cmd->add_option("--reduction", reduction, "Channel-attention reduction r");
    cmd->add_option("--fusion", fusion, "Fusion topology: bff or hff");
  }
  void apply(ModelConfig& m) const {
    if (scale) m.scale = scale;
    if (channels) m.channels = channels;
    if (rg) m.rg_count = rg;
    if (hrab) m.hrab_per_rg = hrab;
    if (reduction) m.ca_reduction = reduction;
    if (!fusion.empty()) m.fusion = parse_fusion(fusion);
  }
};

std::string pretty_millions(std::int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f M", static_cast<double>(n) / 1e6);
  return buf;
}

int cmd_train(const RunConfig& rc, const std::string& resume) {
  rc.model.validate();
  rc.train.validate();
  if (rc.dataset.empty()) throw ConfigError("no dataset given (flag --dataset or config key)");
  if (!fs::exists(rc.dataset)) throw DataError("dataset path does not exist: " + rc.dataset);
  if (!resume.empty() && !fs::exists(resume)) {
    throw DataError("resume checkpoint does not exist: " + resume);
  }
  Dataset ds = Dataset::open(rc.dataset, rc.model.scale, rc.lr_dir);
  TrainResult res = train_loop(rc.model, rc.train, ds, rc.out_dir, resume);
  std::fprintf(stderr, "trained %lld iterations, final checkpoint %s\n",
               static_cast<long long>(res.iterations), res.final_checkpoint.c_str());
  return kExitOk;
}

int cmd_infer(const std::string& ckpt_path, const std::vector<std::string>& inputs,
              const std::string& out_dir, bool ensemble, bool png, int expect_scale) {
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw DataError("input image does not exist: " + p);
  }
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (expect_scale != 0 && expect_scale != ck.cfg.scale) {
    throw ConfigError("checkpoint is x" + std::to_string(ck.cfg.scale) +
                      " but x" + std::to_string(expect_scale) + " was requested");
  }
  if (png && !png_supported()) throw ConfigError("--png requested but built without PNG support");
  fs::create_directories(out_dir);

  ModelFn model = [&ck](const Tensor4<float>& in) {
    return hran_forward(in, ck.store, ck.cfg);
  };
  for (const auto& p : inputs) {
    const Tensor4<float> lr = to_float(load_image(p));
    const Tensor4<float> sr = ensemble ? self_ensemble(model, lr) : model(lr);
    const std::string stem = fs::path(p).stem().string();
    const std::string out = out_dir + "/" + stem + "_x" + std::to_string(ck.cfg.scale) +
                            (png ? ".png" : ".ppm");
    save_image(out, to_u8(sr));
    std::fprintf(stderr, "%s -> %s (%dx%d)\n", p.c_str(), out.c_str(), sr.w, sr.h);
  }
  return kExitOk;
}

int cmd_eval(const std::string& sr_dir, const std::string& hr_dir, int scale,
             const std::string& out_file, bool json) {
  EvalReport rep = evaluate_dirs(sr_dir, hr_dir, scale);
  const std::string text = json ? rep.to_json() : rep.to_tsv();
  if (out_file.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream out(out_file, std::ios::trunc);
    if (!out) throw DataError("cannot write report: " + out_file);
    out << text;
  }
  return rep.missing.empty() ? kExitOk : kExitPartialEval;
}

int cmd_degrade(const std::string& hr_dir, int scale, const std::string& out_dir,
                const std::string& hr_out_dir) {
  if (scale < 1) throw ConfigError("--scale must be positive");
  const auto names = list_images(hr_dir);
  if (names.empty()) throw DataError("no images in " + hr_dir);
  fs::create_directories(out_dir);
  if (!hr_out_dir.empty()) fs::create_directories(hr_out_dir);
  for (const auto& name : names) {
    const ImageU8 hr = load_image(hr_dir + "/" + name);
    const ImageU8 cropped = center_crop_to_multiple(hr, scale);
    const ImageU8 lr = degrade(hr, scale);
    const std::string stem = fs::path(name).stem().string();
    save_image(out_dir + "/" + stem + "x" + std::to_string(scale) + ".ppm", lr);
    if (!hr_out_dir.empty()) save_image(hr_out_dir + "/" + stem + ".ppm", cropped);
  }
  return kExitOk;
}

int cmd_params(const RunConfig& rc, const std::string& ckpt_path) {
  ModelConfig cfg = rc.model;
  if (!ckpt_path.empty()) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    cfg = ck.cfg;
  }
  cfg.validate();
  std::int64_t total = 0;
  for (const auto& g : param_breakdown(cfg)) {
    std::printf("%-16s %12lld\n", g.name.c_str(), static_cast<long long>(g.count));
    total += g.count;
  }
  const std::int64_t counted = param_count(cfg);
  std::printf("%-16s %12lld  (%s)\n", "TOTAL", static_cast<long long>(counted),
              pretty_millions(counted).c_str());
  if (total != counted) throw NumericError("breakdown does not sum to the total");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HRAN single-image super-resolution"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (results do not depend on it)")
      ->envname("HRAN_THREADS");

  RunConfig rc;
  std::string config_path, resume, ckpt, out_dir, sr_dir, hr_dir, out_file, hr_out_dir;
  std::vector<std::string> inputs;
  bool ensemble = false, png = false, json = false;
  int scale = 0;
  ModelFlags mflags;

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Flat key=value config file");
  train->add_option("--dataset", rc.dataset, "HR image directory or manifest file");
  train->add_option("--lr-dir", rc.lr_dir, "Pre-degraded LR directory");
  train->add_option("--out", out_dir, "Output directory (checkpoints + loss log)");
  train->add_option("--resume", resume, "Resume from a training checkpoint");
  mflags.add_to(train);
  std::int64_t max_iters = -1, seed = -1, ckpt_every = 0, log_every = 0;
  double lr0 = 0.0;
  int batch = 0, patch = 0;
  train->add_option("--max-iters", max_iters, "Total training iterations");
  train->add_option("--seed", seed, "PRNG seed");
  train->add_option("--batch", batch, "Patches per batch");
  train->add_option("--patch", patch, "LR patch side");
  train->add_option("--lr", lr0, "Initial learning rate");
  train->add_option("--checkpoint-every", ckpt_every, "Checkpoint cadence (iterations)");
  train->add_option("--log-every", log_every, "Loss log cadence (iterations)");

  auto* infer = app.add_subcommand("infer", "Upscale images with a trained checkpoint");
  infer->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  infer->add_option("--out", out_dir, "Output directory");
  infer->add_option("--scale", scale, "Assert the checkpoint scale");
  infer->add_flag("--ensemble", ensemble, "Geometric self-ensemble (8 orientations)");
  infer->add_flag("--png", png, "Write PNG instead of PPM");
  infer->add_option("images", inputs, "LR input images")->required();

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM report over matching stems");
  eval->add_option("--sr", sr_dir, "SR image directory")->required();
  eval->add_option("--hr", hr_dir, "HR ground-truth directory")->required();
  eval->add_option("--scale", scale, "Border crop = upscale factor")->required();
  eval->add_option("--out", out_file, "Write the report here instead of stdout");
  eval->add_flag("--json", json, "JSON report instead of TSV");

  auto* degrade_cmd = app.add_subcommand("degrade", "Bicubic-downscale a directory of HR images");
  degrade_cmd->add_option("--hr", hr_dir, "HR image directory")->required();
  degrade_cmd->add_option("--scale", scale, "Downscale factor")->required();
  degrade_cmd->add_option("--out", out_dir, "LR output directory")->required();
  degrade_cmd->add_option("--write-hr", hr_out_dir, "Also write the center-cropped HR here");

  auto* params = app.add_subcommand("params", "Parameter count and per-block breakdown");
  params->add_option("--config", config_path, "Flat key=value config file");
  params->add_option("--checkpoint", ckpt, "Read the architecture from a checkpoint");
  mflags.add_to(params);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    set_num_threads(threads);

    if (!config_path.empty()) {
      RunConfig file_rc;
      apply_config_file(file_rc, config_path);
      // flags override the file
      if (rc.dataset.empty()) rc.dataset = file_rc.dataset;
      if (rc.lr_dir.empty()) rc.lr_dir = file_rc.lr_dir;
      if (out_dir.empty() && train->parsed()) out_dir = file_rc.out_dir;
      rc.model = file_rc.model;
      rc.train = file_rc.train;
    }
    mflags.apply(rc.model);
    if (max_iters >= 0) rc.train.max_iters = max_iters;
    if (seed >= 0) rc.train.seed = static_cast<std::uint64_t>(seed);
    if (batch > 0) rc.train.batch = batch;
    if (patch > 0) rc.train.patch = patch;
    if (lr0 > 0.0) rc.train.lr0 = static_cast<float>(lr0);
    if (ckpt_every > 0) rc.train.checkpoint_every = ckpt_every;
    if (log_every > 0) rc.train.log_every = log_every;
    if (!out_dir.empty()) rc.out_dir = out_dir;

    if (train->parsed()) return cmd_train(rc, resume);
    if (infer->parsed()) return cmd_infer(ckpt, inputs, out_dir.empty() ? "." : out_dir,
                                          ensemble, png, scale);
    if (eval->parsed()) return cmd_eval(sr_dir, hr_dir, scale, out_file, json);
    if (degrade_cmd->parsed()) return cmd_degrade(hr_dir, scale, out_dir, hr_out_dir);
    if (params->parsed()) return cmd_params(rc, ckpt);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
}
