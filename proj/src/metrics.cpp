#include "hran/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "hran/errors.hpp"

namespace hran {

const std::array<GeomTransform, 8>& GeomTransform::all() {
  static const std::array<GeomTransform, 8> k = {{{0, false},
                                                  {1, false},
                                                  {2, false},
                                                  {3, false},
                                                  {0, true},
                                                  {1, true},
                                                  {2, true},
                                                  {3, true}}};
  return k;
}

Tensor4<float> crop_border(const Tensor4<float>& t, int border) {
  if (border < 0) throw ConfigError("crop_border: negative border");
  if (t.h <= 2 * border || t.w <= 2 * border) {
    throw ShapeError("crop_border: border " + std::to_string(border) +
                     " exceeds spatial extent of " + t.shape_str());
  }
  Tensor4<float> out(t.n, t.c, t.h - 2 * border, t.w - 2 * border);
  for (int b = 0; b < t.n; ++b)
    for (int c = 0; c < t.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) out.at(b, c, y, x) = t.at(b, c, y + border, x + border);
  return out;
}

double psnr_planes(const Tensor4<float>& a, const Tensor4<float>& b) {
  check_same_dims(a, b, "psnr_planes");
  double se = 0.0;
  const std::int64_t count = a.size();
  for (std::int64_t k = 0; k < count; ++k) {
    const double d = static_cast<double>(a.data[static_cast<std::size_t>(k)]) -
                     static_cast<double>(b.data[static_cast<std::size_t>(k)]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const int half = size / 2;
  double sum = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - half, dx = x - half;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y) * size + x] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace

double ssim_planes(const Tensor4<float>& a, const Tensor4<float>& b) {
  check_same_dims(a, b, "ssim_planes");
  constexpr int kWin = 11;
  constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);
  if (a.h < kWin || a.w < kWin) {
    throw ShapeError("ssim: plane " + a.shape_str() + " smaller than the 11x11 window");
  }
  static const std::vector<double> win = gaussian_window(kWin, 1.5);

  const int oh = a.h - kWin + 1, ow = a.w - kWin + 1;
  double total = 0.0;
  for (int plane = 0; plane < a.n * a.c; ++plane) {
    const float* pa = a.data.data() + static_cast<std::size_t>(plane) * a.h * a.w;
    const float* pb = b.data.data() + static_cast<std::size_t>(plane) * a.h * a.w;
    // per-row partial sums, reduced serially: the value must not depend on
    // the worker count
    std::vector<double> row_acc(static_cast<std::size_t>(oh), 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < oh; ++y) {
      double racc = 0.0;
      for (int x = 0; x < ow; ++x) {
        double mu1 = 0.0, mu2 = 0.0, s11 = 0.0, s22 = 0.0, s12 = 0.0;
        for (int wy = 0; wy < kWin; ++wy)
          for (int wx = 0; wx < kWin; ++wx) {
            const double wgt = win[static_cast<std::size_t>(wy) * kWin + wx];
            const double va = pa[static_cast<std::size_t>(y + wy) * a.w + (x + wx)];
            const double vb = pb[static_cast<std::size_t>(y + wy) * a.w + (x + wx)];
            mu1 += wgt * va;
            mu2 += wgt * vb;
            s11 += wgt * va * va;
            s22 += wgt * vb * vb;
            s12 += wgt * va * vb;
          }
        const double var1 = s11 - mu1 * mu1;
        const double var2 = s22 - mu2 * mu2;
        const double cov = s12 - mu1 * mu2;
        racc += ((2.0 * mu1 * mu2 + kC1) * (2.0 * cov + kC2)) /
                ((mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2));
      }
      row_acc[static_cast<std::size_t>(y)] = racc;
    }
    double acc = 0.0;
    for (double v : row_acc) acc += v;
    total += acc / (static_cast<double>(oh) * ow);
  }
  return total / (a.n * a.c);
}

namespace {

Tensor4<float> luma_cropped(const ImageU8& img, int scale) {
  return crop_border(rgb_to_y(to_float(img)), scale);
}

void check_pair(const ImageU8& sr, const ImageU8& hr, const char* op) {
  if (sr.width != hr.width || sr.height != hr.height) {
    throw ShapeError(std::string(op) + ": image dims " + std::to_string(sr.width) + "x" +
                     std::to_string(sr.height) + " vs " + std::to_string(hr.width) + "x" +
                     std::to_string(hr.height));
  }
}

}  // namespace

double psnr_y(const ImageU8& sr, const ImageU8& hr, int scale) {
  check_pair(sr, hr, "psnr_y");
  return psnr_planes(luma_cropped(sr, scale), luma_cropped(hr, scale));
}

double ssim_y(const ImageU8& sr, const ImageU8& hr, int scale) {
  check_pair(sr, hr, "ssim_y");
  return ssim_planes(luma_cropped(sr, scale), luma_cropped(hr, scale));
}

Tensor4<float> self_ensemble(const ModelFn& model, const Tensor4<float>& lr) {
  std::vector<Tensor4<float>> outs;
  outs.reserve(8);
  for (const GeomTransform& t : GeomTransform::all()) {
    outs.push_back(t.invert(model(t.apply(lr))));
    check_same_dims(outs.front(), outs.back(), "self_ensemble");
  }
  // pairwise tree, still in float: the mean of identical outputs stays exact
  for (int stride = 1; stride < 8; stride *= 2) {
    for (int i = 0; i + stride < 8; i += 2 * stride) {
      auto& dst = outs[static_cast<std::size_t>(i)].data;
      const auto& src = outs[static_cast<std::size_t>(i + stride)].data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  for (auto& v : outs[0].data) v *= 0.125f;
  return outs[0];
}

std::string EvalReport::to_tsv() const {
  auto fmt = [](double v) {
    if (std::isinf(v)) return std::string("inf");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  std::string out;
  for (const auto& e : entries) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", e.ssim);
    out += e.name + "\t" + fmt(e.psnr) + "\t" + buf + "\n";
  }
  for (const auto& m : missing) out += m + "\tmissing\tmissing\n";
  char sbuf[32];
  std::snprintf(sbuf, sizeof(sbuf), "%.6f", mean_ssim);
  out += "MEAN\t" + fmt(mean_psnr) + "\t" + sbuf + "\n";
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["scale"] = scale;
  j["model_id"] = model_id;
  j["images"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json je;
    je["name"] = e.name;
    if (std::isinf(e.psnr)) {
      je["psnr"] = "inf";
    } else {
      je["psnr"] = e.psnr;
    }
    je["ssim"] = e.ssim;
    j["images"].push_back(je);
  }
  j["missing"] = missing;
  if (std::isinf(mean_psnr)) {
    j["mean_psnr"] = "inf";
  } else {
    j["mean_psnr"] = mean_psnr;
  }
  j["mean_ssim"] = mean_ssim;
  return j.dump(2);
}

EvalReport evaluate_pairs(const std::vector<std::string>& names,
                          const std::vector<const ImageU8*>& sr,
                          const std::vector<const ImageU8*>& hr, int scale,
                          const std::string& model_id) {
  EvalReport rep;
  rep.scale = scale;
  rep.model_id = model_id;
  for (std::size_t i = 0; i < names.size(); ++i) {
    EvalEntry e;
    e.name = names[i];
    e.psnr = psnr_y(*sr[i], *hr[i], scale);
    e.ssim = ssim_y(*sr[i], *hr[i], scale);
    rep.entries.push_back(e);
  }
  // infinite PSNR (identical pair) stays out of the mean unless every pair
  // is identical
  double psum = 0.0, ssum = 0.0;
  int finite = 0;
  for (const auto& e : rep.entries) {
    ssum += e.ssim;
    if (!std::isinf(e.psnr)) {
      psum += e.psnr;
      ++finite;
    }
  }
  rep.mean_psnr = finite > 0 ? psum / finite
                             : (rep.entries.empty() ? 0.0 : std::numeric_limits<double>::infinity());
  rep.mean_ssim = rep.entries.empty() ? 0.0 : ssum / static_cast<double>(rep.entries.size());
  return rep;
}

EvalReport evaluate_dirs(const std::string& sr_dir, const std::string& hr_dir, int scale) {
  const auto sr_files = list_images(sr_dir);
  const auto hr_files = list_images(hr_dir);

  auto stem = [](const std::string& f) {
    const auto dot = f.rfind('.');
    return dot == std::string::npos ? f : f.substr(0, dot);
  };

  std::map<std::string, std::string> sr_by_stem;
  for (const auto& f : sr_files) sr_by_stem[stem(f)] = f;

  std::vector<std::string> names;
  std::vector<ImageU8> sr_imgs, hr_imgs;
  std::vector<std::string> missing;
  std::set<std::string> used_sr;

  for (const auto& f : hr_files) {
    const std::string s = stem(f);
    // an SR file may carry the infer suffix
    std::string found;
    for (const std::string cand :
         {s, s + "_x" + std::to_string(scale), s + "x" + std::to_string(scale)}) {
      auto it = sr_by_stem.find(cand);
      if (it != sr_by_stem.end()) {
        found = it->second;
        break;
      }
    }
    if (found.empty()) {
      missing.push_back(s);
      continue;
    }
    used_sr.insert(stem(found));
    names.push_back(s);
    sr_imgs.push_back(load_image(sr_dir + "/" + found));
    hr_imgs.push_back(load_image(hr_dir + "/" + f));
  }
  for (const auto& f : sr_files) {
    if (!used_sr.count(stem(f))) missing.push_back(stem(f));
  }
  if (names.empty()) {
    throw DataError("no matching image stems between '" + sr_dir + "' and '" + hr_dir + "'");
  }

  std::vector<const ImageU8*> srp, hrp;
  for (std::size_t i = 0; i < names.size(); ++i) {
    srp.push_back(&sr_imgs[i]);
    hrp.push_back(&hr_imgs[i]);
  }
  EvalReport rep = evaluate_pairs(names, srp, hrp, scale, "dir:" + sr_dir);
  std::sort(missing.begin(), missing.end());
  rep.missing = std::move(missing);
  return rep;
}

}  // namespace hran
