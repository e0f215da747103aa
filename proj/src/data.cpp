#include "hran/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "hran/errors.hpp"

namespace fs = std::filesystem;

namespace hran {

namespace {

// cubic kernel, a = -0.5
double cubic(double x) {
  x = std::fabs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

bool known_image_ext(const fs::path& p) {
  const std::string e = p.extension().string();
  return e == ".ppm" || e == ".png";
}

}  // namespace

Tensor4<float> to_float(const ImageU8& img) {
  Tensor4<float> t(1, 3, img.height, img.width);
  const float inv = 1.0f / 255.0f;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(0, ch, y, x) = img.at(y, x, ch) * inv;
  return t;
}

ImageU8 to_u8(const Tensor4<float>& t) {
  if (t.n != 1 || t.c != 3) {
    throw ShapeError("to_u8: expected a (1,3,h,w) tensor, got " + t.shape_str());
  }
  ImageU8 img(t.w, t.h);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) {
        const double v = std::round(static_cast<double>(t.at(0, ch, y, x)) * 255.0);
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return img;
}

Tensor4<float> rgb_to_y(const Tensor4<float>& rgb) {
  if (rgb.c != 3) {
    throw ShapeError("rgb_to_y: channel axis is " + std::to_string(rgb.c) + ", expected 3");
  }
  Tensor4<float> y(rgb.n, 1, rgb.h, rgb.w);
  for (int b = 0; b < rgb.n; ++b)
    for (int iy = 0; iy < rgb.h; ++iy)
      for (int ix = 0; ix < rgb.w; ++ix) {
        const double r = rgb.at(b, 0, iy, ix);
        const double g = rgb.at(b, 1, iy, ix);
        const double bl = rgb.at(b, 2, iy, ix);
        y.at(b, 0, iy, ix) = static_cast<float>(16.0 + 65.481 * r + 128.553 * g + 24.966 * bl);
      }
  return y;
}

ResamplePlan make_resample_plan(int in_size, int out_size) {
  if (in_size < 1 || out_size < 1) throw ShapeError("resample: extents must be positive");
  const double scale = static_cast<double>(out_size) / in_size;
  const bool antialias = scale < 1.0;
  const double kscale = antialias ? scale : 1.0;
  const double width = 4.0 / kscale;
  const int taps = static_cast<int>(std::ceil(width)) + 2;

  ResamplePlan plan;
  plan.taps = taps;
  plan.indices.resize(static_cast<std::size_t>(out_size) * taps);
  plan.weights.resize(static_cast<std::size_t>(out_size) * taps);

  for (int j = 0; j < out_size; ++j) {
    const double u = (j + 0.5) / scale - 0.5;
    const int left = static_cast<int>(std::floor(u - width / 2.0));
    double sum = 0.0;
    for (int p = 0; p < taps; ++p) {
      const double wgt = kscale * cubic(kscale * (u - (left + p)));
      plan.weights[static_cast<std::size_t>(j) * taps + p] = wgt;
      sum += wgt;
    }
    for (int p = 0; p < taps; ++p) {
      plan.weights[static_cast<std::size_t>(j) * taps + p] /= sum;
      plan.indices[static_cast<std::size_t>(j) * taps + p] =
          std::clamp(left + p, 0, in_size - 1);
    }
  }
  return plan;
}

Tensor4<float> bicubic_resize(const Tensor4<float>& x, int out_h, int out_w) {
  const ResamplePlan vplan = make_resample_plan(x.h, out_h);
  const ResamplePlan hplan = make_resample_plan(x.w, out_w);
  Tensor4<float> out(x.n, x.c, out_h, out_w);
  const std::int64_t planes = static_cast<std::int64_t>(x.n) * x.c;

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = x.data.data() + p * x.h * x.w;
    float* dst = out.data.data() + p * static_cast<std::int64_t>(out_h) * out_w;
    // pass 1: rows (height), double intermediate
    std::vector<double> tmp(static_cast<std::size_t>(out_h) * x.w);
    for (int y = 0; y < out_h; ++y) {
      for (int ix = 0; ix < x.w; ++ix) {
        double acc = 0.0;
        for (int t = 0; t < vplan.taps; ++t) {
          const int sy = vplan.indices[static_cast<std::size_t>(y) * vplan.taps + t];
          acc += vplan.weights[static_cast<std::size_t>(y) * vplan.taps + t] *
                 src[static_cast<std::size_t>(sy) * x.w + ix];
        }
        tmp[static_cast<std::size_t>(y) * x.w + ix] = acc;
      }
    }
    // pass 2: columns (width)
    for (int y = 0; y < out_h; ++y) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (int t = 0; t < hplan.taps; ++t) {
          const int sx = hplan.indices[static_cast<std::size_t>(ox) * hplan.taps + t];
          acc += hplan.weights[static_cast<std::size_t>(ox) * hplan.taps + t] *
                 tmp[static_cast<std::size_t>(y) * x.w + sx];
        }
        dst[static_cast<std::size_t>(y) * out_w + ox] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

ImageU8 center_crop_to_multiple(const ImageU8& img, int scale) {
  const int ch = img.height - img.height % scale;
  const int cw = img.width - img.width % scale;
  if (ch == img.height && cw == img.width) return img;
  if (ch < scale || cw < scale) {
    throw DataError("image smaller than one scale unit: " + std::to_string(img.width) + "x" +
                    std::to_string(img.height));
  }
  const int y0 = (img.height - ch) / 2;
  const int x0 = (img.width - cw) / 2;
  ImageU8 out(cw, ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

ImageU8 degrade(const ImageU8& hr, int scale) {
  if (scale < 1) throw ConfigError("degrade: scale must be positive");
  const ImageU8 cropped = center_crop_to_multiple(hr, scale);
  Tensor4<float> f = to_float(cropped);
  return to_u8(bicubic_resize(f, cropped.height / scale, cropped.width / scale));
}

std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && known_image_ext(e.path())) {
      names.push_back(e.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

Dataset Dataset::open(const std::string& path, int scale, const std::string& lr_dir) {
  if (scale < 1) throw ConfigError("dataset: scale must be positive");
  Dataset ds;
  ds.scale = scale;

  std::vector<fs::path> hr_paths;
  fs::path base;
  if (fs::is_regular_file(path) && !known_image_ext(fs::path(path))) {
    // manifest: one HR path per line, relative to the manifest location
    base = fs::path(path).parent_path();
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      fs::path p(line);
      hr_paths.push_back(p.is_absolute() ? p : base / p);
    }
  } else if (fs::is_directory(path)) {
    base = path;
    for (const auto& name : list_images(path)) hr_paths.push_back(fs::path(path) / name);
  } else {
    throw DataError("dataset path is neither a directory nor a manifest: " + path);
  }
  if (hr_paths.empty()) throw DataError("dataset is empty: " + path);

  fs::path lr_base;
  if (!lr_dir.empty()) {
    if (!fs::is_directory(lr_dir)) throw DataError("LR directory not found: " + lr_dir);
    lr_base = lr_dir;
  } else {
    fs::path candidate = base;
    candidate += "_LRx" + std::to_string(scale);
    if (fs::is_directory(candidate)) lr_base = candidate;
  }

  for (const auto& hp : hr_paths) {
    DatasetEntry e;
    e.name = stem_of(hp.string());
    const ImageU8 raw = load_image(hp.string());
    e.hr = center_crop_to_multiple(raw, scale);
    bool have_lr = false;
    if (!lr_base.empty()) {
      const fs::path lp =
          lr_base / (e.name + "x" + std::to_string(scale) + hp.extension().string());
      if (fs::exists(lp)) {
        e.lr = load_image(lp.string());
        if (e.lr.width * scale != e.hr.width || e.lr.height * scale != e.hr.height) {
          throw DataError(lp.string() + ": LR dims " + std::to_string(e.lr.width) + "x" +
                          std::to_string(e.lr.height) + " do not match HR/" +
                          std::to_string(scale));
        }
        have_lr = true;
      }
    }
    if (!have_lr) e.lr = degrade(e.hr, scale);
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

template <typename T>
Tensor4<T> rotate90(const Tensor4<T>& x, int quarter_turns) {
  int k = ((quarter_turns % 4) + 4) % 4;
  Tensor4<T> cur = x;
  while (k-- > 0) {
    Tensor4<T> next(cur.n, cur.c, cur.w, cur.h);
    for (int b = 0; b < cur.n; ++b)
      for (int c = 0; c < cur.c; ++c)
        for (int y = 0; y < next.h; ++y)
          for (int xx = 0; xx < next.w; ++xx)
            next.at(b, c, y, xx) = cur.at(b, c, cur.h - 1 - xx, y);
    cur = std::move(next);
  }
  return cur;
}

template <typename T>
Tensor4<T> hflip(const Tensor4<T>& x) {
  Tensor4<T> out(x.n, x.c, x.h, x.w);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) out.at(b, c, y, xx) = x.at(b, c, y, x.w - 1 - xx);
  return out;
}

template Tensor4<float> rotate90<float>(const Tensor4<float>&, int);
template Tensor4<double> rotate90<double>(const Tensor4<double>&, int);
template Tensor4<float> hflip<float>(const Tensor4<float>&);
template Tensor4<double> hflip<double>(const Tensor4<double>&);

namespace {

Tensor4<float> crop_to_tensor(const ImageU8& img, int y0, int x0, int size) {
  Tensor4<float> t(1, 3, size, size);
  const float inv = 1.0f / 255.0f;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) t.at(0, c, y, x) = img.at(y0 + y, x0 + x, c) * inv;
  return t;
}

}  // namespace

std::vector<PatchPair> sample_batch(const Dataset& ds, Rng& rng, int batch, int patch,
                                    int scale) {
  if (ds.entries.empty()) throw DataError("sample_batch: empty dataset");
  if (scale != ds.scale) {
    throw ConfigError("sample_batch: scale " + std::to_string(scale) +
                      " does not match dataset scale " + std::to_string(ds.scale));
  }
  std::vector<int> eligible;
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    if (e.lr.height >= patch && e.lr.width >= patch) {
      eligible.push_back(static_cast<int>(i));
    } else {
      std::cerr << "warning: skipping undersized image '" << e.name << "' (" << e.lr.width << "x"
                << e.lr.height << " < " << patch << "x" << patch << ")\n";
    }
  }
  if (eligible.empty()) throw DataError("sample_batch: no image is at least patch-sized");

  std::vector<PatchPair> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    PatchPair pp;
    pp.image_index = eligible[rng.next_below(eligible.size())];
    const auto& e = ds.entries[static_cast<std::size_t>(pp.image_index)];
    pp.y0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(e.lr.height - patch + 1)));
    pp.x0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(e.lr.width - patch + 1)));
    pp.lr = crop_to_tensor(e.lr, pp.y0, pp.x0, patch);
    pp.hr = crop_to_tensor(e.hr, scale * pp.y0, scale * pp.x0, scale * patch);
    const bool flip = rng.next_bool();
    const int k = static_cast<int>(rng.next_below(4));
    if (flip) {
      pp.lr = hflip(pp.lr);
      pp.hr = hflip(pp.hr);
    }
    if (k != 0) {
      pp.lr = rotate90(pp.lr, k);
      pp.hr = rotate90(pp.hr, k);
    }
    out.push_back(std::move(pp));
  }
  return out;
}

}  // namespace hran
