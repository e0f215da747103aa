#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hran/rng.hpp"
#include "hran/tensor.hpp"

namespace hran {

// 8-bit interleaved RGB image, the I/O boundary type.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height, row-major RGB

  ImageU8() = default;
  ImageU8(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3) * w * h, 0) {}

  std::uint8_t& at(int y, int x, int ch) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  bool operator==(const ImageU8& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

// Binary PPM (P6, maxval 255) is the canonical format; PNG is handled when
// built with libpng. Dispatch is on content for loads and on extension for
// saves.
ImageU8 load_image(const std::string& path);
void save_image(const std::string& path, const ImageU8& img);
bool png_supported();

// [0,255] u8 <-> [0,1] float tensor; to_u8 rounds half away from zero and
// clamps.
Tensor4<float> to_float(const ImageU8& img);
ImageU8 to_u8(const Tensor4<float>& t);

// BT.601 studio-swing luma on the 8-bit scale: Y in [16, 235] for RGB in
// [0,1]. Output has one channel.
Tensor4<float> rgb_to_y(const Tensor4<float>& rgb);

// MATLAB-imresize-compatible separable bicubic (a = -0.5): center-aligned
// sample mapping, edge replication, normalized weights, kernel-width scaling
// (antialias) when shrinking.
Tensor4<float> bicubic_resize(const Tensor4<float>& x, int out_h, int out_w);

// The precomputed 1-D resampling plan; exposed for the tests' weight-sum
// property.
struct ResamplePlan {
  int taps = 0;                 // contributions per output coordinate
  std::vector<int> indices;     // out_size * taps, clamped source indices
  std::vector<double> weights;  // out_size * taps, rows sum to 1
};
ResamplePlan make_resample_plan(int in_size, int out_size);

// BI degradation: center-crop to a multiple of `scale`, bicubic downscale,
// requantize.
ImageU8 degrade(const ImageU8& hr, int scale);
ImageU8 center_crop_to_multiple(const ImageU8& img, int scale);

struct DatasetEntry {
  std::string name;  // file stem
  ImageU8 hr;
  ImageU8 lr;
};

// A directory of HR images (or a manifest file listing them, one path per
// line). Pre-degraded LR images are picked up from `lr_dir` (default: the
// sibling directory "<hr_dir>_LRx<scale>") as "<stem>x<scale>.<ext>"; missing
// ones are generated with `degrade`.
struct Dataset {
  int scale = 0;
  std::vector<DatasetEntry> entries;

  static Dataset open(const std::string& path, int scale, const std::string& lr_dir = "");
};

struct PatchPair {
  Tensor4<float> lr;  // (1, 3, p, p)
  Tensor4<float> hr;  // (1, 3, s*p, s*p)
  int image_index = 0;
  int x0 = 0, y0 = 0;  // LR crop origin
};

// Uniform image + crop origin, then a shared random hflip and k*90 degree
// rotation on both patches. Undersized images are skipped with a one-time
// warning; an empty eligible set is an error.
std::vector<PatchPair> sample_batch(const Dataset& ds, Rng& rng, int batch, int patch, int scale);

// D4 helpers shared by augmentation and the self-ensemble.
template <typename T>
Tensor4<T> rotate90(const Tensor4<T>& x, int quarter_turns);
template <typename T>
Tensor4<T> hflip(const Tensor4<T>& x);

std::vector<std::string> list_images(const std::string& dir);  // sorted stems with extensions

}  // namespace hran
