#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "hran/data.hpp"
#include "hran/tensor.hpp"

namespace hran {

// One element of the dihedral group D4: rotate by k*90 degrees, then
// optionally flip horizontally.
struct GeomTransform {
  int rot = 0;     // quarter turns, 0..3
  bool flip = false;

  template <typename T>
  Tensor4<T> apply(const Tensor4<T>& x) const {
    Tensor4<T> t = rotate90(x, rot);
    return flip ? hflip(t) : t;
  }
  template <typename T>
  Tensor4<T> invert(const Tensor4<T>& y) const {
    Tensor4<T> t = flip ? hflip(y) : y;
    return rotate90(t, (4 - rot) % 4);
  }

  static const std::array<GeomTransform, 8>& all();
};

// PSNR on the luma plane after cropping `scale` pixels from every border.
// Identical planes report +infinity.
double psnr_y(const ImageU8& sr, const ImageU8& hr, int scale);

// Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
// L=255) on the luma plane with the same border crop.
double ssim_y(const ImageU8& sr, const ImageU8& hr, int scale);

// Plane-level cores, exposed for the closed-form checks. Planes are
// (n,1,h,w) tensors on the 8-bit scale.
double psnr_planes(const Tensor4<float>& a, const Tensor4<float>& b);
double ssim_planes(const Tensor4<float>& a, const Tensor4<float>& b);

Tensor4<float> crop_border(const Tensor4<float>& t, int border);

using ModelFn = std::function<Tensor4<float>(const Tensor4<float>&)>;

// Geometric self-ensemble: mean over T^-1(model(T(x))) for the 8 dihedral
// transforms, averaged in float before any quantization.
Tensor4<float> self_ensemble(const ModelFn& model, const Tensor4<float>& lr);

struct EvalEntry {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  int scale = 0;
  std::string model_id;
  std::vector<EvalEntry> entries;     // ordered by name
  std::vector<std::string> missing;   // stems without a counterpart
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;

  std::string to_tsv() const;   // name<TAB>psnr<TAB>ssim rows plus a MEAN row
  std::string to_json() const;
};

// Pairs SR and HR images by file stem (an SR stem may carry a _x<scale> or
// x<scale> suffix). Missing counterparts are listed and excluded from means.
EvalReport evaluate_dirs(const std::string& sr_dir, const std::string& hr_dir, int scale);

EvalReport evaluate_pairs(const std::vector<std::string>& names,
                          const std::vector<const ImageU8*>& sr,
                          const std::vector<const ImageU8*>& hr, int scale,
                          const std::string& model_id);

}  // namespace hran
