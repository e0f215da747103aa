#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hran/data.hpp"
#include "test_util.hpp"

using namespace hran;
using testutil::bit_equal;
using testutil::max_abs_diff;

namespace fs = std::filesystem;

namespace {

ImageU8 random_image(Rng& rng, int w, int h) {
  ImageU8 img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
  return img;
}

// smooth synthetic image, values kept away from the 0/255 rails
ImageU8 smooth_image(int w, int h) {
  ImageU8 img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / w, fy = static_cast<double>(y) / h;
      img.at(y, x, 0) = static_cast<std::uint8_t>(128 + 80 * std::sin(6.0 * fx + 2.0 * fy));
      img.at(y, x, 1) = static_cast<std::uint8_t>(128 + 70 * std::cos(4.0 * fy) * std::sin(3.0 * fx));
      img.at(y, x, 2) = static_cast<std::uint8_t>(128 + 60 * std::sin(8.0 * fx * fy + 1.0));
    }
  return img;
}

}  // namespace

TEST_CASE("ppm round trip and parse errors") {
  const std::string dir = testutil::temp_dir("ppm");
  fs::create_directories(dir);
  Rng rng(50);

  SUBCASE("save then load is lossless") {
    auto img = random_image(rng, 13, 7);
    save_image(dir + "/a.ppm", img);
    CHECK(load_image(dir + "/a.ppm") == img);
  }

  SUBCASE("a hand-written 2x2 P6 file decodes to known pixels") {
    std::ofstream out(dir + "/b.ppm", std::ios::binary);
    out << "P6\n# comment\n2 2\n255\n";
    const std::uint8_t bytes[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30};
    out.write(reinterpret_cast<const char*>(bytes), 12);
    out.close();
    auto img = load_image(dir + "/b.ppm");
    CHECK(img.width == 2);
    CHECK(img.height == 2);
    CHECK(img.at(0, 0, 0) == 255);
    CHECK(img.at(0, 1, 1) == 255);
    CHECK(img.at(1, 1, 0) == 10);
    CHECK(img.at(1, 1, 2) == 30);
  }

  SUBCASE("truncated raster reports the byte offset") {
    std::ofstream out(dir + "/c.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n";
    out.write("xy", 2);
    out.close();
    CHECK_THROWS_WITH_AS(load_image(dir + "/c.ppm"), doctest::Contains("at byte"), DataError);
  }

  SUBCASE("unsupported maxval is rejected") {
    std::ofstream out(dir + "/d.ppm", std::ios::binary);
    out << "P6\n2 2\n65535\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_image(dir + "/d.ppm"), doctest::Contains("bit depth"), DataError);
  }

  SUBCASE("garbage content is rejected, not crashed on") {
    std::ofstream(dir + "/e.ppm") << "garbage bytes here";
    CHECK_THROWS_AS(load_image(dir + "/e.ppm"), DataError);
    CHECK_THROWS_AS(load_image(dir + "/missing.ppm"), DataError);
  }

  SUBCASE("png round trip when built in") {
    if (png_supported()) {
      auto img = random_image(rng, 9, 11);
      save_image(dir + "/f.png", img);
      CHECK(load_image(dir + "/f.png") == img);
    }
  }

  fs::remove_all(dir);
}

TEST_CASE("u8/float conversions and the stated rounding rule") {
  ImageU8 img(1, 1);
  img.at(0, 0, 0) = 255;
  img.at(0, 0, 1) = 0;
  img.at(0, 0, 2) = 128;
  auto t = to_float(img);
  CHECK(t.at(0, 0, 0, 0) == 1.0f);
  CHECK(t.at(0, 1, 0, 0) == 0.0f);
  auto back = to_u8(t);
  CHECK(back == img);

  Tensor4<float> v(1, 3, 1, 1);
  v.data = {1.7f, 0.5f, -0.3f};
  auto q = to_u8(v);
  CHECK(q.at(0, 0, 0) == 255);  // clamps above
  CHECK(q.at(0, 0, 1) == 128);  // 127.5 rounds away from zero
  CHECK(q.at(0, 0, 2) == 0);    // clamps below
}

TEST_CASE("luma conversion endpoints and range") {
  Tensor4<float> rgb(1, 3, 1, 3);
  // white, black, mid-gray
  rgb.at(0, 0, 0, 0) = rgb.at(0, 1, 0, 0) = rgb.at(0, 2, 0, 0) = 1.0f;
  rgb.at(0, 0, 0, 1) = rgb.at(0, 1, 0, 1) = rgb.at(0, 2, 0, 1) = 0.0f;
  rgb.at(0, 0, 0, 2) = rgb.at(0, 1, 0, 2) = rgb.at(0, 2, 0, 2) = 0.5f;
  auto y = rgb_to_y(rgb);
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(235.0).epsilon(1e-6));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx(16.0));
  CHECK(y.at(0, 0, 0, 2) == doctest::Approx(125.5).epsilon(1e-6));

  Rng rng(51);
  auto r = testutil::random_tensor<float>(rng, 1, 3, 8, 8, 0.0, 1.0);
  auto yr = rgb_to_y(r);
  for (float v : yr.data) {
    CHECK(v >= 16.0f - 1e-4f);
    CHECK(v <= 235.0f + 1e-4f);
  }

  Tensor4<float> bad(1, 2, 2, 2);
  CHECK_THROWS_AS(rgb_to_y(bad), ShapeError);
}

TEST_CASE("bicubic resize properties and brute-force oracle") {
  Rng rng(52);

  SUBCASE("plan weights sum to one at every sample position") {
    for (auto [in, out] : {std::pair{16, 32}, {32, 16}, {7, 19}, {19, 7}, {5, 5}, {9, 2}}) {
      auto plan = make_resample_plan(in, out);
      for (int j = 0; j < out; ++j) {
        double s = 0.0;
        for (int t = 0; t < plan.taps; ++t)
          s += plan.weights[static_cast<std::size_t>(j) * plan.taps + t];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }

  SUBCASE("constant image stays constant") {
    Tensor4<float> x(1, 2, 6, 6, 0.37f);
    for (auto [h, w] : {std::pair{12, 12}, {3, 3}, {9, 4}}) {
      auto y = bicubic_resize(x, h, w);
      for (float v : y.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
    }
  }

  SUBCASE("identity when the target equals the source dims") {
    auto x = testutil::random_tensor<float>(rng, 1, 3, 7, 9, 0.0, 1.0);
    auto y = bicubic_resize(x, 7, 9);
    CHECK(max_abs_diff(x, y) < 1e-6);
  }

  SUBCASE("x2 upsample reproduces a linear ramp in the interior") {
    Tensor4<float> x(1, 1, 8, 8);
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) x.at(0, 0, y, xx) = static_cast<float>(2 * y + 3 * xx);
    auto up = bicubic_resize(x, 16, 16);
    // interior output pixel maps to src (oy+0.5)/2-0.5; cubic interpolation
    // is exact on degree-1 polynomials
    for (int oy = 4; oy < 12; ++oy)
      for (int ox = 4; ox < 12; ++ox) {
        const double sy = (oy + 0.5) / 2.0 - 0.5;
        const double sx = (ox + 0.5) / 2.0 - 0.5;
        CHECK(up.at(0, 0, oy, ox) == doctest::Approx(2.0 * sy + 3.0 * sx).epsilon(1e-5));
      }
  }

  SUBCASE("downscale matches the direct kernel-evaluation oracle") {
    auto x = testutil::random_tensor<float>(rng, 1, 3, 8, 8, 0.0, 1.0);
    auto got = bicubic_resize(x, 4, 4);
    auto want = testutil::bicubic_direct_oracle(x, 4, 4);
    CHECK(max_abs_diff(got, want) < 1e-5);
  }

  SUBCASE("upscale and asymmetric resizes match the oracle too") {
    auto x = testutil::random_tensor<float>(rng, 1, 2, 6, 9, 0.0, 1.0);
    for (auto [h, w] : {std::pair{12, 18}, {18, 27}, {3, 5}, {2, 27}}) {
      auto got = bicubic_resize(x, h, w);
      auto want = testutil::bicubic_direct_oracle(x, h, w);
      CHECK(max_abs_diff(got, want) < 1e-5);
    }
  }
}

TEST_CASE("degrade dims, constancy and round-trip sanity") {
  SUBCASE("constant image degrades to the constant") {
    ImageU8 img(12, 8);
    for (auto& p : img.pixels) p = 77;
    auto lr = degrade(img, 4);
    CHECK(lr.width == 3);
    CHECK(lr.height == 2);
    for (auto p : lr.pixels) CHECK(static_cast<int>(p) == 77);
  }

  SUBCASE("dims are exactly the cropped extents over the scale") {
    ImageU8 img = smooth_image(37, 23);
    auto lr = degrade(img, 4);
    CHECK(lr.width == 9);   // 36/4
    CHECK(lr.height == 5);  // 20/4
  }

  SUBCASE("degrade then upscale stays recognizable (> 20 dB)") {
    ImageU8 hr = smooth_image(64, 64);
    auto lr = degrade(hr, 2);
    auto sr = to_u8(bicubic_resize(to_float(lr), 64, 64));
    double se = 0.0;
    for (std::size_t k = 0; k < hr.pixels.size(); ++k) {
      const double d = static_cast<double>(hr.pixels[k]) - sr.pixels[k];
      se += d * d;
    }
    const double mse = se / static_cast<double>(hr.pixels.size());
    const double psnr = 10.0 * std::log10(255.0 * 255.0 / mse);
    CHECK(std::isfinite(psnr));
    CHECK(psnr > 20.0);
  }
}

TEST_CASE("splitmix64 reference vectors and helpers") {
  Rng a(0);
  CHECK(a.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(a.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(a.next_u64() == 0x06C45D188009454FULL);

  Rng b(42), c(42);
  for (int i = 0; i < 100; ++i) CHECK(b.next_u64() == c.next_u64());

  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(d.next_below(13) < 13);
    const double u = d.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("dataset layout, manifest and pre-degraded LR") {
  const std::string dir = testutil::temp_dir("ds");
  fs::create_directories(dir + "/HR");
  ImageU8 a = smooth_image(24, 16);
  ImageU8 b = smooth_image(20, 20);
  save_image(dir + "/HR/alpha.ppm", a);
  save_image(dir + "/HR/beta.ppm", b);

  SUBCASE("directory scan is sorted and LR generated on the fly") {
    auto ds = Dataset::open(dir + "/HR", 2);
    REQUIRE(ds.entries.size() == 2);
    CHECK(ds.entries[0].name == "alpha");
    CHECK(ds.entries[1].name == "beta");
    CHECK(ds.entries[0].lr.width == 12);
    CHECK(ds.entries[0].lr.height == 8);
    CHECK(ds.entries[0].lr == degrade(a, 2));
  }

  SUBCASE("sibling LR directory is picked up by naming convention") {
    fs::create_directories(dir + "/HR_LRx2");
    ImageU8 custom(12, 8);
    for (auto& p : custom.pixels) p = 9;  // deliberately not the degraded content
    save_image(dir + "/HR_LRx2/alphax2.ppm", custom);
    auto ds = Dataset::open(dir + "/HR", 2);
    CHECK(ds.entries[0].lr == custom);
    CHECK(ds.entries[1].lr == degrade(b, 2));  // beta still on the fly
    fs::remove_all(dir + "/HR_LRx2");
  }

  SUBCASE("explicit LR dir with mismatched dims is an error") {
    fs::create_directories(dir + "/badlr");
    save_image(dir + "/badlr/alphax2.ppm", smooth_image(5, 5));
    CHECK_THROWS_AS(Dataset::open(dir + "/HR", 2, dir + "/badlr"), DataError);
    fs::remove_all(dir + "/badlr");
  }

  SUBCASE("manifest mode lists HR paths one per line") {
    std::ofstream(dir + "/list.txt") << "# two images\nHR/alpha.ppm\nHR/beta.ppm\n";
    auto ds = Dataset::open(dir + "/list.txt", 2);
    CHECK(ds.entries.size() == 2);
  }

  SUBCASE("empty dataset errors") {
    fs::create_directories(dir + "/empty");
    CHECK_THROWS_AS(Dataset::open(dir + "/empty", 2), DataError);
  }

  fs::remove_all(dir);
}

TEST_CASE("sample_batch determinism, bounds and commutativity") {
  const std::string dir = testutil::temp_dir("batch");
  fs::create_directories(dir);
  save_image(dir + "/img.ppm", smooth_image(48, 40));
  save_image(dir + "/img2.ppm", smooth_image(36, 36));
  auto ds = Dataset::open(dir, 2);

  SUBCASE("fixed seed reproduces the batch bit-exactly") {
    Rng r1(9), r2(9);
    auto b1 = sample_batch(ds, r1, 6, 8, 2);
    auto b2 = sample_batch(ds, r2, 6, 8, 2);
    REQUIRE(b1.size() == 6);
    for (std::size_t i = 0; i < b1.size(); ++i) {
      CHECK(b1[i].image_index == b2[i].image_index);
      CHECK(b1[i].x0 == b2[i].x0);
      CHECK(b1[i].y0 == b2[i].y0);
      CHECK(bit_equal(b1[i].lr, b2[i].lr));
      CHECK(bit_equal(b1[i].hr, b2[i].hr));
    }
  }

  SUBCASE("crops stay in bounds over many draws") {
    Rng rng(10);
    for (int rep = 0; rep < 500; ++rep) {
      auto batch = sample_batch(ds, rng, 4, 8, 2);
      for (const auto& p : batch) {
        const auto& e = ds.entries[static_cast<std::size_t>(p.image_index)];
        CHECK(p.x0 >= 0);
        CHECK(p.y0 >= 0);
        CHECK(p.x0 + 8 <= e.lr.width);
        CHECK(p.y0 + 8 <= e.lr.height);
        CHECK(p.lr.h == 8);
        CHECK(p.hr.h == 16);
      }
    }
  }

  SUBCASE("augmentation commutes with downscaling on aligned pairs") {
    Rng rng(11);
    auto batch = sample_batch(ds, rng, 8, 16, 2);
    for (const auto& p : batch) {
      auto down = bicubic_resize(p.hr, 16, 16);
      // compare away from the patch border where the full-image degrade saw
      // context this local downscale cannot
      double worst = 0.0;
      for (int c = 0; c < 3; ++c)
        for (int y = 4; y < 12; ++y)
          for (int x = 4; x < 12; ++x)
            worst = std::max(worst, std::fabs(static_cast<double>(down.at(0, c, y, x)) -
                                              p.lr.at(0, c, y, x)));
      CHECK(worst < 2.5e-3);  // LR is u8-quantized; half a quantum plus slack
    }
  }

  SUBCASE("undersized images are skipped, empty eligible set errors") {
    Rng rng(12);
    // patch larger than the smaller image: still works off the bigger one
    auto batch = sample_batch(ds, rng, 4, 20, 2);
    for (const auto& p : batch) CHECK(p.image_index == 0);
    // patch larger than everything: error
    CHECK_THROWS_AS(sample_batch(ds, rng, 4, 64, 2), DataError);
  }

  fs::remove_all(dir);
}

TEST_CASE("rotate90 and hflip are exact index permutations") {
  Rng rng(13);
  auto x = testutil::random_tensor<float>(rng, 1, 2, 3, 5);
  auto r1 = rotate90(x, 1);
  CHECK(r1.h == 5);
  CHECK(r1.w == 3);
  CHECK(r1.at(0, 0, 0, 0) == x.at(0, 0, 2, 0));  // top-left from bottom-left (cw)
  auto r4 = rotate90(x, 4);
  CHECK(bit_equal(r4, x));
  CHECK(bit_equal(hflip(hflip(x)), x));
}
