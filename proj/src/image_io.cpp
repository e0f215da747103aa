#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "hran/data.hpp"
#include "hran/errors.hpp"

#ifdef HRAN_WITH_PNG
#include <png.h>
#endif

namespace hran {

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// P6 parser. Tracks the byte offset so malformed files report where they
// broke.
struct PpmReader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  [[noreturn]] void fail(const std::string& what) {
    throw DataError(path + ": " + what + " at byte " + std::to_string(pos));
  }
  void skip_space_and_comments() {
    while (pos < buf.size()) {
      const char ch = buf[pos];
      if (ch == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }
  int read_int() {
    skip_space_and_comments();
    if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') fail("expected integer");
    long v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1 << 30) fail("integer out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

ImageU8 load_ppm(const std::string& path, const std::string& buf) {
  PpmReader r{buf, 0, path};
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') r.fail("not a P6 PPM");
  r.pos = 2;
  const int w = r.read_int();
  const int h = r.read_int();
  const int maxval = r.read_int();
  if (w <= 0 || h <= 0) r.fail("non-positive dimensions");
  if (maxval != 255) {
    throw DataError(path + ": unsupported bit depth (maxval " + std::to_string(maxval) +
                    ", only 255 handled)");
  }
  // exactly one whitespace byte separates the header from the raster
  if (r.pos >= buf.size() ||
      !(buf[r.pos] == ' ' || buf[r.pos] == '\t' || buf[r.pos] == '\r' || buf[r.pos] == '\n')) {
    r.fail("missing whitespace before raster");
  }
  ++r.pos;
  const std::size_t need = static_cast<std::size_t>(3) * w * h;
  if (buf.size() - r.pos < need) r.fail("truncated raster");
  ImageU8 img(w, h);
  std::memcpy(img.pixels.data(), buf.data() + r.pos, need);
  return img;
}

void save_ppm(const std::string& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("short write on image: " + path);
}

#ifdef HRAN_WITH_PNG
ImageU8 load_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError(path + ": png read failed: " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  ImageU8 img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    throw DataError(path + ": png decode failed: " + png.message);
  }
  return img;
}

void save_png(const std::string& path, const ImageU8& img) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw DataError(path + ": png write failed: " + png.message);
  }
}
#endif

}  // namespace

bool png_supported() {
#ifdef HRAN_WITH_PNG
  return true;
#else
  return false;
#endif
}

ImageU8 load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '6') return load_ppm(path, buf);
  if (buf.size() >= 8 && std::memcmp(buf.data(), "\x89PNG\r\n\x1a\n", 8) == 0) {
#ifdef HRAN_WITH_PNG
    return load_png(path);
#else
    throw DataError(path + ": PNG input but this build has no PNG support");
#endif
  }
  throw DataError(path + ": unrecognized image format at byte 0");
}

void save_image(const std::string& path, const ImageU8& img) {
  if (has_suffix(path, ".png")) {
#ifdef HRAN_WITH_PNG
    save_png(path, img);
    return;
#else
    throw DataError(path + ": PNG output requested but this build has no PNG support");
#endif
  }
  save_ppm(path, img);
}

}  // namespace hran
