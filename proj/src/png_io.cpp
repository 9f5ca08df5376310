#include "hcdg/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "hcdg/common.hpp"

namespace hcdg::png {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void png_warn(png_structp, png_const_charp) {}

void write_bytes(const std::filesystem::path& path, int h, int w, int color_type, int channels,
                 const std::vector<uint8_t>& pixels) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (!png) throw DataError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) png_write_row(png, pixels.data() + static_cast<size_t>(y) * w * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int h = 0;
  int w = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
  const char* problem = nullptr;
};

// Kept out of line so the caller's state stays in memory across a longjmp.
__attribute__((noinline)) void decode_body(png_structp png, png_infop info, Decoded* out) {
  png_read_info(png, info);
  const int ct = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8) {
    out->problem = "expected 8-bit PNG";
    return;
  }
  if (ct != PNG_COLOR_TYPE_GRAY && ct != PNG_COLOR_TYPE_RGB) {
    out->problem = "unsupported PNG color type";
    return;
  }
  out->channels = ct == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  out->h = static_cast<int>(png_get_image_height(png, info));
  out->w = static_cast<int>(png_get_image_width(png, info));
  out->pixels.resize(static_cast<size_t>(out->h) * out->w * out->channels);
  for (int y = 0; y < out->h; ++y) {
    png_read_row(png, out->pixels.data() + static_cast<size_t>(y) * out->w * out->channels, nullptr);
  }
  png_read_end(png, nullptr);
}

Decoded read_bytes(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (!png) throw DataError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  Decoded out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode " + path.string());
  }
  png_init_io(png, f.get());
  decode_body(png, info, &out);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.problem) throw DataError(path.string() + ": " + out.problem);
  return out;
}

}  // namespace

uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

void quantize(Image& img) {
  for (double& v : img.data()) v = from_byte(to_byte(v));
}

void write_image(const std::filesystem::path& path, const Image& img) {
  const int c = img.channels();
  if (c != 1 && c != 3) throw DataError("write_image: only 1- or 3-channel images are supported");
  std::vector<uint8_t> px(static_cast<size_t>(img.height()) * img.width() * c);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int ch = 0; ch < c; ++ch) px[(static_cast<size_t>(y) * img.width() + x) * c + ch] = to_byte(img.at(ch, y, x));
  write_bytes(path, img.height(), img.width(), c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, c, px);
}

Image read_image(const std::filesystem::path& path) {
  const Decoded d = read_bytes(path);
  const int h = d.h, w = d.w, c = d.channels;
  const auto& px = d.pixels;
  Image img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) img.at(ch, y, x) = from_byte(px[(static_cast<size_t>(y) * w + x) * c + ch]);
  return img;
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  if (mask.channels() > 8) throw DataError("write_mask: at most 8 classes");
  std::vector<uint8_t> px(mask.plane_size(), 0);
  for (int c = 0; c < mask.channels(); ++c) {
    const auto p = mask.plane(c);
    for (size_t i = 0; i < px.size(); ++i)
      if (p[i]) px[i] |= static_cast<uint8_t>(1u << c);
  }
  write_bytes(path, mask.height(), mask.width(), PNG_COLOR_TYPE_GRAY, 1, px);
}

BinaryMask read_mask(const std::filesystem::path& path, int channels) {
  const Decoded d = read_bytes(path);
  const int h = d.h, w = d.w;
  const auto& px = d.pixels;
  if (d.channels != 1) throw DataError(path.string() + ": mask PNG must be grayscale");
  BinaryMask m(h, w, channels);
  for (int ch = 0; ch < channels; ++ch) {
    auto p = m.plane(ch);
    for (size_t i = 0; i < p.size(); ++i) p[i] = (px[i] >> ch) & 1u;
  }
  for (uint8_t v : px)
    if (v >> channels) throw DataError(path.string() + ": mask has bits beyond the class count");
  return m;
}

}  // namespace hcdg::png
