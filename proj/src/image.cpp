#include "esr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "esr/io.hpp"

namespace esr {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

namespace {

// Half-sample symmetric reflection: ... c b a | a b c ... | c b a ...
int reflect_index(int i, int n) {
  if (n == 1) {
    return 0;
  }
  const int period = 2 * n;
  i %= period;
  if (i < 0) {
    i += period;
  }
  return i < n ? i : period - 1 - i;
}

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

}  // namespace

float sample_bilinear(const float* plane, int height, int width, double row, double col, EdgeMode edge) {
  const double r0f = std::floor(row);
  const double c0f = std::floor(col);
  const auto tr = static_cast<float>(row - r0f);
  const auto tc = static_cast<float>(col - c0f);
  const int r0 = static_cast<int>(r0f);
  const int c0 = static_cast<int>(c0f);
  auto fix = edge == EdgeMode::Reflect ? reflect_index : clamp_index;
  const int ra = fix(r0, height);
  const int rb = fix(r0 + 1, height);
  const int ca = fix(c0, width);
  const int cb = fix(c0 + 1, width);
  const float v00 = plane[std::size_t(ra) * width + ca];
  const float v01 = plane[std::size_t(ra) * width + cb];
  const float v10 = plane[std::size_t(rb) * width + ca];
  const float v11 = plane[std::size_t(rb) * width + cb];
  const float top = v00 + tc * (v01 - v00);
  const float bottom = v10 + tc * (v11 - v10);
  return top + tr * (bottom - top);
}

Image resize_bilinear(const Image& src, int out_height, int out_width) {
  Image out(src.channels, out_height, out_width);
  const double sy = static_cast<double>(src.height) / out_height;
  const double sx = static_cast<double>(src.width) / out_width;
  for (int c = 0; c < src.channels; ++c) {
    const float* plane = src.plane(c);
    for (int r = 0; r < out_height; ++r) {
      const double y = (r + 0.5) * sy - 0.5;
      for (int col = 0; col < out_width; ++col) {
        const double x = (col + 0.5) * sx - 0.5;
        out.at(c, r, col) = sample_bilinear(plane, src.height, src.width, y, x, EdgeMode::Clamp);
      }
    }
  }
  return out;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int height, int width, int out_height,
                                    int out_width) {
  std::vector<double> out(std::size_t(out_height) * out_width);
  const double sy = static_cast<double>(height) / out_height;
  const double sx = static_cast<double>(width) / out_width;
  for (int r = 0; r < out_height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, double(height - 1));
    const int r0 = static_cast<int>(std::floor(y));
    const int r1 = std::min(r0 + 1, height - 1);
    const double ty = y - r0;
    for (int c = 0; c < out_width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, double(width - 1));
      const int c0 = static_cast<int>(std::floor(x));
      const int c1 = std::min(c0 + 1, width - 1);
      const double tx = x - c0;
      const double a = src[std::size_t(r0) * width + c0];
      const double b = src[std::size_t(r0) * width + c1];
      const double d = src[std::size_t(r1) * width + c0];
      const double e = src[std::size_t(r1) * width + c1];
      const double top = a + tx * (b - a);
      const double bottom = d + tx * (e - d);
      out[std::size_t(r) * out_width + c] = top + ty * (bottom - top);
    }
  }
  return out;
}

Raster to_raster(const Image& img) {
  if (img.channels != 3) {
    throw std::invalid_argument("to_raster: expected 3 channels");
  }
  Raster out(img.height, img.width, 3);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(img.at(ch, r, c), 0.0f, 1.0f);
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return out;
}

Raster mask_to_raster(const Mask& mask) {
  Raster out(mask.height, mask.width, 1);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    out.pixels[i] = mask.bits[i] ? 255 : 0;
  }
  return out;
}

Mask raster_to_mask(const Raster& raster) {
  Mask out(raster.height, raster.width);
  for (int r = 0; r < raster.height; ++r) {
    for (int c = 0; c < raster.width; ++c) {
      out.set(r, c, raster.at(r, c, 0) >= 128);
    }
  }
  return out;
}

namespace {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void no_flush(png_structp) {}

}  // namespace

Raster read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, decltype(&std::fclose)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) {
    throw std::runtime_error("cannot open image " + path.string());
  }
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path.string());
  }
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) {
    throw std::runtime_error("png_create_read_struct failed");
  }
  g.info = png_create_info_struct(g.png);
  if (!g.info) {
    throw std::runtime_error("png_create_info_struct failed");
  }
  Raster out;
  if (setjmp(png_jmpbuf(g.png))) {
    throw std::runtime_error("corrupt PNG: " + path.string());
  }
  png_init_io(g.png, file.get());
  png_set_sig_bytes(g.png, 8);
  png_read_info(g.png, g.info);
  const png_byte color = png_get_color_type(g.png, g.info);
  const png_byte depth = png_get_bit_depth(g.png, g.info);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(g.png);
  }
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(g.png);
  }
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(g.png);
  }
  if (depth == 16) {
    png_set_strip_16(g.png);
  }
  png_read_update_info(g.png, g.info);
  out.width = static_cast<int>(png_get_image_width(g.png, g.info));
  out.height = static_cast<int>(png_get_image_height(g.png, g.info));
  out.channels = png_get_channels(g.png, g.info);
  out.pixels.resize(std::size_t(out.width) * out.height * out.channels);
  std::vector<png_bytep> rows(out.height);
  for (int r = 0; r < out.height; ++r) {
    rows[r] = out.pixels.data() + std::size_t(r) * out.width * out.channels;
  }
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);
  return out;
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
  int color = 0;
  switch (raster.channels) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 2: color = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGBA; break;
    default: throw std::invalid_argument("encode_png: unsupported channel count");
  }
  std::vector<std::uint8_t> out;
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) {
    throw std::runtime_error("png_create_write_struct failed");
  }
  g.info = png_create_info_struct(g.png);
  if (!g.info) {
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(g.png))) {
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(g.png, &out, append_bytes, no_flush);
  png_set_IHDR(g.png, g.info, raster.width, raster.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  for (int r = 0; r < raster.height; ++r) {
    png_write_row(g.png, raster.pixels.data() + std::size_t(r) * raster.width * raster.channels);
  }
  png_write_end(g.png, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  write_file_atomic(path, encode_png(raster));
}

}  // namespace esr
