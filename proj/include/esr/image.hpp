#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace esr {

/// 8-bit raster, interleaved (row-major, channel-minor), as stored in PNG.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int h, int w, int c) : height(h), width(w), channels(c), pixels(std::size_t(h) * w * c, 0) {}

  std::uint8_t& at(int row, int col, int ch) { return pixels[(std::size_t(row) * width + col) * channels + ch]; }
  std::uint8_t at(int row, int col, int ch) const {
    return pixels[(std::size_t(row) * width + col) * channels + ch];
  }
  bool operator==(const Raster&) const = default;
};

/// Floating-point image, planar channel-major (C x H x W), the layout the
/// network consumes. Values produced by preprocessing lie in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

  float& at(int ch, int row, int col) { return data[(std::size_t(ch) * height + row) * width + col]; }
  float at(int ch, int row, int col) const { return data[(std::size_t(ch) * height + row) * width + col]; }
  const float* plane(int ch) const { return data.data() + std::size_t(ch) * height * width; }
  float* plane(int ch) { return data.data() + std::size_t(ch) * height * width; }
  bool operator==(const Image&) const = default;
};

/// Binary raster; nonzero means "inside".
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(std::size_t(h) * w, 0) {}

  bool at(int row, int col) const { return bits[std::size_t(row) * width + col] != 0; }
  void set(int row, int col, bool v) { bits[std::size_t(row) * width + col] = v ? 1 : 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const Mask&) const = default;
};

enum class EdgeMode { Clamp, Reflect };

/// Bilinear sample of one plane at fractional pixel coordinates (pixel
/// centers at integer positions). Out-of-range coordinates follow `edge`.
/// Interpolates as a + t*(b - a), so constant neighborhoods are reproduced
/// exactly.
float sample_bilinear(const float* plane, int height, int width, double row, double col, EdgeMode edge);

/// Bilinear resize with half-pixel centers and clamped edges.
Image resize_bilinear(const Image& src, int out_height, int out_width);
std::vector<double> resize_bilinear(const std::vector<double>& src, int height, int width, int out_height,
                                    int out_width);

/// Converts [0,1] floats to 8-bit RGB with rounding; channels must be 3.
Raster to_raster(const Image& img);
Raster mask_to_raster(const Mask& mask);
Mask raster_to_mask(const Raster& raster);

Raster read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Raster& raster);
void write_png(const std::filesystem::path& path, const Raster& raster);

}  // namespace esr
