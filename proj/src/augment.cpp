#include "esr/augment.hpp"

#include <cmath>
#include <numbers>

#include "esr/error.hpp"

namespace esr {

void validate(const AugmentConfig& config) {
  if (config.scaling_range < 0 || config.rotation_range < 0 || config.translation_range < 0) {
    throw ValidationError("augmentation ranges must be non-negative");
  }
  if (config.scaling_range >= 1.0) {
    throw ValidationError("scaling_range must be < 1");
  }
}

SampledTransform sample_transform(Rng& rng, const AugmentConfig& config) {
  SampledTransform t;
  const double flip_h = rng.uniform();
  const double flip_v = rng.uniform();
  const double scale = rng.uniform(-1.0, 1.0);
  const double rotation = rng.uniform(-1.0, 1.0);
  const double sx = rng.uniform(-1.0, 1.0);
  const double sy = rng.uniform(-1.0, 1.0);
  t.flip_h = config.horizontal_flip && flip_h < 0.5;
  t.flip_v = config.vertical_flip && flip_v < 0.5;
  t.scale = 1.0 + config.scaling_range * scale;
  t.rotation_deg = config.rotation_range * rotation;
  t.shift_x = config.translation_range * sx;
  t.shift_y = config.translation_range * sy;
  return t;
}

Image apply(const SampledTransform& t, const Image& img) {
  Image out(img.channels, img.height, img.width);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  const double theta = t.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double shift_x = t.shift_x * img.width;
  const double shift_y = t.shift_y * img.height;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      // Invert: translate, rotate, scale, flip.
      const double x3 = (c - cx) - shift_x;
      const double y3 = (r - cy) - shift_y;
      const double x2 = cos_t * x3 + sin_t * y3;
      const double y2 = -sin_t * x3 + cos_t * y3;
      double x1 = x2 / t.scale;
      double y1 = y2 / t.scale;
      if (t.flip_h) {
        x1 = -x1;
      }
      if (t.flip_v) {
        y1 = -y1;
      }
      const double src_x = x1 + cx;
      const double src_y = y1 + cy;
      for (int ch = 0; ch < img.channels; ++ch) {
        out.at(ch, r, c) = sample_bilinear(img.plane(ch), img.height, img.width, src_y, src_x, EdgeMode::Reflect);
      }
    }
  }
  return out;
}

}  // namespace esr
