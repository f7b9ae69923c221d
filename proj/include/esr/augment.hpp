#pragma once

#include "esr/image.hpp"
#include "esr/rng.hpp"

namespace esr {

/// Training-time augmentation ranges. Scaling is a zoom factor in
/// [1 - scaling_range, 1 + scaling_range]; rotation in degrees; translation as
/// a fraction of width/height.
struct AugmentConfig {
  double scaling_range = 0.3;
  double rotation_range = 50.0;
  double translation_range = 0.2;
  bool horizontal_flip = true;
  bool vertical_flip = true;

  /// Everything off; apply() is then the identity.
  static AugmentConfig none() { return {0.0, 0.0, 0.0, false, false}; }
  bool operator==(const AugmentConfig&) const = default;
};

/// Throws ValidationError on negative ranges or scaling_range >= 1.
void validate(const AugmentConfig& config);

struct SampledTransform {
  bool flip_h = false;
  bool flip_v = false;
  double scale = 1.0;
  double rotation_deg = 0.0;
  double shift_x = 0.0;  ///< fraction of width
  double shift_y = 0.0;  ///< fraction of height

  bool operator==(const SampledTransform&) const = default;
};

/// Uniform draws within each range; flips are fair coins when enabled.
/// Always consumes the same number of draws, whatever the config.
SampledTransform sample_transform(Rng& rng, const AugmentConfig& config);

/// Applies flip, scale, rotation, translation (in that order) about the image
/// center. Bilinear sampling; exposed borders are filled by half-sample
/// symmetric reflection. Output has the input's shape.
Image apply(const SampledTransform& t, const Image& img);

}  // namespace esr
