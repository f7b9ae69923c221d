#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "esr/dataset.hpp"
#include "esr/image.hpp"
#include "esr/taxonomy.hpp"

namespace esr {

/// Minimum hue gap (degrees) between the mean colors of Ia and IIb regions,
/// guaranteed for every generated image in either view.
inline constexpr double kMinIaIIbHueGapDegrees = 8.0;

struct RegionMask {
  Morphology morphology = Morphology::Ia;
  Mask mask;
};

/// A phantom image with exact ground-truth masks.
///
/// stone_mask and tip_mask are disjoint. `regions` partitions stone_mask: one
/// entry for a pure class, two (Ia first) for a mixed class.
struct SyntheticObservation {
  StoneObservation observation;
  Mask stone_mask;
  Mask tip_mask;
  std::vector<RegionMask> regions;
  std::uint64_t seed = 0;
};

struct GeneratorSpec {
  std::array<std::array<ClassCounts, kNumClasses>, 2> counts{};
  int max_images_per_stone = 4;
  std::uint64_t seed = 20210301;
  double tip_probability = 0.05;

  const ClassCounts& at(View v, ClassLabel c) const { return counts[std::size_t(v)][index_of(c)]; }
  ClassCounts& at(View v, ClassLabel c) { return counts[std::size_t(v)][index_of(c)]; }

  /// The clinical corpus profile: 347 surface images of 284 stones and 236
  /// section images of 188 stones.
  static GeneratorSpec paper_default(std::uint64_t seed = 20210301);
};

/// One phantom image of a fresh stone. Deterministic in (label, view, seed).
SyntheticObservation generate_observation(ClassLabel label, View view, std::uint64_t seed,
                                          double tip_probability = 0.05);

/// Image `image_seed` of the stone `stone_seed`. All images of a stone share
/// its outline, texture and region layout; viewpoint, illumination, noise and
/// the endoscope tip vary per image.
SyntheticObservation render_stone_image(ClassLabel label, View view, std::uint64_t stone_seed,
                                        std::uint64_t image_seed, double tip_probability);

/// Validates counts (images >= stones, stones > 0 when images > 0, and no
/// stone needing more than max_images_per_stone images); ValidationError
/// otherwise.
void validate(const GeneratorSpec& spec);

/// Images per stone for one (view, class) cell: every stone gets one, the
/// remainder is spread at random under the per-stone cap.
std::vector<int> images_per_stone(const GeneratorSpec& spec, View view, ClassLabel label);

/// Exactly the requested counts, ordered by view, class, stone, image.
std::vector<SyntheticObservation> generate_corpus(const GeneratorSpec& spec);

/// Hue (degrees, [0, 360)) of the mean RGB color under the mask.
double mean_hue_degrees(const Raster& image, const Mask& mask);

struct MaskPaths {
  std::string stone_mask;
  std::string tip_mask;
  std::vector<std::pair<Morphology, std::string>> regions;
};

/// Writes images/, masks/, manifest.csv and masks.json under `dir`. Paths in
/// both files are relative to `dir`.
void write_corpus(const std::filesystem::path& dir, const std::vector<SyntheticObservation>& corpus);

std::map<std::string, MaskPaths> read_mask_sidecar(const std::filesystem::path& path);

}  // namespace esr
