#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "esr/image.hpp"
#include "esr/taxonomy.hpp"

namespace esr {

/// Surface images are taken before laser splitting, section images after.
/// Each view is its own dataset with its own network.
enum class View : std::uint8_t { Surface = 0, Section = 1 };

inline constexpr std::array<View, 2> kAllViews = {View::Surface, View::Section};

std::string_view to_string(View v);
View parse_view(std::string_view token);

/// Network input side length.
inline constexpr int kInputSize = 256;

struct StoneObservation {
  std::string observation_id;
  std::string stone_id;  ///< physical stone; groups observations for splitting
  View view = View::Surface;
  ClassLabel label = ClassLabel::Ia;
  std::string image_path;  ///< as written in the manifest
  Raster image;
};

/// Row of the manifest CSV before image loading.
struct ManifestRow {
  std::string observation_id;
  std::string stone_id;
  View view = View::Surface;
  ClassLabel label = ClassLabel::Ia;
  std::string image_path;
};

inline constexpr std::string_view kManifestHeader = "observation_id,stone_id,view,label,image_path";

/// Reads and validates the manifest rows. Image paths are resolved relative to
/// the manifest's directory when `check_images` is set, and a missing file is
/// a ValidationError, as are unknown labels, bad views and duplicate ids.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path, bool check_images = true);

/// read_manifest + PNG decoding of every image.
std::vector<StoneObservation> parse_manifest(const std::filesystem::path& path);

std::string format_manifest(const std::vector<ManifestRow>& rows);

/// Center square crop to min(H, W), bilinear resample to 256x256, scale to
/// [0, 1]. Throws ValidationError for rasters that are not 3-channel.
Image preprocess_image(const Raster& raw);

struct ClassCounts {
  std::size_t images = 0;
  std::size_t stones = 0;
  bool operator==(const ClassCounts&) const = default;
};

/// Image and unique-stone counts per (view, class).
struct CorpusSummary {
  std::array<std::array<ClassCounts, kNumClasses>, 2> counts{};

  const ClassCounts& at(View v, ClassLabel c) const { return counts[std::size_t(v)][index_of(c)]; }
  ClassCounts& at(View v, ClassLabel c) { return counts[std::size_t(v)][index_of(c)]; }
  ClassCounts total(View v) const;
};

/// Works on any record with `view`, `label` and `stone_id` members.
template <typename Observation>
CorpusSummary corpus_summary(const std::vector<Observation>& observations) {
  CorpusSummary summary;
  std::array<std::array<std::set<std::string>, kNumClasses>, 2> stones;
  for (const auto& obs : observations) {
    summary.at(obs.view, obs.label).images += 1;
    stones[std::size_t(obs.view)][index_of(obs.label)].insert(obs.stone_id);
  }
  for (auto v : kAllViews) {
    for (auto c : kAllClasses) {
      summary.at(v, c).stones = stones[std::size_t(v)][index_of(c)].size();
    }
  }
  return summary;
}

/// "surface: 347 images / 284 stones" style lines, one per view.
std::string format_summary(const CorpusSummary& summary);

}  // namespace esr
