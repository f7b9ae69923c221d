#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "esr/classifier.hpp"
#include "esr/dataset.hpp"
#include "esr/image.hpp"

namespace esr {

/// Grad-CAM map at input resolution, values in [0, 1].
struct HeatMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  ClassLabel target_class = ClassLabel::Ia;
  int peak_row = 0;
  int peak_col = 0;

  double at(int row, int col) const { return values[std::size_t(row) * width + col]; }
  bool is_zero() const;
};

/// Grad-CAM from last-stage activations and class-score gradients, both
/// (1, K, H', W'): weights are the spatial means of the gradients, the coarse
/// map is relu(sum_k weight_k * A_k), then it is bilinearly upsampled to
/// out_height x out_width and divided by its maximum.
template <typename T>
HeatMap grad_cam_from(const nn::Tensor<T>& features, const nn::Tensor<T>& gradients, ClassLabel target,
                      int out_height, int out_width);

/// The coarse (pre-upsampling, unnormalized) map.
template <typename T>
std::vector<double> grad_cam_coarse(const nn::Tensor<T>& features, const nn::Tensor<T>& gradients);

template <typename T>
HeatMap grad_cam(const nn::Network<T>& net, const nn::Tensor<T>& x, ClassLabel target);

HeatMap grad_cam(const TrainedModel& model, const Image& img, ClassLabel target);

enum class HotspotCategory : std::uint8_t { InStone = 0, OutsideStone = 1, EndoscopeTip = 2 };
inline constexpr std::array<HotspotCategory, 3> kAllHotspotCategories = {
    HotspotCategory::InStone, HotspotCategory::OutsideStone, HotspotCategory::EndoscopeTip};

std::string_view to_string(HotspotCategory c);
HotspotCategory parse_hotspot_category(std::string_view token);

struct HotspotThresholds {
  double hot_level = 0.8;      ///< hot region: pixels >= hot_level
  double tip_fraction = 0.25;  ///< of the hot region on the tip mask
  double stone_fraction = 0.5;  ///< of the hot region on the stone mask

  bool operator==(const HotspotThresholds&) const = default;
};

void validate(const HotspotThresholds& t);

class NoHotspotError : public std::runtime_error {
 public:
  NoHotspotError() : std::runtime_error("no hotspot") {}
};

/// Tip first, then stone, else outside. Throws NoHotspotError on a zero map
/// and ValidationError when the masks are not aligned with the map.
HotspotCategory localize_hotspot(const HeatMap& map, const Mask& stone_mask, const Mask& tip_mask,
                                 const HotspotThresholds& thresholds = {});

/// Inferno colormap, polynomial fit; t clamped to [0, 1]; RGB in [0, 1].
std::array<double, 3> inferno(double t);

inline constexpr double kOverlayAlpha = 0.4;

/// out = img * (1 - a*v) + inferno(v) * a*v per pixel, so zero heat leaves the
/// image untouched.
Raster overlay(const Image& img, const HeatMap& map, double alpha = kOverlayAlpha);

struct HotspotCase {
  View view = View::Surface;
  bool correct = false;
  HotspotCategory category = HotspotCategory::InStone;
};

struct HotspotTally {
  std::size_t correct = 0;
  std::size_t misclassified = 0;
  /// counts[correct ? 1 : 0][category]
  std::array<std::array<std::size_t, 3>, 2> counts{};

  std::size_t count(bool was_correct, HotspotCategory c) const {
    return counts[was_correct ? 1 : 0][static_cast<std::size_t>(c)];
  }
  /// Percentage within the correct or misclassified group; empty group -> nullopt.
  std::optional<double> rate(bool was_correct, HotspotCategory c) const;
};

struct HotspotRateReport {
  std::array<HotspotTally, 2> per_view{};

  const HotspotTally& at(View v) const { return per_view[std::size_t(v)]; }
  HotspotTally& at(View v) { return per_view[std::size_t(v)]; }
  std::optional<double> in_stone_rate_correct(View v) const { return at(v).rate(true, HotspotCategory::InStone); }
  std::optional<double> outside_rate_misclassified(View v) const {
    return at(v).rate(false, HotspotCategory::OutsideStone);
  }
  std::optional<double> tip_rate_misclassified(View v) const {
    return at(v).rate(false, HotspotCategory::EndoscopeTip);
  }
};

HotspotRateReport hotspot_rates(const std::vector<HotspotCase>& cases);

/// CSV `view,correct,category,count,rate`, one row per (view, group,
/// category); rate has one decimal and is empty for an empty group.
std::string format_hotspot_csv(const HotspotRateReport& report);

}  // namespace esr
