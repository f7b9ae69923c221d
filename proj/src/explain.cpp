#include "esr/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "esr/error.hpp"

namespace esr {

bool HeatMap::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

template <typename T>
std::vector<double> grad_cam_coarse(const nn::Tensor<T>& features, const nn::Tensor<T>& gradients) {
  if (!(features.shape == gradients.shape) || features.shape.n != 1) {
    throw std::invalid_argument("grad_cam: features and gradients must share a (1, K, H, W) shape");
  }
  const int K = features.shape.c;
  const std::size_t plane = std::size_t(features.shape.h) * features.shape.w;
  std::vector<double> coarse(plane, 0.0);
  for (int k = 0; k < K; ++k) {
    const T* g = gradients.data.data() + k * plane;
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      alpha += g[i];
    }
    alpha /= double(plane);
    if (alpha == 0.0) {
      continue;
    }
    const T* a = features.data.data() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      coarse[i] += alpha * double(a[i]);
    }
  }
  for (auto& v : coarse) {
    v = std::max(v, 0.0);
  }
  return coarse;
}

template <typename T>
HeatMap grad_cam_from(const nn::Tensor<T>& features, const nn::Tensor<T>& gradients, ClassLabel target,
                      int out_height, int out_width) {
  const std::vector<double> coarse = grad_cam_coarse(features, gradients);
  HeatMap map;
  map.height = out_height;
  map.width = out_width;
  map.target_class = target;
  map.values = resize_bilinear(coarse, features.shape.h, features.shape.w, out_height, out_width);
  double peak = 0.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    map.values[i] = std::max(map.values[i], 0.0);
    if (map.values[i] > peak) {
      peak = map.values[i];
      arg = i;
    }
  }
  if (peak > 0.0) {
    for (auto& v : map.values) {
      v /= peak;
    }
    map.values[arg] = 1.0;
  }
  map.peak_row = static_cast<int>(arg / out_width);
  map.peak_col = static_cast<int>(arg % out_width);
  return map;
}

template <typename T>
HeatMap grad_cam(const nn::Network<T>& net, const nn::Tensor<T>& x, ClassLabel target) {
  const FeatureGrads<T> fg = feature_maps_and_grads(net, x, target);
  return grad_cam_from(fg.features, fg.gradients, target, x.shape.h, x.shape.w);
}

template std::vector<double> grad_cam_coarse<float>(const nn::Tensor<float>&, const nn::Tensor<float>&);
template std::vector<double> grad_cam_coarse<double>(const nn::Tensor<double>&, const nn::Tensor<double>&);
template HeatMap grad_cam_from<float>(const nn::Tensor<float>&, const nn::Tensor<float>&, ClassLabel, int, int);
template HeatMap grad_cam_from<double>(const nn::Tensor<double>&, const nn::Tensor<double>&, ClassLabel, int, int);
template HeatMap grad_cam<float>(const nn::Network<float>&, const nn::Tensor<float>&, ClassLabel);
template HeatMap grad_cam<double>(const nn::Network<double>&, const nn::Tensor<double>&, ClassLabel);

HeatMap grad_cam(const TrainedModel& model, const Image& img, ClassLabel target) {
  const FeatureGrads<float> fg = feature_maps_and_grads(model, img, target);
  return grad_cam_from(fg.features, fg.gradients, target, img.height, img.width);
}

std::string_view to_string(HotspotCategory c) {
  switch (c) {
    case HotspotCategory::InStone:
      return "in_stone";
    case HotspotCategory::OutsideStone:
      return "outside_stone";
    case HotspotCategory::EndoscopeTip:
      return "endoscope_tip";
  }
  return "?";
}

HotspotCategory parse_hotspot_category(std::string_view token) {
  for (auto c : kAllHotspotCategories) {
    if (token == to_string(c)) {
      return c;
    }
  }
  throw ValidationError("unknown hotspot category: " + std::string(token));
}

void validate(const HotspotThresholds& t) {
  const auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!in_unit(t.hot_level) || !in_unit(t.tip_fraction) || !in_unit(t.stone_fraction)) {
    throw ValidationError("hotspot thresholds must lie in (0, 1]");
  }
}

HotspotCategory localize_hotspot(const HeatMap& map, const Mask& stone_mask, const Mask& tip_mask,
                                 const HotspotThresholds& thresholds) {
  if (stone_mask.height != map.height || stone_mask.width != map.width || tip_mask.height != map.height ||
      tip_mask.width != map.width) {
    throw ValidationError("masks are not aligned with the heat map");
  }
  if (map.is_zero()) {
    throw NoHotspotError();
  }
  std::size_t hot = 0, on_tip = 0, on_stone = 0;
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      if (map.at(r, c) >= thresholds.hot_level) {
        ++hot;
        on_tip += tip_mask.at(r, c);
        on_stone += stone_mask.at(r, c);
      }
    }
  }
  if (hot == 0) {
    // Only reachable with hot_level above the map maximum.
    throw NoHotspotError();
  }
  if (double(on_tip) >= thresholds.tip_fraction * double(hot)) {
    return HotspotCategory::EndoscopeTip;
  }
  if (double(on_stone) >= thresholds.stone_fraction * double(hot)) {
    return HotspotCategory::InStone;
  }
  return HotspotCategory::OutsideStone;
}

std::array<double, 3> inferno(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr double c[7][3] = {
      {0.0002189403691192265, 0.001651004631001012, -0.01948089843709184},
      {0.1065134194856116, 0.5639564367884091, 3.932712388889277},
      {11.60249308247187, -3.972853965665698, -15.9423941062914},
      {-41.70399613139459, 17.43639888205313, 44.35414519872813},
      {77.162935699427, -33.40235894210092, -81.80730925738993},
      {-71.31942824499214, 32.62606426397723, 73.20951985803202},
      {25.13112622477341, -12.24266895238567, -23.07032500287172},
  };
  std::array<double, 3> rgb{};
  for (int ch = 0; ch < 3; ++ch) {
    double v = c[6][ch];
    for (int i = 5; i >= 0; --i) {
      v = v * t + c[i][ch];
    }
    rgb[ch] = std::clamp(v, 0.0, 1.0);
  }
  return rgb;
}

Raster overlay(const Image& img, const HeatMap& map, double alpha) {
  if (img.channels != 3 || img.height != map.height || img.width != map.width) {
    throw ValidationError("overlay: image and heat map are not aligned");
  }
  Image blended = img;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = map.at(r, c);
      if (v == 0.0) {
        continue;
      }
      const double w = alpha * v;
      const auto color = inferno(v);
      for (int ch = 0; ch < 3; ++ch) {
        blended.at(ch, r, c) = static_cast<float>(img.at(ch, r, c) * (1.0 - w) + color[ch] * w);
      }
    }
  }
  return to_raster(blended);
}

std::optional<double> HotspotTally::rate(bool was_correct, HotspotCategory c) const {
  const std::size_t group = was_correct ? correct : misclassified;
  if (group == 0) {
    return std::nullopt;
  }
  return 100.0 * double(count(was_correct, c)) / double(group);
}

HotspotRateReport hotspot_rates(const std::vector<HotspotCase>& cases) {
  HotspotRateReport report;
  for (const auto& k : cases) {
    auto& tally = report.at(k.view);
    (k.correct ? tally.correct : tally.misclassified) += 1;
    tally.counts[k.correct ? 1 : 0][static_cast<std::size_t>(k.category)] += 1;
  }
  return report;
}

std::string format_hotspot_csv(const HotspotRateReport& report) {
  std::string out = "view,correct,category,count,rate\n";
  char buf[64];
  for (auto v : kAllViews) {
    const auto& t = report.at(v);
    if (t.correct + t.misclassified == 0) {
      continue;
    }
    for (bool correct : {true, false}) {
      for (auto c : kAllHotspotCategories) {
        out += std::string(to_string(v)) + "," + (correct ? "true" : "false") + "," + std::string(to_string(c)) +
               "," + std::to_string(t.count(correct, c)) + ",";
        if (const auto r = t.rate(correct, c)) {
          std::snprintf(buf, sizeof(buf), "%.1f", *r);
          out += buf;
        }
        out += "\n";
      }
    }
  }
  return out;
}

}  // namespace esr
