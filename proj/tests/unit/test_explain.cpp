#include <doctest.h>

#include <cmath>
#include <memory>

#include "esr/error.hpp"
#include "esr/explain.hpp"
#include "esr/synth.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace esr;
using nn::Shape;
using nn::Tensor;

namespace {

// conv 3x3 (1 -> 2 channels, pad 1) + relu as the feature stage, then GAP and
// a dense head, on a 4x4 single-channel input. All weights fixed by hand.
nn::Network<double> one_conv_net() {
  std::vector<std::unique_ptr<nn::Layer<double>>> layers;
  layers.push_back(std::make_unique<nn::Conv2d<double>>(1, 2, 3, 1, 1, true));
  layers.push_back(std::make_unique<nn::ReLU<double>>());
  layers.push_back(std::make_unique<nn::GlobalAvgPool<double>>());
  layers.push_back(std::make_unique<nn::Dense<double>>(2, 5));
  nn::Network<double> net(std::move(layers), 2, Shape{1, 1, 4, 4});
  auto& conv = net.layer(0).params();
  conv[0].data = {1, 0, -1, 2, 0, -2, 1, 0, -1,            // vertical edge
                  0.5, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 0.5};  // blur
  conv[1].data = {0.1, -0.3};
  auto& head = net.layer(3).params();
  head[0].data = {0.7, -0.4,   // Ia
                  -1.0, 2.0,   // Ia+IIb
                  0.0, 0.0,    // Ia+IIIb
                  3.0, 1.0,    // IIb
                  -2.0, -0.5};  // IIIb
  head[1].data = {0, 0, 0, 0, 0};
  return net;
}

Tensor<double> fixture_input() {
  Tensor<double> x(Shape{1, 1, 4, 4});
  x.data = {0.0, 0.2, 0.9, 1.0,  //
            0.1, 0.3, 0.8, 0.7,  //
            0.0, 0.5, 0.6, 0.2,  //
            0.4, 0.1, 0.0, 0.3};
  return x;
}

// Heat map for the fixture, computed from scratch: conv by loops, relu,
// class-score gradient of GAP + dense is head_weight / 16 everywhere.
std::vector<double> hand_heat_map(const nn::Network<double>& net, const Tensor<double>& x, ClassLabel target) {
  const auto& w = net.layer(0).params()[0].data;
  const auto& b = net.layer(0).params()[1].data;
  const auto& head = net.layer(3).params()[0].data;
  std::vector<double> map(16, 0.0);
  for (int k = 0; k < 2; ++k) {
    const double alpha = head[index_of(target) * 2 + k] / 16.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double a = b[k];
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const int r = i + di, c = j + dj;
            if (r >= 0 && r < 4 && c >= 0 && c < 4) {
              a += w[k * 9 + (di + 1) * 3 + (dj + 1)] * x.data[r * 4 + c];
            }
          }
        }
        map[i * 4 + j] += alpha * std::max(0.0, a);
      }
    }
  }
  double mx = 0.0;
  for (auto& v : map) {
    v = std::max(0.0, v);
    mx = std::max(mx, v);
  }
  if (mx > 0.0) {
    for (auto& v : map) {
      v /= mx;
    }
  }
  return map;
}

HeatMap map_from(const std::vector<double>& values, int h, int w) {
  HeatMap m;
  m.height = h;
  m.width = w;
  m.values = values;
  std::size_t best = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  m.peak_row = static_cast<int>(best / w);
  m.peak_col = static_cast<int>(best % w);
  return m;
}

Mask rect_mask(int r0, int r1, int c0, int c1, int size = 256) {
  Mask m(size, size);
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      m.set(r, c, true);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("grad_cam: hand-built one-conv network") {
  const auto net = one_conv_net();
  const auto x = fixture_input();
  int nonzero_maps = 0;
  for (auto target : kAllClasses) {
    const HeatMap m = grad_cam(net, x, target);
    REQUIRE(m.height == 4);
    REQUIRE(m.width == 4);
    CHECK(m.target_class == target);
    const auto expected = hand_heat_map(net, x, target);
    for (int i = 0; i < 16; ++i) {
      REQUIRE(m.values[i] == doctest::Approx(expected[i]).epsilon(1e-6).scale(1.0));
    }
    if (!m.is_zero()) {
      ++nonzero_maps;
      CHECK(*std::max_element(m.values.begin(), m.values.end()) == 1.0);
      CHECK(m.at(m.peak_row, m.peak_col) == 1.0);
    }
  }
  CHECK(nonzero_maps >= 3);
  // Zero head row: all gradients vanish, so the map is identically zero.
  const HeatMap zero = grad_cam(net, x, ClassLabel::IaIIIb);
  CHECK(zero.is_zero());
  CHECK(std::all_of(zero.values.begin(), zero.values.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("grad_cam_from: single map with constant gradient") {
  Tensor<double> f(Shape{1, 1, 4, 4}), g(Shape{1, 1, 4, 4});
  f.data = {0.5, -1, 2, 0, 1, 1, -3, 4, 0, 0, 0, 0, 3, 2, 1, 0};
  std::fill(g.data.begin(), g.data.end(), 0.25);
  const HeatMap m = grad_cam_from(f, g, ClassLabel::Ia, 4, 4);
  for (int i = 0; i < 16; ++i) {
    REQUIRE(m.values[i] == doctest::Approx(std::max(0.0, f.data[i]) / 4.0).epsilon(1e-12));
  }
  CHECK(m.peak_row == 1);
  CHECK(m.peak_col == 3);
  std::fill(g.data.begin(), g.data.end(), 0.0);
  CHECK(grad_cam_from(f, g, ClassLabel::Ia, 4, 4).is_zero());
}

TEST_CASE("grad_cam: coarse map matches the loop oracle, non-negative, scale invariant") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = 1 + static_cast<int>(rng.below(6));
    const int H = 2 + static_cast<int>(rng.below(6));
    Tensor<double> f(Shape{1, K, H, H}), g(Shape{1, K, H, H});
    for (auto& v : f.data) {
      v = std::max(0.0, rng.uniform(-1, 2));
    }
    for (auto& v : g.data) {
      v = rng.uniform(-1, 1);
    }
    const auto coarse = grad_cam_coarse(f, g);
    const auto oracle_coarse = oracle::grad_cam_coarse(f, g);
    for (std::size_t i = 0; i < coarse.size(); ++i) {
      REQUIRE(coarse[i] == doctest::Approx(oracle_coarse[i]).epsilon(1e-12).scale(1.0));
    }
    const HeatMap base = grad_cam_from(f, g, ClassLabel::IIb, 32, 32);
    for (double v : base.values) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    for (double s : {1e-3, 0.5, 3.0, 1e4}) {
      auto gs = g;
      for (auto& v : gs.data) {
        v *= s;
      }
      const HeatMap scaled = grad_cam_from(f, gs, ClassLabel::IIb, 32, 32);
      for (std::size_t i = 0; i < base.values.size(); ++i) {
        REQUIRE(scaled.values[i] == doctest::Approx(base.values[i]).epsilon(1e-9).scale(1.0));
      }
    }
  }
}

TEST_CASE("grad_cam: upsampled peak stays within one cell of a dominant coarse peak") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> f(Shape{1, 3, 16, 16}), g(Shape{1, 3, 16, 16});
    for (auto& v : f.data) {
      v = rng.uniform(0, 1);
    }
    for (auto& v : g.data) {
      v = rng.uniform(0.1, 1);
    }
    // One cell clearly above the rest in every channel.
    const std::size_t cell = rng.below(256);
    for (int k = 0; k < 3; ++k) {
      f.data[std::size_t(k) * 256 + cell] = 4.0;
    }
    const auto coarse = grad_cam_coarse(f, g);
    REQUIRE(std::size_t(std::max_element(coarse.begin(), coarse.end()) - coarse.begin()) == cell);
    const double cr = 16.0 * double(cell / 16) + 7.5;
    const double cc = 16.0 * double(cell % 16) + 7.5;
    const HeatMap m = grad_cam_from(f, g, ClassLabel::Ia, 256, 256);
    REQUIRE(std::abs(m.peak_row - cr) <= 16.0);
    REQUIRE(std::abs(m.peak_col - cc) <= 16.0);
  }
}

TEST_CASE("grad_cam on the desk backbone") {
  const TrainedModel model = build_model(ModelConfig{});
  const auto s = generate_observation(ClassLabel::IIIb, View::Section, 3);
  const Image img = preprocess_image(s.observation.image);
  const HeatMap a = grad_cam(model, img, ClassLabel::IIIb);
  const HeatMap b = grad_cam(model, img, ClassLabel::IIIb);
  CHECK(a.height == 256);
  CHECK(a.width == 256);
  CHECK(a.values == b.values);
  for (double v : a.values) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("localize_hotspot: categories and thresholds") {
  const Mask stone = rect_mask(50, 150, 50, 150);
  const Mask tip = rect_mask(200, 256, 0, 80);
  const Mask none(256, 256);

  // Hot region entirely inside the stone.
  std::vector<double> v(256 * 256, 0.1);
  for (int r = 90; r < 110; ++r) {
    for (int c = 90; c < 110; ++c) {
      v[r * 256 + c] = 1.0;
    }
  }
  CHECK(localize_hotspot(map_from(v, 256, 256), stone, tip) == HotspotCategory::InStone);

  // Entirely on the tip.
  std::fill(v.begin(), v.end(), 0.0);
  for (int r = 210; r < 230; ++r) {
    for (int c = 10; c < 30; ++c) {
      v[r * 256 + c] = 0.9;
    }
  }
  CHECK(localize_hotspot(map_from(v, 256, 256), stone, tip) == HotspotCategory::EndoscopeTip);
  CHECK(localize_hotspot(map_from(v, 256, 256), stone, none) == HotspotCategory::OutsideStone);

  // 60 % on the stone, 40 % on background: a 10-row band, 6 rows inside.
  std::fill(v.begin(), v.end(), 0.0);
  for (int r = 144; r < 154; ++r) {
    for (int c = 60; c < 100; ++c) {
      v[r * 256 + c] = 1.0;
    }
  }
  CHECK(localize_hotspot(map_from(v, 256, 256), stone, tip) == HotspotCategory::InStone);
  // 40 % on the stone: outside.
  std::fill(v.begin(), v.end(), 0.0);
  for (int r = 146; r < 156; ++r) {
    for (int c = 60; c < 100; ++c) {
      v[r * 256 + c] = 1.0;
    }
  }
  CHECK(localize_hotspot(map_from(v, 256, 256), stone, tip) == HotspotCategory::OutsideStone);

  // Tip wins at 25 % even when the rest is on the stone.
  Mask tip2 = rect_mask(100, 110, 90, 100);  // 100 px
  Mask stone2 = rect_mask(100, 120, 90, 110);
  for (int r = 100; r < 110; ++r) {
    for (int c = 90; c < 100; ++c) {
      stone2.set(r, c, false);
    }
  }
  std::fill(v.begin(), v.end(), 0.0);
  for (int r = 100; r < 120; ++r) {
    for (int c = 90; c < 110; ++c) {
      v[r * 256 + c] = 1.0;  // 400 px hot, 100 on the tip
    }
  }
  CHECK(localize_hotspot(map_from(v, 256, 256), stone2, tip2) == HotspotCategory::EndoscopeTip);
  HotspotThresholds strict;
  strict.tip_fraction = 0.3;
  CHECK(localize_hotspot(map_from(v, 256, 256), stone2, tip2, strict) == HotspotCategory::InStone);

  // Values below 0.8 are not part of the hot region.
  std::fill(v.begin(), v.end(), 0.0);
  for (int r = 210; r < 230; ++r) {
    for (int c = 10; c < 30; ++c) {
      v[r * 256 + c] = 0.79;
    }
  }
  v[100 * 256 + 100] = 1.0;
  CHECK(localize_hotspot(map_from(v, 256, 256), stone, tip) == HotspotCategory::InStone);

  CHECK_THROWS_WITH_AS(localize_hotspot(map_from(std::vector<double>(256 * 256, 0.0), 256, 256), stone, tip),
                       "no hotspot", NoHotspotError);
  CHECK_THROWS_AS(localize_hotspot(map_from(v, 256, 256), Mask(128, 128), tip), ValidationError);
  HotspotThresholds bad;
  bad.hot_level = 0.0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("localize_hotspot: synthetic masks with a hand-placed map") {
  const auto s = generate_observation(ClassLabel::Ia, View::Surface, 12, 0.0);
  // Take 60 stone pixels and 40 background pixels as the hot region.
  std::vector<double> v(256 * 256, 0.0);
  int on = 0, off = 0;
  for (int i = 0; i < 256 * 256 && (on < 60 || off < 40); ++i) {
    if (s.stone_mask.bits[i] && on < 60) {
      v[i] = 1.0;
      ++on;
    } else if (!s.stone_mask.bits[i] && !s.tip_mask.bits[i] && off < 40) {
      v[i] = 0.95;
      ++off;
    }
  }
  REQUIRE(on == 60);
  REQUIRE(off == 40);
  CHECK(localize_hotspot(map_from(v, 256, 256), s.stone_mask, s.tip_mask) == HotspotCategory::InStone);
}

TEST_CASE("overlay: zero map, single pixel, determinism") {
  Rng rng(5);
  Image img(3, 256, 256);
  for (auto& v : img.data) {
    v = static_cast<float>(rng.uniform());
  }
  const Raster plain = to_raster(img);
  HeatMap zero = map_from(std::vector<double>(256 * 256, 0.0), 256, 256);
  CHECK(overlay(img, zero) == plain);

  std::vector<double> v(256 * 256, 0.0);
  v[100 * 256 + 37] = 1.0;
  const HeatMap one = map_from(v, 256, 256);
  const Raster out = overlay(img, one);
  int changed = 0;
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 256; ++x) {
      bool diff = false;
      for (int c = 0; c < 3; ++c) {
        diff |= out.at(y, x, c) != plain.at(y, x, c);
      }
      if (diff) {
        REQUIRE(std::abs(y - 100) <= 1);
        REQUIRE(std::abs(x - 37) <= 1);
        ++changed;
      }
    }
  }
  CHECK(changed >= 1);
  CHECK(overlay(img, one) == out);
  CHECK(encode_png(overlay(img, one)) == encode_png(out));

  const auto lo = inferno(0.0);
  const auto hi = inferno(1.0);
  CHECK(lo[0] + lo[1] + lo[2] < 0.1);
  CHECK(hi[0] > 0.9);
  CHECK(hi[1] > 0.9);
}

TEST_CASE("hotspot_rates: counts and rates") {
  std::vector<HotspotCase> all_good(7, {View::Surface, true, HotspotCategory::InStone});
  const auto r = hotspot_rates(all_good);
  CHECK(*r.in_stone_rate_correct(View::Surface) == 100.0);
  CHECK_FALSE(r.outside_rate_misclassified(View::Surface).has_value());
  CHECK_FALSE(r.in_stone_rate_correct(View::Section).has_value());

  std::vector<HotspotCase> four = {{View::Surface, false, HotspotCategory::OutsideStone},
                                   {View::Surface, false, HotspotCategory::InStone},
                                   {View::Surface, false, HotspotCategory::InStone},
                                   {View::Surface, false, HotspotCategory::EndoscopeTip}};
  const auto q = hotspot_rates(four);
  CHECK(*q.outside_rate_misclassified(View::Surface) == 25.0);
  CHECK(*q.tip_rate_misclassified(View::Surface) == 25.0);
  CHECK(q.at(View::Surface).misclassified == 4);

  CHECK(hotspot_rates({}).at(View::Surface).correct == 0);
  const std::string empty_csv = format_hotspot_csv(hotspot_rates({}));
  CHECK(empty_csv == "view,correct,category,count,rate\n");
}

TEST_CASE("hotspot_rates: printed clinical rates from matching tallies") {
  // Tallies chosen to match the printed percentages: 49/50 correct on-stone
  // per view; 60 misclassified surface (20 outside, 3 tip); 100 misclassified
  // section (25 outside, 2 tip).
  std::vector<HotspotCase> cases;
  const auto add = [&](View v, bool ok, HotspotCategory c, int n) {
    for (int i = 0; i < n; ++i) {
      cases.push_back({v, ok, c});
    }
  };
  for (auto v : kAllViews) {
    add(v, true, HotspotCategory::InStone, 49);
    add(v, true, HotspotCategory::OutsideStone, 1);
  }
  add(View::Surface, false, HotspotCategory::OutsideStone, 20);
  add(View::Surface, false, HotspotCategory::EndoscopeTip, 3);
  add(View::Surface, false, HotspotCategory::InStone, 37);
  add(View::Section, false, HotspotCategory::OutsideStone, 25);
  add(View::Section, false, HotspotCategory::EndoscopeTip, 2);
  add(View::Section, false, HotspotCategory::InStone, 73);
  const auto r = hotspot_rates(cases);
  const auto near = [](std::optional<double> v, double printed) {
    return v && std::abs(*v - printed) <= fixture::kPrintedRounding;
  };
  CHECK(near(r.in_stone_rate_correct(View::Surface), fixture::kInStoneCorrect));
  CHECK(near(r.in_stone_rate_correct(View::Section), fixture::kInStoneCorrect));
  CHECK(near(r.outside_rate_misclassified(View::Surface), fixture::kSurfaceOutside));
  CHECK(near(r.outside_rate_misclassified(View::Section), fixture::kSectionOutside));
  CHECK(near(r.tip_rate_misclassified(View::Surface), fixture::kSurfaceTip));
  CHECK(near(r.tip_rate_misclassified(View::Section), fixture::kSectionTip));

  const std::string csv = format_hotspot_csv(r);
  CHECK(csv.find("view,correct,category,count,rate\n") == 0);
  CHECK(csv.find("surface,true,in_stone,49,98.0\n") != std::string::npos);
  CHECK(csv.find("surface,false,outside_stone,20,33.3\n") != std::string::npos);
  CHECK(csv.find("section,false,outside_stone,25,25.0\n") != std::string::npos);
  CHECK(csv.find("surface,false,endoscope_tip,3,5.0\n") != std::string::npos);
  CHECK(csv.find("section,false,endoscope_tip,2,2.0\n") != std::string::npos);
  for (auto c : kAllHotspotCategories) {
    CHECK(parse_hotspot_category(to_string(c)) == c);
  }
}
