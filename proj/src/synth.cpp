#include "esr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "esr/error.hpp"
#include "esr/io.hpp"
#include "esr/rng.hpp"

namespace esr {

namespace {

using Rgb = std::array<double, 3>;

constexpr int kSize = kInputSize;
constexpr double kPi = std::numbers::pi;

double hash01(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const std::uint64_t key = (static_cast<std::uint64_t>(x) << 32) ^ static_cast<std::uint64_t>(y & 0xffffffff);
  return static_cast<double>(mix64(seed ^ mix64(key)) >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const double tx = smooth(x - fx);
  const double ty = smooth(y - fy);
  const double a = hash01(seed, ix, iy);
  const double b = hash01(seed, ix + 1, iy);
  const double c = hash01(seed, ix, iy + 1);
  const double d = hash01(seed, ix + 1, iy + 1);
  const double top = a + tx * (b - a);
  const double bottom = c + tx * (d - c);
  return top + ty * (bottom - top);
}

/// Three-octave fractal noise in [0, 1]; `period` is the coarsest feature size in pixels.
double fbm(std::uint64_t seed, double x, double y, double period) {
  double sum = 0.0;
  double amp = 0.5;
  double freq = 1.0 / period;
  for (int octave = 0; octave < 3; ++octave) {
    sum += amp * value_noise(seed + static_cast<std::uint64_t>(octave) * 0x9e37, x * freq, y * freq);
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / 0.875;
}

struct CellPoint {
  double x = 0;
  double y = 0;
  std::int64_t cx = 0;
  std::int64_t cy = 0;
};

/// Jittered feature point of grid cell (cx, cy).
CellPoint cell_point(std::uint64_t seed, std::int64_t cx, std::int64_t cy, double cell) {
  return {(static_cast<double>(cx) + 0.2 + 0.6 * hash01(seed, cx, cy)) * cell,
          (static_cast<double>(cy) + 0.2 + 0.6 * hash01(seed ^ 0x51ed, cx, cy)) * cell, cx, cy};
}

template <typename Fn>
void for_neighbor_cells(double x, double y, double cell, Fn&& fn) {
  const auto cx = static_cast<std::int64_t>(std::floor(x / cell));
  const auto cy = static_cast<std::int64_t>(std::floor(y / cell));
  for (std::int64_t dy = -1; dy <= 1; ++dy) {
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      fn(cx + dx, cy + dy);
    }
  }
}

Rgb base_color(Morphology m, View view) {
  if (view == View::Surface) {
    switch (m) {
      case Morphology::Ia: return {0.36, 0.21, 0.11};    // dark brown
      case Morphology::IIb: return {0.88, 0.80, 0.52};   // pale yellow
      case Morphology::IIIb: return {0.93, 0.52, 0.22};  // orange
    }
  }
  switch (m) {
    case Morphology::Ia: return {0.50, 0.28, 0.16};    // brown layers
    case Morphology::IIb: return {0.84, 0.76, 0.50};   // pale brown-yellow
    case Morphology::IIIb: return {0.84, 0.56, 0.24};  // ochre to orange
  }
  return {0, 0, 0};
}

struct StoneShape {
  double radius = 70;
  std::array<double, 4> amplitude{};
  std::array<double, 4> phase{};
  Rgb tint{1, 1, 1};
  std::uint64_t texture_seed = 0;
  double split_angle = 0;
  double split_offset = 0;
  bool ia_on_low_side = true;
  double core_fraction = 0.6;
  bool ia_in_core = true;
  double nucleus_u = 0;
  double nucleus_v = 0;
};

struct Viewpoint {
  double cx = 128;
  double cy = 128;
  double scale = 1;
  double cos_r = 1;
  double sin_r = 0;
  double gain = 1;
  bool tip = false;
  int tip_side = 0;
  double tip_pos = 128;
  double tip_width = 30;
  double tip_length = 50;
  std::uint64_t noise_seed = 0;
};

StoneShape make_shape(std::uint64_t stone_seed) {
  Rng rng(derive_seed(stone_seed, 0x5107e));
  StoneShape s;
  s.radius = rng.uniform(62.0, 80.0);
  for (std::size_t k = 0; k < 4; ++k) {
    s.amplitude[k] = rng.uniform(-0.07, 0.07) / double(k + 1);
    s.phase[k] = rng.uniform(0.0, 2 * kPi);
  }
  for (auto& t : s.tint) {
    t = rng.uniform(0.96, 1.04);
  }
  s.texture_seed = rng.next();
  s.split_angle = rng.uniform(0.0, 2 * kPi);
  s.split_offset = rng.uniform(-0.12, 0.12);
  s.ia_on_low_side = rng.bernoulli(0.5);
  s.core_fraction = rng.uniform(0.56, 0.68);
  s.ia_in_core = rng.bernoulli(0.5);
  s.nucleus_u = rng.uniform(-6.0, 6.0);
  s.nucleus_v = rng.uniform(-6.0, 6.0);
  return s;
}

Viewpoint make_viewpoint(std::uint64_t image_seed, double tip_probability) {
  Rng rng(derive_seed(image_seed, 0x71e3));
  Viewpoint vp;
  vp.cx = 127.5 + rng.uniform(-18.0, 18.0);
  vp.cy = 127.5 + rng.uniform(-18.0, 18.0);
  vp.scale = rng.uniform(0.88, 1.12);
  const double rot = rng.uniform(0.0, 2 * kPi);
  vp.cos_r = std::cos(rot);
  vp.sin_r = std::sin(rot);
  vp.gain = rng.uniform(0.85, 1.10);
  vp.tip = rng.uniform() < tip_probability;
  vp.tip_side = static_cast<int>(rng.below(4));
  vp.tip_pos = rng.uniform(0.15, 0.85) * kSize;
  vp.tip_width = rng.uniform(26.0, 38.0);
  vp.tip_length = rng.uniform(36.0, 60.0);
  vp.noise_seed = rng.next();
  return vp;
}

double boundary_radius(const StoneShape& s, double theta) {
  double f = 1.0;
  for (std::size_t k = 0; k < 4; ++k) {
    f += s.amplitude[k] * std::cos(double(k + 2) * theta + s.phase[k]);
  }
  return s.radius * f;
}

// Brightness modulation for one morphology; (u, v) are stone-local pixels.
double texture(Morphology m, View view, const StoneShape& s, double u, double v) {
  const std::uint64_t seed = derive_seed(s.texture_seed, index_of(m), static_cast<std::uint64_t>(view));
  const double grain = fbm(seed ^ 0xf00d, u + 512, v + 512, 20.0) - 0.5;
  if (view == View::Surface) {
    switch (m) {
      case Morphology::Ia: {
        // Mammillary: overlapping rounded domes.
        constexpr double cell = 13.0;
        double h = 0.0;
        for_neighbor_cells(u, v, cell, [&](std::int64_t cx, std::int64_t cy) {
          const auto p = cell_point(seed, cx, cy, cell);
          const double r = cell * (0.55 + 0.25 * hash01(seed ^ 0xabc, cx, cy));
          const double d2 = (u - p.x) * (u - p.x) + (v - p.y) * (v - p.y);
          h = std::max(h, 1.0 - d2 / (r * r));
        });
        return 0.72 + 0.38 * std::sqrt(std::max(h, 0.0)) + 0.12 * grain;
      }
      case Morphology::IIb: {
        // Angular facets with bright crystal edges.
        constexpr double cell = 17.0;
        double d1 = 1e9;
        double d2 = 1e9;
        CellPoint nearest;
        for_neighbor_cells(u, v, cell, [&](std::int64_t cx, std::int64_t cy) {
          const auto p = cell_point(seed, cx, cy, cell);
          const double d = std::hypot(u - p.x, v - p.y);
          if (d < d1) {
            d2 = d1;
            d1 = d;
            nearest = p;
          } else if (d < d2) {
            d2 = d;
          }
        });
        if (d2 - d1 < 1.6) {
          return 1.18;
        }
        const double b = 0.85 + 0.3 * hash01(seed ^ 0x77, nearest.cx, nearest.cy);
        const double a = 2 * kPi * hash01(seed ^ 0x99, nearest.cx, nearest.cy);
        const double g = ((u - nearest.x) * std::cos(a) + (v - nearest.y) * std::sin(a)) / cell;
        return b + 0.35 * g;
      }
      case Morphology::IIIb: {
        // Rough porous surface with dark pits.
        constexpr double cell = 9.0;
        double value = 0.9 + 0.3 * grain;
        for_neighbor_cells(u, v, cell, [&](std::int64_t cx, std::int64_t cy) {
          if (hash01(seed ^ 0x1111, cx, cy) > 0.55) {
            return;
          }
          const auto p = cell_point(seed, cx, cy, cell);
          const double r = 1.8 + 1.4 * hash01(seed ^ 0x2222, cx, cy);
          if ((u - p.x) * (u - p.x) + (v - p.y) * (v - p.y) < r * r) {
            value = std::min(value, 0.5);
          }
        });
        return value;
      }
    }
  }
  switch (m) {
    case Morphology::Ia: {
      // Concentric layers radiating from an off-center nucleus.
      const double du = u - s.nucleus_u;
      const double dv = v - s.nucleus_v;
      const double d = std::hypot(du, dv);
      const double ring = std::sin(2 * kPi * d / 6.5 + 3.0 * grain);
      const double radial = std::sin(36.0 * std::atan2(dv, du));
      return 0.80 + 0.18 * ring + 0.07 * radial + 0.08 * grain;
    }
    case Morphology::IIb: {
      const double speckle = hash01(seed ^ 0x3333, static_cast<std::int64_t>(std::floor(u / 2)),
                                    static_cast<std::int64_t>(std::floor(v / 2))) - 0.5;
      return 0.9 + 0.22 * speckle + 0.1 * grain;
    }
    case Morphology::IIIb: {
      constexpr double cell = 6.0;
      double value = 0.92 + 0.15 * grain;
      for_neighbor_cells(u, v, cell, [&](std::int64_t cx, std::int64_t cy) {
        if (hash01(seed ^ 0x4444, cx, cy) > 0.65) {
          return;
        }
        const auto p = cell_point(seed, cx, cy, cell);
        const double r = 1.2 + 1.0 * hash01(seed ^ 0x5555, cx, cy);
        if ((u - p.x) * (u - p.x) + (v - p.y) * (v - p.y) < r * r) {
          value = std::min(value, 0.6);
        }
      });
      return value;
    }
  }
  return 1.0;
}

Rgb background(std::uint64_t seed, double x, double y) {
  const double blotch = fbm(seed, x, y, 40.0);
  Rgb c = {0.70, 0.30, 0.28};
  for (auto& ch : c) {
    ch *= 0.85 + 0.3 * blotch;
  }
  const double vessel = fbm(seed ^ 0xbeef, x, y, 30.0);
  if (std::abs(vessel - 0.5) < 0.015) {
    c = {0.45, 0.10, 0.10};
  }
  return c;
}

bool in_tip(const Viewpoint& vp, double x, double y, double& across) {
  double depth = 0;
  double along = 0;
  switch (vp.tip_side) {
    case 0: depth = x; along = y; break;
    case 1: depth = kSize - 1 - x; along = y; break;
    case 2: depth = y; along = x; break;
    default: depth = kSize - 1 - y; along = x; break;
  }
  const double half = vp.tip_width / 2;
  const double b = along - vp.tip_pos;
  if (depth < 0 || std::abs(b) >= half || depth >= vp.tip_length) {
    return false;
  }
  const double cap_start = vp.tip_length - half;
  if (depth > cap_start && (depth - cap_start) * (depth - cap_start) + b * b >= half * half) {
    return false;
  }
  across = b / half;
  return true;
}

}  // namespace

SyntheticObservation render_stone_image(ClassLabel label, View view, std::uint64_t stone_seed,
                                        std::uint64_t image_seed, double tip_probability) {
  const auto shape = make_shape(stone_seed);
  const auto vp = make_viewpoint(image_seed, tip_probability);
  const auto components = components_of(label);
  const bool mixed = components.size() == 2;
  const Morphology other = components.contains(Morphology::IIb) ? Morphology::IIb : Morphology::IIIb;

  SyntheticObservation out;
  out.seed = image_seed;
  out.observation.view = view;
  out.observation.label = label;
  out.observation.image = Raster(kSize, kSize, 3);
  out.stone_mask = Mask(kSize, kSize);
  out.tip_mask = Mask(kSize, kSize);
  if (mixed) {
    out.regions = {{Morphology::Ia, Mask(kSize, kSize)}, {other, Mask(kSize, kSize)}};
  } else {
    const Morphology only = components.contains(Morphology::Ia) ? Morphology::Ia : other;
    out.regions = {{only, Mask(kSize, kSize)}};
  }

  const double split_c = std::cos(shape.split_angle);
  const double split_s = std::sin(shape.split_angle);
  const double center = (kSize - 1) / 2.0;
  const double max_r2 = 2 * center * center;

  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      Rgb color;
      const double vignette = 1.0 - 0.35 * ((x - center) * (x - center) + (y - center) * (y - center)) / max_r2;
      double across = 0;
      if (vp.tip && in_tip(vp, x, y, across)) {
        out.tip_mask.set(y, x, true);
        const double shade = 0.75 + 0.35 * (1.0 - across * across);
        color = {0.72 * shade, 0.74 * shade, 0.78 * shade};
      } else {
        const double dx = x - vp.cx;
        const double dy = y - vp.cy;
        const double u = (vp.cos_r * dx + vp.sin_r * dy) / vp.scale;
        const double v = (-vp.sin_r * dx + vp.cos_r * dy) / vp.scale;
        const double rho = std::hypot(u, v);
        const double edge = boundary_radius(shape, std::atan2(v, u));
        if (rho < edge) {
          std::size_t region = 0;
          if (mixed) {
            bool ia = false;
            if (view == View::Surface) {
              const bool low = u * split_c + v * split_s < shape.split_offset * shape.radius;
              ia = low == shape.ia_on_low_side;
            } else {
              const bool core = rho < shape.core_fraction * edge;
              ia = core == shape.ia_in_core;
            }
            region = ia ? 0 : 1;
          }
          const Morphology m = out.regions[region].morphology;
          out.stone_mask.set(y, x, true);
          out.regions[region].mask.set(y, x, true);
          const Rgb base = base_color(m, view);
          const double t = texture(m, view, shape, u, v) * vp.gain * vignette;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            color[ch] = base[ch] * shape.tint[ch] * t;
          }
        } else {
          color = background(derive_seed(vp.noise_seed, 0xb6), x, y);
          for (auto& ch : color) {
            ch *= vp.gain * vignette;
          }
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double noise = 0.03 * (hash01(vp.noise_seed, x * 3 + ch, y) - 0.5);
        const double value = std::clamp(color[std::size_t(ch)] + noise, 0.0, 1.0);
        out.observation.image.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(value * 255.0));
      }
    }
  }
  return out;
}

SyntheticObservation generate_observation(ClassLabel label, View view, std::uint64_t seed, double tip_probability) {
  auto obs = render_stone_image(label, view, derive_seed(seed, 1), derive_seed(seed, 2), tip_probability);
  obs.seed = seed;
  const std::string id = std::string(to_string(view)) + "_" + std::string(slug(label)) + "_x" + std::to_string(seed);
  obs.observation.observation_id = id;
  obs.observation.stone_id = id;
  return obs;
}

GeneratorSpec GeneratorSpec::paper_default(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.seed = seed;
  const auto set = [&](View v, ClassLabel c, std::size_t images, std::size_t stones) {
    spec.at(v, c) = {images, stones};
  };
  set(View::Surface, ClassLabel::Ia, 191, 150);
  set(View::Surface, ClassLabel::IIb, 53, 48);
  set(View::Surface, ClassLabel::IIIb, 29, 23);
  set(View::Surface, ClassLabel::IaIIb, 64, 54);
  set(View::Surface, ClassLabel::IaIIIb, 10, 9);
  set(View::Section, ClassLabel::Ia, 127, 96);
  set(View::Section, ClassLabel::IIb, 30, 29);
  set(View::Section, ClassLabel::IIIb, 25, 22);
  set(View::Section, ClassLabel::IaIIb, 31, 26);
  set(View::Section, ClassLabel::IaIIIb, 23, 15);
  return spec;
}

void validate(const GeneratorSpec& spec) {
  if (spec.max_images_per_stone < 1) {
    throw ValidationError("max_images_per_stone must be >= 1");
  }
  if (!(spec.tip_probability >= 0.0 && spec.tip_probability <= 1.0)) {
    throw ValidationError("tip_probability must lie in [0, 1]");
  }
  for (auto v : kAllViews) {
    for (auto c : kAllClasses) {
      const auto& k = spec.at(v, c);
      const auto where = std::string(to_string(v)) + "/" + std::string(to_string(c)) + ": ";
      if (k.images < k.stones) {
        throw ValidationError(where + "image_count < unique_stone_count");
      }
      if (k.images > 0 && k.stones == 0) {
        throw ValidationError(where + "images without stones");
      }
      if (k.images > k.stones * std::size_t(spec.max_images_per_stone)) {
        throw ValidationError(where + "more images than max_images_per_stone allows");
      }
    }
  }
}

std::vector<int> images_per_stone(const GeneratorSpec& spec, View view, ClassLabel label) {
  const auto& k = spec.at(view, label);
  std::vector<int> per(k.stones, 1);
  Rng rng(derive_seed(spec.seed, 0x1a, static_cast<std::uint64_t>(view), index_of(label)));
  std::size_t extra = k.images - k.stones;
  while (extra > 0) {
    auto& n = per[rng.below(per.size())];
    if (n < spec.max_images_per_stone) {
      ++n;
      --extra;
    }
  }
  return per;
}

std::vector<SyntheticObservation> generate_corpus(const GeneratorSpec& spec) {
  validate(spec);
  std::vector<SyntheticObservation> corpus;
  for (auto view : kAllViews) {
    for (auto label : kAllClasses) {
      const auto per = images_per_stone(spec, view, label);
      for (std::size_t s = 0; s < per.size(); ++s) {
        const auto stone_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(view), index_of(label), s);
        char stone_id[96];
        std::snprintf(stone_id, sizeof stone_id, "%s_%s_s%03zu", std::string(to_string(view)).c_str(),
                      std::string(slug(label)).c_str(), s);
        for (int i = 0; i < per[s]; ++i) {
          auto obs = render_stone_image(label, view, stone_seed, derive_seed(stone_seed, 1000 + i),
                                        spec.tip_probability);
          obs.observation.stone_id = stone_id;
          obs.observation.observation_id = std::string(stone_id) + "_i" + std::to_string(i);
          corpus.push_back(std::move(obs));
        }
      }
    }
  }
  return corpus;
}

double mean_hue_degrees(const Raster& image, const Mask& mask) {
  double sum[3] = {0, 0, 0};
  std::size_t n = 0;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      if (mask.at(r, c)) {
        for (int ch = 0; ch < 3; ++ch) {
          sum[ch] += image.at(r, c, ch);
        }
        ++n;
      }
    }
  }
  if (n == 0) {
    throw std::invalid_argument("mean_hue_degrees: empty mask");
  }
  const double r = sum[0] / n;
  const double g = sum[1] / n;
  const double b = sum[2] / n;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  if (mx == mn) {
    return 0.0;
  }
  double h = 0;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / (mx - mn), 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / (mx - mn) + 2.0);
  } else {
    h = 60.0 * ((r - g) / (mx - mn) + 4.0);
  }
  return h < 0 ? h + 360.0 : h;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<SyntheticObservation>& corpus) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::vector<ManifestRow> rows;
  nlohmann::ordered_json sidecar = nlohmann::ordered_json::object();
  for (const auto& s : corpus) {
    const auto& o = s.observation;
    const std::string image = "images/" + o.observation_id + ".png";
    const std::string stone = "masks/" + o.observation_id + "_stone.png";
    const std::string tip = "masks/" + o.observation_id + "_tip.png";
    write_png(dir / image, o.image);
    write_png(dir / stone, mask_to_raster(s.stone_mask));
    write_png(dir / tip, mask_to_raster(s.tip_mask));
    nlohmann::ordered_json regions = nlohmann::ordered_json::array();
    for (const auto& r : s.regions) {
      const std::string path = "masks/" + o.observation_id + "_" + std::string(to_string(r.morphology)) + ".png";
      write_png(dir / path, mask_to_raster(r.mask));
      regions.push_back({{"morphology", to_string(r.morphology)}, {"mask", path}});
    }
    sidecar[o.observation_id] = {{"stone_mask", stone}, {"tip_mask", tip}, {"regions", regions}, {"seed", s.seed}};
    rows.push_back({o.observation_id, o.stone_id, o.view, o.label, image});
  }
  write_file_atomic(dir / "manifest.csv", format_manifest(rows));
  write_file_atomic(dir / "masks.json", sidecar.dump(2) + "\n");
}

std::map<std::string, MaskPaths> read_mask_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open mask sidecar " + path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("mask sidecar " + path.string() + ": " + e.what());
  }
  std::map<std::string, MaskPaths> out;
  for (const auto& [id, entry] : doc.items()) {
    MaskPaths p;
    p.stone_mask = entry.at("stone_mask").get<std::string>();
    p.tip_mask = entry.at("tip_mask").get<std::string>();
    for (const auto& r : entry.at("regions")) {
      p.regions.emplace_back(parse_morphology(r.at("morphology").get<std::string>()), r.at("mask").get<std::string>());
    }
    out.emplace(id, std::move(p));
  }
  return out;
}

}  // namespace esr
