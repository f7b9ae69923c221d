#include "esr/dataset.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "esr/error.hpp"

namespace esr {

std::string_view to_string(View v) { return v == View::Surface ? "surface" : "section"; }

View parse_view(std::string_view token) {
  if (token == "surface") {
    return View::Surface;
  }
  if (token == "section") {
    return View::Section;
  }
  throw ValidationError("unknown view: '" + std::string(token) + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') {
    s.pop_back();
  }
  return s;
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path, bool check_images) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open manifest " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kManifestHeader) {
    throw ValidationError("manifest " + path.string() + ": expected header '" + std::string(kManifestHeader) + "'");
  }
  const auto base = path.parent_path();
  std::vector<ManifestRow> rows;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) {
      continue;
    }
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw ValidationError(where + "expected 5 fields, got " + std::to_string(fields.size()));
    }
    ManifestRow row;
    row.observation_id = fields[0];
    row.stone_id = fields[1];
    if (row.observation_id.empty() || row.stone_id.empty()) {
      throw ValidationError(where + "empty observation_id or stone_id");
    }
    try {
      row.view = parse_view(fields[2]);
      row.label = parse_class(fields[3]);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    row.image_path = fields[4];
    if (!seen.insert(row.observation_id).second) {
      throw ValidationError(where + "duplicate observation_id '" + row.observation_id + "'");
    }
    if (check_images && !std::filesystem::is_regular_file(base / row.image_path)) {
      throw ValidationError(where + "missing image file " + (base / row.image_path).string());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<StoneObservation> parse_manifest(const std::filesystem::path& path) {
  const auto rows = read_manifest(path, true);
  const auto base = path.parent_path();
  std::vector<StoneObservation> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    StoneObservation obs;
    obs.observation_id = row.observation_id;
    obs.stone_id = row.stone_id;
    obs.view = row.view;
    obs.label = row.label;
    obs.image_path = row.image_path;
    obs.image = read_png(base / row.image_path);
    out.push_back(std::move(obs));
  }
  return out;
}

std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.observation_id + ',' + r.stone_id + ',' + std::string(to_string(r.view)) + ',' +
           std::string(to_string(r.label)) + ',' + r.image_path + '\n';
  }
  return out;
}

Image preprocess_image(const Raster& raw) {
  if (raw.channels != 3) {
    throw ValidationError("expected an RGB image, got " + std::to_string(raw.channels) + " channel(s)");
  }
  if (raw.height < 1 || raw.width < 1) {
    throw ValidationError("empty image");
  }
  const int side = std::min(raw.height, raw.width);
  const int top = (raw.height - side) / 2;
  const int left = (raw.width - side) / 2;
  Image crop(3, side, side);
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        crop.at(ch, r, c) = static_cast<float>(raw.at(top + r, left + c, ch)) / 255.0f;
      }
    }
  }
  if (side == kInputSize) {
    return crop;
  }
  return resize_bilinear(crop, kInputSize, kInputSize);
}

ClassCounts CorpusSummary::total(View v) const {
  ClassCounts t;
  for (auto c : kAllClasses) {
    t.images += at(v, c).images;
    t.stones += at(v, c).stones;
  }
  return t;
}

std::string format_summary(const CorpusSummary& summary) {
  std::ostringstream out;
  for (auto v : kAllViews) {
    const auto t = summary.total(v);
    out << to_string(v) << ": " << t.images << " images / " << t.stones << " stones\n";
    for (auto c : kAllClasses) {
      const auto& k = summary.at(v, c);
      out << "  " << to_string(c) << " = " << k.images << "/" << k.stones << "\n";
    }
  }
  return out.str();
}

}  // namespace esr
