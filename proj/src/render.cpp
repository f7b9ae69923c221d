// Confusion-matrix PNG rendering with a built-in 5x7 bitmap font.

#include <array>
#include <cctype>
#include <cstdio>
#include <string>

#include "esr/evaluation.hpp"

namespace esr {

namespace {

struct Glyph {
  char ch;
  std::array<const char*, 7> rows;
};

// Uppercase, digits and the punctuation the grid needs; lowercase input is
// drawn uppercase.
constexpr Glyph kFont[] = {
    {' ', {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
    {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
    {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
    {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
    {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
    {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
    {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
    {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
    {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
    {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
    {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
    {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
    {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
    {'D', {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."}},
    {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
    {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
    {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
    {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
    {'I', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
    {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
    {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
    {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
    {'N', {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
    {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
    {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
    {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
    {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
    {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
    {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
    {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
    {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
    {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
    {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
    {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
    {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
    {'.', {".....", ".....", ".....", ".....", ".....", ".##..", ".##.."}},
    {'%', {"##...", "##..#", "...#.", "..#..", ".#...", "#..##", "...##"}},
    {'+', {".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."}},
    {'-', {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
    {'(', {"...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."}},
    {')', {".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."}},
    {':', {".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."}},
    {'/', {".....", "....#", "...#.", "..#..", ".#...", "#....", "....."}},
    {'_', {".....", ".....", ".....", ".....", ".....", ".....", "#####"}},
    {'=', {".....", ".....", "#####", ".....", "#####", ".....", "....."}},
};

constexpr Glyph kUnknown = {'?', {"#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"}};

const Glyph& glyph_for(char c) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont) {
    if (g.ch == up) {
      return g;
    }
  }
  return kUnknown;
}

using Rgb = std::array<std::uint8_t, 3>;

constexpr Rgb kWhite = {255, 255, 255};
constexpr Rgb kInk = {20, 20, 20};
constexpr Rgb kGrid = {90, 90, 90};
constexpr Rgb kCorrectFill = {170, 222, 170};
constexpr Rgb kErrorFill = {245, 190, 180};
constexpr Rgb kSummaryFill = {196, 204, 226};
constexpr Rgb kGoodInk = {0, 110, 30};
constexpr Rgb kBadInk = {170, 20, 20};

constexpr int kScale = 2;
constexpr int kGlyphW = 6 * kScale;  // 5 columns + 1 spacing
constexpr int kCellW = 120;
constexpr int kCellH = 56;
constexpr int kLabelW = 120;
constexpr int kTitleH = 40;
constexpr int kHeaderH = 32;

void fill_rect(Raster& img, int x0, int y0, int w, int h, const Rgb& color) {
  for (int y = std::max(0, y0); y < std::min(img.height, y0 + h); ++y) {
    for (int x = std::max(0, x0); x < std::min(img.width, x0 + w); ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) = color[ch];
      }
    }
  }
}

int text_width(const std::string& s) { return static_cast<int>(s.size()) * kGlyphW - kScale; }

void draw_text(Raster& img, int x, int y, const std::string& s, const Rgb& color) {
  for (char c : s) {
    const Glyph& g = glyph_for(c);
    for (int r = 0; r < 7; ++r) {
      for (int col = 0; col < 5; ++col) {
        if (g.rows[r][col] == '#') {
          fill_rect(img, x + col * kScale, y + r * kScale, kScale, kScale, color);
        }
      }
    }
    x += kGlyphW;
  }
}

void draw_centered(Raster& img, int cx, int y, const std::string& s, const Rgb& color) {
  draw_text(img, cx - text_width(s) / 2, y, s, color);
}

std::string pct(const std::optional<double>& v) {
  if (!v) {
    return "-";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", *v);
  return buf;
}

std::string count_text(double v) {
  char buf[32];
  if (v == static_cast<long long>(v)) {
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
  } else {
    std::snprintf(buf, sizeof(buf), "%.1f", v);
  }
  return buf;
}

}  // namespace

Raster render_confusion_matrix(const ConfusionMatrix& m, std::string_view title) {
  const int n = static_cast<int>(kNumClasses);
  const int width = kLabelW + (n + 1) * kCellW + 1;
  const int height = kTitleH + kHeaderH + (n + 1) * kCellH + kHeaderH + 1;
  Raster img(height, width, 3);
  fill_rect(img, 0, 0, width, height, kWhite);
  draw_centered(img, width / 2, 12, std::string(title), kInk);

  const int grid_x = kLabelW;
  const int grid_y = kTitleH + kHeaderH;
  for (int c = 0; c < n; ++c) {
    draw_centered(img, grid_x + c * kCellW + kCellW / 2, kTitleH + 8, std::string(to_string(kAllClasses[c])), kInk);
  }
  draw_centered(img, grid_x + n * kCellW + kCellW / 2, kTitleH + 8, "PPV", kInk);
  for (int r = 0; r < n; ++r) {
    draw_centered(img, kLabelW / 2, grid_y + r * kCellH + kCellH / 2 - 7, std::string(to_string(kAllClasses[r])),
                  kInk);
  }
  draw_centered(img, kLabelW / 2, grid_y + n * kCellH + kCellH / 2 - 7, "SENS", kInk);
  draw_centered(img, grid_x + (n + 1) * kCellW / 2, grid_y + (n + 1) * kCellH + 8, "ACTUAL CLASS", kInk);
  draw_text(img, 6, kTitleH + 8, "PREDICTED", kInk);

  const double total = m.total();
  for (int r = 0; r <= n; ++r) {
    for (int c = 0; c <= n; ++c) {
      const int x = grid_x + c * kCellW;
      const int y = grid_y + r * kCellH;
      const CellRole role = ConfusionMatrix::role(r, c);
      const Rgb& fill = role == CellRole::Correct ? kCorrectFill : role == CellRole::Error ? kErrorFill : kSummaryFill;
      fill_rect(img, x, y, kCellW, kCellH, fill);
      std::string line1, line2;
      Rgb ink1 = kInk, ink2 = kInk;
      if (role == CellRole::Summary) {
        std::optional<double> good;
        if (r == n && c == n) {
          good = m.overall_accuracy();
        } else if (r == n) {
          good = m.sensitivity(kAllClasses[c]);
        } else {
          good = m.ppv(kAllClasses[r]);
        }
        line1 = pct(good);
        line2 = good ? pct(100.0 - *good) : "-";
        ink1 = kGoodInk;
        ink2 = kBadInk;
      } else {
        const double v = m.counts[r][c];
        line1 = count_text(v);
        line2 = pct(total > 0.0 ? std::optional<double>(100.0 * v / total) : std::nullopt);
      }
      draw_centered(img, x + kCellW / 2, y + 10, line1, ink1);
      draw_centered(img, x + kCellW / 2, y + 32, line2, ink2);
      // cell border
      fill_rect(img, x, y, kCellW + 1, 1, kGrid);
      fill_rect(img, x, y, 1, kCellH + 1, kGrid);
      fill_rect(img, x, y + kCellH, kCellW + 1, 1, kGrid);
      fill_rect(img, x + kCellW, y, 1, kCellH + 1, kGrid);
    }
  }
  return img;
}

}  // namespace esr
