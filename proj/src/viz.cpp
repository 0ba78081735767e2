#include "platediff/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "platediff/digest.hpp"
#include "platediff/errors.hpp"

namespace platediff {
namespace {

// Nine anchors of the viridis map; samples in between are linearly
// interpolated. The exact table is a rendering constant, not a metric.
constexpr double kViridis[9][3] = {
    {68, 1, 84},    {72, 40, 120},  {62, 74, 137},  {49, 104, 142}, {33, 145, 140},
    {53, 183, 121}, {109, 205, 89}, {180, 222, 44}, {253, 231, 37},
};

// 5x7 glyphs, one byte per row, low five bits used. Index i here renders
// kGlyphChars[i]; anything else draws as a blank advance.
constexpr const char kGlyphChars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,-+%:=/()_";
constexpr std::uint8_t kGlyphRows[][7] = {
    {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001},  // A
    {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110},  // B
    {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110},  // C
    {0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110},  // D
    {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111},  // E
    {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000},  // F
    {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111},  // G
    {0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001},  // H
    {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // I
    {0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100},  // J
    {0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001},  // K
    {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111},  // L
    {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001},  // M
    {0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001},  // N
    {0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110},  // O
    {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000},  // P
    {0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101},  // Q
    {0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001},  // R
    {0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110},  // S
    {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100},  // T
    {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110},  // U
    {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100},  // V
    {0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010},  // W
    {0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001},  // X
    {0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100},  // Y
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111},  // Z
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
    {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},  // 2
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
    {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000},  // space
    {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100},  // .
    {0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000},  // ,
    {0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000},  // -
    {0b00000, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0b00000},  // +
    {0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011},  // %
    {0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000},  // :
    {0b00000, 0b00000, 0b11111, 0b00000, 0b11111, 0b00000, 0b00000},  // =
    {0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000},  // /
    {0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010},  // (
    {0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000},  // )
    {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b11111},  // _
};

const std::uint8_t* glyph_rows(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (std::size_t i = 0; kGlyphChars[i] != '\0'; ++i)
    if (kGlyphChars[i] == c) return kGlyphRows[i];
  return nullptr;
}

void put_blended(Image& img, int x, int y, std::array<std::uint8_t, 3> color, double a) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  auto* p = img.at(x, y);
  for (int c = 0; c < 3; ++c)
    p[c] = static_cast<std::uint8_t>(std::lround(p[c] * (1.0 - a) + color[c] * a));
}

void fill_rect(Image& img, int x0, int y0, int w, int h, std::array<std::uint8_t, 3> color) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) put_blended(img, x, y, color, 1.0);
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> color) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    put_blended(img, x0, y0, color, 1.0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

std::string format_number(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

constexpr std::array<std::uint8_t, 3> kInk = {40, 40, 40};
constexpr std::array<std::uint8_t, 3> kTruthColor = {31, 119, 180};
constexpr std::array<std::uint8_t, 3> kPredColor = {255, 127, 14};

std::array<std::uint8_t, 3> stratum_color(Structure s) {
  switch (s) {
    case Structure::solid: return {31, 119, 180};
    case Structure::amorphous_mixed: return {255, 127, 14};
    case Structure::unknown: break;
  }
  return {127, 127, 127};
}

// Upsamples a grid x grid scalar field to (width, height) with the same
// center-aligned bilinear convention as resize_bilinear.
std::vector<double> upsample_field(const std::vector<double>& field, int grid, int width,
                                   int height) {
  std::vector<double> out(static_cast<std::size_t>(width) * height);
  const double sx = static_cast<double>(grid) / width;
  const double sy = static_cast<double>(grid) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    const int y1 = std::min(y0 + 1, grid - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const int x1 = std::min(x0 + 1, grid - 1);
      x0 = std::max(x0, 0);
      const double top = field[static_cast<std::size_t>(y0) * grid + x0] * (1 - wx) +
                         field[static_cast<std::size_t>(y0) * grid + x1] * wx;
      const double bot = field[static_cast<std::size_t>(y1) * grid + x0] * (1 - wx) +
                         field[static_cast<std::size_t>(y1) * grid + x1] * wx;
      out[static_cast<std::size_t>(y) * width + x] = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

Range padded_range(const std::vector<double>& values) {
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (lo == hi) {  // degenerate data still needs a drawable axis
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::array<std::uint8_t, 3> viridis(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * 8.0;
  const int i = std::min(static_cast<int>(pos), 7);
  const double f = pos - i;
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double v = kViridis[i][c] * (1.0 - f) + kViridis[i + 1][c] * f;
    rgb[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(v));
  }
  return rgb;
}

void draw_text(Image& img, int x, int y, const std::string& text,
               std::array<std::uint8_t, 3> color, int scale) {
  int cx = x;
  for (char ch : text) {
    if (const std::uint8_t* rows = glyph_rows(ch)) {
      for (int r = 0; r < 7; ++r)
        for (int cbit = 0; cbit < 5; ++cbit)
          if (rows[r] & (1 << (4 - cbit)))
            fill_rect(img, cx + cbit * scale, y + r * scale, scale, scale, color);
    }
    cx += 6 * scale;  // 5-pixel glyph plus 1 column of tracking
  }
}

Image render_heatmap_overlay(const Image& base, const RowVec& weights, int grid,
                             double alpha) {
  if (base.empty()) throw DegenerateInput("heatmap base image is empty");
  if (grid <= 0 || weights.size() != static_cast<Index>(grid) * grid)
    throw ShapeMismatch("attention half does not cover the patch grid");
  double max_w = 0.0;
  for (Index i = 0; i < weights.size(); ++i) max_w = std::max(max_w, weights(i));
  std::vector<double> field(static_cast<std::size_t>(weights.size()), 0.0);
  if (max_w > 0.0)
    for (Index i = 0; i < weights.size(); ++i)
      field[static_cast<std::size_t>(i)] = std::max(weights(i), 0.0) / max_w;
  const std::vector<double> up = upsample_field(field, grid, base.width, base.height);
  Image out = base;
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      const double v = up[static_cast<std::size_t>(y) * base.width + x];
      put_blended(out, x, y, viridis(v), alpha * v);
    }
  return out;
}

HeatmapFiles write_heatmap_bundle(const std::filesystem::path& dir, const std::string& stem,
                                  const FusionOutput& out, const Image& before,
                                  const Image* after, int grid, const std::string& item_name,
                                  double alpha) {
  const Index n = static_cast<Index>(grid) * grid;
  if (out.attention.size() != 2 * n)
    throw ShapeMismatch("attention vector does not cover two patch grids");
  std::filesystem::create_directories(dir);

  HeatmapFiles files;
  files.before_png = dir / (stem + "-before.png");
  write_image(files.before_png, render_heatmap_overlay(before, out.attention.head(n), grid, alpha));
  if (after != nullptr) {
    files.after_png = dir / (stem + "-after.png");
    write_image(*files.after_png,
                render_heatmap_overlay(*after, out.attention.tail(n), grid, alpha));
  }

  nlohmann::json j;
  j["item"] = item_name;
  j["prediction"] = out.prediction;
  j["grid"] = grid;
  j["patches_per_image"] = n;
  j["attention"] = std::vector<double>(out.attention.data(), out.attention.data() + 2 * n);
  files.attention_json = dir / (stem + "-attention.json");
  std::ofstream f(files.attention_json);
  if (!f) throw IoError("cannot write " + files.attention_json.string());
  f << j.dump(2) << '\n';
  return files;
}

Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi) {
  if (bins <= 0) throw ValidationError("bins", "must be positive");
  if (!(lo <= hi)) throw ValidationError("range", "lo must not exceed hi");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = hi - lo;
  for (double v : values) {
    int b = 0;
    if (width > 0.0) b = static_cast<int>((v - lo) / width * bins);
    b = std::clamp(b, 0, bins - 1);  // clamps out-of-range values and the hi == v case
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

Image render_histogram_figure(const std::vector<ItemPrediction>& items, int bins,
                              const std::string& x_label) {
  if (items.empty()) throw EmptyReport("no items to plot");
  std::vector<double> truth, pred, all;
  truth.reserve(items.size());
  pred.reserve(items.size());
  for (const auto& it : items) {
    truth.push_back(it.target);
    pred.push_back(it.prediction);
    all.push_back(it.target);
    all.push_back(it.prediction);
  }
  const Range r = padded_range(all);
  const Histogram ht = make_histogram(truth, bins, r.lo, r.hi);
  const Histogram hp = make_histogram(pred, bins, r.lo, r.hi);
  std::int64_t max_count = 1;
  for (int b = 0; b < bins; ++b)
    max_count = std::max({max_count, ht.counts[static_cast<std::size_t>(b)],
                          hp.counts[static_cast<std::size_t>(b)]});

  constexpr int kW = 640, kH = 420, kLeft = 52, kRight = 14, kTop = 38, kBottom = 40;
  const int plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  Image fig(kW, kH);
  fill_rect(fig, 0, 0, kW, kH, {255, 255, 255});
  draw_line(fig, kLeft, kTop, kLeft, kTop + plot_h, kInk);
  draw_line(fig, kLeft, kTop + plot_h, kLeft + plot_w, kTop + plot_h, kInk);

  for (int b = 0; b < bins; ++b) {
    const int x0 = kLeft + b * plot_w / bins;
    const int x1 = kLeft + (b + 1) * plot_w / bins;
    const int half = std::max(1, (x1 - x0 - 2) / 2);
    const auto bar = [&](std::int64_t count, int x, std::array<std::uint8_t, 3> color) {
      const int h = static_cast<int>(static_cast<double>(count) / max_count * (plot_h - 4));
      if (h > 0) fill_rect(fig, x, kTop + plot_h - h, half, h, color);
    };
    bar(ht.counts[static_cast<std::size_t>(b)], x0 + 1, kTruthColor);
    bar(hp.counts[static_cast<std::size_t>(b)], x0 + 1 + half, kPredColor);
  }

  draw_text(fig, kLeft, 12, "FREQUENCY OF TRUTH VS PREDICTION", kInk);
  fill_rect(fig, kW - 190, 8, 8, 8, kTruthColor);
  draw_text(fig, kW - 178, 8, "TRUTH", kInk);
  fill_rect(fig, kW - 112, 8, 8, 8, kPredColor);
  draw_text(fig, kW - 100, 8, "PRED", kInk);
  draw_text(fig, 6, kTop - 8, format_number(static_cast<double>(max_count)), kInk);
  draw_text(fig, 6, kTop + plot_h - 7, "0", kInk);
  draw_text(fig, kLeft - 6, kTop + plot_h + 8, format_number(r.lo), kInk);
  const std::string hi_label = format_number(r.hi);
  draw_text(fig, kLeft + plot_w - 6 * static_cast<int>(hi_label.size()), kTop + plot_h + 8,
            hi_label, kInk);
  draw_text(fig, kLeft + plot_w / 2 - 3 * static_cast<int>(x_label.size()),
            kTop + plot_h + 22, x_label, kInk);
  return fig;
}

std::vector<std::string> joint_density_legend(const std::vector<ItemPrediction>& items) {
  if (items.empty()) throw EmptyReport("no items to plot");
  std::vector<std::string> lines;
  for (Structure s : {Structure::solid, Structure::amorphous_mixed, Structure::unknown}) {
    const auto n = std::count_if(items.begin(), items.end(),
                                 [&](const ItemPrediction& it) { return it.structure == s; });
    if (n == 0) continue;
    std::string name = to_string(s);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    lines.push_back(name + " N=" + std::to_string(n));
  }
  lines.push_back("ALL N=" + std::to_string(items.size()));
  return lines;
}

Image render_joint_density_figure(const std::vector<ItemPrediction>& items) {
  if (items.empty()) throw EmptyReport("no items to plot");
  std::vector<double> all;
  for (const auto& it : items) {
    all.push_back(it.target);
    all.push_back(it.prediction);
  }
  const Range r = padded_range(all);

  constexpr int kSize = 480, kLeft = 52, kRight = 16, kTop = 36, kBottom = 42;
  const int plot = kSize - kLeft - kRight;
  const int height = kTop + plot + kBottom;
  Image fig(kSize, height);
  fill_rect(fig, 0, 0, kSize, height, {255, 255, 255});
  draw_line(fig, kLeft, kTop, kLeft, kTop + plot, kInk);
  draw_line(fig, kLeft, kTop + plot, kLeft + plot, kTop + plot, kInk);

  const auto to_px = [&](double v) {
    return (v - r.lo) / (r.hi - r.lo) * (plot - 1);
  };
  // y = x reference under the points.
  draw_line(fig, kLeft, kTop + plot - 1, kLeft + plot - 1, kTop, {176, 176, 176});
  for (const auto& it : items) {
    const int px = kLeft + static_cast<int>(std::lround(to_px(it.target)));
    const int py = kTop + plot - 1 - static_cast<int>(std::lround(to_px(it.prediction)));
    fill_rect(fig, px - 1, py - 1, 3, 3, stratum_color(it.structure));
  }

  draw_text(fig, kLeft, 10, "PREDICTION VS TRUTH", kInk);
  int ly = 24;
  for (const std::string& line : joint_density_legend(items)) {
    std::array<std::uint8_t, 3> swatch = kInk;
    if (line.rfind("SOLID", 0) == 0) swatch = stratum_color(Structure::solid);
    if (line.rfind("AMORPHOUS", 0) == 0) swatch = stratum_color(Structure::amorphous_mixed);
    if (line.rfind("UNKNOWN", 0) == 0) swatch = stratum_color(Structure::unknown);
    fill_rect(fig, kLeft + plot - 150, ly, 8, 8, swatch);
    draw_text(fig, kLeft + plot - 138, ly, line, kInk);
    ly += 10;
  }
  draw_text(fig, kLeft - 6, kTop + plot + 8, format_number(r.lo), kInk);
  const std::string hi_label = format_number(r.hi);
  draw_text(fig, kLeft + plot - 6 * static_cast<int>(hi_label.size()), kTop + plot + 8,
            hi_label, kInk);
  draw_text(fig, kLeft + plot / 2 - 15, kTop + plot + 24, "TRUTH", kInk);
  draw_text(fig, 4, kTop + plot / 2 - 3, "PRED", kInk);
  return fig;
}

ArtifactManifest::ArtifactManifest(std::filesystem::path root) : root_(std::move(root)) {}

void ArtifactManifest::add(const std::filesystem::path& file) {
  std::error_code ec;
  const std::filesystem::path rel = std::filesystem::relative(file, root_, ec);
  if (ec || rel.empty() || rel.begin()->string() == "..")
    throw ValidationError("artifact", "not under the manifest root: " + file.string());
  Entry e;
  e.rel_path = rel.generic_string();
  e.sha256 = sha256_file(file);
  e.bytes = static_cast<std::uint64_t>(std::filesystem::file_size(file));
  entries_.push_back(std::move(e));
}

std::vector<ArtifactManifest::Entry> ArtifactManifest::entries() const {
  std::vector<Entry> sorted = entries_;
  std::sort(sorted.begin(), sorted.end(),
            [](const Entry& a, const Entry& b) { return a.rel_path < b.rel_path; });
  return sorted;
}

void ArtifactManifest::write(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "platediff-artifacts";
  j["version"] = 1;
  j["artifacts"] = nlohmann::json::array();
  for (const Entry& e : entries())
    j["artifacts"].push_back({{"path", e.rel_path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

}  // namespace platediff
