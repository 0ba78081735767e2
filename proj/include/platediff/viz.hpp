#ifndef PLATEDIFF_VIZ_HPP
#define PLATEDIFF_VIZ_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "platediff/evaluation.hpp"
#include "platediff/fusion.hpp"
#include "platediff/image.hpp"
#include "platediff/types.hpp"

namespace platediff {

// Perceptually uniform colormap sample; t is clamped to [0, 1].
std::array<std::uint8_t, 3> viridis(double t);

// Stamps text with the built-in 5x7 bitmap font. Lowercase is rendered
// as uppercase; glyphs outside the font advance as blanks. Pixels
// outside the image are clipped, never wrapped.
void draw_text(Image& img, int x, int y, const std::string& text,
               std::array<std::uint8_t, 3> color, int scale = 1);

// Renders one image's attention half over its source pixels. weights
// holds grid*grid values in row-major patch order; they are scaled by
// the in-image maximum (the hottest patch always saturates) and then
// bilinearly upsampled, so figures from different checkpoints stay
// visually comparable. Each output pixel is base blended toward the
// colormap with strength alpha * normalized_weight: zero-weight regions
// show the untouched input. Throws ShapeMismatch when weights does not
// cover the grid.
Image render_heatmap_overlay(const Image& base, const RowVec& weights, int grid,
                             double alpha = 0.6);

struct HeatmapFiles {
  std::filesystem::path before_png;
  std::optional<std::filesystem::path> after_png;  // only for two-image queries
  std::filesystem::path attention_json;
};

// Writes the full attention record for one query under dir using the
// given filename stem: a before overlay, an after overlay when an after
// image is supplied, and the raw head-averaged attention vector as JSON
// so the rendered figures are never the only record.
HeatmapFiles write_heatmap_bundle(const std::filesystem::path& dir, const std::string& stem,
                                  const FusionOutput& out, const Image& before,
                                  const Image* after, int grid, const std::string& item_name,
                                  double alpha = 0.6);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::int64_t> counts;  // one per bin; sums to the sample count
};

// Equal-width bins over [lo, hi] with an inclusive top edge. Values are
// never dropped: anything outside the range lands in the nearest edge
// bin, so counts always conserve the sample count. Throws
// ValidationError for a non-positive bin count or an inverted range.
Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi);

// Frequency distribution of ground-truth vs predicted targets as
// side-by-side bars over a shared range. Throws EmptyReport when items
// is empty.
Image render_histogram_figure(const std::vector<ItemPrediction>& items, int bins = 24,
                              const std::string& x_label = "GRAMS");

// Legend lines for the joint-density figure: one entry per structure
// stratum present (in solid, amorphous_mixed, unknown order) plus a
// pooled "ALL" line whose count is the total item count.
std::vector<std::string> joint_density_legend(const std::vector<ItemPrediction>& items);

// Prediction-versus-truth scatter with the y = x reference line, points
// colored by structure stratum, and the legend from
// joint_density_legend. Throws EmptyReport when items is empty.
Image render_joint_density_figure(const std::vector<ItemPrediction>& items);

// Collects every file a run emits and writes a JSON manifest of
// root-relative paths with content digests; rerunning a deterministic
// pipeline must reproduce the same digests. Entries are sorted by path
// so the manifest does not depend on emission order.
class ArtifactManifest {
 public:
  struct Entry {
    std::string rel_path;
    std::string sha256;
    std::uint64_t bytes = 0;
  };

  explicit ArtifactManifest(std::filesystem::path root);

  // file must already exist and live under root (ValidationError otherwise).
  void add(const std::filesystem::path& file);
  std::vector<Entry> entries() const;  // sorted by rel_path
  void write(const std::filesystem::path& path) const;

 private:
  std::filesystem::path root_;
  std::vector<Entry> entries_;
};

}  // namespace platediff

#endif  // PLATEDIFF_VIZ_HPP
