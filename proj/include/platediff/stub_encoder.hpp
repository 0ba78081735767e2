#ifndef PLATEDIFF_STUB_ENCODER_HPP
#define PLATEDIFF_STUB_ENCODER_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "platediff/encoder.hpp"

namespace platediff {

struct StubClassHint {
  std::string name;
  std::array<std::uint8_t, 3> color;
  // Residue tint the class leaves behind when partially removed; queries
  // for the class score the residue like the food itself, so a consumed
  // region stays findable in an after image.
  std::optional<std::array<std::uint8_t, 3>> residue;
};

struct StubConfig {
  Index dim = 24;        // shared image/text feature width
  int patch_grid = 14;   // stats are pooled over a grid x grid tiling
  int working_size = 336;
  std::uint64_t seed = 7;
  // Classes whose name tokens get selector columns in the text matrix so
  // that a class query aligns with patches of that class's color.
  std::vector<StubClassHint> classes;
  // Flat colors every class query should score at zero (e.g. the plate or
  // table background), so class regions outrank their surroundings.
  std::vector<std::array<std::uint8_t, 3>> suppress_colors;
};

// Deterministic offline backend. Image side: each grid cell contributes
// color means, gray spread, and second-moment means (10 channels), plus a
// region-context channel -- the image-wide area fraction of the cell's
// dominant color -- standing in for the global receptive field a real
// vision tower gives every patch token. The same statistics taken over
// the whole image fill 10 more channels, and everything is projected
// through a fixed seeded dim x 21 matrix. Text side: whitespace tokens
// (lowercased, edge punctuation stripped) are hashed with FNV-1a into a
// 64-bin bag and projected through a fixed seeded dim x 64 matrix;
// columns reached by class-name tokens carry selector vectors solved
// against the image projections of the class (and residue) colors, with
// suppressed colors pinned to zero and the context channel constrained
// out of the score, so a class query ranks its own patches by color alone
// while the values it attends still carry the region's size.
class StubEncoder final : public Encoder {
 public:
  explicit StubEncoder(StubConfig config = {});

  EncoderInfo info() const override;
  Mat encode_image(const Image& image) const override;
  Vec encode_text(const std::string& text) const override;
  std::string parameter_digest() const override;

  // Fixed projections, exposed for verification.
  const Mat& image_matrix() const { return image_proj_; }
  const Mat& text_matrix() const { return text_proj_; }
  static constexpr int kStatChannels = 21;  // 10 local + 1 context + 10 image-level
  static constexpr int kTextBins = 64;

  static std::vector<std::string> tokenize(const std::string& text);
  static std::uint64_t fnv1a64(const std::string& token);

 private:
  StubConfig config_;
  Mat image_proj_;  // dim x kStatChannels
  Mat text_proj_;   // dim x kTextBins
};

}  // namespace platediff

#endif  // PLATEDIFF_STUB_ENCODER_HPP
