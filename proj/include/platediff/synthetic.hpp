#ifndef PLATEDIFF_SYNTHETIC_HPP
#define PLATEDIFF_SYNTHETIC_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "platediff/data_model.hpp"

namespace platediff {

struct SyntheticClass {
  std::string name;
  std::array<std::uint8_t, 3> color;
  double density = 0.0;  // grams per pixel
};

// Scene recipe for the before/after generator. Weights are exact by
// construction: density times the rasterized pixel count of each blob.
struct SyntheticSpec {
  int image_size = 336;
  std::vector<SyntheticClass> classes;
  int items_min = 1;
  int items_max = 2;
  double consumed_min = 0.0;
  double consumed_max = 1.0;
  std::uint64_t seed = 1;

  double radius_min = 18.0;
  double radius_max = 52.0;
  double border_margin = 8.0;
  int placement_retries = 100;

  // Residue left where food was removed: the after image paints the vacated
  // ring in the class color blended toward the background by this factor
  // (0 = no residue). The ring has zero mass -- weights still count only
  // full-color pixels -- but it makes the consumed amount visible in the
  // after image, the way real plate waste is.
  double smear_alpha = 0.0;

  static SyntheticSpec desk_default();
};

void validate(const SyntheticSpec& spec);

// Deterministic for a fixed seed; each sample draws from its own RNG
// stream derived from (seed, sample index). Blobs never overlap; items
// within one scene use distinct classes so a name identifies one region.
// Ellipses with eccentricity < 0.5 are tagged solid, the rest
// amorphous_mixed. A consumed fraction of 1 removes the after blob
// entirely (weight_after = 0). Throws SpecError when a scene cannot be
// placed within the retry budget.
std::vector<Sample> generate_synthetic(const SyntheticSpec& spec, int count);

// Same scenes, but images are written as PNGs under dir and a manifest
// (manifest.jsonl) referencing them is saved alongside.
std::vector<Sample> generate_synthetic_files(const SyntheticSpec& spec, int count,
                                             const std::filesystem::path& dir);

}  // namespace platediff

#endif  // PLATEDIFF_SYNTHETIC_HPP
