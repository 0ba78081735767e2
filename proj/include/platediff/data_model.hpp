#ifndef PLATEDIFF_DATA_MODEL_HPP
#define PLATEDIFF_DATA_MODEL_HPP

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "platediff/image.hpp"

namespace platediff {

// Food-structure stratum used when reporting metrics.
enum class Structure { solid, amorphous_mixed, unknown };

const char* to_string(Structure s);
Structure structure_from_string(const std::string& s);

enum class Stage { absolute, difference };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

// Either a file on disk or pixels held in memory. Immutable once built.
struct ImageRef {
  std::string path;
  std::shared_ptr<const Image> pixels;

  bool present() const { return !path.empty() || pixels != nullptr; }
};

// Axis-aligned box in pixel coordinates; optional per-item metadata
// (the synthetic generator fills it, real manifests may omit it).
struct PixelBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool contains(double px, double py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
};

struct FoodItem {
  std::string name;
  double weight_before = 0.0;  // grams
  std::optional<double> weight_after;
  Structure structure = Structure::unknown;
  std::optional<PixelBox> bbox_before;
  std::optional<PixelBox> bbox_after;

  // Δw in grams; requires weight_after.
  double weight_difference() const;
};

// One (before image, optional after image, item list) record.
struct Sample {
  std::string sample_id;
  ImageRef before_image;
  ImageRef after_image;
  std::vector<FoodItem> items;
  std::string dataset_tag;
};

// Throws ValidationError naming the offending field.
void validate(const Sample& sample);

// One food item of one sample, with the stage-appropriate regression target.
struct ItemQuery {
  std::shared_ptr<const Sample> sample;
  int item_index = 0;
  Stage stage = Stage::absolute;
  double target = 0.0;  // grams (w) or grams of difference (Δw)

  const FoodItem& item() const { return sample->items[static_cast<std::size_t>(item_index)]; }
};

// One query per item, in item order. Targets: weight_before for
// Stage::absolute, weight_before - weight_after for Stage::difference.
// Throws MissingAfterState when difference is requested without after data.
std::vector<ItemQuery> make_item_queries(const Sample& sample, Stage stage);
std::vector<ItemQuery> make_item_queries(std::shared_ptr<const Sample> sample, Stage stage);

}  // namespace platediff

#endif  // PLATEDIFF_DATA_MODEL_HPP
