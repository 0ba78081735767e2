#include "platediff/data_model.hpp"

#include <algorithm>
#include <cctype>

#include "platediff/errors.hpp"

namespace platediff {

const char* to_string(Structure s) {
  switch (s) {
    case Structure::solid: return "solid";
    case Structure::amorphous_mixed: return "amorphous_mixed";
    case Structure::unknown: return "unknown";
  }
  return "unknown";
}

Structure structure_from_string(const std::string& s) {
  if (s == "solid") return Structure::solid;
  if (s == "amorphous_mixed") return Structure::amorphous_mixed;
  if (s == "unknown") return Structure::unknown;
  throw ValidationError("structure", "unknown structure tag '" + s + "'");
}

const char* to_string(Stage s) {
  return s == Stage::absolute ? "absolute" : "difference";
}

Stage stage_from_string(const std::string& s) {
  if (s == "absolute") return Stage::absolute;
  if (s == "difference") return Stage::difference;
  throw ValidationError("stage", "unknown stage '" + s + "'");
}

double FoodItem::weight_difference() const {
  if (!weight_after) {
    throw MissingAfterState("item '" + name + "' has no after-eating weight");
  }
  return weight_before - *weight_after;
}

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

void validate(const Sample& sample) {
  if (sample.sample_id.empty()) {
    throw ValidationError("sample_id", "must be non-empty");
  }
  if (!sample.before_image.present()) {
    throw ValidationError("before_image", "sample '" + sample.sample_id + "' has no before image");
  }
  bool any_after_weight = false;
  for (std::size_t i = 0; i < sample.items.size(); ++i) {
    const FoodItem& item = sample.items[i];
    const std::string at = "items[" + std::to_string(i) + "]";
    if (item.name.empty() || blank(item.name)) {
      throw ValidationError(at + ".name", "must be non-empty after trimming");
    }
    if (item.weight_before < 0) {
      throw ValidationError(at + ".weight_before_g", "must be >= 0");
    }
    if (item.weight_after && *item.weight_after < 0) {
      throw ValidationError(at + ".weight_after_g", "must be >= 0");
    }
    any_after_weight = any_after_weight || item.weight_after.has_value();
  }
  if (any_after_weight && !sample.after_image.present()) {
    throw ValidationError("after_image",
                          "sample '" + sample.sample_id + "' has after weights but no after image");
  }
}

std::vector<ItemQuery> make_item_queries(const Sample& sample, Stage stage) {
  return make_item_queries(std::make_shared<const Sample>(sample), stage);
}

std::vector<ItemQuery> make_item_queries(std::shared_ptr<const Sample> sample, Stage stage) {
  if (stage == Stage::difference) {
    if (!sample->after_image.present()) {
      throw MissingAfterState("sample '" + sample->sample_id + "' has no after image");
    }
    for (const FoodItem& item : sample->items) {
      if (!item.weight_after) {
        throw MissingAfterState("sample '" + sample->sample_id + "', item '" + item.name +
                                "' has no after-eating weight");
      }
    }
  }
  std::vector<ItemQuery> queries;
  queries.reserve(sample->items.size());
  for (std::size_t i = 0; i < sample->items.size(); ++i) {
    const FoodItem& item = sample->items[i];
    ItemQuery q;
    q.sample = sample;
    q.item_index = static_cast<int>(i);
    q.stage = stage;
    q.target = stage == Stage::absolute ? item.weight_before : item.weight_difference();
    queries.push_back(std::move(q));
  }
  return queries;
}

}  // namespace platediff
