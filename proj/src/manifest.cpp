#include "platediff/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "platediff/errors.hpp"

namespace platediff {

using nlohmann::json;

namespace {

std::string resolve(const std::filesystem::path& base, const std::string& stored) {
  if (stored.empty()) return stored;
  std::filesystem::path p(stored);
  if (p.is_absolute()) return stored;
  return (base / p).string();
}

PixelBox box_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 4) {
    throw ValidationError(field, "expected [x, y, w, h]");
  }
  PixelBox b;
  b.x = j[0].get<int>();
  b.y = j[1].get<int>();
  b.w = j[2].get<int>();
  b.h = j[3].get<int>();
  return b;
}

json box_to_json(const PixelBox& b) {
  return json::array({b.x, b.y, b.w, b.h});
}

Sample sample_from_json(const json& j, const std::filesystem::path& base) {
  Sample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.before_image.path = resolve(base, j.at("before_image").get<std::string>());
  if (j.contains("after_image") && !j["after_image"].is_null()) {
    s.after_image.path = resolve(base, j["after_image"].get<std::string>());
  }
  s.dataset_tag = j.value("dataset_tag", "");
  for (const json& ji : j.at("items")) {
    FoodItem item;
    item.name = ji.at("name").get<std::string>();
    item.weight_before = ji.at("weight_before_g").get<double>();
    if (ji.contains("weight_after_g") && !ji["weight_after_g"].is_null()) {
      item.weight_after = ji["weight_after_g"].get<double>();
    }
    item.structure = structure_from_string(ji.value("structure", "unknown"));
    if (ji.contains("bbox_before")) item.bbox_before = box_from_json(ji["bbox_before"], "bbox_before");
    if (ji.contains("bbox_after")) item.bbox_after = box_from_json(ji["bbox_after"], "bbox_after");
    s.items.push_back(std::move(item));
  }
  return s;
}

json sample_to_json(const Sample& s) {
  json j;
  j["sample_id"] = s.sample_id;
  j["before_image"] = s.before_image.path;
  if (s.after_image.present()) j["after_image"] = s.after_image.path;
  json items = json::array();
  for (const FoodItem& item : s.items) {
    json ji;
    ji["name"] = item.name;
    ji["weight_before_g"] = item.weight_before;
    if (item.weight_after) ji["weight_after_g"] = *item.weight_after;
    ji["structure"] = to_string(item.structure);
    if (item.bbox_before) ji["bbox_before"] = box_to_json(*item.bbox_before);
    if (item.bbox_after) ji["bbox_after"] = box_to_json(*item.bbox_after);
    items.push_back(std::move(ji));
  }
  j["items"] = std::move(items);
  j["dataset_tag"] = s.dataset_tag;
  return j;
}

}  // namespace

std::vector<Sample> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const std::filesystem::path base = path.parent_path();

  std::vector<Sample> samples;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || std::all_of(line.begin(), line.end(), [](unsigned char c) {
          return std::isspace(c);
        })) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
    Sample s;
    try {
      s = sample_from_json(j, base);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
    validate(s);
    if (!seen_ids.insert(s.sample_id).second) {
      throw ParseError("duplicate sample_id '" + s.sample_id + "'", line_no);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path.string());
  for (const Sample& s : samples) {
    out << sample_to_json(s).dump() << '\n';
  }
  if (!out) throw IoError("short write: " + path.string());
}

std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& samples,
                                                          double train_fraction,
                                                          std::uint64_t seed) {
  if (samples.empty()) throw EmptyInput("cannot split an empty sample list");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train =
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(samples.size())));
  std::vector<Sample> train, test;
  train.reserve(n_train);
  test.reserve(samples.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : test).push_back(samples[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace platediff
