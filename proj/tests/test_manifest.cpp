#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "platediff/errors.hpp"
#include "platediff/manifest.hpp"

using namespace platediff;

namespace {

std::filesystem::path temp_dir(const char* leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<Sample> two_samples() {
  Sample a;
  a.sample_id = "s-001";
  a.before_image.path = "imgs/s-001-before.png";
  a.after_image.path = "imgs/s-001-after.png";
  a.dataset_tag = "unit";
  FoodItem rice;
  rice.name = "rice";
  rice.weight_before = 120.0;
  rice.weight_after = 30.0;
  rice.structure = Structure::amorphous_mixed;
  rice.bbox_before = PixelBox{4, 8, 50, 40};
  a.items.push_back(rice);

  Sample b;
  b.sample_id = "s-002";
  b.before_image.path = "imgs/s-002-before.png";
  b.dataset_tag = "unit";
  FoodItem egg;
  egg.name = "egg";
  egg.weight_before = 55.0;
  egg.structure = Structure::solid;
  b.items.push_back(egg);
  return {a, b};
}

}  // namespace

TEST_CASE("manifests round-trip and resolve relative paths") {
  const auto dir = temp_dir("platediff-manifest-rt");
  const auto path = dir / "manifest.jsonl";
  const auto samples = two_samples();
  save_manifest(path, samples);

  // One JSON object per line.
  std::ifstream in(path);
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == 2);

  const auto back = load_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].sample_id == "s-001");
  // Relative image paths come back anchored at the manifest directory.
  CHECK(back[0].before_image.path == (dir / "imgs/s-001-before.png").string());
  CHECK(back[0].after_image.present());
  CHECK_FALSE(back[1].after_image.present());
  REQUIRE(back[0].items.size() == 1);
  CHECK(back[0].items[0].weight_after.has_value());
  CHECK(back[0].items[0].weight_after.value() == doctest::Approx(30.0));
  CHECK(back[0].items[0].structure == Structure::amorphous_mixed);
  REQUIRE(back[0].items[0].bbox_before.has_value());
  CHECK(back[0].items[0].bbox_before->w == 50);
  CHECK_FALSE(back[0].items[0].bbox_after.has_value());
  CHECK(back[1].items[0].weight_after.has_value() == false);
  std::filesystem::remove_all(dir);
}

TEST_CASE("parse errors carry the line number") {
  const auto dir = temp_dir("platediff-manifest-bad");
  const auto path = dir / "manifest.jsonl";
  {
    std::ofstream out(path);
    out << R"({"sample_id":"ok-1","before_image":"a.png","items":[{"name":"x","weight_before_g":1.0}]})"
        << "\n";
    out << "{ not json at all\n";
  }
  try {
    load_manifest(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing required fields and duplicate ids are rejected") {
  const auto dir = temp_dir("platediff-manifest-bad2");
  const auto path = dir / "m.jsonl";
  {
    std::ofstream out(path);
    out << R"({"sample_id":"dup","before_image":"a.png","items":[{"name":"x","weight_before_g":1.0}]})"
        << "\n";
    out << R"({"sample_id":"dup","before_image":"b.png","items":[{"name":"y","weight_before_g":2.0}]})"
        << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), ParseError);
  {
    std::ofstream out(path);
    out << R"({"sample_id":"no-items","before_image":"a.png"})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), ParseError);
  CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("splits are deterministic, disjoint, and sized by the fraction") {
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) {
    Sample s;
    s.sample_id = "s-" + std::to_string(i);
    s.before_image.path = "x.png";
    FoodItem item;
    item.name = "food";
    item.weight_before = 1.0;
    s.items.push_back(item);
    samples.push_back(s);
  }

  const auto [train, test] = split(samples, 0.8, 7);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);

  std::set<std::string> seen;
  for (const auto& s : train) seen.insert(s.sample_id);
  for (const auto& s : test) seen.insert(s.sample_id);
  CHECK(seen.size() == 10);  // disjoint and exhaustive

  const auto [train2, test2] = split(samples, 0.8, 7);
  for (std::size_t i = 0; i < train.size(); ++i)
    CHECK(train[i].sample_id == train2[i].sample_id);

  const auto [train3, test3] = split(samples, 0.8, 8);
  bool any_difference = train3.size() != train.size();
  for (std::size_t i = 0; !any_difference && i < train.size(); ++i)
    any_difference = train[i].sample_id != train3[i].sample_id;
  CHECK(any_difference);  // seed actually reshuffles

  CHECK_THROWS_AS(split(samples, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(samples, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split(std::vector<Sample>{}, 0.5, 1), EmptyInput);
}
