#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "platediff/digest.hpp"
#include "platediff/errors.hpp"
#include "platediff/viz.hpp"

using namespace platediff;

namespace {

std::filesystem::path temp_dir(const char* leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<ItemPrediction> strata_items(int solids, int amorphous, double noise = 0.0) {
  std::vector<ItemPrediction> items;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> target(20.0, 220.0);
  for (int i = 0; i < solids + amorphous; ++i) {
    ItemPrediction it;
    it.sample_id = "s" + std::to_string(i);
    it.item_name = "item";
    it.target = target(rng);
    it.prediction = it.target + (i % 2 == 0 ? noise : -noise);
    it.structure = i < solids ? Structure::solid : Structure::amorphous_mixed;
    items.push_back(it);
  }
  return items;
}

}  // namespace

TEST_CASE("viridis hits its anchors and clamps outside the unit range") {
  CHECK(viridis(0.0) == std::array<std::uint8_t, 3>{68, 1, 84});
  CHECK(viridis(1.0) == std::array<std::uint8_t, 3>{253, 231, 37});
  CHECK(viridis(0.5) == std::array<std::uint8_t, 3>{33, 145, 140});
  CHECK(viridis(-3.0) == viridis(0.0));
  CHECK(viridis(42.0) == viridis(1.0));
  // Interpolation between anchors stays inside the anchor hull.
  const auto mid = viridis(0.0625);
  CHECK(mid[0] >= 68);
  CHECK(mid[0] <= 72);
}

TEST_CASE("draw_text stamps the expected pixel count and folds case") {
  Image a(32, 16);
  draw_text(a, 2, 2, "A", {255, 255, 255});
  int lit = 0;
  for (std::uint8_t v : a.rgb) lit += v != 0;
  // Glyph A rows 01110 10001 10001 11111 10001 10001 10001 = 18 pixels, 3 channels.
  CHECK(lit == 18 * 3);

  Image b(32, 16);
  draw_text(b, 2, 2, "a", {255, 255, 255});
  CHECK(a.rgb == b.rgb);

  SUBCASE("unknown glyphs advance as blanks") {
    Image c(32, 16);
    draw_text(c, 2, 2, "~", {255, 255, 255});
    CHECK(c.rgb == Image(32, 16).rgb);
  }
  SUBCASE("off-canvas text clips instead of wrapping") {
    Image c(10, 10);
    draw_text(c, -4, -4, "XYZ", {255, 255, 255});
    draw_text(c, 8, 8, "XYZ", {255, 255, 255});  // runs off the right edge
    CHECK(c.width == 10);                        // reaching here means no out-of-range write
  }
  SUBCASE("scale doubles every lit pixel in both directions") {
    Image c(64, 32);
    draw_text(c, 2, 2, "A", {255, 255, 255}, 2);
    int lit2 = 0;
    for (std::uint8_t v : c.rgb) lit2 += v != 0;
    CHECK(lit2 == 18 * 4 * 3);
  }
}

TEST_CASE("make_histogram bins evenly and never drops a value") {
  SUBCASE("even split") {
    std::vector<double> values;
    for (int i = 0; i < 10; ++i) values.push_back(i);
    const Histogram h = make_histogram(values, 5, 0.0, 10.0);
    for (std::int64_t c : h.counts) CHECK(c == 2);
  }
  SUBCASE("top edge is inclusive") {
    const Histogram h = make_histogram({10.0}, 5, 0.0, 10.0);
    CHECK(h.counts.back() == 1);
  }
  SUBCASE("out-of-range values clamp to the edge bins") {
    const Histogram h = make_histogram({-100.0, 200.0}, 4, 0.0, 10.0);
    CHECK(h.counts.front() == 1);
    CHECK(h.counts.back() == 1);
  }
  SUBCASE("degenerate range lands everything in the first bin") {
    const Histogram h = make_histogram({5.0, 5.0, 5.0}, 3, 5.0, 5.0);
    CHECK(h.counts[0] == 3);
  }
  SUBCASE("conservation holds for random data") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-50.0, 50.0);
    std::vector<double> values;
    for (int i = 0; i < 977; ++i) values.push_back(dist(rng));
    const Histogram h = make_histogram(values, 13, -20.0, 20.0);
    std::int64_t total = 0;
    for (std::int64_t c : h.counts) total += c;
    CHECK(total == 977);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(make_histogram({1.0}, 0, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(make_histogram({1.0}, 4, 2.0, 1.0), ValidationError);
  }
}

TEST_CASE("uniform attention renders as one uniform blend") {
  const Image base = Image::solid(64, 64, 100, 100, 100);
  RowVec w = RowVec::Constant(16, 1.0 / 32.0);  // one half of a uniform 2N softmax
  const Image out = render_heatmap_overlay(base, w, 4, 0.5);
  // All weights equal the per-image max, so v = 1 everywhere and each
  // pixel is the same half blend toward viridis(1) = (253, 231, 37).
  const std::uint8_t er = static_cast<std::uint8_t>(std::lround(100 * 0.5 + 253 * 0.5));
  const std::uint8_t eg = static_cast<std::uint8_t>(std::lround(100 * 0.5 + 231 * 0.5));
  const std::uint8_t eb = static_cast<std::uint8_t>(std::lround(100 * 0.5 + 37 * 0.5));
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const auto* p = out.at(x, y);
      CAPTURE(x);
      CAPTURE(y);
      REQUIRE(p[0] == er);
      REQUIRE(p[1] == eg);
      REQUIRE(p[2] == eb);
    }
}

TEST_CASE("heatmap overlay properties") {
  const Image base = Image::solid(64, 64, 80, 90, 100);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  RowVec w(16);
  for (Index i = 0; i < 16; ++i) w(i) = dist(rng);

  SUBCASE("per-image max normalization makes the overlay scale free") {
    const Image a = render_heatmap_overlay(base, w, 4);
    // Power-of-two scaling is exact in binary floating point, so the
    // normalized field is bit-identical and the overlays must match.
    const Image b = render_heatmap_overlay(base, RowVec(w * 32.0), 4);
    CHECK(a.rgb == b.rgb);
  }
  SUBCASE("zero-weight regions keep the untouched input") {
    RowVec hot = RowVec::Zero(16);
    hot(0) = 1.0;  // all mass on the top-left patch
    const Image out = render_heatmap_overlay(base, hot, 4, 0.7);
    // The far corner sits two cells from the hot patch, beyond bilinear reach.
    const auto* p = out.at(56, 56);
    CHECK(p[0] == 80);
    CHECK(p[1] == 90);
    CHECK(p[2] == 100);
    // The hot patch center saturates to the full-strength blend.
    const auto* q = out.at(7, 7);
    CHECK(q[0] == static_cast<std::uint8_t>(std::lround(80 * 0.3 + 253 * 0.7)));
  }
  SUBCASE("identical halves render identically") {
    RowVec attn(32);
    attn << w, w;
    attn /= attn.sum();
    const Image before = render_heatmap_overlay(base, attn.head(16), 4);
    const Image after = render_heatmap_overlay(base, attn.tail(16), 4);
    CHECK(before.rgb == after.rgb);
  }
  SUBCASE("shape and input validation") {
    CHECK_THROWS_AS(render_heatmap_overlay(base, w, 5), ShapeMismatch);
    CHECK_THROWS_AS(render_heatmap_overlay(Image(), w, 4), DegenerateInput);
  }
}

TEST_CASE("heatmap bundle writes overlays plus the raw attention record") {
  const auto dir = temp_dir("platediff-viz-bundle");
  const Image before = Image::solid(48, 48, 120, 110, 100);
  const Image after = Image::solid(48, 48, 100, 110, 120);
  FusionOutput out;
  out.attention = RowVec::Constant(32, 1.0 / 32.0);
  out.prediction = 123.5;

  SUBCASE("two-image query emits both overlays") {
    const HeatmapFiles files =
        write_heatmap_bundle(dir, "q0", out, before, &after, 4, "red lentil mash");
    CHECK(std::filesystem::exists(files.before_png));
    REQUIRE(files.after_png.has_value());
    CHECK(std::filesystem::exists(*files.after_png));
    std::ifstream f(files.attention_json);
    const auto j = nlohmann::json::parse(f);
    CHECK(j.at("item") == "red lentil mash");
    CHECK(j.at("grid") == 4);
    CHECK(j.at("prediction") == doctest::Approx(123.5));
    REQUIRE(j.at("attention").size() == 32);
    double sum = 0.0;
    for (const auto& v : j.at("attention")) sum += v.get<double>();
    CHECK(sum == doctest::Approx(1.0));
  }
  SUBCASE("single-image query skips the after overlay") {
    const HeatmapFiles files =
        write_heatmap_bundle(dir, "q1", out, before, nullptr, 4, "item");
    CHECK(!files.after_png.has_value());
    CHECK(std::filesystem::exists(files.before_png));
  }
  SUBCASE("attention must cover both patch grids") {
    FusionOutput bad;
    bad.attention = RowVec::Constant(16, 1.0 / 16.0);
    CHECK_THROWS_AS(write_heatmap_bundle(dir, "q2", bad, before, nullptr, 4, "item"),
                    ShapeMismatch);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("joint density legend covers strata plus the pooled total") {
  const auto items = strata_items(2, 3);
  const auto legend = joint_density_legend(items);
  REQUIRE(legend.size() == 3);
  CHECK(legend[0] == "SOLID N=2");
  CHECK(legend[1] == "AMORPHOUS_MIXED N=3");
  CHECK(legend[2] == "ALL N=5");

  SUBCASE("absent strata are skipped, pooled count is conserved") {
    auto only_solid = strata_items(4, 0);
    const auto l2 = joint_density_legend(only_solid);
    REQUIRE(l2.size() == 2);
    CHECK(l2[0] == "SOLID N=4");
    CHECK(l2[1] == "ALL N=4");
  }
  SUBCASE("empty input refuses to plot") {
    CHECK_THROWS_AS(joint_density_legend({}), EmptyReport);
  }
}

TEST_CASE("figures render deterministically and reject empty reports") {
  const auto items = strata_items(5, 6, 9.0);
  const Image h1 = render_histogram_figure(items);
  const Image h2 = render_histogram_figure(items);
  CHECK(h1.rgb == h2.rgb);
  const Image j1 = render_joint_density_figure(items);
  const Image j2 = render_joint_density_figure(items);
  CHECK(j1.rgb == j2.rgb);
  CHECK_THROWS_AS(render_histogram_figure({}), EmptyReport);
  CHECK_THROWS_AS(render_joint_density_figure({}), EmptyReport);
}

TEST_CASE("histogram figure draws both series") {
  const auto items = strata_items(8, 8, 15.0);
  const Image fig = render_histogram_figure(items);
  bool truth_seen = false, pred_seen = false;
  for (std::size_t i = 0; i + 2 < fig.rgb.size(); i += 3) {
    if (fig.rgb[i] == 31 && fig.rgb[i + 1] == 119 && fig.rgb[i + 2] == 180) truth_seen = true;
    if (fig.rgb[i] == 255 && fig.rgb[i + 1] == 127 && fig.rgb[i + 2] == 14) pred_seen = true;
  }
  CHECK(truth_seen);
  CHECK(pred_seen);
}

TEST_CASE("perfect predictions put all joint-density mass on the diagonal") {
  // With prediction == target every marker center satisfies x + y = const
  // (the y = x line has slope -1 in raster coordinates), so the spread of
  // x + y over marker pixels stays within the 3x3 marker footprint.
  const auto items = strata_items(12, 0, 0.0);
  const Image fig = render_joint_density_figure(items);
  int lo = 1 << 30, hi = -(1 << 30);
  for (int y = 0; y < fig.height; ++y)
    for (int x = 0; x < fig.width; ++x) {
      const auto* p = fig.at(x, y);
      if (p[0] == 31 && p[1] == 119 && p[2] == 180 && y > 40) {  // skip the legend swatch
        lo = std::min(lo, x + y);
        hi = std::max(hi, x + y);
      }
    }
  REQUIRE(lo <= hi);  // some markers rendered
  CHECK(hi - lo <= 6);

  SUBCASE("a far-off prediction breaks the diagonal band") {
    auto bad = strata_items(12, 0, 0.0);
    bad[0].prediction = bad[0].target + 150.0;
    const Image fig2 = render_joint_density_figure(bad);
    int lo2 = 1 << 30, hi2 = -(1 << 30);
    for (int y = 0; y < fig2.height; ++y)
      for (int x = 0; x < fig2.width; ++x) {
        const auto* p = fig2.at(x, y);
        if (p[0] == 31 && p[1] == 119 && p[2] == 180 && y > 40) {
          lo2 = std::min(lo2, x + y);
          hi2 = std::max(hi2, x + y);
        }
      }
    CHECK(hi2 - lo2 > 6);
  }
}

TEST_CASE("artifact manifest records digests of everything under its root") {
  const auto dir = temp_dir("platediff-viz-manifest");
  std::filesystem::create_directories(dir / "figs");
  std::ofstream(dir / "report.json") << "{}\n";
  std::ofstream(dir / "figs" / "plot.png") << "not-a-real-png";

  ArtifactManifest manifest(dir);
  manifest.add(dir / "figs" / "plot.png");
  manifest.add(dir / "report.json");

  const auto entries = manifest.entries();
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].rel_path == "figs/plot.png");  // sorted by path, not insertion
  CHECK(entries[1].rel_path == "report.json");
  CHECK(entries[0].sha256 == sha256_file(dir / "figs" / "plot.png"));
  CHECK(entries[1].bytes == std::filesystem::file_size(dir / "report.json"));

  const auto manifest_path = dir / "artifacts.json";
  manifest.write(manifest_path);
  std::ifstream f(manifest_path);
  const auto j = nlohmann::json::parse(f);
  CHECK(j.at("format") == "platediff-artifacts");
  REQUIRE(j.at("artifacts").size() == 2);
  CHECK(j.at("artifacts")[0].at("path") == "figs/plot.png");
  CHECK(j.at("artifacts")[0].at("sha256").get<std::string>().size() == 64);

  SUBCASE("writes are deterministic") {
    const std::string first = sha256_file(manifest_path);
    manifest.write(manifest_path);
    CHECK(sha256_file(manifest_path) == first);
  }
  SUBCASE("files outside the root are rejected") {
    const auto outside = std::filesystem::temp_directory_path() / "platediff-viz-outside.txt";
    std::ofstream(outside) << "x";
    CHECK_THROWS_AS(manifest.add(outside), ValidationError);
    std::filesystem::remove(outside);
  }
  std::filesystem::remove_all(dir);
}
