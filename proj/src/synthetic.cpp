#include "platediff/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "platediff/errors.hpp"
#include "platediff/image.hpp"
#include "platediff/manifest.hpp"

namespace platediff {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 1));
}

struct Ellipse {
  double cx = 0, cy = 0;
  double rx = 0, ry = 0;  // semi-axes, axis aligned
  double outer() const { return std::max(rx, ry); }
};

double eccentricity(const Ellipse& e) {
  const double a = std::max(e.rx, e.ry);
  const double b = std::min(e.rx, e.ry);
  return std::sqrt(1.0 - (b * b) / (a * a));
}

// Paints the ellipse (pixel-center inclusion test) and returns the number
// of painted pixels. Tracks the tight bounding box of painted pixels.
long paint(Image& img, const Ellipse& e, const std::array<std::uint8_t, 3>& color,
           std::optional<PixelBox>& box_out) {
  if (e.rx <= 0.0 || e.ry <= 0.0) {
    box_out.reset();
    return 0;
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)) - 1);
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(e.cx + e.rx)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)) - 1);
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(e.cy + e.ry)) + 1);
  long count = 0;
  int bx0 = img.width, by0 = img.height, bx1 = -1, by1 = -1;
  for (int y = y0; y <= y1; ++y) {
    const double dy = (y + 0.5 - e.cy) / e.ry;
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - e.cx) / e.rx;
      if (dx * dx + dy * dy <= 1.0) {
        img.set(x, y, color[0], color[1], color[2]);
        ++count;
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x);
        by1 = std::max(by1, y);
      }
    }
  }
  if (count == 0) {
    box_out.reset();
  } else {
    box_out = PixelBox{bx0, by0, bx1 - bx0 + 1, by1 - by0 + 1};
  }
  return count;
}

}  // namespace

SyntheticSpec SyntheticSpec::desk_default() {
  SyntheticSpec spec;
  spec.classes = {
      {"red lentil mash", {203, 58, 46}, 0.0050},
      {"green pea puree", {74, 158, 66}, 0.0040},
      {"blue corn grits", {52, 86, 178}, 0.0060},
      {"yellow polenta", {222, 186, 60}, 0.0045},
  };
  spec.smear_alpha = 0.5;
  return spec;
}

void validate(const SyntheticSpec& spec) {
  if (spec.image_size < 64) throw ValidationError("image_size", "must be >= 64");
  if (spec.classes.empty()) throw ValidationError("classes", "must not be empty");
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    const auto& c = spec.classes[i];
    if (c.name.empty()) throw ValidationError("classes", "class name must not be empty");
    if (!(c.density > 0.0)) throw ValidationError("classes", "density must be positive: " + c.name);
    for (std::size_t j = i + 1; j < spec.classes.size(); ++j) {
      if (c.name == spec.classes[j].name)
        throw ValidationError("classes", "duplicate class name: " + c.name);
      if (c.color == spec.classes[j].color)
        throw ValidationError("classes", "duplicate class color: " + c.name);
    }
  }
  if (spec.items_min < 1 || spec.items_min > spec.items_max)
    throw ValidationError("items_min", "need 1 <= items_min <= items_max");
  if (spec.items_max > static_cast<int>(spec.classes.size()))
    throw ValidationError("items_max", "more items than distinct classes");
  if (!(spec.consumed_min >= 0.0 && spec.consumed_min <= spec.consumed_max &&
        spec.consumed_max <= 1.0))
    throw ValidationError("consumed_min", "need 0 <= min <= max <= 1");
  if (!(spec.smear_alpha >= 0.0 && spec.smear_alpha < 1.0))
    throw ValidationError("smear_alpha", "need 0 <= alpha < 1 (1 would forge food pixels)");
  if (!(spec.radius_min > 0.0 && spec.radius_min <= spec.radius_max))
    throw ValidationError("radius_min", "need 0 < radius_min <= radius_max");
  if (spec.border_margin + spec.radius_max >= spec.image_size / 2.0)
    throw ValidationError("radius_max", "blobs cannot fit inside the image");
  if (spec.placement_retries < 1)
    throw ValidationError("placement_retries", "must be positive");
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec, int count) {
  validate(spec);
  if (count < 0) throw ValidationError("count", "must be non-negative");

  const std::array<std::uint8_t, 3> background{230, 228, 224};
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));

  for (int s = 0; s < count; ++s) {
    std::mt19937_64 rng(stream_seed(spec.seed, static_cast<std::uint64_t>(s)));

    std::uniform_int_distribution<int> item_count_dist(spec.items_min, spec.items_max);
    const int n_items = item_count_dist(rng);

    // Distinct classes per scene so a class name maps to one region.
    std::vector<int> class_ids(spec.classes.size());
    std::iota(class_ids.begin(), class_ids.end(), 0);
    std::shuffle(class_ids.begin(), class_ids.end(), rng);
    class_ids.resize(static_cast<std::size_t>(n_items));

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> major_dist(spec.radius_min, spec.radius_max);
    std::uniform_real_distribution<double> round_ratio(0.97, 1.0);
    std::uniform_real_distribution<double> long_ratio(0.55, 0.85);
    std::uniform_real_distribution<double> consumed_dist(spec.consumed_min, spec.consumed_max);

    std::vector<Ellipse> placed;
    for (int i = 0; i < n_items; ++i) {
      Ellipse e;
      const bool round = unit(rng) < 0.5;
      const double major = major_dist(rng);
      const double minor = major * (round ? round_ratio(rng) : long_ratio(rng));
      const bool horizontal = unit(rng) < 0.5;
      e.rx = horizontal ? major : minor;
      e.ry = horizontal ? minor : major;

      const double lo = spec.border_margin + e.outer();
      const double hi = spec.image_size - spec.border_margin - e.outer();
      std::uniform_real_distribution<double> pos(lo, hi);
      bool ok = false;
      for (int attempt = 0; attempt < spec.placement_retries && !ok; ++attempt) {
        e.cx = pos(rng);
        e.cy = pos(rng);
        ok = true;
        for (const auto& other : placed) {
          const double dx = e.cx - other.cx;
          const double dy = e.cy - other.cy;
          const double need = e.outer() + other.outer() + 4.0;
          if (dx * dx + dy * dy <= need * need) {
            ok = false;
            break;
          }
        }
      }
      if (!ok)
        throw SpecError("could not place blob " + std::to_string(i) + " of sample " +
                        std::to_string(s) + " without overlap");
      placed.push_back(e);
    }

    auto before = std::make_shared<Image>(Image::solid(
        spec.image_size, spec.image_size, background[0], background[1], background[2]));
    auto after = std::make_shared<Image>(*before);

    Sample sample;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06d", s);
    sample.sample_id = id;
    sample.dataset_tag = "synthetic";

    for (int i = 0; i < n_items; ++i) {
      const SyntheticClass& cls = spec.classes[static_cast<std::size_t>(class_ids[i])];
      const Ellipse& eb = placed[static_cast<std::size_t>(i)];
      const double f = consumed_dist(rng);

      FoodItem item;
      item.name = cls.name;
      item.structure = eccentricity(eb) < 0.5 ? Structure::solid : Structure::amorphous_mixed;

      const long before_px = paint(*before, eb, cls.color, item.bbox_before);
      item.weight_before = cls.density * static_cast<double>(before_px);

      Ellipse ea = eb;
      const double scale = std::sqrt(std::max(0.0, 1.0 - f));
      ea.rx *= scale;
      ea.ry *= scale;
      if (spec.smear_alpha > 0.0) {
        // Residue ring: the whole original footprint first, in the blended
        // residue color; the remaining food then overpaints its core. Zero
        // mass -- weight_after counts only full-color pixels below.
        std::array<std::uint8_t, 3> smear;
        for (int ch = 0; ch < 3; ++ch)
          smear[static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(std::lround(
              spec.smear_alpha * cls.color[static_cast<std::size_t>(ch)] +
              (1.0 - spec.smear_alpha) * background[static_cast<std::size_t>(ch)]));
        std::optional<PixelBox> ignored;
        paint(*after, eb, smear, ignored);
      }
      const long after_px = paint(*after, ea, cls.color, item.bbox_after);
      item.weight_after = cls.density * static_cast<double>(after_px);

      sample.items.push_back(std::move(item));
    }

    sample.before_image.pixels = std::move(before);
    sample.after_image.pixels = std::move(after);
    validate(sample);
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<Sample> generate_synthetic_files(const SyntheticSpec& spec, int count,
                                             const std::filesystem::path& dir) {
  std::vector<Sample> samples = generate_synthetic(spec, count);
  std::filesystem::create_directories(dir);
  for (Sample& sample : samples) {
    const std::string before_name = sample.sample_id + "_before.png";
    const std::string after_name = sample.sample_id + "_after.png";
    write_image(dir / before_name, *sample.before_image.pixels);
    write_image(dir / after_name, *sample.after_image.pixels);
    sample.before_image.path = before_name;
    sample.after_image.path = after_name;
  }
  save_manifest(dir / "manifest.jsonl", samples);
  return samples;
}

}  // namespace platediff
