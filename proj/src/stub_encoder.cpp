#include "platediff/stub_encoder.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include <Eigen/QR>

#include "platediff/digest.hpp"
#include "platediff/errors.hpp"

namespace platediff {
namespace {

constexpr int kLocal = 10;                 // per-cell color statistics
constexpr int kContext = kLocal;           // index of the region-context channel

// Color statistics over a pixel rectangle: channel means, gray spread,
// and second-moment means. The quadratic terms lift flat colors out of
// the 3-dimensional RGB plane, so a handful of distinct colors stay
// linearly independent and the selector solve below has exact solutions.
Eigen::Matrix<Scalar, kLocal, 1> rect_stats(const Image& img, int x0, int y0, int x1, int y1) {
  double sr = 0, sg = 0, sb = 0, sy = 0, syy = 0;
  double srr = 0, sgg = 0, sbb = 0, srg = 0, srb = 0, sgb = 0;
  const double n = static_cast<double>(x1 - x0) * (y1 - y0);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::uint8_t* p = img.at(x, y);
      const double r = p[0] / 255.0, g = p[1] / 255.0, b = p[2] / 255.0;
      const double gray = (r + g + b) / 3.0;
      sr += r;
      sg += g;
      sb += b;
      sy += gray;
      syy += gray * gray;
      srr += r * r;
      sgg += g * g;
      sbb += b * b;
      srg += r * g;
      srb += r * b;
      sgb += g * b;
    }
  }
  Eigen::Matrix<Scalar, kLocal, 1> s;
  s << sr / n, sg / n, sb / n, std::sqrt(std::max(0.0, syy / n - (sy / n) * (sy / n))),
      srr / n, sgg / n, sbb / n, srg / n, srb / n, sgb / n;
  return s;
}

// Local-channel statistics of a flat color patch (zero gray spread; the
// second moments collapse to plain products).
Eigen::Matrix<Scalar, kLocal, 1> flat_patch_stats(const std::array<std::uint8_t, 3>& color) {
  const double r = color[0] / 255.0, g = color[1] / 255.0, b = color[2] / 255.0;
  Eigen::Matrix<Scalar, kLocal, 1> s;
  s << r, g, b, 0.0, r * r, g * g, b * b, r * g, r * b, g * b;
  return s;
}

}  // namespace

StubEncoder::StubEncoder(StubConfig config) : config_(std::move(config)) {
  if (config_.dim < 1) throw ValidationError("dim", "must be positive");
  if (config_.patch_grid < 1) throw ValidationError("patch_grid", "must be positive");
  if (config_.working_size < config_.patch_grid ||
      config_.working_size % config_.patch_grid != 0)
    throw ValidationError("working_size", "must be a positive multiple of patch_grid");

  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> image_entry(0.0, 0.5);
  image_proj_.resize(config_.dim, kStatChannels);
  for (Index r = 0; r < config_.dim; ++r)
    for (Index c = 0; c < kStatChannels; ++c) image_proj_(r, c) = image_entry(rng);

  std::normal_distribution<double> text_entry(0.0, 0.05);
  text_proj_.resize(config_.dim, kTextBins);
  for (Index r = 0; r < config_.dim; ++r)
    for (Index c = 0; c < kTextBins; ++c) text_proj_(r, c) = text_entry(rng);

  if (config_.classes.empty()) return;
  const Index k = static_cast<Index>(config_.classes.size());
  Index r = 0;
  for (const auto& cls : config_.classes) r += cls.residue.has_value();
  const Index s = static_cast<Index>(config_.suppress_colors.size());
  if (k + r + s + 1 > config_.dim)
    throw ValidationError(
        "classes", "need dim > hinted classes plus residue and suppress colors");

  // Selector columns: rows of M are the local-channel responses to flat
  // class colors (then residue and suppress colors), plus one row pinning
  // the region-context channel's direction. The pseudo-inverse columns
  // give f_i . t_j = alpha * delta_ij across all rows, so the query for
  // class j responds to class-j pixels (and class-j residue), scores zero
  // on the other classes and on suppressed colors, stays independent of
  // the context channel's value, and ignores the image-level channels
  // (those add one shared offset per image, which cancels when patches
  // compete). Keeping the score blind to context matters: the channel then
  // rides along purely as attended value, never as a ranking signal.
  auto local_response = [&](const std::array<std::uint8_t, 3>& color) {
    return (image_proj_.leftCols(kLocal) * flat_patch_stats(color)).transpose().eval();
  };
  Mat m(k + r + s + 1, config_.dim);
  std::vector<Index> residue_row(static_cast<std::size_t>(k), -1);
  for (Index i = 0; i < k; ++i)
    m.row(i) = local_response(config_.classes[static_cast<std::size_t>(i)].color);
  Index next = k;
  for (Index i = 0; i < k; ++i) {
    const auto& cls = config_.classes[static_cast<std::size_t>(i)];
    if (cls.residue) {
      residue_row[static_cast<std::size_t>(i)] = next;
      m.row(next++) = local_response(*cls.residue);
    }
  }
  for (Index i = 0; i < s; ++i)
    m.row(next++) = local_response(config_.suppress_colors[static_cast<std::size_t>(i)]);
  m.row(next) = image_proj_.col(kContext).transpose();
  const Mat pinv = m.completeOrthogonalDecomposition().pseudoInverse();  // dim x rows
  constexpr double kSelectorGain = 4.0;
  for (Index i = 0; i < k; ++i) {
    Vec selector = pinv.col(i);
    if (residue_row[static_cast<std::size_t>(i)] >= 0)
      selector += pinv.col(residue_row[static_cast<std::size_t>(i)]);
    for (const std::string& token : tokenize(config_.classes[static_cast<std::size_t>(i)].name)) {
      const Index bin = static_cast<Index>(fnv1a64(token) % kTextBins);
      text_proj_.col(bin) += kSelectorGain * selector;
    }
  }
}

EncoderInfo StubEncoder::info() const {
  return EncoderInfo{"stub", config_.dim, config_.dim, config_.patch_grid};
}

Mat StubEncoder::encode_image(const Image& image) const {
  if (image.width < 1 || image.height < 1) throw DegenerateInput("empty image");
  const int ws = config_.working_size;
  Image scaled;
  const Image* src = &image;
  if (image.width != ws || image.height != ws) {
    scaled = resize_bilinear(image, ws, ws);
    src = &scaled;
  }

  Eigen::Matrix<Scalar, kStatChannels, 1> stats;
  stats.tail<kLocal>() = rect_stats(*src, 0, 0, ws, ws);

  const int grid = config_.patch_grid;
  const int cell = ws / grid;
  Mat out(static_cast<Index>(grid) * grid, config_.dim);
  for (int py = 0; py < grid; ++py) {
    for (int px = 0; px < grid; ++px) {
      stats.head<kLocal>() = rect_stats(*src, px * cell, py * cell, (px + 1) * cell, (py + 1) * cell);
      out.row(static_cast<Index>(py) * grid + px) = (image_proj_ * stats).transpose();
    }
  }
  return out;
}

Vec StubEncoder::encode_text(const std::string& text) const {
  if (text.empty()) throw ValidationError("prompt", "must not be empty");
  Vec bag = Vec::Zero(kTextBins);
  for (const std::string& token : tokenize(text))
    bag[static_cast<Index>(fnv1a64(token) % kTextBins)] += 1.0;
  return text_proj_ * bag;
}

std::string StubEncoder::parameter_digest() const {
  Sha256 h;
  const std::string head = "stub-v1|" + std::to_string(config_.dim) + "|" +
                           std::to_string(config_.patch_grid) + "|" +
                           std::to_string(config_.working_size) + "|" +
                           std::to_string(config_.seed);
  h.update(head.data(), head.size());
  h.update(image_proj_.data(), sizeof(Scalar) * static_cast<std::size_t>(image_proj_.size()));
  h.update(text_proj_.data(), sizeof(Scalar) * static_cast<std::size_t>(text_proj_.size()));
  return h.hex();
}

std::vector<std::string> StubEncoder::tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) tokens.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return tokens;
}

std::uint64_t StubEncoder::fnv1a64(const std::string& token) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : token) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace platediff
