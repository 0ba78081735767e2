#include "platediff/pretrained_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <utility>

#include <json.hpp>

#include "platediff/digest.hpp"
#include "platediff/errors.hpp"
#include "platediff/fusion.hpp"  // gelu

namespace platediff {
namespace {

constexpr const char* kStartToken = "<|startoftext|>";
constexpr const char* kEndToken = "<|endoftext|>";
constexpr const char* kWordEnd = "</w>";
constexpr double kLnEps = 1e-5;

void validate_tower(const char* which, const TowerConfig& t) {
  if (t.width < 1) throw ValidationError(which, "width must be positive");
  if (t.layers < 1) throw ValidationError(which, "layers must be positive");
  if (t.heads < 1 || t.width % t.heads != 0)
    throw ValidationError(which, "heads must divide width");
  if (t.mlp_hidden < 1) throw ValidationError(which, "mlp_hidden must be positive");
}

// (x - mean) / sqrt(var + eps) * w + b, applied per row.
Mat layer_norm(const Mat& x, const Vec& w, const Vec& b) {
  Mat out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    out.row(r) =
        (((x.row(r).array() - mean) / std::sqrt(var + kLnEps)) * w.transpose().array() +
         b.transpose().array())
            .matrix();
  }
  return out;
}

nlohmann::json tower_json(const TowerConfig& t) {
  return {{"width", t.width}, {"layers", t.layers}, {"heads", t.heads},
          {"mlp_hidden", t.mlp_hidden}};
}

TowerConfig tower_from_json(const nlohmann::json& j) {
  TowerConfig t;
  t.width = j.at("width").get<Index>();
  t.layers = j.at("layers").get<int>();
  t.heads = j.at("heads").get<int>();
  t.mlp_hidden = j.at("mlp_hidden").get<Index>();
  return t;
}

nlohmann::json config_json(const BundleConfig& c) {
  return {{"format", "platediff-encoder-bundle"},
          {"version", 1},
          {"name", c.name},
          {"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"image_mean", c.image_mean},
          {"image_std", c.image_std},
          {"vision", tower_json(c.vision)},
          {"text", tower_json(c.text)},
          {"context_length", c.context_length},
          {"vocab_size", c.vocab_size},
          {"text_projection_dim", c.text_projection_dim}};
}

BundleConfig config_from_json(const nlohmann::json& j) {
  if (j.at("format").get<std::string>() != "platediff-encoder-bundle")
    throw ValidationError("config.json", "not an encoder bundle");
  if (j.at("version").get<int>() != 1)
    throw ValidationError("config.json", "unsupported bundle version");
  BundleConfig c;
  c.name = j.at("name").get<std::string>();
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.image_mean = j.at("image_mean").get<std::array<double, 3>>();
  c.image_std = j.at("image_std").get<std::array<double, 3>>();
  c.vision = tower_from_json(j.at("vision"));
  c.text = tower_from_json(j.at("text"));
  c.context_length = j.at("context_length").get<Index>();
  c.vocab_size = j.at("vocab_size").get<Index>();
  c.text_projection_dim = j.at("text_projection_dim").get<Index>();
  return c;
}

void append_tower_shapes(std::vector<TensorShape>& out, const std::string& prefix,
                         const TowerConfig& t) {
  const Index w = t.width;
  for (int i = 0; i < t.layers; ++i) {
    const std::string b = prefix + ".blocks." + std::to_string(i) + ".";
    out.push_back({b + "ln1.weight", w, 1});
    out.push_back({b + "ln1.bias", w, 1});
    out.push_back({b + "attn.qkv_w", 3 * w, w});
    out.push_back({b + "attn.qkv_b", 3 * w, 1});
    out.push_back({b + "attn.out_w", w, w});
    out.push_back({b + "attn.out_b", w, 1});
    out.push_back({b + "ln2.weight", w, 1});
    out.push_back({b + "ln2.bias", w, 1});
    out.push_back({b + "mlp.fc1_w", t.mlp_hidden, w});
    out.push_back({b + "mlp.fc1_b", t.mlp_hidden, 1});
    out.push_back({b + "mlp.fc2_w", w, t.mlp_hidden});
    out.push_back({b + "mlp.fc2_b", w, 1});
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

void validate(const BundleConfig& config) {
  if (config.name.empty()) throw ValidationError("name", "must not be empty");
  if (config.patch_size < 1 || config.image_size < config.patch_size ||
      config.image_size % config.patch_size != 0)
    throw ValidationError("patch_size", "must divide image_size");
  for (double s : config.image_std)
    if (!(s > 0.0)) throw ValidationError("image_std", "entries must be positive");
  validate_tower("vision", config.vision);
  validate_tower("text", config.text);
  if (config.context_length < 2)
    throw ValidationError("context_length", "needs room for the start/end specials");
  if (config.vocab_size < 2) throw ValidationError("vocab_size", "must cover the specials");
  if (config.text_projection_dim < 1)
    throw ValidationError("text_projection_dim", "must be positive");
}

std::vector<TensorShape> bundle_tensor_shapes(const BundleConfig& config) {
  validate(config);
  const Index n = static_cast<Index>(config.patch_grid()) * config.patch_grid();
  const Index wv = config.vision.width;
  const Index wt = config.text.width;
  std::vector<TensorShape> shapes;
  shapes.push_back({"vision.patch_embed.weight", wv,
                    3 * static_cast<Index>(config.patch_size) * config.patch_size});
  shapes.push_back({"vision.class_embed", wv, 1});
  shapes.push_back({"vision.pos_embed", n + 1, wv});
  shapes.push_back({"vision.ln_pre.weight", wv, 1});
  shapes.push_back({"vision.ln_pre.bias", wv, 1});
  append_tower_shapes(shapes, "vision", config.vision);
  shapes.push_back({"vision.ln_post.weight", wv, 1});
  shapes.push_back({"vision.ln_post.bias", wv, 1});
  shapes.push_back({"text.token_embed", config.vocab_size, wt});
  shapes.push_back({"text.pos_embed", config.context_length, wt});
  append_tower_shapes(shapes, "text", config.text);
  shapes.push_back({"text.ln_final.weight", wt, 1});
  shapes.push_back({"text.ln_final.bias", wt, 1});
  shapes.push_back({"text.projection", wt, config.text_projection_dim});
  return shapes;
}

void save_pretrained_bundle(const std::filesystem::path& dir, const BundleConfig& config,
                            const std::vector<NamedTensor>& tensors,
                            const std::vector<std::string>& vocab,
                            const std::vector<std::string>& merges) {
  validate(config);
  if (static_cast<Index>(vocab.size()) != config.vocab_size)
    throw ValidationError("vocab", "line count must equal vocab_size");
  if (std::find(vocab.begin(), vocab.end(), kStartToken) == vocab.end() ||
      std::find(vocab.begin(), vocab.end(), kEndToken) == vocab.end())
    throw ValidationError("vocab", "missing start/end specials");

  TensorArchive archive;
  archive.header_json = config_json(config).dump();
  const std::vector<TensorShape> shapes = bundle_tensor_shapes(config);
  for (const TensorShape& s : shapes) {
    const auto it = std::find_if(tensors.begin(), tensors.end(),
                                 [&](const NamedTensor& t) { return t.name == s.name; });
    if (it == tensors.end()) throw ValidationError(s.name, "tensor missing");
    if (it->value.rows() != s.rows || it->value.cols() != s.cols)
      throw ValidationError(s.name, "tensor has the wrong shape");
    archive.tensors.push_back(*it);
  }

  std::filesystem::create_directories(dir);
  write_archive(dir / "weights.pdts", archive);
  {
    std::ofstream f(dir / "config.json");
    if (!f) throw IoError("cannot write bundle config");
    f << config_json(config).dump(2) << '\n';
  }
  {
    std::ofstream f(dir / "vocab.txt");
    for (const std::string& t : vocab) f << t << '\n';
  }
  {
    std::ofstream f(dir / "merges.txt");
    for (const std::string& m : merges) f << m << '\n';
  }
}

std::vector<NamedTensor> random_bundle_tensors(const BundleConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> entry(0.0, 0.02);
  std::vector<NamedTensor> tensors;
  for (const TensorShape& s : bundle_tensor_shapes(config)) {
    Mat m(s.rows, s.cols);
    const bool is_ln_scale =
        s.name.ends_with(".weight") && s.name.find(".ln") != std::string::npos;
    if (is_ln_scale)
      m.setOnes();
    else if (s.name.ends_with(".bias") || s.name.ends_with("_b"))
      m.setZero();
    else
      for (Index r = 0; r < s.rows; ++r)
        for (Index c = 0; c < s.cols; ++c) m(r, c) = entry(rng);
    tensors.push_back({s.name, std::move(m)});
  }
  return tensors;
}

PretrainedEncoder PretrainedEncoder::load(const std::filesystem::path& dir) {
  for (const char* file : {"config.json", "weights.pdts", "vocab.txt", "merges.txt"})
    if (!std::filesystem::exists(dir / file))
      throw BackendUnavailable("pretrained bundle incomplete: missing " +
                               (dir / file).string());

  nlohmann::json j;
  try {
    std::ifstream f(dir / "config.json");
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config.json", e.what());
  }
  BundleConfig config;
  try {
    config = config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config.json", e.what());
  }

  const TensorArchive archive = read_archive(dir / "weights.pdts");
  std::vector<std::string> merges;
  for (const std::string& line : read_lines(dir / "merges.txt"))
    if (!line.empty() && line[0] != '#') merges.push_back(line);
  return PretrainedEncoder(config, archive.tensors, read_lines(dir / "vocab.txt"), merges);
}

PretrainedEncoder::PretrainedEncoder(BundleConfig config,
                                     const std::vector<NamedTensor>& tensors,
                                     const std::vector<std::string>& vocab,
                                     const std::vector<std::string>& merges)
    : config_(std::move(config)) {
  validate(config_);
  if (static_cast<Index>(vocab.size()) != config_.vocab_size)
    throw ValidationError("vocab", "line count must equal vocab_size");

  std::map<std::string, Mat> by_name;
  for (const NamedTensor& t : tensors) by_name.emplace(t.name, t.value);
  const auto fetch = [&](const TensorShape& s) -> const Mat& {
    const auto it = by_name.find(s.name);
    if (it == by_name.end()) throw ValidationError(s.name, "tensor missing");
    if (it->second.rows() != s.rows || it->second.cols() != s.cols)
      throw ValidationError(s.name, "tensor has the wrong shape");
    return it->second;
  };

  const std::vector<TensorShape> shapes = bundle_tensor_shapes(config_);
  Sha256 digest;
  const std::string tag = "pretrained-v1|" + config_.name;
  digest.update(tag.data(), tag.size());
  std::map<std::string, Mat> loaded;
  for (const TensorShape& s : shapes) {
    const Mat& m = fetch(s);
    digest.update(s.name.data(), s.name.size());
    digest.update(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()));
    loaded.emplace(s.name, m);
  }
  digest_ = digest.hex();

  const auto vec = [&](const std::string& name) { return Vec(loaded.at(name).col(0)); };
  const auto load_tower = [&](const std::string& prefix, const TowerConfig& tc, Tower& tower) {
    tower.heads = tc.heads;
    for (int i = 0; i < tc.layers; ++i) {
      const std::string b = prefix + ".blocks." + std::to_string(i) + ".";
      Block blk;
      blk.ln1_w = vec(b + "ln1.weight");
      blk.ln1_b = vec(b + "ln1.bias");
      blk.qkv_w = loaded.at(b + "attn.qkv_w");
      blk.qkv_b = vec(b + "attn.qkv_b");
      blk.out_w = loaded.at(b + "attn.out_w");
      blk.out_b = vec(b + "attn.out_b");
      blk.ln2_w = vec(b + "ln2.weight");
      blk.ln2_b = vec(b + "ln2.bias");
      blk.fc1_w = loaded.at(b + "mlp.fc1_w");
      blk.fc1_b = vec(b + "mlp.fc1_b");
      blk.fc2_w = loaded.at(b + "mlp.fc2_w");
      blk.fc2_b = vec(b + "mlp.fc2_b");
      tower.blocks.push_back(std::move(blk));
    }
  };
  load_tower("vision", config_.vision, vision_);
  load_tower("text", config_.text, text_);
  patch_embed_ = loaded.at("vision.patch_embed.weight");
  class_embed_ = vec("vision.class_embed");
  vision_pos_ = loaded.at("vision.pos_embed");
  vis_ln_pre_w_ = vec("vision.ln_pre.weight");
  vis_ln_pre_b_ = vec("vision.ln_pre.bias");
  vis_ln_post_w_ = vec("vision.ln_post.weight");
  vis_ln_post_b_ = vec("vision.ln_post.bias");
  token_embed_ = loaded.at("text.token_embed");
  text_pos_ = loaded.at("text.pos_embed");
  txt_ln_final_w_ = vec("text.ln_final.weight");
  txt_ln_final_b_ = vec("text.ln_final.bias");
  text_projection_ = loaded.at("text.projection");

  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i].empty()) throw ValidationError("vocab", "empty token at line " + std::to_string(i + 1));
    if (!vocab_.emplace(vocab[i], static_cast<int>(i)).second)
      throw ValidationError("vocab", "duplicate token: " + vocab[i]);
  }
  const auto sot = vocab_.find(kStartToken);
  const auto eot = vocab_.find(kEndToken);
  if (sot == vocab_.end() || eot == vocab_.end())
    throw ValidationError("vocab", "missing start/end specials");
  sot_id_ = sot->second;
  eot_id_ = eot->second;

  int rank = 0;
  for (const std::string& line : merges) {
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size())
      throw ValidationError("merges", "expected 'left right': " + line);
    merge_rank_.emplace(std::make_pair(line.substr(0, space), line.substr(space + 1)), rank++);
  }
}

EncoderInfo PretrainedEncoder::info() const {
  EncoderInfo info;
  info.name = config_.name;
  info.image_dim = config_.vision.width;
  info.text_dim = config_.text_projection_dim;
  info.patch_grid = config_.patch_grid();
  info.frozen = true;
  return info;
}

std::string PretrainedEncoder::parameter_digest() const { return digest_; }

Mat PretrainedEncoder::tower_forward(const Tower& tower, Mat x, bool causal) const {
  const Index len = x.rows();
  const Index width = x.cols();
  const Index dh = width / tower.heads;
  for (const Block& blk : tower.blocks) {
    const Mat h = layer_norm(x, blk.ln1_w, blk.ln1_b);
    Mat qkv = h * blk.qkv_w.transpose();
    qkv.rowwise() += blk.qkv_b.transpose();
    Mat attn_out(len, width);
    for (int head = 0; head < tower.heads; ++head) {
      const auto q = qkv.middleCols(head * dh, dh);
      const auto k = qkv.middleCols(width + head * dh, dh);
      const auto v = qkv.middleCols(2 * width + head * dh, dh);
      Mat logits = q * k.transpose() / std::sqrt(static_cast<double>(dh));
      if (causal)
        for (Index r = 0; r < len; ++r)
          for (Index c = r + 1; c < len; ++c)
            logits(r, c) = -std::numeric_limits<double>::infinity();
      for (Index r = 0; r < len; ++r) {
        const double m = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - m).exp();
        logits.row(r) /= logits.row(r).sum();
      }
      attn_out.middleCols(head * dh, dh) = logits * v;
    }
    x += (attn_out * blk.out_w.transpose()).rowwise() + blk.out_b.transpose();

    const Mat h2 = layer_norm(x, blk.ln2_w, blk.ln2_b);
    Mat mid = h2 * blk.fc1_w.transpose();
    mid.rowwise() += blk.fc1_b.transpose();
    mid = mid.unaryExpr([](double v) { return gelu(v); });
    x += (mid * blk.fc2_w.transpose()).rowwise() + blk.fc2_b.transpose();
  }
  return x;
}

Mat PretrainedEncoder::encode_image(const Image& image) const {
  if (image.empty()) throw DegenerateInput("cannot encode an empty image");
  const Image& src = (image.width == config_.image_size && image.height == config_.image_size)
                         ? image
                         : resize_bilinear(image, config_.image_size, config_.image_size);
  const int grid = config_.patch_grid();
  const int p = config_.patch_size;
  const Index n = static_cast<Index>(grid) * grid;
  const Index pv = 3 * static_cast<Index>(p) * p;

  // Patch pixels flatten channel-major (c * p * p + y * p + x), matching
  // a conv filter laid out [width][3][p][p].
  Mat patches(n, pv);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      const Index row = static_cast<Index>(gy) * grid + gx;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          const std::uint8_t* px = src.at(gx * p + x, gy * p + y);
          for (int c = 0; c < 3; ++c)
            patches(row, static_cast<Index>(c) * p * p + y * p + x) =
                (px[c] / 255.0 - config_.image_mean[static_cast<std::size_t>(c)]) /
                config_.image_std[static_cast<std::size_t>(c)];
        }
    }

  Mat tokens(n + 1, config_.vision.width);
  tokens.row(0) = class_embed_.transpose();
  tokens.bottomRows(n) = patches * patch_embed_.transpose();
  tokens += vision_pos_;
  tokens = layer_norm(tokens, vis_ln_pre_w_, vis_ln_pre_b_);
  tokens = tower_forward(vision_, std::move(tokens), /*causal=*/false);
  tokens = layer_norm(tokens, vis_ln_post_w_, vis_ln_post_b_);
  return tokens.bottomRows(n);  // final-layer patch tokens, class token excluded
}

std::vector<int> PretrainedEncoder::tokenize(const std::string& text) const {
  if (text.empty()) throw ValidationError("text", "prompt must not be empty");
  std::string lower;
  lower.reserve(text.size());
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  // Words are maximal alnum runs; every other non-space byte stands alone.
  std::vector<std::string> words;
  std::string word;
  for (char c : lower) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word.push_back(c);
      continue;
    }
    if (!word.empty()) words.push_back(std::exchange(word, {}));
    if (!std::isspace(static_cast<unsigned char>(c))) words.push_back(std::string(1, c));
  }
  if (!word.empty()) words.push_back(word);

  std::vector<int> ids;
  ids.push_back(sot_id_);
  for (const std::string& w : words) {
    std::vector<std::string> symbols;
    for (char c : w) symbols.push_back(std::string(1, c));
    symbols.back() += kWordEnd;
    // Standard BPE: repeatedly merge the adjacent pair with the best rank.
    while (symbols.size() > 1) {
      int best_rank = std::numeric_limits<int>::max();
      std::size_t best_at = 0;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        const auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
          best_at = i;
        }
      }
      if (best_rank == std::numeric_limits<int>::max()) break;
      symbols[best_at] += symbols[best_at + 1];
      symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
    }
    for (const std::string& s : symbols) {
      const auto it = vocab_.find(s);
      if (it != vocab_.end()) ids.push_back(it->second);
      // Symbols outside the bundled vocab are dropped; the bundled BPE
      // vocabularies are expected to cover their own merge alphabet.
    }
  }
  const std::size_t max_body = static_cast<std::size_t>(config_.context_length) - 1;
  if (ids.size() > max_body) ids.resize(max_body);  // keep room for the end token
  ids.push_back(eot_id_);
  return ids;
}

Vec PretrainedEncoder::encode_text(const std::string& text) const {
  const std::vector<int> ids = tokenize(text);
  const Index len = static_cast<Index>(ids.size());
  Mat x(len, config_.text.width);
  for (Index i = 0; i < len; ++i)
    x.row(i) = token_embed_.row(ids[static_cast<std::size_t>(i)]) + text_pos_.row(i);
  // Causal masking means positions after the end token could never
  // influence it, so right padding to the full context is skipped.
  x = tower_forward(text_, std::move(x), /*causal=*/true);
  x = layer_norm(x, txt_ln_final_w_, txt_ln_final_b_);
  return (x.row(len - 1) * text_projection_).transpose();  // pooled at the end token
}

}  // namespace platediff
