#ifndef PLATEDIFF_PRETRAINED_ENCODER_HPP
#define PLATEDIFF_PRETRAINED_ENCODER_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "platediff/encoder.hpp"
#include "platediff/tensor_io.hpp"
#include "platediff/types.hpp"

namespace platediff {

// Dimensions of one pre-norm transformer tower.
struct TowerConfig {
  Index width = 0;
  int layers = 0;
  int heads = 0;
  Index mlp_hidden = 0;
};

// Everything a weight bundle's config.json declares. Feature widths are
// always read from here (and the loaded tensors), never hard-coded.
struct BundleConfig {
  std::string name;
  int image_size = 336;
  int patch_size = 14;
  std::array<double, 3> image_mean = {0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> image_std = {0.26862954, 0.26130258, 0.27577711};
  TowerConfig vision;
  TowerConfig text;
  Index context_length = 77;
  Index vocab_size = 0;
  Index text_projection_dim = 0;  // D_T of encode_text output

  int patch_grid() const { return image_size / patch_size; }
};

void validate(const BundleConfig& config);

// Expected archive contents for a config: (name, rows, cols) triples in
// canonical order. Loaders validate against this list and writers emit
// it, so the naming scheme lives in exactly one place.
struct TensorShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
};
std::vector<TensorShape> bundle_tensor_shapes(const BundleConfig& config);

// Writes a bundle directory: config.json, weights.pdts, vocab.txt
// (one token per line, line number = id), merges.txt (one "left right"
// pair per line in rank order). Tensors must match
// bundle_tensor_shapes; vocab must contain the <|startoftext|> and
// <|endoftext|> specials.
void save_pretrained_bundle(const std::filesystem::path& dir, const BundleConfig& config,
                            const std::vector<NamedTensor>& tensors,
                            const std::vector<std::string>& vocab,
                            const std::vector<std::string>& merges);

// Seeded random weights for a config: layer-norm scales at one, biases
// at zero, everything else N(0, 0.02). Lets tests and demos exercise
// the full forward path without shipping real pretrained weights.
std::vector<NamedTensor> random_bundle_tensors(const BundleConfig& config, std::uint64_t seed);

// Frozen contrastive dual-tower encoder restored from a weight bundle.
//
// Vision: the image is resized to image_size, normalized with the
// bundle's channel mean/std, cut into patch_size x patch_size patches
// (row-major), linearly embedded, prefixed with the class embedding,
// and run through a pre-norm transformer. encode_image returns the
// final-layer token outputs after the closing layer norm, excluding the
// class token: N x width with N = patch_grid^2.
//
// Text: lowercased BPE (vocab + ranked merges, word-final tokens carry
// the "</w>" marker), bracketed by the start/end specials, truncated to
// the context length, and run through a causal transformer. The pooled
// feature is the end-of-text position after the final layer norm,
// multiplied by the text projection: 1 x text_projection_dim.
class PretrainedEncoder : public Encoder {
 public:
  // Throws BackendUnavailable when any bundle file is missing, so
  // callers can fall back to the stub backend.
  static PretrainedEncoder load(const std::filesystem::path& dir);

  PretrainedEncoder(BundleConfig config, const std::vector<NamedTensor>& tensors,
                    const std::vector<std::string>& vocab,
                    const std::vector<std::string>& merges);

  EncoderInfo info() const override;
  Mat encode_image(const Image& image) const override;
  Vec encode_text(const std::string& text) const override;
  std::string parameter_digest() const override;

  // Token ids including the start/end specials; exposed for tests.
  std::vector<int> tokenize(const std::string& text) const;

 private:
  struct Block {
    Vec ln1_w, ln1_b, ln2_w, ln2_b;
    Mat qkv_w, out_w, fc1_w, fc2_w;  // torch in_proj convention: rows q,k,v
    Vec qkv_b, out_b, fc1_b, fc2_b;
  };
  struct Tower {
    std::vector<Block> blocks;
    int heads = 0;
  };

  Mat tower_forward(const Tower& tower, Mat x, bool causal) const;

  BundleConfig config_;
  Tower vision_, text_;
  Mat patch_embed_;           // width x 3*patch^2
  Vec class_embed_;           // width
  Mat vision_pos_, text_pos_;  // (1+N) x width, context x width
  Vec vis_ln_pre_w_, vis_ln_pre_b_, vis_ln_post_w_, vis_ln_post_b_;
  Mat token_embed_;           // vocab x width
  Vec txt_ln_final_w_, txt_ln_final_b_;
  Mat text_projection_;       // width x projection_dim
  std::map<std::string, int> vocab_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
  int sot_id_ = 0, eot_id_ = 0;
  std::string digest_;
};

}  // namespace platediff

#endif  // PLATEDIFF_PRETRAINED_ENCODER_HPP
