#ifndef PLATEDIFF_FUSION_HPP
#define PLATEDIFF_FUSION_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "platediff/data_model.hpp"
#include "platediff/encoder.hpp"
#include "platediff/types.hpp"

namespace platediff {

enum class Ablation { image_and_text, image_only, text_only };
std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct FusionConfig {
  Index d_image = 0;  // encoder patch feature width
  Index d_text = 0;   // encoder text feature width
  Index d_k = 512;
  Index ffn_hidden = 2048;
  int heads = 1;
  Ablation ablation = Ablation::image_and_text;
  std::uint64_t init_seed = 1;
  bool pre_norm = false;  // RMS-normalize attention inputs
};

void validate(const FusionConfig& config);

// Trainable tensors. Biases are stored as n x 1 matrices so a single
// visitor covers optimizers, checkpoints, and parameter counting. out_w
// and out_b only participate when heads > 1; const_query only under the
// image_only ablation. Unused tensors stay allocated so checkpoints keep
// one shape per config width.
struct FusionParams {
  Mat img_w1, img_b1, img_w2, img_b2;  // phi_img: D_I -> d_k -> d_k
  Mat txt_w1, txt_b1, txt_w2, txt_b2;  // phi_text: D_T -> d_k -> d_k
  Mat out_w, out_b;                    // multi-head output projection
  Mat ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // d_k -> ffn_hidden -> d_k
  Mat head_w, head_b;                  // regression head, zero-initialized
  Mat const_query;                     // learned query for image_only

  template <typename F>
  void visit(F&& f) {
    f("img_w1", img_w1); f("img_b1", img_b1); f("img_w2", img_w2); f("img_b2", img_b2);
    f("txt_w1", txt_w1); f("txt_b1", txt_b1); f("txt_w2", txt_w2); f("txt_b2", txt_b2);
    f("out_w", out_w); f("out_b", out_b);
    f("ffn_w1", ffn_w1); f("ffn_b1", ffn_b1); f("ffn_w2", ffn_w2); f("ffn_b2", ffn_b2);
    f("head_w", head_w); f("head_b", head_b);
    f("const_query", const_query);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<FusionParams*>(this)->visit(
        [&](const char* name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
  }
};

struct FusionOutput {
  RowVec attention;  // 1 x 2N, head-averaged, sums to 1
  Vec z_attn;        // d_k
  Vec h_res;         // d_k
  double prediction = 0.0;
};

// Per-forward activation record consumed by backward().
struct FusionTrace {
  Mat x;            // 2N x D_I stacked frozen patch features
  Vec t;            // D_T frozen text feature
  Mat h1_pre, h1;   // phi_img hidden
  Mat h;            // 2N x d_k (post pre-norm when enabled)
  Vec h_norm_inv;   // per-row 1/rms for pre-norm backward
  Mat h_raw;        // pre-normalization H (pre_norm only)
  Vec u1_pre, u1;   // phi_text hidden
  Vec q;            // projected (and possibly normalized) query
  Vec q_raw;
  double q_norm_inv = 0.0;
  Vec logits;       // heads*2N stacked per-head logits
  Vec attn;         // heads*2N stacked per-head weights
  Vec z_cat;        // concatenated head outputs
  Vec z;            // attention output after optional out projection
  Vec f1_pre, f1;   // FFN hidden
  Vec h_res;
};

struct LoadedCheckpoint;

class FusionModel {
 public:
  explicit FusionModel(FusionConfig config);
  FusionModel(FusionConfig config, FusionParams params);

  const FusionConfig& config() const { return config_; }
  const FusionParams& params() const { return params_; }
  FusionParams& params() { return params_; }

  // f_before and f_after are N x D_I patch features with matching shapes;
  // rows 0..N-1 of the stacked sequence come from the before image.
  FusionOutput forward(const Mat& f_before, const Mat& f_after, const Vec& text,
                       FusionTrace* trace = nullptr) const;

  // Accumulates parameter gradients for one traced forward. d_prediction
  // is dL/d prediction; dz_extra and dq_extra inject contrastive-loss
  // gradients on z_attn and q_text (pass empty vectors for none).
  void backward(const FusionTrace& trace, double d_prediction, const Vec& dz_extra,
                const Vec& dq_extra, FusionParams& grads) const;

  static FusionParams zeros_like(const FusionConfig& config);

  void save_checkpoint(const std::filesystem::path& path, Stage stage, std::int64_t step,
                       const std::string& encoder_digest) const;
  static LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

 private:
  FusionConfig config_;
  FusionParams params_;
};

struct LoadedCheckpoint {
  FusionModel model;
  Stage stage = Stage::absolute;
  std::int64_t step = 0;
  std::string encoder_digest;
};

// Encodes the query's images and stage-templated text, then runs the
// model. For the absolute stage the before features fill both slots.
FusionOutput run_query(const FusionModel& model, const Encoder& encoder, const ItemQuery& query,
                       FusionTrace* trace = nullptr);

double gelu(double x);
double gelu_grad(double x);

}  // namespace platediff

#endif  // PLATEDIFF_FUSION_HPP
