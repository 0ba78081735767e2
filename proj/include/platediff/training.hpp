#ifndef PLATEDIFF_TRAINING_HPP
#define PLATEDIFF_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "platediff/fusion.hpp"
#include "platediff/objectives.hpp"

namespace platediff {

struct TrainConfig {
  Stage stage = Stage::absolute;
  double base_lr = 1e-4;
  double weight_decay = 1e-2;
  int epochs = 150;
  int batch_size = 32;
  std::string schedule = "cosine";  // only cosine is defined
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> init_from;
  bool allow_fresh_difference = false;  // let stage 2 start without init_from
  bool reset_head = false;              // re-zero the regression head after carry-over
  double clip_norm = 0.0;               // global gradient norm cap; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::filesystem::path log_path;  // per-step JSONL log when non-empty
};

void validate(const TrainConfig& config);

// Cosine annealing from base_lr at step 0 to exactly 0 at step == total.
// The trainer takes its updates at steps 0..total-1.
double cosine_lr(double base_lr, std::int64_t step, std::int64_t total);

struct StepRecord {
  Stage stage = Stage::absolute;
  int epoch = 0;
  std::int64_t step = 0;
  double reg = 0.0;
  double cont = 0.0;
  double total = 0.0;  // lambda-weighted sum
  double lr = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::int64_t total_steps = 0;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;  // empty when no path was given
};

// Decoupled-weight-decay Adam over the fusion parameter set. Moment
// buffers are keyed by visit order, so one optimizer instance must stay
// paired with one model.
class AdamW {
 public:
  AdamW(const FusionConfig& config, double beta1, double beta2, double eps, double weight_decay);
  void step(FusionParams& params, const FusionParams& grads, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  FusionParams m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
};

struct TrainResult {
  FusionModel model;
  TrainReport report;
};

// Stage-1 trainer: absolute-weight queries, fresh model from
// fusion_config. Deterministic for a fixed config.seed. Throws DataError
// on an empty or stage-mismatched query list. When checkpoint_out is
// set, the final model is saved there with the encoder digest.
TrainResult train_stage1(const std::vector<ItemQuery>& queries, const Encoder& encoder,
                         const FusionConfig& fusion_config, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& checkpoint_out = {});

// Stage-2 trainer: difference queries. Parameters are carried over from
// config.init_from, which must agree with fusion_config and the encoder
// digest (CheckpointMismatch otherwise). Starting fresh requires
// allow_fresh_difference. The init_from file itself is never modified.
TrainResult train_stage2(const std::vector<ItemQuery>& queries, const Encoder& encoder,
                         const FusionConfig& fusion_config, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& checkpoint_out = {});

}  // namespace platediff

#endif  // PLATEDIFF_TRAINING_HPP
