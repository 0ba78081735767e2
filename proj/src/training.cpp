#include "platediff/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "platediff/errors.hpp"

namespace platediff {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt + 0x9E3779B97F4A7C15ull);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Frozen features for one query, with image encodings shared between
// queries that reference the same in-memory image.
struct PreparedQuery {
  std::shared_ptr<const Mat> f_before;
  std::shared_ptr<const Mat> f_after;  // == f_before for the absolute stage
  Vec text;
  double target = 0.0;
};

std::vector<PreparedQuery> prepare(const std::vector<ItemQuery>& queries,
                                   const Encoder& encoder, Stage stage) {
  std::unordered_map<const Image*, std::shared_ptr<const Mat>> image_memo;
  std::unordered_map<std::string, Vec> text_memo;
  auto encode_image = [&](const ImageRef& ref, const std::string& sample_id) {
    if (!ref.pixels) throw DataError("sample '" + sample_id + "' has no pixels loaded");
    auto it = image_memo.find(ref.pixels.get());
    if (it != image_memo.end()) return it->second;
    auto mat = std::make_shared<const Mat>(encoder.encode_image(*ref.pixels));
    image_memo.emplace(ref.pixels.get(), mat);
    return std::static_pointer_cast<const Mat>(mat);
  };

  std::vector<PreparedQuery> out;
  out.reserve(queries.size());
  for (const ItemQuery& q : queries) {
    if (q.stage != stage) throw DataError("query stage does not match the training stage");
    PreparedQuery p;
    p.f_before = encode_image(q.sample->before_image, q.sample->sample_id);
    p.f_after = stage == Stage::absolute
                    ? p.f_before
                    : encode_image(q.sample->after_image, q.sample->sample_id);
    const std::string prompt = build_prompt(q.item().name, stage);
    auto it = text_memo.find(prompt);
    if (it == text_memo.end()) it = text_memo.emplace(prompt, encoder.encode_text(prompt)).first;
    p.text = it->second;
    p.target = q.target;
    out.push_back(std::move(p));
  }
  return out;
}

double global_grad_norm(const FusionParams& grads) {
  double sq = 0.0;
  grads.visit([&](const char*, const Mat& g) { sq += g.squaredNorm(); });
  return std::sqrt(sq);
}

TrainResult train_impl(FusionModel model, const std::vector<ItemQuery>& queries,
                       const Encoder& encoder, const TrainConfig& config,
                       const std::optional<std::filesystem::path>& checkpoint_out) {
  const auto t_start = std::chrono::steady_clock::now();
  if (queries.empty()) throw DataError("no training queries");
  validate(config);

  const std::vector<PreparedQuery> prepared = prepare(queries, encoder, config.stage);
  const std::int64_t n = static_cast<std::int64_t>(prepared.size());
  const std::int64_t batch = std::min<std::int64_t>(config.batch_size, n);
  const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;

  AdamW optimizer(model.config(), config.adam_beta1, config.adam_beta2, config.adam_eps,
                  config.weight_decay);

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open training log " + config.log_path.string());
  }

  TrainReport report;
  report.total_steps = total_steps;
  report.steps.reserve(static_cast<std::size_t>(total_steps));

  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  FusionParams grads = FusionModel::zeros_like(model.config());
  std::vector<FusionTrace> traces(static_cast<std::size_t>(batch));

  std::int64_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::int64_t start = 0; start < n; start += batch) {
      const std::int64_t b = std::min(batch, n - start);

      Vec preds(b), targets(b);
      Mat z_batch(b, model.config().d_k), q_batch(b, model.config().d_k);
      for (std::int64_t i = 0; i < b; ++i) {
        const PreparedQuery& p = prepared[order[static_cast<std::size_t>(start + i)]];
        FusionOutput out = model.forward(*p.f_before, *p.f_after, p.text,
                                         &traces[static_cast<std::size_t>(i)]);
        preds[i] = out.prediction;
        targets[i] = p.target;
        z_batch.row(i) = out.z_attn.transpose();
        q_batch.row(i) = traces[static_cast<std::size_t>(i)].q.transpose();
      }

      const double reg = l1_loss(preds, targets);
      const Vec dpred = l1_loss_grad(preds, targets);
      const InfoNceResult nce =
          info_nce_with_grad(z_batch, q_batch, config.loss_weights.temperature);
      const LossBreakdown breakdown = total_loss(reg, nce.loss, config.loss_weights);

      grads.visit([](const char*, Mat& g) { g.setZero(); });
      const double w_reg = config.loss_weights.lambda_reg;
      const double w_cont = config.loss_weights.lambda_cont;
      for (std::int64_t i = 0; i < b; ++i) {
        const Vec dz_extra = w_cont * nce.dza.row(i).transpose();
        const Vec dq_extra = w_cont * nce.dzb.row(i).transpose();
        model.backward(traces[static_cast<std::size_t>(i)], w_reg * dpred[i], dz_extra,
                       dq_extra, grads);
      }
      if (config.clip_norm > 0.0) {
        const double norm = global_grad_norm(grads);
        if (norm > config.clip_norm) {
          const double scale = config.clip_norm / norm;
          grads.visit([&](const char*, Mat& g) { g *= scale; });
        }
      }

      const double lr = cosine_lr(config.base_lr, global_step, total_steps);
      optimizer.step(model.params(), grads, lr);

      StepRecord rec{config.stage, epoch, global_step, breakdown.reg, breakdown.contrastive,
                     breakdown.total, lr};
      report.steps.push_back(rec);
      if (log.is_open()) {
        nlohmann::json j{{"stage", to_string(config.stage)}, {"epoch", epoch},
                         {"step", global_step},             {"reg", rec.reg},
                         {"cont", rec.cont},                {"total", rec.total},
                         {"lr", rec.lr}};
        log << j.dump() << "\n";
      }
      ++global_step;
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (checkpoint_out) {
    model.save_checkpoint(*checkpoint_out, config.stage, total_steps,
                          encoder.parameter_digest());
    report.checkpoint = *checkpoint_out;
  }
  return TrainResult{std::move(model), std::move(report)};
}

void check_structural_match(const FusionConfig& want, const FusionConfig& got) {
  if (want.d_image != got.d_image || want.d_text != got.d_text || want.d_k != got.d_k ||
      want.ffn_hidden != got.ffn_hidden || want.heads != got.heads ||
      want.ablation != got.ablation || want.pre_norm != got.pre_norm)
    throw CheckpointMismatch("checkpoint architecture differs from the requested config");
}

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.base_lr > 0.0)) throw ValidationError("base_lr", "must be positive");
  if (config.weight_decay < 0.0) throw ValidationError("weight_decay", "must be non-negative");
  if (config.epochs < 1) throw ValidationError("epochs", "must be at least 1");
  if (config.batch_size < 1) throw ValidationError("batch_size", "must be at least 1");
  if (config.schedule != "cosine")
    throw ValidationError("schedule", "unknown schedule: " + config.schedule);
  if (config.clip_norm < 0.0) throw ValidationError("clip_norm", "must be non-negative");
  validate(config.loss_weights);
}

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total) {
  if (total < 1) throw ValidationError("total", "schedule needs at least one step");
  if (step < 0 || step > total) throw ValidationError("step", "outside schedule range");
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return base_lr * (1.0 + std::cos(M_PI * t)) / 2.0;
}

AdamW::AdamW(const FusionConfig& config, double beta1, double beta2, double eps,
             double weight_decay)
    : m_(FusionModel::zeros_like(config)),
      v_(FusionModel::zeros_like(config)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {}

void AdamW::step(FusionParams& params, const FusionParams& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  // Walk the three containers in lockstep; visit order is fixed.
  std::vector<Mat*> ms, vs;
  std::vector<const Mat*> gs;
  m_.visit([&](const char*, Mat& m) { ms.push_back(&m); });
  v_.visit([&](const char*, Mat& m) { vs.push_back(&m); });
  grads.visit([&](const char*, const Mat& g) { gs.push_back(&g); });
  std::size_t i = 0;
  params.visit([&](const char*, Mat& p) {
    Mat& m = *ms[i];
    Mat& v = *vs[i];
    const Mat& g = *gs[i];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    // Decoupled weight decay: shrink before the adaptive step.
    p -= lr * weight_decay_ * p;
    p -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
    ++i;
  });
}

TrainResult train_stage1(const std::vector<ItemQuery>& queries, const Encoder& encoder,
                         const FusionConfig& fusion_config, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& checkpoint_out) {
  if (config.stage != Stage::absolute)
    throw ValidationError("stage", "train_stage1 requires stage=absolute");
  FusionModel model = config.init_from
                          ? [&] {
                              auto loaded = FusionModel::load_checkpoint(*config.init_from);
                              check_structural_match(fusion_config, loaded.model.config());
                              return std::move(loaded.model);
                            }()
                          : FusionModel(fusion_config);
  return train_impl(std::move(model), queries, encoder, config, checkpoint_out);
}

TrainResult train_stage2(const std::vector<ItemQuery>& queries, const Encoder& encoder,
                         const FusionConfig& fusion_config, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& checkpoint_out) {
  if (config.stage != Stage::difference)
    throw ValidationError("stage", "train_stage2 requires stage=difference");
  if (!config.init_from && !config.allow_fresh_difference)
    throw ValidationError("init_from",
                          "difference stage needs a stage-1 checkpoint "
                          "(set allow_fresh_difference to override)");

  FusionModel model = [&] {
    if (!config.init_from) return FusionModel(fusion_config);
    auto loaded = FusionModel::load_checkpoint(*config.init_from);
    check_structural_match(fusion_config, loaded.model.config());
    if (!loaded.encoder_digest.empty() &&
        loaded.encoder_digest != encoder.parameter_digest())
      throw CheckpointMismatch("checkpoint was trained against a different encoder");
    return std::move(loaded.model);
  }();
  if (config.reset_head) {
    model.params().head_w.setZero();
    model.params().head_b.setZero();
  }
  return train_impl(std::move(model), queries, encoder, config, checkpoint_out);
}

}  // namespace platediff
