#ifndef PLATEDIFF_EVALUATION_HPP
#define PLATEDIFF_EVALUATION_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "platediff/data_model.hpp"
#include "platediff/fusion.hpp"

namespace platediff {

enum class MetricLevel { item, dish };
const char* to_string(MetricLevel level);

struct MetricReport {
  double mae = 0.0;               // grams
  std::optional<double> pmae;     // percent; empty when mean target is 0
  std::int64_t n = 0;
  MetricLevel level = MetricLevel::item;
  Stage stage = Stage::absolute;
  std::optional<Structure> stratum;  // empty = pooled over all items
  double mean_gt = 0.0;              // the w-bar used for PMAE
};

// MAE = mean |target - prediction|; PMAE = 100 * MAE / mean(targets),
// using this population's own signed mean. Zero mean leaves pmae unset.
MetricReport mae_pmae(const std::vector<double>& predictions,
                      const std::vector<double>& targets,
                      MetricLevel level = MetricLevel::item, Stage stage = Stage::absolute,
                      std::optional<Structure> stratum = {});

struct ItemPrediction {
  std::string sample_id;
  std::string item_name;
  double prediction = 0.0;
  double target = 0.0;
  Structure structure = Structure::unknown;
};

struct DishPrediction {
  std::string sample_id;
  double prediction = 0.0;  // sum of item predictions
  double target = 0.0;      // sum of item targets
};

// Groups exactly by sample_id, in first-appearance order. The overload
// with known_sample_ids throws OrphanItem for a prediction whose
// sample_id is not in that universe.
std::vector<DishPrediction> aggregate_to_dish(const std::vector<ItemPrediction>& items);
std::vector<DishPrediction> aggregate_to_dish(const std::vector<ItemPrediction>& items,
                                              const std::vector<std::string>& known_sample_ids);

// One report per structure tag present (solid, amorphous_mixed, unknown
// order), then the pooled report last. Unknown tags form their own
// stratum; pooled n is the total item count.
std::vector<MetricReport> stratify(const std::vector<ItemPrediction>& items, Stage stage);

// Predicts the train-target mean for every test item.
MetricReport mean_predictor_baseline(const std::vector<double>& train_targets,
                                     const std::vector<double>& test_targets,
                                     MetricLevel level = MetricLevel::item,
                                     Stage stage = Stage::absolute);

struct EvalResult {
  std::vector<ItemPrediction> items;
  MetricReport item_report;
  MetricReport dish_report;
  std::vector<MetricReport> strata;  // from stratify(), pooled last
};

// Runs every query through the model (images must be loaded) and scores
// item level, dish level, and per-structure strata. Throws EmptyReport
// when queries is empty.
EvalResult evaluate(const FusionModel& model, const Encoder& encoder,
                    const std::vector<ItemQuery>& queries);

// JSON report with all metric blocks plus run metadata.
void write_report(const std::filesystem::path& path, const EvalResult& result,
                  const std::string& checkpoint_digest, const std::string& dataset_tag,
                  std::uint64_t seed,
                  const std::optional<MetricReport>& baseline = {});

}  // namespace platediff

#endif  // PLATEDIFF_EVALUATION_HPP
