#include "platediff/evaluation.hpp"

#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "platediff/errors.hpp"

namespace platediff {
namespace {

nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j{{"mae", r.mae},
                   {"n", r.n},
                   {"level", to_string(r.level)},
                   {"stage", to_string(r.stage)},
                   {"stratum", r.stratum ? to_string(*r.stratum) : "all"},
                   {"mean_gt", r.mean_gt}};
  if (r.pmae)
    j["pmae"] = *r.pmae;
  else
    j["pmae"] = nullptr;
  return j;
}

}  // namespace

const char* to_string(MetricLevel level) {
  return level == MetricLevel::item ? "item" : "dish";
}

MetricReport mae_pmae(const std::vector<double>& predictions, const std::vector<double>& targets,
                      MetricLevel level, Stage stage, std::optional<Structure> stratum) {
  if (predictions.empty()) throw EmptyBatch("mae_pmae over empty batch");
  if (predictions.size() != targets.size())
    throw ShapeMismatch("mae_pmae: prediction/target count mismatch");

  MetricReport r;
  r.level = level;
  r.stage = stage;
  r.stratum = stratum;
  r.n = static_cast<std::int64_t>(predictions.size());
  double abs_sum = 0.0, target_sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    abs_sum += std::abs(targets[i] - predictions[i]);
    target_sum += targets[i];
  }
  r.mae = abs_sum / static_cast<double>(r.n);
  r.mean_gt = target_sum / static_cast<double>(r.n);
  if (r.mean_gt != 0.0) r.pmae = 100.0 * r.mae / r.mean_gt;
  return r;
}

std::vector<DishPrediction> aggregate_to_dish(const std::vector<ItemPrediction>& items) {
  std::vector<DishPrediction> dishes;
  std::unordered_map<std::string, std::size_t> index;
  for (const ItemPrediction& item : items) {
    auto [it, inserted] = index.emplace(item.sample_id, dishes.size());
    if (inserted) dishes.push_back(DishPrediction{item.sample_id, 0.0, 0.0});
    DishPrediction& dish = dishes[it->second];
    dish.prediction += item.prediction;
    dish.target += item.target;
  }
  return dishes;
}

std::vector<DishPrediction> aggregate_to_dish(const std::vector<ItemPrediction>& items,
                                              const std::vector<std::string>& known_sample_ids) {
  const std::unordered_set<std::string> known(known_sample_ids.begin(), known_sample_ids.end());
  for (const ItemPrediction& item : items)
    if (!known.count(item.sample_id))
      throw OrphanItem("prediction references unknown sample '" + item.sample_id + "'");
  return aggregate_to_dish(items);
}

std::vector<MetricReport> stratify(const std::vector<ItemPrediction>& items, Stage stage) {
  if (items.empty()) throw EmptyReport("stratify over empty prediction list");
  std::vector<MetricReport> reports;
  for (Structure s : {Structure::solid, Structure::amorphous_mixed, Structure::unknown}) {
    std::vector<double> preds, targets;
    for (const ItemPrediction& item : items) {
      if (item.structure == s) {
        preds.push_back(item.prediction);
        targets.push_back(item.target);
      }
    }
    if (!preds.empty()) reports.push_back(mae_pmae(preds, targets, MetricLevel::item, stage, s));
  }
  std::vector<double> preds, targets;
  preds.reserve(items.size());
  targets.reserve(items.size());
  for (const ItemPrediction& item : items) {
    preds.push_back(item.prediction);
    targets.push_back(item.target);
  }
  reports.push_back(mae_pmae(preds, targets, MetricLevel::item, stage, {}));
  return reports;
}

MetricReport mean_predictor_baseline(const std::vector<double>& train_targets,
                                     const std::vector<double>& test_targets, MetricLevel level,
                                     Stage stage) {
  if (train_targets.empty()) throw EmptyBatch("mean predictor needs train targets");
  const double mean =
      std::accumulate(train_targets.begin(), train_targets.end(), 0.0) /
      static_cast<double>(train_targets.size());
  const std::vector<double> preds(test_targets.size(), mean);
  return mae_pmae(preds, test_targets, level, stage);
}

EvalResult evaluate(const FusionModel& model, const Encoder& encoder,
                    const std::vector<ItemQuery>& queries) {
  if (queries.empty()) throw EmptyReport("no queries to evaluate");
  EvalResult result;
  result.items.reserve(queries.size());
  for (const ItemQuery& q : queries) {
    const FusionOutput out = run_query(model, encoder, q);
    ItemPrediction p;
    p.sample_id = q.sample->sample_id;
    p.item_name = q.item().name;
    p.prediction = out.prediction;
    p.target = q.target;
    p.structure = q.item().structure;
    result.items.push_back(std::move(p));
  }

  const Stage stage = queries.front().stage;
  std::vector<double> preds, targets;
  preds.reserve(result.items.size());
  targets.reserve(result.items.size());
  for (const ItemPrediction& item : result.items) {
    preds.push_back(item.prediction);
    targets.push_back(item.target);
  }
  result.item_report = mae_pmae(preds, targets, MetricLevel::item, stage);

  const std::vector<DishPrediction> dishes = aggregate_to_dish(result.items);
  std::vector<double> dpreds, dtargets;
  for (const DishPrediction& d : dishes) {
    dpreds.push_back(d.prediction);
    dtargets.push_back(d.target);
  }
  result.dish_report = mae_pmae(dpreds, dtargets, MetricLevel::dish, stage);
  result.strata = stratify(result.items, stage);
  return result;
}

void write_report(const std::filesystem::path& path, const EvalResult& result,
                  const std::string& checkpoint_digest, const std::string& dataset_tag,
                  std::uint64_t seed, const std::optional<MetricReport>& baseline) {
  nlohmann::json j;
  j["metadata"] = {{"checkpoint_digest", checkpoint_digest},
                   {"dataset_tag", dataset_tag},
                   {"seed", seed}};
  j["item"] = report_json(result.item_report);
  j["dish"] = report_json(result.dish_report);
  j["strata"] = nlohmann::json::array();
  for (const MetricReport& r : result.strata) j["strata"].push_back(report_json(r));
  if (baseline) j["mean_baseline"] = report_json(*baseline);
  j["items"] = nlohmann::json::array();
  for (const ItemPrediction& item : result.items) {
    j["items"].push_back({{"sample_id", item.sample_id},
                          {"item", item.item_name},
                          {"prediction", item.prediction},
                          {"target", item.target},
                          {"structure", to_string(item.structure)}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace platediff
