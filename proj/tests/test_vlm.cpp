#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "platediff/errors.hpp"
#include "platediff/synthetic.hpp"
#include "platediff/vlm.hpp"

using namespace platediff;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::filesystem::path golden(const char* leaf) {
  return std::filesystem::path(PLATEDIFF_TEST_DIR) / "golden" / leaf;
}

std::vector<Sample> bench_samples(int count, std::uint64_t seed = 21) {
  SyntheticSpec spec;
  spec.image_size = 96;
  spec.classes = {
      {"ruby paste", {200, 40, 40}, 0.005},
      {"jade paste", {40, 180, 60}, 0.004},
      {"gold paste", {220, 190, 50}, 0.006},
  };
  spec.items_min = 1;
  spec.items_max = 2;
  spec.radius_min = 12.0;
  spec.radius_max = 18.0;
  spec.border_margin = 5.0;
  spec.seed = seed;
  return generate_synthetic(spec, count);
}

ClientConfig quick_client() {
  ClientConfig c;
  c.max_in_flight = 1;
  c.retry_base_ms = 1;
  return c;
}

class AlwaysFailClient final : public VlmClient {
 public:
  explicit AlwaysFailClient(bool transient) : transient_(transient) {}
  std::string complete(const std::string&, const VlmPrompt&) override {
    ++calls;
    throw ProviderError("synthetic outage", transient_);
  }
  std::atomic<int> calls{0};

 private:
  bool transient_;
};

// Fails the first `failures` calls with a transient error, then delegates.
class FlakyClient final : public VlmClient {
 public:
  FlakyClient(VlmClient& inner, int failures) : inner_(inner), remaining_(failures) {}
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override {
    if (remaining_.fetch_sub(1) > 0) throw ProviderError("flaky", /*transient=*/true);
    return inner_.complete(sample_id, prompt);
  }

 private:
  VlmClient& inner_;
  std::atomic<int> remaining_;
};

class PoisonOneClient final : public VlmClient {
 public:
  PoisonOneClient(VlmClient& inner, std::string poisoned)
      : inner_(inner), poisoned_(std::move(poisoned)) {}
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override {
    if (sample_id == poisoned_) throw ProviderError("poisoned sample");
    return inner_.complete(sample_id, prompt);
  }

 private:
  VlmClient& inner_;
  std::string poisoned_;
};

}  // namespace

TEST_CASE("ingredient lists render as dashed lines") {
  CHECK(render_ing_list({"Apple", "Bread"}) == "- Apple\n- Bread");
  CHECK(render_ing_list({"Apple"}) == "- Apple");
  CHECK(render_ing_list({}) == "");
}

TEST_CASE("prompt texts match the golden listings byte for byte") {
  const std::vector<std::string> ingredients{"Apple", "Bread"};

  const VlmPrompt single = build_single_prompt(ingredients);
  CHECK(single.text == read_file(golden("prompt_single.txt")));
  CHECK(single.images == std::vector<std::string>{"before"});
  CHECK(single.expected_keys == ingredients);

  const auto pair = build_pair_prompts(ingredients, BenchStrategy::predicted_difference);
  REQUIRE(pair.size() == 1);
  CHECK(pair[0].text == read_file(golden("prompt_predicted_difference.txt")));
  CHECK(pair[0].images == std::vector<std::string>{"before", "after"});

  const auto split = build_pair_prompts(ingredients, BenchStrategy::difference_of_predictions);
  REQUIRE(split.size() == 2);
  CHECK(split[0].text == read_file(golden("prompt_before.txt")));
  CHECK(split[1].text == read_file(golden("prompt_after.txt")));
  CHECK(split[0].images == std::vector<std::string>{"before"});
  CHECK(split[1].images == std::vector<std::string>{"after"});

  CHECK_THROWS_AS(build_single_prompt({}), EmptyInput);
  CHECK_THROWS_AS(build_pair_prompts(ingredients, BenchStrategy::single), ValidationError);
}

TEST_CASE("strategy names round-trip") {
  for (auto s : {BenchStrategy::single, BenchStrategy::predicted_difference,
                 BenchStrategy::difference_of_predictions})
    CHECK(bench_strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(bench_strategy_from_string("vibes"), ValidationError);
}

TEST_CASE("structured parsing handles clean, noisy, and fenced replies") {
  const std::vector<std::string> keys{"Apple", "Bread"};

  SUBCASE("clean object") {
    const VlmResponse r = parse_structured(R"({"Apple": 50.5, "Bread": 20.0})", keys);
    CHECK(r.repair == RepairState::none);
    CHECK(r.parsed.at("Apple") == doctest::Approx(50.5));
    CHECK(r.parsed.at("Bread") == doctest::Approx(20.0));
    CHECK(r.imputed.empty());
    CHECK(r.extras.empty());
  }

  SUBCASE("prose around the object") {
    const VlmResponse r = parse_structured(
        "Sure! Based on the image I estimate {\"Apple\": 31, \"Bread\": 12.25}. Enjoy!", keys);
    CHECK(r.repair == RepairState::none);
    CHECK(r.parsed.at("Apple") == doctest::Approx(31.0));
    CHECK(r.parsed.at("Bread") == doctest::Approx(12.25));
  }

  SUBCASE("markdown fence") {
    const VlmResponse r =
        parse_structured("```json\n{\"Apple\": 3.5, \"Bread\": 1.0}\n```", keys);
    CHECK(r.repair == RepairState::fence_stripped);
    CHECK(r.parsed.at("Apple") == doctest::Approx(3.5));
  }

  SUBCASE("numeric strings are coerced") {
    const VlmResponse r = parse_structured(R"({"Apple": "12.5", "Bread": "7"})", keys);
    CHECK(r.parsed.at("Apple") == doctest::Approx(12.5));
    CHECK(r.parsed.at("Bread") == doctest::Approx(7.0));
  }

  SUBCASE("missing keys are imputed as zero") {
    const VlmResponse r = parse_structured(R"({"Apple": 5})", keys);
    CHECK(r.parsed.at("Bread") == 0.0);
    REQUIRE(r.imputed.size() == 1);
    CHECK(r.imputed[0] == "Bread");
  }

  SUBCASE("unexpected keys are reported as extras") {
    const VlmResponse r = parse_structured(R"({"Apple": 5, "Bread": 2, "Soup": 9})", keys);
    REQUIRE(r.extras.size() == 1);
    CHECK(r.extras[0] == "Soup");
  }

  SUBCASE("non-numeric values leave the key to imputation") {
    const VlmResponse r = parse_structured(R"({"Apple": {"grams": 5}, "Bread": 2})", keys);
    CHECK(r.parsed.at("Apple") == 0.0);
    REQUIRE(r.imputed.size() == 1);
    CHECK(r.imputed[0] == "Apple");
  }

  SUBCASE("hopeless replies fail softly") {
    for (const char* raw : {"no json here", "{\"Apple\": 5", "[1, 2, 3]", ""}) {
      const VlmResponse r = parse_structured(raw, keys);
      CHECK(r.repair == RepairState::failed);
      CHECK(r.raw == raw);
    }
  }

  SUBCASE("nested braces inside strings do not break the span scan") {
    const VlmResponse r =
        parse_structured("note {\"Apple\": 4, \"Bread\": 1} trailing {junk", keys);
    CHECK(r.repair == RepairState::none);
    CHECK(r.parsed.at("Apple") == doctest::Approx(4.0));
  }
}

TEST_CASE("prompt digests depend on the text alone") {
  VlmPrompt a = build_single_prompt({"Apple"});
  VlmPrompt b = a;
  b.images = {"/moved/elsewhere.png"};  // relocation must not invalidate a store
  CHECK(prompt_digest(a) == prompt_digest(b));
  const VlmPrompt c = build_single_prompt({"Pear"});
  CHECK(prompt_digest(a) != prompt_digest(c));
  CHECK(prompt_digest(a).size() == 64);
}

TEST_CASE("the echo client answers each template with matching ground truth") {
  const auto samples = bench_samples(3);
  GroundTruthEchoClient echo(samples);
  const Sample& s = samples[0];
  std::vector<std::string> names;
  for (const auto& item : s.items) names.push_back(item.name);

  const auto check_reply = [&](const VlmPrompt& prompt, auto truth) {
    const std::string raw = echo.complete(s.sample_id, prompt);
    const auto j = nlohmann::json::parse(raw);
    for (const auto& item : s.items)
      CHECK(j.at(item.name).get<double>() == doctest::Approx(truth(item)).epsilon(1e-12));
  };

  check_reply(build_single_prompt(names), [](const FoodItem& i) { return i.weight_before; });
  check_reply(build_pair_prompts(names, BenchStrategy::predicted_difference)[0],
              [](const FoodItem& i) { return i.weight_difference(); });
  const auto split = build_pair_prompts(names, BenchStrategy::difference_of_predictions);
  check_reply(split[0], [](const FoodItem& i) { return i.weight_before; });
  check_reply(split[1], [](const FoodItem& i) { return *i.weight_after; });

  CHECK_THROWS_AS(echo.complete("nope", build_single_prompt(names)), ProviderError);
  VlmPrompt off_script;
  off_script.text = "please guess";
  off_script.expected_keys = names;
  CHECK_THROWS_AS(echo.complete(s.sample_id, off_script), ProviderError);
}

TEST_CASE("a ground-truth oracle scores a perfect zero MAE") {
  const auto samples = bench_samples(6);
  GroundTruthEchoClient echo(samples);
  for (auto strategy : {BenchStrategy::single, BenchStrategy::predicted_difference,
                        BenchStrategy::difference_of_predictions}) {
    CAPTURE(to_string(strategy));
    const BenchResult r = run_benchmark(samples, strategy, echo, quick_client());
    CHECK(r.attempted_samples == 6);
    CHECK(r.failed_samples == 0);
    CHECK(r.item_report.mae == 0.0);
    CHECK(r.dish_report.mae == 0.0);
    CHECK(r.dish_report.level == MetricLevel::dish);
    CHECK(r.dish_report.n == 6);
  }
}

TEST_CASE("an empty-object mock scores the mean absolute target") {
  const auto samples = bench_samples(5);
  EmptyObjectClient empty;

  double item_sum = 0.0;
  int item_n = 0;
  double dish_sum = 0.0;
  for (const Sample& s : samples) {
    double dish_target = 0.0;
    for (const auto& item : s.items) {
      item_sum += std::abs(item.weight_difference());
      dish_target += item.weight_difference();
      ++item_n;
    }
    dish_sum += std::abs(dish_target);
  }

  const BenchResult r =
      run_benchmark(samples, BenchStrategy::predicted_difference, empty, quick_client());
  CHECK(r.failed_samples == 0);
  CHECK(r.item_report.mae == doctest::Approx(item_sum / item_n).epsilon(1e-12));
  CHECK(r.dish_report.mae ==
        doctest::Approx(dish_sum / static_cast<double>(samples.size())).epsilon(1e-12));
  for (const auto& item : r.items) CHECK(item.prediction == 0.0);
}

TEST_CASE("item order in results follows sample order even with workers") {
  const auto samples = bench_samples(12);
  GroundTruthEchoClient echo(samples);
  ClientConfig config = quick_client();
  config.max_in_flight = 4;
  const BenchResult r = run_benchmark(samples, BenchStrategy::single, echo, config);

  std::size_t cursor = 0;
  for (const Sample& s : samples) {
    for (const auto& item : s.items) {
      REQUIRE(cursor < r.items.size());
      CHECK(r.items[cursor].sample_id == s.sample_id);
      CHECK(r.items[cursor].item_name == item.name);
      ++cursor;
    }
  }
  CHECK(cursor == r.items.size());
}

TEST_CASE("recorded exchanges replay into the identical benchmark result") {
  const auto samples = bench_samples(4);
  const auto dir = std::filesystem::temp_directory_path() / "platediff-vlm-store";
  std::filesystem::remove_all(dir);
  const auto store = dir / "responses.jsonl";

  GroundTruthEchoClient echo(samples);
  RecordingClient recorder(echo, store);
  const BenchResult live =
      run_benchmark(samples, BenchStrategy::difference_of_predictions, recorder, quick_client());

  // Store format: one JSON object per exchange with the fields the replay
  // client needs plus a timestamp.
  std::ifstream in(store);
  REQUIRE(in.good());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("sample_id"));
    CHECK(j.at("prompt_digest").get<std::string>().size() == 64);
    CHECK(j.contains("raw"));
    CHECK(j.contains("timestamp"));
    ++lines;
  }
  CHECK(lines == 8);  // two prompts per sample

  ReplayClient replay(store);
  const BenchResult replayed =
      run_benchmark(samples, BenchStrategy::difference_of_predictions, replay, quick_client());
  CHECK(replayed.item_report.mae == live.item_report.mae);
  CHECK(replayed.dish_report.mae == live.dish_report.mae);
  REQUIRE(replayed.items.size() == live.items.size());
  for (std::size_t i = 0; i < live.items.size(); ++i) {
    CHECK(replayed.items[i].sample_id == live.items[i].sample_id);
    CHECK(replayed.items[i].prediction == live.items[i].prediction);
  }

  // Unseen prompts have no business succeeding offline.
  VlmPrompt unseen = build_single_prompt({"Nothing Recorded"});
  CHECK_THROWS_AS(replay.complete(samples[0].sample_id, unseen), ProviderError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("later duplicate records win on replay") {
  const auto dir = std::filesystem::temp_directory_path() / "platediff-vlm-dup";
  std::filesystem::create_directories(dir);
  const auto store = dir / "dup.jsonl";
  VlmPrompt prompt = build_single_prompt({"Apple"});
  {
    std::ofstream out(store);
    nlohmann::json first{{"sample_id", "s"},
                         {"prompt_digest", prompt_digest(prompt)},
                         {"raw", "{\"Apple\": 1}"},
                         {"timestamp", "2026-01-01T00:00:00Z"}};
    nlohmann::json second = first;
    second["raw"] = "{\"Apple\": 2}";
    out << first.dump() << "\n" << second.dump() << "\n";
  }
  ReplayClient replay(store);
  CHECK(replay.complete("s", prompt) == "{\"Apple\": 2}");
  CHECK_THROWS_AS(ReplayClient(dir / "missing.jsonl"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("transient provider errors are retried, permanent ones are not") {
  const auto samples = bench_samples(1);
  GroundTruthEchoClient echo(samples);

  FlakyClient flaky(echo, 2);
  ClientConfig config = quick_client();
  const BenchResult r = run_benchmark(samples, BenchStrategy::single, flaky, config);
  CHECK(r.failed_samples == 0);  // 2 transient failures fit in 3 retries

  AlwaysFailClient permanent(false);
  CHECK_THROWS_AS(run_benchmark(samples, BenchStrategy::single, permanent, config),
                  AllSamplesFailed);
  CHECK(permanent.calls.load() == 1);  // no retry on a permanent error

  AlwaysFailClient transient(true);
  CHECK_THROWS_AS(run_benchmark(samples, BenchStrategy::single, transient, config),
                  AllSamplesFailed);
  CHECK(transient.calls.load() == 1 + config.max_retries);
}

TEST_CASE("one poisoned sample is skipped, not fatal") {
  const auto samples = bench_samples(4);
  GroundTruthEchoClient echo(samples);
  PoisonOneClient poison(echo, samples[1].sample_id);
  const BenchResult r = run_benchmark(samples, BenchStrategy::single, poison, quick_client());
  CHECK(r.attempted_samples == 4);
  CHECK(r.failed_samples == 1);
  CHECK(r.dish_report.n == 3);
  for (const auto& item : r.items) CHECK(item.sample_id != samples[1].sample_id);
}

TEST_CASE("unparseable replies count as failures") {
  const auto samples = bench_samples(2);
  class GarbageClient final : public VlmClient {
   public:
    std::string complete(const std::string&, const VlmPrompt&) override {
      return "I cannot help with that.";
    }
  } garbage;
  CHECK_THROWS_AS(run_benchmark(samples, BenchStrategy::single, garbage, quick_client()),
                  AllSamplesFailed);
}

TEST_CASE("difference strategies demand after-state data up front") {
  auto samples = bench_samples(2);
  samples[0].items[0].weight_after.reset();
  GroundTruthEchoClient echo(samples);
  CHECK_THROWS_AS(
      run_benchmark(samples, BenchStrategy::predicted_difference, echo, quick_client()),
      MissingAfterState);
  // The single strategy never needs the after state.
  CHECK_NOTHROW(run_benchmark(samples, BenchStrategy::single, echo, quick_client()));
}

TEST_CASE("client config validation") {
  ClientConfig c;
  CHECK_NOTHROW(validate(c));
  c.max_in_flight = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c.max_in_flight = 2;
  c.max_retries = -1;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("the http client refuses to run without an endpoint or key") {
  ClientConfig c;
  c.provider = "http";
  CHECK_THROWS_AS(HttpChatClient{c}, ValidationError);

  c.endpoint = "http://127.0.0.1:1";  // nothing listens here
  c.api_key_env = "PLATEDIFF_TEST_KEY_THAT_IS_UNSET";
  HttpChatClient client(c);
  VlmPrompt prompt = build_single_prompt({"Apple"});
  prompt.pixels = {std::make_shared<Image>(Image::solid(4, 4, 1, 2, 3))};
  // Missing key: permanent config problem, reported without retry.
  try {
    client.complete("s", prompt);
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    CHECK_FALSE(e.transient());
    CHECK(std::string(e.what()).find("PLATEDIFF_TEST_KEY_THAT_IS_UNSET") != std::string::npos);
  }
}
