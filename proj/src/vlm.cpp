#include "platediff/vlm.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "platediff/digest.hpp"
#include "platediff/errors.hpp"
#include "platediff/image.hpp"

namespace platediff {
namespace {

// Shared structured-output rules, appended to every estimation prompt.
const char* const kRulesBlock =
    "RULES:\n"
    "1. Output ONLY a valid JSON object.\n"
    "2. Keys must be the exact ingredient names listed.\n"
    "3. Provide a best-guess estimate in grams.\n"
    "4. Example: {\"Rice\": 150.0, \"Chicken\": 85.0}";

const char* const kSingleTemplate =
    "You are a nutrition expert analyzing this meal image. "
    "Estimate the weight in grams for these ingredients:\n{ing_list}";

const char* const kPredictedDifferenceTemplate =
    "You are a nutrition expert. Analyze these two images. "
    "Image 1 is the meal Before eating. Image 2 is the meal After eating.\n"
    "Identify the following ingredients: {ing_list}.\n"
    "Estimate the CONSUMED weight (mass eaten) in grams for each ingredient based on the "
    "difference between the images.\n"
    "Example: {\"Apple\": 50.5, \"Bread\": 20.0}";

const char* const kBeforeTemplate =
    "You are a nutrition expert. Analyze this image of a meal.\n"
    "Estimate the total weight (in grams) PRESENT in the image for these ingredients: "
    "{ing_list}.";

const char* const kAfterTemplate =
    "You are a nutrition expert. Analyze this image of leftovers/after meal.\n"
    "Estimate the remaining weight (in grams) PRESENT in the image for these ingredients: "
    "{ing_list}.\n"
    "If an ingredient is completely gone, the weight is 0.";

std::string fill_template(const char* tmpl, const std::vector<std::string>& ingredients) {
  std::string text(tmpl);
  const std::string placeholder = "{ing_list}";
  const std::size_t pos = text.find(placeholder);
  if (pos == std::string::npos) throw SpecError("prompt template lacks {ing_list}");
  text.replace(pos, placeholder.size(), render_ing_list(ingredients));
  return text + "\n" + kRulesBlock;
}

void require_ingredients(const std::vector<std::string>& ingredients) {
  if (ingredients.empty()) throw EmptyInput("ingredient list must not be empty");
  for (const std::string& name : ingredients)
    if (name.empty()) throw ValidationError("ingredients", "ingredient name must not be empty");
}

// The templates are canonical bytes, so the prompt role can be recovered
// from its first line.
enum class PromptRole { single, pair_difference, before, after, unknown };

PromptRole detect_role(const std::string& text) {
  auto starts = [&](const char* tmpl) {
    const std::string head = std::string(tmpl).substr(0, std::string(tmpl).find('{'));
    return text.rfind(head, 0) == 0;
  };
  if (starts(kSingleTemplate)) return PromptRole::single;
  if (starts(kPredictedDifferenceTemplate)) return PromptRole::pair_difference;
  if (starts(kBeforeTemplate)) return PromptRole::before;
  if (starts(kAfterTemplate)) return PromptRole::after;
  return PromptRole::unknown;
}

// Returns the span of the first balanced JSON object, or npos.
std::pair<std::size_t, std::size_t> first_object_span(const std::string& s) {
  const std::size_t open = s.find('{');
  if (open == std::string::npos) return {std::string::npos, 0};
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return {open, i - open + 1};
  }
  return {std::string::npos, 0};
}

std::string strip_fence(const std::string& raw, bool& stripped) {
  stripped = false;
  const std::size_t fence = raw.find("```");
  if (fence == std::string::npos) return raw;
  std::size_t body = raw.find('\n', fence);
  if (body == std::string::npos) return raw;
  ++body;
  const std::size_t close = raw.find("```", body);
  if (close == std::string::npos) return raw;
  stripped = true;
  return raw.substr(body, close - body);
}

std::string base64(const std::string& data) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    std::uint32_t block = static_cast<unsigned char>(data[i]) << 16;
    if (i + 1 < data.size()) block |= static_cast<unsigned char>(data[i + 1]) << 8;
    if (i + 2 < data.size()) block |= static_cast<unsigned char>(data[i + 2]);
    out.push_back(alphabet[(block >> 18) & 63]);
    out.push_back(alphabet[(block >> 12) & 63]);
    out.push_back(i + 1 < data.size() ? alphabet[(block >> 6) & 63] : '=');
    out.push_back(i + 2 < data.size() ? alphabet[block & 63] : '=');
  }
  return out;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string ground_truth_json(const Sample& sample, PromptRole role) {
  nlohmann::json j = nlohmann::json::object();
  for (const FoodItem& item : sample.items) {
    switch (role) {
      case PromptRole::single:
      case PromptRole::before:
        j[item.name] = item.weight_before;
        break;
      case PromptRole::after:
        j[item.name] = item.weight_after.value_or(0.0);
        break;
      case PromptRole::pair_difference:
        j[item.name] = item.weight_difference();
        break;
      case PromptRole::unknown:
        throw ProviderError("echo client cannot identify the prompt template");
    }
  }
  return j.dump();
}

std::string call_with_retries(VlmClient& client, const std::string& sample_id,
                              const VlmPrompt& prompt, const ClientConfig& config) {
  for (int attempt = 0;; ++attempt) {
    try {
      return client.complete(sample_id, prompt);
    } catch (const ProviderError& e) {
      if (!e.transient() || attempt >= config.max_retries) throw;
      const auto delay = std::chrono::milliseconds(
          static_cast<std::int64_t>(config.retry_base_ms) * (1ll << attempt));
      std::this_thread::sleep_for(delay);
    }
  }
}

}  // namespace

std::string to_string(BenchStrategy s) {
  switch (s) {
    case BenchStrategy::single: return "single";
    case BenchStrategy::predicted_difference: return "predicted_difference";
    case BenchStrategy::difference_of_predictions: return "difference_of_predictions";
  }
  throw SpecError("unknown strategy");
}

BenchStrategy bench_strategy_from_string(const std::string& s) {
  if (s == "single") return BenchStrategy::single;
  if (s == "predicted_difference") return BenchStrategy::predicted_difference;
  if (s == "difference_of_predictions") return BenchStrategy::difference_of_predictions;
  throw ValidationError("strategy", "unknown value: " + s);
}

const char* to_string(RepairState r) {
  switch (r) {
    case RepairState::none: return "none";
    case RepairState::fence_stripped: return "fence_stripped";
    case RepairState::failed: return "failed";
  }
  throw SpecError("unknown repair state");
}

std::string render_ing_list(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += "- " + names[i];
    if (i + 1 < names.size()) out += "\n";
  }
  return out;
}

VlmPrompt build_single_prompt(const std::vector<std::string>& ingredients) {
  require_ingredients(ingredients);
  VlmPrompt p;
  p.text = fill_template(kSingleTemplate, ingredients);
  p.images = {"before"};
  p.pixels = {nullptr};
  p.expected_keys = ingredients;
  return p;
}

std::vector<VlmPrompt> build_pair_prompts(const std::vector<std::string>& ingredients,
                                          BenchStrategy strategy) {
  require_ingredients(ingredients);
  std::vector<VlmPrompt> prompts;
  if (strategy == BenchStrategy::predicted_difference) {
    VlmPrompt p;
    p.text = fill_template(kPredictedDifferenceTemplate, ingredients);
    p.images = {"before", "after"};
    p.pixels = {nullptr, nullptr};
    p.expected_keys = ingredients;
    prompts.push_back(std::move(p));
  } else if (strategy == BenchStrategy::difference_of_predictions) {
    VlmPrompt before;
    before.text = fill_template(kBeforeTemplate, ingredients);
    before.images = {"before"};
    before.pixels = {nullptr};
    before.expected_keys = ingredients;
    VlmPrompt after;
    after.text = fill_template(kAfterTemplate, ingredients);
    after.images = {"after"};
    after.pixels = {nullptr};
    after.expected_keys = ingredients;
    prompts.push_back(std::move(before));
    prompts.push_back(std::move(after));
  } else {
    throw ValidationError("strategy", "build_pair_prompts needs a pair strategy");
  }
  return prompts;
}

VlmResponse parse_structured(const std::string& raw,
                             const std::vector<std::string>& expected_keys) {
  VlmResponse resp;
  resp.raw = raw;
  resp.repair = RepairState::failed;

  bool stripped = false;
  std::string body = raw;
  auto [pos, len] = first_object_span(body);
  if (pos == std::string::npos) {
    body = strip_fence(raw, stripped);
    std::tie(pos, len) = first_object_span(body);
  } else if (raw.find("```") != std::string::npos && raw.find("```") < pos) {
    body = strip_fence(raw, stripped);
    std::tie(pos, len) = first_object_span(body);
  }
  if (pos == std::string::npos) return resp;

  nlohmann::json j = nlohmann::json::parse(body.substr(pos, len), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return resp;

  resp.repair = stripped ? RepairState::fence_stripped : RepairState::none;
  for (const auto& [key, value] : j.items()) {
    double grams = 0.0;
    if (value.is_number()) {
      grams = value.get<double>();
    } else if (value.is_string()) {
      try {
        grams = std::stod(value.get<std::string>());
      } catch (const std::exception&) {
        continue;  // uncoercible value; the key will be imputed if expected
      }
    } else {
      continue;
    }
    resp.parsed[key] = grams;
  }

  for (const std::string& key : expected_keys) {
    if (!resp.parsed.count(key)) {
      resp.parsed[key] = 0.0;
      resp.imputed.push_back(key);
      std::cerr << "[vlm] missing key '" << key << "' imputed as 0 g\n";
    }
  }
  for (const auto& [key, value] : resp.parsed) {
    (void)value;
    if (std::find(expected_keys.begin(), expected_keys.end(), key) == expected_keys.end())
      resp.extras.push_back(key);
  }
  return resp;
}

std::string prompt_digest(const VlmPrompt& prompt) { return sha256_hex(prompt.text); }

void validate(const ClientConfig& config) {
  if (config.max_in_flight < 1) throw ValidationError("max_in_flight", "must be at least 1");
  if (config.max_tokens < 1) throw ValidationError("max_tokens", "must be at least 1");
  if (config.max_retries < 0) throw ValidationError("max_retries", "must be non-negative");
  if (config.retry_base_ms < 0) throw ValidationError("retry_base_ms", "must be non-negative");
}

GroundTruthEchoClient::GroundTruthEchoClient(const std::vector<Sample>& samples) {
  for (const Sample& s : samples) by_id_.emplace(s.sample_id, s);
}

std::string GroundTruthEchoClient::complete(const std::string& sample_id,
                                            const VlmPrompt& prompt) {
  auto it = by_id_.find(sample_id);
  if (it == by_id_.end()) throw ProviderError("unknown sample '" + sample_id + "'");
  return ground_truth_json(it->second, detect_role(prompt.text));
}

std::string EmptyObjectClient::complete(const std::string&, const VlmPrompt&) { return "{}"; }

RecordingClient::RecordingClient(VlmClient& inner, std::filesystem::path store)
    : inner_(inner), store_(std::move(store)) {
  if (store_.has_parent_path()) std::filesystem::create_directories(store_.parent_path());
}

std::string RecordingClient::complete(const std::string& sample_id, const VlmPrompt& prompt) {
  const std::string raw = inner_.complete(sample_id, prompt);
  nlohmann::json line{{"sample_id", sample_id},
                      {"prompt_digest", prompt_digest(prompt)},
                      {"raw", raw},
                      {"timestamp", iso_timestamp()}};
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(store_, std::ios::app);
  if (!out) throw IoError("cannot append to response store " + store_.string());
  out << line.dump() << "\n";
  return raw;
}

ReplayClient::ReplayClient(const std::filesystem::path& store) {
  std::ifstream in(store);
  if (!in) throw IoError("cannot open response store " + store.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ParseError("bad response store record", line_no);
    const std::string key =
        j.value("sample_id", "") + "\x1f" + j.value("prompt_digest", "");
    responses_[key] = j.value("raw", "");  // later records win
  }
}

std::string ReplayClient::complete(const std::string& sample_id, const VlmPrompt& prompt) {
  const auto it = responses_.find(sample_id + "\x1f" + prompt_digest(prompt));
  if (it == responses_.end())
    throw ProviderError("no recorded response for sample '" + sample_id + "'");
  return it->second;
}

HttpChatClient::HttpChatClient(ClientConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty())
    throw ValidationError("endpoint", "http provider needs an endpoint URL");
}

std::string HttpChatClient::complete(const std::string&, const VlmPrompt& prompt) {
  const char* key = config_.api_key_env.empty() ? nullptr : std::getenv(config_.api_key_env.c_str());
  if (!key || !*key)
    throw ProviderError("API key env var '" + config_.api_key_env + "' is not set");

  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", prompt.text}});
  for (std::size_t i = 0; i < prompt.images.size(); ++i) {
    std::string png;
    if (i < prompt.pixels.size() && prompt.pixels[i]) {
      const std::vector<std::uint8_t> bytes = encode_png(*prompt.pixels[i]);
      png.assign(bytes.begin(), bytes.end());
    } else {
      std::ifstream in(prompt.images[i], std::ios::binary);
      if (!in) throw ProviderError("cannot read image " + prompt.images[i]);
      png.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    content.push_back(
        {{"type", "image_url"},
         {"image_url", {{"url", "data:image/png;base64," + base64(png)}}}});
  }
  nlohmann::json body{{"model", config_.model},
                      {"max_tokens", config_.max_tokens},
                      {"temperature", config_.greedy ? 0.0 : 1.0},
                      {"messages",
                       nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};

  httplib::Client cli(config_.endpoint);
  cli.set_connection_timeout(30);
  cli.set_read_timeout(120);
  httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};
  auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) throw ProviderError("connection to provider failed", /*transient=*/true);
  if (res->status != 200)
    throw ProviderError("provider returned HTTP " + std::to_string(res->status),
                        res->status == 429 || res->status >= 500);
  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw ProviderError("provider returned unparseable JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ProviderError("provider reply missing choices[0].message.content");
  }
}

BenchResult run_benchmark(const std::vector<Sample>& samples, BenchStrategy strategy,
                          VlmClient& client, const ClientConfig& config) {
  if (samples.empty()) throw EmptyInput("no samples to benchmark");
  validate(config);
  if (strategy != BenchStrategy::single) {
    for (const Sample& sample : samples)
      for (const FoodItem& item : sample.items)
        if (!item.weight_after)
          throw MissingAfterState("sample '" + sample.sample_id + "', item '" + item.name +
                                  "' has no after-eating weight");
  }

  struct PerSample {
    bool failed = false;
    std::vector<ItemPrediction> items;
  };
  std::vector<PerSample> results(samples.size());

  auto attach = [](VlmPrompt& prompt, const Sample& sample) {
    for (std::size_t i = 0; i < prompt.images.size(); ++i) {
      const ImageRef& ref = prompt.images[i] == "after" ? sample.after_image
                                                        : sample.before_image;
      prompt.images[i] = ref.path.empty()
                             ? sample.sample_id + "#" + prompt.images[i]
                             : ref.path;
      prompt.pixels[i] = ref.pixels;
    }
  };

  auto process = [&](std::size_t idx) {
    const Sample& sample = samples[idx];
    PerSample& slot = results[idx];
    std::vector<std::string> ingredients;
    for (const FoodItem& item : sample.items) ingredients.push_back(item.name);
    try {
      std::vector<VlmPrompt> prompts =
          strategy == BenchStrategy::single
              ? std::vector<VlmPrompt>{build_single_prompt(ingredients)}
              : build_pair_prompts(ingredients, strategy);
      std::vector<VlmResponse> responses;
      for (VlmPrompt& prompt : prompts) {
        attach(prompt, sample);
        const std::string raw = call_with_retries(client, sample.sample_id, prompt, config);
        VlmResponse resp = parse_structured(raw, prompt.expected_keys);
        if (resp.repair == RepairState::failed) {
          slot.failed = true;
          return;
        }
        responses.push_back(std::move(resp));
      }
      for (const FoodItem& item : sample.items) {
        ItemPrediction p;
        p.sample_id = sample.sample_id;
        p.item_name = item.name;
        p.structure = item.structure;
        switch (strategy) {
          case BenchStrategy::single:
            p.prediction = responses[0].parsed.at(item.name);
            p.target = item.weight_before;
            break;
          case BenchStrategy::predicted_difference:
            p.prediction = responses[0].parsed.at(item.name);
            p.target = item.weight_difference();
            break;
          case BenchStrategy::difference_of_predictions:
            p.prediction =
                responses[0].parsed.at(item.name) - responses[1].parsed.at(item.name);
            p.target = item.weight_difference();
            break;
        }
        slot.items.push_back(std::move(p));
      }
    } catch (const ProviderError& e) {
      std::cerr << "[vlm] sample '" << sample.sample_id << "' failed: " << e.what() << "\n";
      slot.failed = true;
    }
  };

  const int workers =
      static_cast<int>(std::min<std::size_t>(samples.size(),
                                             static_cast<std::size_t>(config.max_in_flight)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        try {
          for (std::size_t i = next.fetch_add(1); i < samples.size(); i = next.fetch_add(1))
            process(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  BenchResult bench;
  bench.attempted_samples = static_cast<int>(samples.size());
  for (const PerSample& slot : results) {
    if (slot.failed) {
      ++bench.failed_samples;
      continue;
    }
    bench.items.insert(bench.items.end(), slot.items.begin(), slot.items.end());
  }
  if (bench.failed_samples == bench.attempted_samples)
    throw AllSamplesFailed("every benchmark sample failed");

  const Stage stage =
      strategy == BenchStrategy::single ? Stage::absolute : Stage::difference;
  std::vector<double> preds, targets;
  for (const ItemPrediction& item : bench.items) {
    preds.push_back(item.prediction);
    targets.push_back(item.target);
  }
  bench.item_report = mae_pmae(preds, targets, MetricLevel::item, stage);
  const std::vector<DishPrediction> dishes = aggregate_to_dish(bench.items);
  std::vector<double> dpreds, dtargets;
  for (const DishPrediction& d : dishes) {
    dpreds.push_back(d.prediction);
    dtargets.push_back(d.target);
  }
  bench.dish_report = mae_pmae(dpreds, dtargets, MetricLevel::dish, stage);
  return bench;
}

}  // namespace platediff
