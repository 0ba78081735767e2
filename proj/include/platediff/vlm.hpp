#ifndef PLATEDIFF_VLM_HPP
#define PLATEDIFF_VLM_HPP

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "platediff/data_model.hpp"
#include "platediff/evaluation.hpp"

namespace platediff {

enum class BenchStrategy { single, predicted_difference, difference_of_predictions };
std::string to_string(BenchStrategy s);
BenchStrategy bench_strategy_from_string(const std::string& s);

struct VlmPrompt {
  std::string text;
  std::vector<std::string> images;  // 1 or 2 refs (paths or ids), in send order
  std::vector<std::shared_ptr<const Image>> pixels;  // parallel to images, entries may be null
  std::vector<std::string> expected_keys;
};

enum class RepairState { none, fence_stripped, failed };
const char* to_string(RepairState r);

struct VlmResponse {
  std::string raw;
  std::map<std::string, double> parsed;  // ingredient -> grams
  RepairState repair = RepairState::none;
  std::vector<std::string> extras;   // keys outside expected_keys, ignored in scoring
  std::vector<std::string> imputed;  // expected keys missing from the reply, scored as 0
};

// "- Name" per line, newline-joined.
std::string render_ing_list(const std::vector<std::string>& names);

// One-image absolute-weight prompt; the shared RULES block is appended.
VlmPrompt build_single_prompt(const std::vector<std::string>& ingredients);

// predicted_difference: one two-image prompt asking for consumed grams.
// difference_of_predictions: a before prompt then an after prompt, whose
// parsed weights the scorer subtracts per key.
std::vector<VlmPrompt> build_pair_prompts(const std::vector<std::string>& ingredients,
                                          BenchStrategy strategy);

// Extracts the first JSON object (stripping a Markdown fence when
// needed), coerces values to grams, imputes missing expected keys as 0,
// and never throws: unusable text yields repair == failed.
VlmResponse parse_structured(const std::string& raw,
                             const std::vector<std::string>& expected_keys);

// Identifies a prompt within one sample for the record/replay store.
std::string prompt_digest(const VlmPrompt& prompt);

struct ClientConfig {
  std::string provider = "mock-echo";
  int max_tokens = 512;
  bool greedy = true;
  int max_in_flight = 4;
  std::string api_key_env = "VLM_API_KEY";
  std::string endpoint;  // base URL for the http provider
  std::string model;
  int max_retries = 3;     // on transient provider errors
  int retry_base_ms = 250; // exponential backoff base
};

void validate(const ClientConfig& config);

// Completion backend. Implementations must be safe to call from several
// threads at once.
class VlmClient {
 public:
  virtual ~VlmClient() = default;
  virtual std::string complete(const std::string& sample_id, const VlmPrompt& prompt) = 0;
};

// Answers every prompt with the ground truth of the addressed sample,
// keyed off the fixed template the prompt was built from.
class GroundTruthEchoClient final : public VlmClient {
 public:
  explicit GroundTruthEchoClient(const std::vector<Sample>& samples);
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override;

 private:
  std::unordered_map<std::string, Sample> by_id_;
};

// Always replies "{}" — every expected key gets imputed as 0.
class EmptyObjectClient final : public VlmClient {
 public:
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override;
};

// Forwards to an inner client and appends every exchange to a JSONL store:
// {sample_id, prompt_digest, raw, timestamp}.
class RecordingClient final : public VlmClient {
 public:
  RecordingClient(VlmClient& inner, std::filesystem::path store);
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override;

 private:
  VlmClient& inner_;
  std::filesystem::path store_;
  std::mutex mu_;
};

// Serves responses from a recorded store; performs no network work.
// Unknown (sample, prompt) pairs raise a permanent ProviderError.
class ReplayClient final : public VlmClient {
 public:
  explicit ReplayClient(const std::filesystem::path& store);
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override;

 private:
  std::unordered_map<std::string, std::string> responses_;  // sample_id \x1f digest -> raw
};

// OpenAI-style chat-completions provider over HTTP. The API key is read
// from the env var named by ClientConfig::api_key_env at call time and
// is never logged.
class HttpChatClient final : public VlmClient {
 public:
  explicit HttpChatClient(ClientConfig config);
  std::string complete(const std::string& sample_id, const VlmPrompt& prompt) override;

 private:
  ClientConfig config_;
};

struct BenchResult {
  MetricReport dish_report;  // headline number
  MetricReport item_report;
  std::vector<ItemPrediction> items;  // successfully scored items
  int attempted_samples = 0;
  int failed_samples = 0;  // provider or parse failures, excluded from scoring
};

// Prompts every sample (bounded by max_in_flight, with retries on
// transient errors), parses, and scores at dish level through the
// evaluation module. Failed samples are skipped; if every sample fails,
// AllSamplesFailed is thrown.
BenchResult run_benchmark(const std::vector<Sample>& samples, BenchStrategy strategy,
                          VlmClient& client, const ClientConfig& config);

}  // namespace platediff

#endif  // PLATEDIFF_VLM_HPP
