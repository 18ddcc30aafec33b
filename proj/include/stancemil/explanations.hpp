#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "stancemil/labels.hpp"
#include "stancemil/tree.hpp"

namespace stancemil {

// Bump whenever either template's wording changes; it is part of every cache key.
inline constexpr const char* kPromptVersion = "prompt-v1";

enum class ExplanationKind { kStance, kClaim };

struct ExplanationRequest {
  ExplanationKind kind = ExplanationKind::kStance;
  std::string node_id;
  std::string node_text;  // posts carry their structural prefix
  std::string claim_text;
  TargetPair target;      // claim requests only use target.veracity
  std::string prompt_version = kPromptVersion;
  std::string provider_id;
};

struct ExplanationRecord {
  std::string request_key;
  std::string text;
  std::string created_at;
  nlohmann::json provider_meta = nlohmann::json::object();

  nlohmann::ordered_json to_json() const;
  static ExplanationRecord from_json(const nlohmann::json& j);
};

std::string build_stance_prompt(const std::string& post_text_with_prefix, const std::string& claim_text,
                                const TargetPair& target);
std::string build_claim_prompt(const std::string& claim_text, const std::string& target_veracity);
std::string render_prompt(const ExplanationRequest& request);

// SHA-256 of (prompt_version, provider_id, rendered prompt).
std::string request_key(const ExplanationRequest& request);

// Deterministic offline stand-in for the LLM, seeded by the request key.
std::string mock_generate(const ExplanationRequest& request);

class ExplanationProvider {
 public:
  virtual ~ExplanationProvider() = default;
  virtual std::string id() const = 0;
  // One text-in/text-out call. Throws a provider error on failure.
  virtual std::string generate(const ExplanationRequest& request, const std::string& prompt) = 0;

  std::size_t call_count() const { return calls_.load(); }

 protected:
  void count_call() { ++calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

class MockProvider final : public ExplanationProvider {
 public:
  std::string id() const override { return "mock-v1"; }
  std::string generate(const ExplanationRequest& request, const std::string& prompt) override;
};

struct ProviderConfig {
  std::string kind = "mock";  // "mock" or "http"
  std::string endpoint;       // OpenAI-compatible chat completions URL
  std::string model;
  std::string api_key_env = "STANCEMIL_API_KEY";
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int max_concurrent = 4;
  double backoff_seconds = 1.0;

  static ProviderConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

// Chat-completions client; temperature is always 0.
class HttpProvider final : public ExplanationProvider {
 public:
  explicit HttpProvider(ProviderConfig config);
  std::string id() const override { return "http:" + config_.model; }
  std::string generate(const ExplanationRequest& request, const std::string& prompt) override;

 private:
  ProviderConfig config_;
};

std::unique_ptr<ExplanationProvider> make_provider(const ProviderConfig& config);

// Content-addressed store: <root>/<h[0:2]>/<h[2:4]>/<h>.json, written via
// temp-file-then-rename, fronted by an in-memory map. An empty root keeps
// records in memory only.
class ExplanationCache {
 public:
  explicit ExplanationCache(std::filesystem::path root = {});

  std::optional<ExplanationRecord> get(const std::string& key);
  void put(const ExplanationRecord& record);
  std::filesystem::path path_for(const std::string& key) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::mutex mutex_;
  std::unordered_map<std::string, ExplanationRecord> memory_;
};

struct RetryPolicy {
  int max_retries = 3;
  double backoff_seconds = 1.0;
};

// Cache hit: no provider call. Miss: provider call (bounded retries), store,
// return. With no provider a miss is a generation-gap error.
ExplanationRecord fetch_explanation(const ExplanationRequest& request, ExplanationProvider* provider,
                                    ExplanationCache& cache, RetryPolicy retry = {});

// Every stance request (post x pair) and claim request (one per veracity) of a tree.
std::vector<ExplanationRequest> tree_requests(const ConversationTree& tree,
                                              const std::vector<TargetPair>& pairs,
                                              const std::string& provider_id);

// Fetches all requests with up to `max_concurrent` provider calls in flight.
// Without a provider, every missing key is reported in one generation-gap error.
std::vector<ExplanationRecord> fetch_all(const std::vector<ExplanationRequest>& requests,
                                         ExplanationProvider* provider, ExplanationCache& cache,
                                         int max_concurrent = 1, RetryPolicy retry = {});

// Explanation texts for one tree, indexed for the model: claim[v] per
// veracity index, post[k][i] per pair k and post i.
struct TreeExplanations {
  std::vector<std::string> claim;
  std::vector<std::vector<std::string>> post;
};

TreeExplanations collect_tree_explanations(const ConversationTree& tree, const std::vector<TargetPair>& pairs,
                                           std::size_t veracity_count, ExplanationProvider* provider,
                                           const std::string& provider_id, ExplanationCache& cache,
                                           int max_concurrent = 1, RetryPolicy retry = {});

}  // namespace stancemil
