#include "stancemil/explanations.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "stancemil/encoders.hpp"
#include "stancemil/error.hpp"
#include "stancemil/hashing.hpp"

namespace stancemil {

namespace fs = std::filesystem;

nlohmann::ordered_json ExplanationRecord::to_json() const {
  nlohmann::ordered_json j;
  j["request_key"] = request_key;
  j["text"] = text;
  j["created_at"] = created_at;
  j["provider_meta"] = provider_meta;
  return j;
}

ExplanationRecord ExplanationRecord::from_json(const nlohmann::json& j) {
  ExplanationRecord r;
  r.request_key = j.at("request_key").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.created_at = j.value("created_at", "");
  if (j.contains("provider_meta")) r.provider_meta = j["provider_meta"];
  return r;
}

namespace {

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// First `limit` whitespace-separated words of `text`.
std::string first_words(const std::string& text, std::size_t limit, std::size_t* count) {
  std::istringstream ss(text);
  std::string word, out;
  std::size_t n = 0;
  while (n < limit && ss >> word) {
    out += (n ? " " : "") + word;
    ++n;
  }
  *count = n;
  return out;
}

constexpr const char* kFillerWords[] = {
    "context",   "tone",      "scope",    "origin",   "wording",  "intent",    "emphasis", "framing",
    "reference", "certainty", "focus",    "timing",   "detail",   "reaction",  "signal",   "hedging",
    "claim",     "account",   "witness",  "report",   "pattern",  "language",  "attitude", "position",
    "reply",     "thread",    "narrative", "cue",     "marker",   "register",  "style",    "stress",
    "cadence",   "challenge", "inquiry",  "remark",   "sentiment", "assertion", "nuance",  "rhetoric",
    "basis",     "premise",   "inference", "stance",  "echo",     "contrast",  "agreement", "objection"};

// Words a reader takes as signs of each stance. The mock uses them to decide
// whether a post exhibits the stance it is asked about.
const std::map<std::string, std::vector<std::string>>& stance_markers() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"S", {"confirmed", "true", "agree", "verified", "legit", "accurate", "correct", "indeed", "yes", "real"}},
      {"D", {"fake", "false", "hoax", "debunked", "lies", "wrong", "untrue", "misleading", "nonsense", "bogus"}},
      {"Q", {"really", "proof", "why", "unclear", "evidence", "source", "how", "sure", "what", "confirm"}},
      {"C", {"lol", "interesting", "wow", "watching", "thoughts", "noted", "funny", "omg", "just", "again"}},
  };
  return table;
}

std::vector<std::string> markers_in(const std::string& text, const std::string& stance) {
  std::vector<std::string> found;
  auto it = stance_markers().find(stance);
  if (it == stance_markers().end()) return found;
  for (const auto& token : tokenize(text))
    if (std::find(it->second.begin(), it->second.end(), token) != it->second.end() &&
        std::find(found.begin(), found.end(), token) == found.end())
      found.push_back(token);
  return found;
}

}  // namespace

std::string build_stance_prompt(const std::string& post_text_with_prefix, const std::string& claim_text,
                                const TargetPair& target) {
  return "What are the characteristics of \"" + stance_display_name(target.stance) + " stance\" in the post \"" +
         post_text_with_prefix + "\", towards \"" + veracity_display_name(target.veracity) + "\" claimed that \"" +
         claim_text + "\" ?";
}

std::string build_claim_prompt(const std::string& claim_text, const std::string& target_veracity) {
  return "What are the characteristics of \"" + capitalized(veracity_display_name(target_veracity)) +
         "\" in the claim \"" + claim_text + "\" ?";
}

std::string render_prompt(const ExplanationRequest& request) {
  if (request.kind == ExplanationKind::kClaim) return build_claim_prompt(request.claim_text, request.target.veracity);
  return build_stance_prompt(request.node_text, request.claim_text, request.target);
}

std::string request_key(const ExplanationRequest& request) {
  Sha256 h;
  h.update(request.prompt_version);
  h.update(std::string_view("\0", 1));
  h.update(request.provider_id);
  h.update(std::string_view("\0", 1));
  h.update(render_prompt(request));
  return h.hex_digest();
}

std::string mock_generate(const ExplanationRequest& request) {
  const std::string key = request_key(request);
  std::mt19937_64 rng(fnv1a64(key));
  const std::string veracity = veracity_display_name(request.target.veracity);
  std::string head;
  std::size_t n = 0;
  if (request.kind == ExplanationKind::kStance) {
    const std::string stance = stance_display_name(request.target.stance);
    const std::string post = first_words(request.node_text, 30, &n);
    // Judge the post's own words only, not its "<id> replied to <parent>:" prefix.
    const auto colon = request.node_text.find(": ");
    const auto found = markers_in(colon == std::string::npos ? request.node_text : request.node_text.substr(colon + 2),
                                  request.target.stance);
    if (found.empty()) {
      head = "The post \"" + post + "\" shows no " + stance + " markers, so it does not bear on whether the claim is a " +
             veracity + ".";
    } else {
      const std::string claim = first_words(request.claim_text, 20, &n);
      head = "The post \"" + post + "\" takes a " + stance + " stance toward the claim \"" + claim + "\" as a " +
             veracity + ", with " + stance + " markers:";
      for (const auto& w : found) head += " " + w;
      head += ".";
    }
    head += " Cues:";
  } else {
    const std::string claim = first_words(request.claim_text, 40, &n);
    head = "Assuming the claim is a " + veracity + ", the claim \"" + claim + "\" shows these traits:";
  }
  std::size_t base = 0;
  first_words(head, 1000, &base);
  std::uniform_int_distribution<std::size_t> length(30, 120);
  const std::size_t target = std::min<std::size_t>(std::max<std::size_t>(length(rng), base + 4), 120);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kFillerWords) - 1);
  std::string text = head;
  for (std::size_t i = base; i < target; ++i) text += std::string(" ") + kFillerWords[pick(rng)];
  return text + ".";
}

std::string MockProvider::generate(const ExplanationRequest& request, const std::string&) {
  count_call();
  return mock_generate(request);
}

ProviderConfig ProviderConfig::from_json(const nlohmann::json& j) {
  ProviderConfig c;
  c.kind = j.value("kind", c.kind);
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.max_concurrent = j.value("max_concurrent", c.max_concurrent);
  c.backoff_seconds = j.value("backoff_seconds", c.backoff_seconds);
  if (c.kind != "mock" && c.kind != "http") throw Error(ErrorKind::kConfig, "provider kind must be mock or http");
  if (c.max_retries < 0 || c.max_concurrent < 1 || c.timeout_seconds <= 0.0)
    throw Error(ErrorKind::kConfig, "invalid provider retry/concurrency/timeout settings");
  return c;
}

nlohmann::ordered_json ProviderConfig::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind;
  j["endpoint"] = endpoint;
  j["model"] = model;
  j["api_key_env"] = api_key_env;
  j["timeout_seconds"] = timeout_seconds;
  j["max_retries"] = max_retries;
  j["max_concurrent"] = max_concurrent;
  j["backoff_seconds"] = backoff_seconds;
  return j;
}

std::unique_ptr<ExplanationProvider> make_provider(const ProviderConfig& config) {
  if (config.kind == "mock") return std::make_unique<MockProvider>();
  return std::make_unique<HttpProvider>(config);
}

// ---------------------------------------------------------------------------

ExplanationCache::ExplanationCache(fs::path root) : root_(std::move(root)) {
  if (!root_.empty()) fs::create_directories(root_);
}

fs::path ExplanationCache::path_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / key.substr(2, 2) / (key + ".json");
}

std::optional<ExplanationRecord> ExplanationCache::get(const std::string& key) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (root_.empty()) return std::nullopt;
  const fs::path p = path_for(key);
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    auto record = ExplanationRecord::from_json(nlohmann::json::parse(in));
    if (record.request_key != key || record.text.empty()) throw std::runtime_error("key mismatch or empty text");
    std::lock_guard lock(mutex_);
    memory_.emplace(key, record);
    return record;
  } catch (const std::exception& e) {
    spdlog::warn("discarding corrupt cache entry {}: {}", p.string(), e.what());
    return std::nullopt;
  }
}

void ExplanationCache::put(const ExplanationRecord& record) {
  if (record.text.empty()) throw Error(ErrorKind::kInput, "refusing to cache an empty explanation");
  if (!root_.empty()) {
    const fs::path p = path_for(record.request_key);
    fs::create_directories(p.parent_path());
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const fs::path tmp = p.string() + ".tmp." + tid.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorKind::kIo, "cannot write cache entry " + tmp.string());
      out << record.to_json().dump(2) << '\n';
    }
    fs::rename(tmp, p);
  }
  std::lock_guard lock(mutex_);
  memory_[record.request_key] = record;
}

ExplanationRecord fetch_explanation(const ExplanationRequest& request, ExplanationProvider* provider,
                                    ExplanationCache& cache, RetryPolicy retry) {
  const std::string key = request_key(request);
  if (auto hit = cache.get(key)) return *hit;
  if (provider == nullptr)
    throw Error(ErrorKind::kGenerationGap, "no cached explanation for key " + key + " (node " + request.node_id + ")");
  const std::string prompt = render_prompt(request);
  std::string last_error;
  for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
    if (attempt > 0 && retry.backoff_seconds > 0.0)
      std::this_thread::sleep_for(std::chrono::duration<double>(retry.backoff_seconds * (1 << (attempt - 1))));
    try {
      std::string text = provider->generate(request, prompt);
      if (text.empty()) throw Error(ErrorKind::kProvider, "provider returned an empty explanation");
      ExplanationRecord record;
      record.request_key = key;
      record.text = std::move(text);
      record.created_at = utc_now();
      record.provider_meta = {{"provider_id", provider->id()},
                              {"prompt_version", request.prompt_version},
                              {"temperature", 0},
                              {"attempts", attempt + 1}};
      cache.put(record);
      return record;
    } catch (const Error& e) {
      if (!e.retryable()) throw;
      last_error = e.what();
      spdlog::warn("explanation request {} failed (attempt {}): {}", key.substr(0, 12), attempt + 1, e.what());
    }
  }
  throw Error(ErrorKind::kProvider, "giving up on key " + key + " after " + std::to_string(retry.max_retries + 1) +
                                        " attempts: " + last_error);
}

std::vector<ExplanationRequest> tree_requests(const ConversationTree& tree, const std::vector<TargetPair>& pairs,
                                              const std::string& provider_id) {
  std::vector<ExplanationRequest> out;
  std::unordered_set<std::string> seen_veracity;
  for (const auto& pair : pairs) {
    if (!seen_veracity.insert(pair.veracity).second) continue;
    ExplanationRequest r;
    r.kind = ExplanationKind::kClaim;
    r.node_id = tree.claim_id;
    r.node_text = tree.claim_text;
    r.claim_text = tree.claim_text;
    r.target = pair;
    r.target.stance.clear();
    r.provider_id = provider_id;
    out.push_back(std::move(r));
  }
  for (const auto& pair : pairs) {
    for (const auto& post : tree.posts) {
      ExplanationRequest r;
      r.kind = ExplanationKind::kStance;
      r.node_id = post.id;
      r.node_text = structural_prefix(post.id, post.parent_id, post.text);
      r.claim_text = tree.claim_text;
      r.target = pair;
      r.provider_id = provider_id;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<ExplanationRecord> fetch_all(const std::vector<ExplanationRequest>& requests,
                                         ExplanationProvider* provider, ExplanationCache& cache, int max_concurrent,
                                         RetryPolicy retry) {
  std::vector<ExplanationRecord> out(requests.size());
  if (provider == nullptr) {
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const std::string key = request_key(requests[i]);
      if (auto hit = cache.get(key))
        out[i] = *hit;
      else
        missing.push_back(key);
    }
    if (!missing.empty()) {
      std::string list;
      for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) list += " " + missing[i];
      throw Error(ErrorKind::kGenerationGap, std::to_string(missing.size()) +
                                                 " explanations missing from the cache (run `explain` first"
                                                 " or pass --mock); first keys:" + list);
    }
    return out;
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        out[i] = fetch_explanation(requests[i], provider, cache, retry);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(max_concurrent, static_cast<int>(requests.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

TreeExplanations collect_tree_explanations(const ConversationTree& tree, const std::vector<TargetPair>& pairs,
                                           std::size_t veracity_count, ExplanationProvider* provider,
                                           const std::string& provider_id, ExplanationCache& cache,
                                           int max_concurrent, RetryPolicy retry) {
  const auto requests = tree_requests(tree, pairs, provider_id);
  const auto records = fetch_all(requests, provider, cache, max_concurrent, retry);
  TreeExplanations ex;
  ex.claim.assign(veracity_count, {});
  ex.post.assign(pairs.size(), std::vector<std::string>(tree.posts.size()));
  std::size_t r = 0;
  std::unordered_set<std::string> seen_veracity;
  for (const auto& pair : pairs) {
    if (!seen_veracity.insert(pair.veracity).second) continue;
    ex.claim[pair.veracity_index] = records[r++].text;
  }
  for (const auto& pair : pairs)
    for (std::size_t i = 0; i < tree.posts.size(); ++i) ex.post[pair.index][i] = records[r++].text;
  return ex;
}

}  // namespace stancemil
