#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stancemil/error.hpp"
#include "stancemil/labels.hpp"
#include "stancemil/tree.hpp"

namespace stancemil {

// Per-dataset settings: label vocabularies, upstream label conversion and
// preprocessing knobs.
struct DatasetConfig {
  Vocabulary veracity = default_veracity_vocabulary();
  Vocabulary stance = default_stance_vocabulary();
  std::map<std::string, std::string> stance_mapping;    // upstream label -> S/D/Q/C
  std::map<std::string, std::string> veracity_mapping;  // upstream label -> vocabulary code
  int max_posts = 3500;
  double validation_fraction = 0.30;
  std::uint64_t seed = 0;

  static DatasetConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;

  std::string map_stance(const std::string& raw) const;
  std::string map_veracity(const std::string& raw) const;
};

enum class DatasetSchema { kCanonical, kPheme };
DatasetSchema parse_schema(const std::string& name);

struct LoadDiagnostic {
  std::string record;  // claim id, or "line <n>" when the id is unreadable
  ErrorKind kind;
  std::string message;
};

struct LoadResult {
  std::vector<ConversationTree> trees;
  std::vector<LoadDiagnostic> diagnostics;
};

struct LoadOptions {
  // Strict loading throws on the first rejected record instead of collecting
  // diagnostics.
  bool strict = false;
};

LoadResult load_dataset(const std::filesystem::path& path, DatasetSchema schema,
                        const DatasetConfig& config, LoadOptions options = {});

// Parses one canonical JSONL record; throws parse/structural/vocabulary errors.
ConversationTree parse_tree_record(const nlohmann::json& record, const DatasetConfig& config);
nlohmann::ordered_json tree_to_json(const ConversationTree& tree);
void write_dataset(const std::filesystem::path& path, const std::vector<ConversationTree>& trees);

std::string normalize_whitespace(const std::string& text);

// Drops retweets (posts repeating the claim verbatim) and empty posts, keeps
// the first `max_posts` posts chronologically and re-parents orphans onto the
// nearest surviving ancestor.
ConversationTree preprocess_tree(const ConversationTree& tree, int max_posts);

// Removes the given posts and re-parents their descendants.
ConversationTree remove_posts(const ConversationTree& tree, const std::vector<bool>& remove);

// Removes round(ratio * n) uniformly chosen posts (seeded).
ConversationTree delete_random_posts(const ConversationTree& tree, double ratio,
                                     std::uint64_t seed);

struct DatasetSplit {
  std::vector<ConversationTree> train;
  std::vector<ConversationTree> validation;
  std::vector<ConversationTree> test;
};

// Stratified-by-veracity holdout of `fraction` of the trees as validation;
// the remainder becomes the test set. `train` is left empty.
DatasetSplit split_validation(const std::vector<ConversationTree>& trees, double fraction,
                              std::uint64_t seed);

}  // namespace stancemil
