#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stancemil/tree.hpp"

namespace fixtures {

// parents[i] is the 0-based parent post of post i, or -1 for the claim.
inline stancemil::ConversationTree make_tree(const std::vector<int>& parents, const std::string& claim_id = "c",
                                             const std::string& veracity = "T") {
  stancemil::ConversationTree t;
  t.claim_id = claim_id;
  t.claim_text = "officials confirm the bridge closure downtown";
  t.claim_timestamp = 100;
  t.gold_veracity = veracity;
  const char* texts[] = {"confirmed true report", "this is fake and false", "really? any proof", "lol interesting"};
  const char* stances[] = {"S", "D", "Q", "C"};
  for (std::size_t i = 0; i < parents.size(); ++i) {
    stancemil::Post p;
    p.id = claim_id + "-t" + std::to_string(i + 1);
    p.parent_id = parents[i] < 0 ? claim_id : claim_id + "-t" + std::to_string(parents[i] + 1);
    p.text = texts[i % 4];
    p.timestamp = 101 + static_cast<std::int64_t>(i);
    p.gold_stance = stances[i % 4];
    t.posts.push_back(p);
  }
  return t;
}

inline stancemil::ConversationTree chain(int n, const std::string& claim_id = "c") {
  std::vector<int> parents;
  for (int i = 0; i < n; ++i) parents.push_back(i - 1);
  return make_tree(parents, claim_id);
}

// Random recursive tree with n posts.
inline stancemil::ConversationTree random_tree(int n, std::mt19937_64& rng, const std::string& claim_id = "c") {
  std::vector<int> parents;
  for (int i = 0; i < n; ++i) parents.push_back(std::uniform_int_distribution<int>(-1, i - 1)(rng));
  return make_tree(parents, claim_id);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("stancemil-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace fixtures
