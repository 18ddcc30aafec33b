#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stancemil {

struct Post {
  std::string id;
  std::string parent_id;  // claim id or another post id
  std::string text;
  std::int64_t timestamp = 0;
  std::optional<std::string> gold_stance;  // evaluation only

  friend bool operator==(const Post&, const Post&) = default;
};

// A claim and its reply thread: the MIL bag.
struct ConversationTree {
  std::string claim_id;
  std::string claim_text;
  std::int64_t claim_timestamp = 0;
  std::vector<Post> posts;
  std::optional<std::string> gold_veracity;

  friend bool operator==(const ConversationTree&, const ConversationTree&) = default;
};

// Throws a structural error naming the offending post when the edges do not
// form a single tree rooted at the claim, or when posts are not in
// chronological order.
void validate_tree(const ConversationTree& tree);

// Node 0 is the claim; node i (1..n) is posts[i-1].
struct TreeTopology {
  std::vector<int> parent;                     // parent[0] == -1
  std::vector<std::vector<int>> children;
  std::vector<std::vector<int>> post_neighbors;  // undirected, claim excluded
  std::vector<int> claim_replies;              // direct replies of the claim

  std::size_t node_count() const { return parent.size(); }
  std::size_t post_count() const { return parent.empty() ? 0 : parent.size() - 1; }
};

TreeTopology build_topology(const ConversationTree& tree);

// "<node_id> replied to <parent_id>: <text>"
std::string structural_prefix(const std::string& node_id, const std::string& parent_id,
                              const std::string& text);

}  // namespace stancemil
