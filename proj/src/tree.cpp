#include "stancemil/tree.hpp"

#include <unordered_map>

#include "stancemil/error.hpp"

namespace stancemil {

namespace {

std::unordered_map<std::string, int> node_indices(const ConversationTree& tree) {
  std::unordered_map<std::string, int> index;
  index.emplace(tree.claim_id, 0);
  for (std::size_t i = 0; i < tree.posts.size(); ++i) {
    const auto& p = tree.posts[i];
    if (p.id.empty())
      throw Error(ErrorKind::kStructural, "claim " + tree.claim_id + ": post with empty id");
    if (!index.emplace(p.id, static_cast<int>(i) + 1).second)
      throw Error(ErrorKind::kStructural,
                  "claim " + tree.claim_id + ": duplicate node id '" + p.id + "'");
  }
  return index;
}

}  // namespace

TreeTopology build_topology(const ConversationTree& tree) {
  const auto index = node_indices(tree);
  const std::size_t n = tree.posts.size() + 1;
  TreeTopology topo;
  topo.parent.assign(n, -1);
  topo.children.assign(n, {});
  topo.post_neighbors.assign(n, {});
  for (std::size_t i = 0; i < tree.posts.size(); ++i) {
    const auto& p = tree.posts[i];
    auto it = index.find(p.parent_id);
    if (it == index.end())
      throw Error(ErrorKind::kStructural, "claim " + tree.claim_id + ": post '" + p.id +
                                              "' references missing parent '" + p.parent_id + "'");
    const int node = static_cast<int>(i) + 1;
    if (it->second == node)
      throw Error(ErrorKind::kStructural,
                  "claim " + tree.claim_id + ": post '" + p.id + "' is its own parent");
    topo.parent[node] = it->second;
    topo.children[it->second].push_back(node);
  }

  // Every post must reach the claim; walking parents detects cycles.
  std::vector<int> state(n, 0);  // 0 unknown, 1 in progress, 2 rooted
  state[0] = 2;
  for (std::size_t start = 1; start < n; ++start) {
    std::vector<int> path;
    int cur = static_cast<int>(start);
    while (state[cur] == 0) {
      state[cur] = 1;
      path.push_back(cur);
      cur = topo.parent[cur];
    }
    if (state[cur] == 1)
      throw Error(ErrorKind::kStructural, "claim " + tree.claim_id + ": cycle through post '" +
                                              tree.posts[cur - 1].id + "'");
    for (int v : path) state[v] = 2;
  }

  for (std::size_t node = 1; node < n; ++node) {
    const int par = topo.parent[node];
    if (par == 0) {
      topo.claim_replies.push_back(static_cast<int>(node));
    } else {
      topo.post_neighbors[node].push_back(par);
      topo.post_neighbors[par].push_back(static_cast<int>(node));
    }
  }
  return topo;
}

void validate_tree(const ConversationTree& tree) {
  if (tree.claim_id.empty()) throw Error(ErrorKind::kStructural, "tree with empty claim id");
  build_topology(tree);
  for (std::size_t i = 0; i < tree.posts.size(); ++i) {
    const auto& p = tree.posts[i];
    if (p.timestamp < tree.claim_timestamp)
      throw Error(ErrorKind::kStructural, "claim " + tree.claim_id + ": post '" + p.id +
                                              "' predates the claim");
    if (i > 0 && p.timestamp < tree.posts[i - 1].timestamp)
      throw Error(ErrorKind::kStructural, "claim " + tree.claim_id + ": post '" + p.id +
                                              "' is out of chronological order");
  }
}

std::string structural_prefix(const std::string& node_id, const std::string& parent_id,
                              const std::string& text) {
  return node_id + " replied to " + parent_id + ": " + text;
}

}  // namespace stancemil
