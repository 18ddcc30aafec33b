#include "stancemil/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

namespace stancemil {

using nlohmann::json;
namespace fs = std::filesystem;

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  if (j.contains("veracity_vocab")) c.veracity = Vocabulary(j.at("veracity_vocab").get<std::vector<std::string>>());
  if (j.contains("stance_vocab")) c.stance = Vocabulary(j.at("stance_vocab").get<std::vector<std::string>>());
  if (j.contains("stance_mapping"))
    c.stance_mapping = j.at("stance_mapping").get<std::map<std::string, std::string>>();
  if (j.contains("veracity_mapping"))
    c.veracity_mapping = j.at("veracity_mapping").get<std::map<std::string, std::string>>();
  c.max_posts = j.value("max_posts", c.max_posts);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.seed = j.value("seed", c.seed);
  if (c.max_posts < 1) throw Error(ErrorKind::kConfig, "max_posts must be >= 1");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0))
    throw Error(ErrorKind::kConfig, "validation_fraction must lie in (0, 1)");
  for (const auto& [from, to] : c.stance_mapping) c.stance.index_of(to, "stance mapping target");
  for (const auto& [from, to] : c.veracity_mapping)
    c.veracity.index_of(to, "veracity mapping target");
  return c;
}

nlohmann::ordered_json DatasetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["veracity_vocab"] = veracity.codes();
  j["stance_vocab"] = stance.codes();
  j["stance_mapping"] = stance_mapping;
  j["veracity_mapping"] = veracity_mapping;
  j["max_posts"] = max_posts;
  j["validation_fraction"] = validation_fraction;
  j["seed"] = seed;
  return j;
}

std::string DatasetConfig::map_stance(const std::string& raw) const {
  auto it = stance_mapping.find(raw);
  const std::string& code = it == stance_mapping.end() ? raw : it->second;
  stance.index_of(code, "stance label");
  return code;
}

std::string DatasetConfig::map_veracity(const std::string& raw) const {
  auto it = veracity_mapping.find(raw);
  const std::string& code = it == veracity_mapping.end() ? raw : it->second;
  veracity.index_of(code, "veracity label");
  return code;
}

DatasetSchema parse_schema(const std::string& name) {
  if (name == "canonical" || name == "jsonl") return DatasetSchema::kCanonical;
  if (name == "pheme") return DatasetSchema::kPheme;
  throw Error(ErrorKind::kUsage, "unknown dataset schema '" + name + "'");
}

namespace {

template <typename T>
T field(const json& obj, const char* name, const std::string& record) {
  auto it = obj.find(name);
  if (it == obj.end()) throw Error(ErrorKind::kParse, "record " + record + ": missing field '" + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kParse, "record " + record + ": field '" + name + "' has the wrong type");
  }
}

std::optional<std::string> optional_label(const json& obj, const char* name,
                                          const std::string& record) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string())
    throw Error(ErrorKind::kParse, "record " + record + ": field '" + name + "' must be a string or null");
  return it->get<std::string>();
}

LoadResult load_canonical(const fs::path& path, const DatasetConfig& config, LoadOptions options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open dataset file " + path.string());
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string record = "line " + std::to_string(lineno);
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw Error(ErrorKind::kParse, record + ": " + e.what());
      }
      if (j.is_object() && j.contains("claim_id") && j["claim_id"].is_string())
        record = j["claim_id"].get<std::string>();
      result.trees.push_back(parse_tree_record(j, config));
    } catch (const Error& e) {
      if (options.strict) throw;
      result.diagnostics.push_back({record, e.kind(), e.what()});
      spdlog::warn("rejected record {}: {}", record, e.what());
    }
  }
  return result;
}

// PHEME rumour/non-rumour thread layout:
//   <root>/<event>/{rumours,non-rumours}/<thread>/source-tweets/<id>.json
//   <root>/<event>/{rumours,non-rumours}/<thread>/reactions/<id>.json
//   <root>/<event>/rumours/<thread>/annotation.json
std::int64_t parse_twitter_time(const std::string& s) {
  std::tm tm{};
  std::istringstream ss(s);
  ss >> std::get_time(&tm, "%a %b %d %H:%M:%S +0000 %Y");
  if (ss.fail()) return 0;
  return static_cast<std::int64_t>(timegm(&tm));
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, p.string() + ": " + e.what());
  }
}

std::string tweet_id(const json& t) {
  if (t.contains("id_str")) return t["id_str"].get<std::string>();
  return std::to_string(t.at("id").get<std::int64_t>());
}

std::string pheme_veracity(const fs::path& thread, bool rumour) {
  if (!rumour) return "N";
  const auto ann_path = thread / "annotation.json";
  if (!fs::exists(ann_path)) return "U";
  const json ann = read_json_file(ann_path);
  auto flag = [&](const char* key) {
    if (!ann.contains(key)) return false;
    const auto& v = ann[key];
    if (v.is_string()) return v.get<std::string>() == "1";
    if (v.is_number()) return v.get<int>() == 1;
    return false;
  };
  if (flag("misinformation")) return "F";
  if (flag("true")) return "T";
  return "U";
}

ConversationTree load_pheme_thread(const fs::path& thread, bool rumour, const DatasetConfig& config) {
  ConversationTree tree;
  const auto src_dir = thread / "source-tweets";
  json source;
  for (const auto& e : fs::directory_iterator(src_dir))
    if (e.path().extension() == ".json") source = read_json_file(e.path());
  if (source.is_null())
    throw Error(ErrorKind::kParse, "thread " + thread.filename().string() + ": missing source tweet");
  tree.claim_id = tweet_id(source);
  tree.claim_text = source.value("text", "");
  tree.claim_timestamp = parse_twitter_time(source.value("created_at", ""));
  tree.gold_veracity = config.map_veracity(pheme_veracity(thread, rumour));

  std::vector<json> reactions;
  const auto rx_dir = thread / "reactions";
  if (fs::exists(rx_dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(rx_dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      json t = read_json_file(f);
      if (tweet_id(t) != tree.claim_id) reactions.push_back(std::move(t));
    }
  }
  std::unordered_set<std::string> ids{tree.claim_id};
  for (const auto& t : reactions) ids.insert(tweet_id(t));
  for (const auto& t : reactions) {
    Post p;
    p.id = tweet_id(t);
    p.text = t.value("text", "");
    p.timestamp = std::max(parse_twitter_time(t.value("created_at", "")), tree.claim_timestamp);
    std::string parent;
    if (t.contains("in_reply_to_status_id_str") && t["in_reply_to_status_id_str"].is_string())
      parent = t["in_reply_to_status_id_str"].get<std::string>();
    // Replies to deleted tweets attach to the claim.
    p.parent_id = ids.count(parent) ? parent : tree.claim_id;
    tree.posts.push_back(std::move(p));
  }
  std::stable_sort(tree.posts.begin(), tree.posts.end(),
                   [](const Post& a, const Post& b) { return a.timestamp < b.timestamp; });
  validate_tree(tree);
  return tree;
}

LoadResult load_pheme(const fs::path& root, const DatasetConfig& config, LoadOptions options) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::kIo, "not a directory: " + root.string());
  LoadResult result;
  std::vector<fs::path> events;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) events.push_back(e.path());
  std::sort(events.begin(), events.end());
  for (const auto& event : events) {
    for (const char* kind : {"rumours", "non-rumours"}) {
      const auto dir = event / kind;
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> threads;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) threads.push_back(e.path());
      std::sort(threads.begin(), threads.end());
      for (const auto& thread : threads) {
        try {
          result.trees.push_back(
              load_pheme_thread(thread, std::string(kind) == "rumours", config));
        } catch (const Error& e) {
          if (options.strict) throw;
          result.diagnostics.push_back({thread.filename().string(), e.kind(), e.what()});
          spdlog::warn("rejected thread {}: {}", thread.string(), e.what());
        }
      }
    }
  }
  return result;
}

}  // namespace

ConversationTree parse_tree_record(const json& j, const DatasetConfig& config) {
  if (!j.is_object()) throw Error(ErrorKind::kParse, "record is not a JSON object");
  ConversationTree tree;
  tree.claim_id = field<std::string>(j, "claim_id", "?");
  const std::string& rec = tree.claim_id;
  tree.claim_text = field<std::string>(j, "claim_text", rec);
  tree.claim_timestamp = field<std::int64_t>(j, "claim_ts", rec);
  if (auto v = optional_label(j, "veracity", rec)) tree.gold_veracity = config.map_veracity(*v);
  const auto posts = j.find("posts");
  if (posts == j.end() || !posts->is_array())
    throw Error(ErrorKind::kParse, "record " + rec + ": field 'posts' must be an array");
  for (std::size_t i = 0; i < posts->size(); ++i) {
    const auto& pj = (*posts)[i];
    const std::string where = rec + " post[" + std::to_string(i) + "]";
    if (!pj.is_object()) throw Error(ErrorKind::kParse, "record " + where + " is not an object");
    Post p;
    p.id = field<std::string>(pj, "id", where);
    p.parent_id = field<std::string>(pj, "parent", where);
    p.text = field<std::string>(pj, "text", where);
    p.timestamp = field<std::int64_t>(pj, "ts", where);
    if (auto s = optional_label(pj, "stance", where)) p.gold_stance = config.map_stance(*s);
    tree.posts.push_back(std::move(p));
  }
  std::stable_sort(tree.posts.begin(), tree.posts.end(),
                   [](const Post& a, const Post& b) { return a.timestamp < b.timestamp; });
  validate_tree(tree);
  return tree;
}

nlohmann::ordered_json tree_to_json(const ConversationTree& tree) {
  nlohmann::ordered_json j;
  j["claim_id"] = tree.claim_id;
  j["claim_text"] = tree.claim_text;
  j["claim_ts"] = tree.claim_timestamp;
  j["veracity"] = tree.gold_veracity ? nlohmann::ordered_json(*tree.gold_veracity) : nullptr;
  j["posts"] = nlohmann::ordered_json::array();
  for (const auto& p : tree.posts) {
    nlohmann::ordered_json pj;
    pj["id"] = p.id;
    pj["parent"] = p.parent_id;
    pj["text"] = p.text;
    pj["ts"] = p.timestamp;
    pj["stance"] = p.gold_stance ? nlohmann::ordered_json(*p.gold_stance) : nullptr;
    j["posts"].push_back(std::move(pj));
  }
  return j;
}

void write_dataset(const fs::path& path, const std::vector<ConversationTree>& trees) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& t : trees) out << tree_to_json(t).dump() << '\n';
}

LoadResult load_dataset(const fs::path& path, DatasetSchema schema, const DatasetConfig& config,
                        LoadOptions options) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "dataset path does not exist: " + path.string());
  switch (schema) {
    case DatasetSchema::kCanonical: return load_canonical(path, config, options);
    case DatasetSchema::kPheme: return load_pheme(path, config, options);
  }
  throw Error(ErrorKind::kInternal, "unhandled schema");
}

std::string normalize_whitespace(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

ConversationTree remove_posts(const ConversationTree& tree, const std::vector<bool>& remove) {
  if (remove.size() != tree.posts.size())
    throw Error(ErrorKind::kShape, "removal mask does not match post count");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < tree.posts.size(); ++i) index.emplace(tree.posts[i].id, i);

  // Nearest surviving ancestor of a node id.
  auto surviving = [&](std::string id) {
    while (true) {
      auto it = index.find(id);
      if (it == index.end() || !remove[it->second]) return id;
      id = tree.posts[it->second].parent_id;
    }
  };

  ConversationTree out = tree;
  out.posts.clear();
  for (std::size_t i = 0; i < tree.posts.size(); ++i) {
    if (remove[i]) continue;
    Post p = tree.posts[i];
    p.parent_id = surviving(p.parent_id);
    out.posts.push_back(std::move(p));
  }
  return out;
}

ConversationTree preprocess_tree(const ConversationTree& tree, int max_posts) {
  if (max_posts < 1) throw Error(ErrorKind::kParameter, "max_posts must be >= 1");
  ConversationTree normalized = tree;
  normalized.claim_text = normalize_whitespace(tree.claim_text);
  for (auto& p : normalized.posts) p.text = normalize_whitespace(p.text);

  std::vector<bool> remove(normalized.posts.size(), false);
  for (std::size_t i = 0; i < normalized.posts.size(); ++i) {
    const auto& text = normalized.posts[i].text;
    remove[i] = text.empty() || text == normalized.claim_text;
  }
  ConversationTree filtered = remove_posts(normalized, remove);

  // Posts are kept chronologically sorted, so the earliest are a prefix.
  std::vector<std::size_t> order(filtered.posts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return filtered.posts[a].timestamp < filtered.posts[b].timestamp;
  });
  std::vector<bool> drop(filtered.posts.size(), false);
  for (std::size_t r = static_cast<std::size_t>(max_posts); r < order.size(); ++r) drop[order[r]] = true;
  ConversationTree out = remove_posts(filtered, drop);
  if (out.posts.empty() && !tree.posts.empty())
    spdlog::warn("claim {}: preprocessing removed every post", tree.claim_id);
  return out;
}

ConversationTree delete_random_posts(const ConversationTree& tree, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw Error(ErrorKind::kParameter, "deletion ratio must lie in [0, 1)");
  const std::size_t n = tree.posts.size();
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (count == 0) return tree;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> remove(n, false);
  for (std::size_t i = 0; i < count; ++i) remove[order[i]] = true;
  return remove_posts(tree, remove);
}

DatasetSplit split_validation(const std::vector<ConversationTree>& trees, double fraction,
                              std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw Error(ErrorKind::kParameter, "validation fraction must lie in (0, 1)");

  // Strata in first-appearance order of the gold label; unlabeled trees form
  // their own stratum.
  std::vector<std::string> keys;
  std::unordered_map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    const std::string key = trees[i].gold_veracity.value_or("");
    auto [it, fresh] = strata.try_emplace(key);
    if (fresh) keys.push_back(key);
    it->second.push_back(i);
  }

  // Largest-remainder allocation of round(fraction * n) validation trees.
  std::vector<std::size_t> eligible;
  for (std::size_t s = 0; s < keys.size(); ++s) {
    if (strata[keys[s]].size() < 2)
      spdlog::warn("class '{}' has a single tree; it is placed entirely in test", keys[s]);
    else
      eligible.push_back(s);
  }
  std::size_t eligible_total = 0;
  for (auto s : eligible) eligible_total += strata[keys[s]].size();
  const auto target =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(eligible_total)));
  std::vector<std::size_t> quota(keys.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (auto s : eligible) {
    const double exact = fraction * static_cast<double>(strata[keys[s]].size());
    quota[s] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[s];
    remainders.emplace_back(exact - std::floor(exact), s);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < target && r < remainders.size(); ++r, ++assigned)
    ++quota[remainders[r].second];
  for (auto s : eligible) {
    if (quota[s] == 0)
      throw Error(ErrorKind::kParameter,
                  "validation fraction " + std::to_string(fraction) +
                      " yields no validation tree for class '" + keys[s] + "'");
  }

  std::mt19937_64 rng(seed);
  std::vector<bool> in_validation(trees.size(), false);
  for (std::size_t s = 0; s < keys.size(); ++s) {
    auto members = strata[keys[s]];
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < quota[s]; ++i) in_validation[members[i]] = true;
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < trees.size(); ++i)
    (in_validation[i] ? split.validation : split.test).push_back(trees[i]);
  return split;
}

}  // namespace stancemil
