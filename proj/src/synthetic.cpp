#include "stancemil/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>

#include "stancemil/error.hpp"

namespace stancemil {

namespace {

const std::map<std::string, std::vector<std::string>>& cue_table() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"S", {"confirmed", "true", "agree", "verified", "legit", "accurate"}},
      {"D", {"fake", "false", "hoax", "debunked", "lies", "wrong"}},
      {"Q", {"really", "source", "proof", "why", "unclear", "evidence"}},
      {"C", {"lol", "interesting", "wow", "watching", "thoughts", "noted"}},
  };
  return table;
}

const std::map<std::string, std::vector<std::string>>& template_table() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"S", {"{c}! {c} report on the {t}", "this is {c}, {c} by people near the {t}", "{c} and {c}: the {t} happened"}},
      {"D", {"{c}, the {t} story is {c}", "this {t} claim is {c} and {c}", "{c} {c} nonsense about the {t}"}},
      {"Q", {"{c}? any {c} on the {t}", "is the {t} {c}? need {c}", "{c} {c} for this {t}?"}},
      {"C", {"{c} {c} the {t} again", "{c}, {c} on the {t} thread", "just {c} {c} {t}"}},
  };
  return table;
}

const std::vector<std::string> kSubjects{"mayor",   "airport", "stadium", "hospital", "senator", "bank",
                                         "river",   "school",  "factory", "museum",   "bridge",  "harbor",
                                         "railway", "market",  "library", "embassy"};
const std::vector<std::string> kEvents{"closure", "fire",     "evacuation", "scandal",  "outage",  "flood",
                                       "strike",  "lockdown", "collapse",   "shooting", "protest", "recall"};
const std::vector<std::string> kPlaces{"downtown", "uptown", "north side", "east end", "old town", "west bank",
                                       "harbour district", "city centre"};
const std::vector<std::string> kFiller{"the", "this", "now", "today", "here", "people", "everyone", "tonight"};

std::string fill_template(const std::string& tmpl, const std::vector<std::string>& cues, const std::string& topic,
                          std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, cues.size() - 1);
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl.compare(i, 3, "{c}") == 0) {
      out += cues[pick(rng)];
      i += 2;
    } else if (tmpl.compare(i, 3, "{t}") == 0) {
      out += topic;
      i += 2;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

std::size_t sample(const std::vector<double>& weights, std::mt19937_64& rng) {
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(rng);
}

void check_row(const std::vector<double>& row, std::size_t size, const std::string& what) {
  if (row.size() != size) throw Error(ErrorKind::kConfig, what + " has the wrong length");
  double total = 0.0;
  for (double w : row) {
    if (!(w >= 0.0)) throw Error(ErrorKind::kConfig, what + " has a negative or non-finite weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::kConfig, what + " must sum to 1");
}

const std::map<std::string, std::string>& claim_cue_table() {
  static const std::map<std::string, std::string> table{
      {"N", "City council announces"},
      {"T", "Officials confirm"},
      {"F", "Viral post alleges"},
      {"U", "Unverified reports say"},
      {"R", "Rumour spreading that"},
  };
  return table;
}

}  // namespace

const std::string& veracity_cue_phrase(const std::string& veracity) {
  static const std::string kNone;
  auto it = claim_cue_table().find(veracity);
  return it == claim_cue_table().end() ? kNone : it->second;
}

const std::vector<std::string>& stance_cue_words(const std::string& stance) {
  static const std::vector<std::string> kNone;
  auto it = cue_table().find(stance);
  return it == cue_table().end() ? kNone : it->second;
}

std::vector<std::vector<double>> default_stance_mixture(const Vocabulary& veracity, const Vocabulary& stance) {
  static const std::map<std::string, std::pair<std::string, double>> salient{
      {"F", {"D", 0.6}}, {"T", {"S", 0.6}}, {"U", {"Q", 0.4}}, {"N", {"C", 0.7}}};
  const std::size_t ns = stance.size();
  std::vector<std::vector<double>> rows;
  for (const auto& v : veracity.codes()) {
    std::vector<double> row(ns, 1.0 / static_cast<double>(ns));
    auto it = salient.find(v);
    if (it != salient.end() && ns > 1) {
      if (auto s = stance.find(it->second.first)) {
        const double rest = (1.0 - it->second.second) / static_cast<double>(ns - 1);
        std::fill(row.begin(), row.end(), rest);
        row[*s] = it->second.second;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

void SyntheticConfig::validate() const {
  if (trees == 0) throw Error(ErrorKind::kConfig, "synthetic corpus needs at least one tree");
  if (min_posts < 0 || max_posts < min_posts) throw Error(ErrorKind::kConfig, "invalid post-count range");
  if (!class_priors.empty()) check_row(class_priors, veracity.size(), "class_priors");
  if (!stance_mixture.empty()) {
    if (stance_mixture.size() != veracity.size())
      throw Error(ErrorKind::kConfig, "stance_mixture needs one row per veracity label");
    for (std::size_t v = 0; v < stance_mixture.size(); ++v)
      check_row(stance_mixture[v], stance.size(), "stance_mixture row " + veracity.code(v));
  }
  if (!(reply_to_claim >= 0.0 && reply_to_claim <= 1.0))
    throw Error(ErrorKind::kConfig, "reply_to_claim must lie in [0,1]");
  if (!(claim_cue_rate >= 0.0 && claim_cue_rate <= 1.0))
    throw Error(ErrorKind::kConfig, "claim_cue_rate must lie in [0,1]");
  for (const auto& s : stance.codes())
    if (stance_cue_words(s).empty())
      throw Error(ErrorKind::kConfig, "no post templates for stance code '" + s + "'");
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  if (j.contains("veracity")) c.veracity = Vocabulary(j.at("veracity").get<std::vector<std::string>>());
  if (j.contains("stance")) c.stance = Vocabulary(j.at("stance").get<std::vector<std::string>>());
  c.trees = j.value("trees", c.trees);
  c.min_posts = j.value("min_posts", c.min_posts);
  c.max_posts = j.value("max_posts", c.max_posts);
  c.reply_to_claim = j.value("reply_to_claim", c.reply_to_claim);
  c.claim_cue_rate = j.value("claim_cue_rate", c.claim_cue_rate);
  c.id_prefix = j.value("id_prefix", c.id_prefix);
  if (j.contains("class_priors")) c.class_priors = j.at("class_priors").get<std::vector<double>>();
  if (j.contains("stance_mixture")) {
    const auto& m = j.at("stance_mixture");
    if (m.is_object()) {
      // {"F": {"D": 0.6, ...}, ...}
      c.stance_mixture.assign(c.veracity.size(), std::vector<double>(c.stance.size(), 0.0));
      for (auto it = m.begin(); it != m.end(); ++it) {
        const std::size_t v = c.veracity.index_of(it.key(), "veracity");
        for (auto jt = it.value().begin(); jt != it.value().end(); ++jt)
          c.stance_mixture[v][c.stance.index_of(jt.key(), "stance")] = jt.value().get<double>();
      }
      const auto defaults = default_stance_mixture(c.veracity, c.stance);
      for (std::size_t v = 0; v < c.veracity.size(); ++v)
        if (!m.contains(c.veracity.code(v))) c.stance_mixture[v] = defaults[v];
    } else {
      c.stance_mixture = m.get<std::vector<std::vector<double>>>();
    }
  }
  c.validate();
  return c;
}

nlohmann::ordered_json SyntheticConfig::to_json() const {
  nlohmann::ordered_json j;
  j["trees"] = trees;
  j["min_posts"] = min_posts;
  j["max_posts"] = max_posts;
  j["veracity"] = veracity.codes();
  j["stance"] = stance.codes();
  j["class_priors"] = class_priors;
  j["stance_mixture"] = stance_mixture.empty() ? default_stance_mixture(veracity, stance) : stance_mixture;
  j["reply_to_claim"] = reply_to_claim;
  j["claim_cue_rate"] = claim_cue_rate;
  j["id_prefix"] = id_prefix;
  return j;
}

std::vector<ConversationTree> generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  const auto mixture = config.stance_mixture.empty() ? default_stance_mixture(config.veracity, config.stance)
                                                     : config.stance_mixture;
  const auto priors = config.class_priors.empty()
                          ? std::vector<double>(config.veracity.size(), 1.0 / static_cast<double>(config.veracity.size()))
                          : config.class_priors;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> post_count(config.min_posts, config.max_posts);
  std::uniform_int_distribution<int> gap(1, 600);
  std::bernoulli_distribution to_claim(config.reply_to_claim);
  std::bernoulli_distribution claim_cue(config.claim_cue_rate);
  auto pick = [&](const std::vector<std::string>& words) {
    return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
  };

  std::vector<ConversationTree> trees;
  trees.reserve(config.trees);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(config.trees).size()));
  for (std::size_t t = 0; t < config.trees; ++t) {
    ConversationTree tree;
    char id[32];
    std::snprintf(id, sizeof(id), "%0*zu", width, t);
    tree.claim_id = config.id_prefix + id;
    const std::size_t v = sample(priors, rng);
    tree.gold_veracity = config.veracity.code(v);
    const std::string subject = pick(kSubjects), event = pick(kEvents);
    const std::string topic = subject + " " + event;
    const std::string& cue = veracity_cue_phrase(*tree.gold_veracity);
    const std::string opener = claim_cue(rng) && !cue.empty() ? cue : std::string("Breaking:");
    tree.claim_text = opener + " " + subject + " " + event + " reported in the " + pick(kPlaces) + " " +
                      pick(kFiller);
    tree.claim_timestamp = 1'600'000'000 + static_cast<std::int64_t>(t) * 10'000;
    const int n = post_count(rng);
    std::int64_t ts = tree.claim_timestamp;
    for (int i = 0; i < n; ++i) {
      Post post;
      post.id = tree.claim_id + "-p" + std::to_string(i + 1);
      if (i == 0 || to_claim(rng)) {
        post.parent_id = tree.claim_id;
      } else {
        post.parent_id = tree.posts[std::uniform_int_distribution<int>(0, i - 1)(rng)].id;
      }
      ts += gap(rng);
      post.timestamp = ts;
      const std::size_t s = sample(mixture[v], rng);
      const std::string& code = config.stance.code(s);
      post.gold_stance = code;
      const auto& templates = template_table().at(code);
      post.text = fill_template(pick(templates), stance_cue_words(code), topic, rng);
      tree.posts.push_back(std::move(post));
    }
    trees.push_back(std::move(tree));
  }
  return trees;
}

}  // namespace stancemil
