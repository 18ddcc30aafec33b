#include <doctest.h>

#include <fstream>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "stancemil/dataset.hpp"
#include "stancemil/error.hpp"
#include "stancemil/labels.hpp"
#include "stancemil/tree.hpp"

using namespace stancemil;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInternal;
}

}  // namespace

TEST_SUITE("data_model") {
  TEST_CASE("target pairs for the three vocabularies") {
    const Vocabulary s = default_stance_vocabulary();
    CHECK(enumerate_target_pairs(default_veracity_vocabulary(), s).size() == 16);
    CHECK(enumerate_target_pairs(Vocabulary({"T", "F", "U"}), s).size() == 12);
    CHECK(enumerate_target_pairs(Vocabulary({"R", "N"}), s).size() == 8);
  }

  TEST_CASE("target pairs are a veracity-major bijection") {
    const Vocabulary v = default_veracity_vocabulary(), s = default_stance_vocabulary();
    const auto pairs = enumerate_target_pairs(v, s);
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      CHECK(pairs[k].index == k);
      CHECK(pairs[k].veracity_index == k / s.size());
      CHECK(pairs[k].stance_index == k % s.size());
      CHECK(pairs[k].veracity == v.code(pairs[k].veracity_index));
      seen.emplace(pairs[k].veracity, pairs[k].stance);
    }
    CHECK(seen.size() == 16);
    CHECK(kind_of([] { Vocabulary({"S", "D", "S"}); }) == ErrorKind::kConfig);
  }

  TEST_CASE("binarized veracity labels") {
    const Vocabulary v = default_veracity_vocabulary();
    const auto pairs = enumerate_target_pairs(v, default_stance_vocabulary());
    auto pair = [&](const std::string& r, const std::string& s) {
      for (const auto& p : pairs)
        if (p.veracity == r && p.stance == s) return p;
      throw std::logic_error("no pair");
    };
    CHECK(binarize_veracity_label("T", pair("T", "S"), v) == 1);
    CHECK(binarize_veracity_label("F", pair("T", "S"), v) == 0);
    CHECK(binarize_veracity_label("N", pair("N", "C"), v) == 1);
    CHECK(kind_of([&] { binarize_veracity_label("R", pair("T", "S"), v); }) == ErrorKind::kLabel);

    // Exactly one veracity matches within each stance group; N_s over all pairs.
    const auto groups = group_by_stance(pairs, 4);
    for (const auto& gold : v.codes()) {
      int total = 0;
      for (const auto& g : groups) {
        int in_group = 0;
        for (auto k : g) in_group += binarize_veracity_label(gold, pairs[k], v);
        CHECK(in_group == 1);
        total += in_group;
      }
      CHECK(total == 4);
    }
  }

  TEST_CASE("structural prefix") {
    CHECK(structural_prefix("t_1", "c", "I was there") == "t_1 replied to c: I was there");
    CHECK(structural_prefix("t_2", "t_1", "source?") == "t_2 replied to t_1: source?");
  }

  TEST_CASE("topology: every post has one parent and DFS reaches all") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const auto tree = fixtures::random_tree(1 + trial % 12, rng);
      validate_tree(tree);
      const auto topo = build_topology(tree);
      CHECK(topo.node_count() == tree.posts.size() + 1);
      std::size_t edges = 0;
      for (const auto& c : topo.children) edges += c.size();
      CHECK(edges == tree.posts.size());
      std::vector<int> stack{0}, seen(topo.node_count(), 0);
      while (!stack.empty()) {
        int n = stack.back();
        stack.pop_back();
        seen[n]++;
        for (int c : topo.children[n]) stack.push_back(c);
      }
      for (int s : seen) CHECK(s == 1);
      // Undirected post neighborhoods never contain the claim.
      for (std::size_t i = 1; i < topo.node_count(); ++i)
        for (int j : topo.post_neighbors[i]) CHECK(j != 0);
    }
  }

  TEST_CASE("tree validation errors name the post") {
    auto tree = fixtures::chain(3);
    tree.posts[1].parent_id = "ghost";
    try {
      validate_tree(tree);
      FAIL("expected structural error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kStructural);
      CHECK(std::string(e.what()).find("c-t2") != std::string::npos);
    }
    auto cyc = fixtures::chain(3);
    cyc.posts[0].parent_id = cyc.posts[2].id;
    CHECK(kind_of([&] { validate_tree(cyc); }) == ErrorKind::kStructural);
  }

  TEST_CASE("canonical loading") {
    fixtures::TempDir dir("load");
    const auto path = dir.path / "d.jsonl";
    {
      std::ofstream out(path);
      out << R"({"claim_id":"a","claim_text":"x happened","claim_ts":1,"veracity":"T","posts":[)"
          << R"({"id":"a1","parent":"a","text":"yes","ts":2,"stance":"S"},)"
          << R"({"id":"a2","parent":"a1","text":"no","ts":3,"stance":"D"},)"
          << R"({"id":"a3","parent":"a","text":"why","ts":4,"stance":null}]})"
          << "\n";
      out << R"({"claim_id":"b","claim_text":"y","claim_ts":1,"veracity":"F","posts":[)"
          << R"({"id":"b1","parent":"nope","text":"hm","ts":2,"stance":"S"}]})"
          << "\n";
      out << R"({"claim_id":"c","claim_text":"z","claim_ts":1,"veracity":"Q","posts":[]})" << "\n";
      out << "{not json\n";
    }
    DatasetConfig cfg;
    auto result = load_dataset(path, DatasetSchema::kCanonical, cfg);
    REQUIRE(result.trees.size() == 1);
    CHECK(result.trees[0].posts.size() == 3);
    CHECK(build_topology(result.trees[0]).parent[2] == 1);
    REQUIRE(result.diagnostics.size() == 3);
    CHECK(result.diagnostics[0].kind == ErrorKind::kStructural);
    CHECK(result.diagnostics[0].message.find("b1") != std::string::npos);
    CHECK(result.diagnostics[1].kind == ErrorKind::kVocabulary);
    CHECK(result.diagnostics[2].kind == ErrorKind::kParse);
    CHECK(kind_of([&] { load_dataset(path, DatasetSchema::kCanonical, cfg, LoadOptions{true}); }) ==
          ErrorKind::kStructural);

    // Round trip through the writer.
    write_dataset(dir.path / "out.jsonl", result.trees);
    auto again = load_dataset(dir.path / "out.jsonl", DatasetSchema::kCanonical, cfg);
    REQUIRE(again.trees.size() == 1);
    CHECK(again.trees[0] == result.trees[0]);
  }

  TEST_CASE("stance mapping table") {
    fixtures::TempDir dir("map");
    const auto path = dir.path / "d.jsonl";
    std::ofstream(path) << R"({"claim_id":"a","claim_text":"x","claim_ts":1,"veracity":"true","posts":[)"
                        << R"({"id":"a1","parent":"a","text":"yes","ts":2,"stance":"agreed"}]})"
                        << "\n";
    DatasetConfig cfg = DatasetConfig::from_json(
        {{"stance_mapping", {{"agreed", "S"}, {"disagreed", "D"}}}, {"veracity_mapping", {{"true", "T"}}}});
    auto result = load_dataset(path, DatasetSchema::kCanonical, cfg);
    REQUIRE(result.trees.size() == 1);
    CHECK(result.trees[0].gold_veracity == "T");
    CHECK(result.trees[0].posts[0].gold_stance == "S");
  }

  TEST_CASE("retweet filter, truncation and idempotence") {
    auto tree = fixtures::chain(4);
    tree.posts[1].text = "  officials confirm the bridge   closure downtown ";
    auto out = preprocess_tree(tree, 3500);
    REQUIRE(out.posts.size() == 3);
    CHECK(out.posts[1].id == "c-t3");
    CHECK(out.posts[1].parent_id == "c-t1");  // re-parented over the removed retweet
    validate_tree(out);
    CHECK(preprocess_tree(out, 3500) == out);

    auto clean = fixtures::chain(5);
    CHECK(preprocess_tree(clean, 5) == clean);

    std::vector<int> parents(4000, -1);
    auto big = fixtures::make_tree(parents);
    for (std::size_t i = 0; i < big.posts.size(); ++i) big.posts[i].text = "reply " + std::to_string(i);
    auto cut = preprocess_tree(big, 3500);
    REQUIRE(cut.posts.size() == 3500);
    CHECK(cut.posts.back().id == big.posts[3499].id);

    auto all_retweets = fixtures::chain(2);
    for (auto& p : all_retweets.posts) p.text = all_retweets.claim_text;
    CHECK(preprocess_tree(all_retweets, 10).posts.empty());
    CHECK(kind_of([&] { preprocess_tree(clean, 0); }) == ErrorKind::kParameter);
  }

  TEST_CASE("random post deletion keeps a valid tree") {
    std::mt19937_64 rng(5);
    auto tree = fixtures::random_tree(20, rng);
    CHECK(delete_random_posts(tree, 0.0, 1) == tree);
    auto cut = delete_random_posts(tree, 0.3, 1);
    CHECK(cut.posts.size() == 14);
    validate_tree(cut);
    CHECK(delete_random_posts(tree, 0.3, 1) == cut);
    CHECK(kind_of([&] { delete_random_posts(tree, 1.0, 1); }) == ErrorKind::kParameter);
  }

  TEST_CASE("stratified validation split") {
    std::vector<ConversationTree> trees;
    const char* labels[] = {"N", "T", "F", "U"};
    for (int i = 0; i < 100; ++i) trees.push_back(fixtures::make_tree({-1}, "c" + std::to_string(i), labels[i % 4]));
    auto a = split_validation(trees, 0.30, 9);
    auto b = split_validation(trees, 0.30, 9);
    CHECK(a.validation.size() == 30);
    CHECK(a.test.size() == 70);
    CHECK(a.train.empty());
    std::map<std::string, int> per_class;
    std::set<std::string> ids;
    for (const auto& t : a.validation) {
      per_class[*t.gold_veracity]++;
      ids.insert(t.claim_id);
    }
    for (const auto& [label, n] : per_class) CHECK((n == 7 || n == 8));
    for (const auto& t : a.test) CHECK(ids.count(t.claim_id) == 0);
    REQUIRE(a.validation.size() == b.validation.size());
    for (std::size_t i = 0; i < a.validation.size(); ++i) CHECK(a.validation[i].claim_id == b.validation[i].claim_id);
    CHECK(kind_of([&] { split_validation(trees, 0.001, 9); }) == ErrorKind::kParameter);
    CHECK(kind_of([&] { split_validation(trees, 0.0, 9); }) == ErrorKind::kParameter);
  }

  TEST_CASE("single-tree class goes entirely to test") {
    std::vector<ConversationTree> trees;
    for (int i = 0; i < 10; ++i) trees.push_back(fixtures::make_tree({-1}, "t" + std::to_string(i), "T"));
    trees.push_back(fixtures::make_tree({-1}, "lonely", "U"));
    auto split = split_validation(trees, 0.3, 1);
    for (const auto& t : split.validation) CHECK(t.claim_id != "lonely");
  }
}
