#include <doctest.h>

#include <map>
#include <set>
#include <random>

#include "fixtures.hpp"
#include "model_fixture.hpp"
#include "oracle.hpp"
#include "stancemil/error.hpp"
#include "stancemil/mil.hpp"

using namespace stancemil;

namespace {

bool on_simplex(const Vector& v, double tol = 1e-12) {
  if (std::abs(v.sum() - 1.0) > tol) return false;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) < 0.0 || v(i) > 1.0) return false;
  return true;
}

double max_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::vector<Vector> random_vectors(std::size_t n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(d);
    for (int j = 0; j < d; ++j) v(j) = g(rng);
    out.push_back(v);
  }
  return out;
}

// Same tree with fresh post ids, listed (and timestamped) in a random order that
// still puts parents first.
ConversationTree relabeled(const ConversationTree& tree, std::mt19937_64& rng, std::vector<std::size_t>& order) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < tree.posts.size(); ++i) index[tree.posts[i].id] = i;
  std::vector<bool> placed(tree.posts.size(), false);
  order.clear();
  while (order.size() < tree.posts.size()) {
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < tree.posts.size(); ++i) {
      if (placed[i]) continue;
      const auto& parent = tree.posts[i].parent_id;
      if (parent == tree.claim_id || placed[index.at(parent)]) ready.push_back(i);
    }
    const std::size_t pick = ready[rng() % ready.size()];
    placed[pick] = true;
    order.push_back(pick);
  }
  auto rename = [&](const std::string& id) { return id == tree.claim_id ? id : "x" + std::to_string(index.at(id) * 7 + 3); };
  ConversationTree out = tree;
  out.posts.clear();
  for (std::size_t i : order) {
    Post p = tree.posts[i];
    p.id = rename(p.id);
    p.parent_id = rename(p.parent_id);
    p.timestamp = 101 + static_cast<std::int64_t>(out.posts.size());
    out.posts.push_back(p);
  }
  return out;
}

// p-tilde rebuilt from the local attention rows.
std::vector<Vector> smoothed(const BinaryOutput& out, double lambda) {
  std::vector<Vector> pt = out.stance;
  for (const auto& row : out.local_rows) {
    Vector mixed = Vector::Zero(2);
    for (std::size_t j = 0; j < row.neighbors.size(); ++j) mixed += row.weights[j] * out.stance[row.neighbors[j] - 1];
    pt[row.node - 1] = lambda * out.stance[row.node - 1] + (1.0 - lambda) * mixed;
  }
  return pt;
}

}  // namespace

TEST_SUITE("mil_core") {
  TEST_CASE("classifier outputs are distributions") {
    auto s = model_fixture::make_setup(1);
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
      const auto tree = fixtures::random_tree(1 + t % 9, rng, "c" + std::to_string(t));
      const auto enc = model_fixture::encode(s, tree);
      for (std::size_t k = 0; k < s.classifiers.size(); k += 5) {
        const auto out = s.classifiers[k].predict(enc);
        CHECK(on_simplex(out.veracity));
        CHECK(on_simplex(out.delta));
        for (const auto& p : out.stance) CHECK(on_simplex(p));
        for (const auto& row : out.propagation_rows) CHECK(on_simplex(Eigen::Map<const Vector>(row.weights.data(), row.weights.size())));
        for (const auto& row : out.local_rows) CHECK(on_simplex(Eigen::Map<const Vector>(row.weights.data(), row.weights.size())));
      }
    }
  }

  TEST_CASE("forward matches the loop oracle") {
    auto s = model_fixture::make_setup(3, {}, {0.3, 0.5});
    std::mt19937_64 rng(4);
    for (int t = 0; t < 8; ++t) {
      const auto tree = fixtures::random_tree(2 + t, rng, "c" + std::to_string(t));
      const auto enc = model_fixture::encode(s, tree);
      for (const auto& clf : s.classifiers) {
        const auto got = clf.predict(enc);
        const auto want = oracle::forward_binary(clf, tree, enc);
        CHECK(max_diff(got.veracity, want.veracity) < 1e-9);
        CHECK(max_diff(got.delta, want.delta) < 1e-9);
        CHECK(max_diff(got.claim_summary, want.key) < 1e-9);
        for (std::size_t i = 0; i < got.stance.size(); ++i) CHECK(max_diff(got.stance[i], want.stance[i]) < 1e-9);
      }
    }
  }

  TEST_CASE("retention one keeps the inputs") {
    std::mt19937_64 rng(5);
    const auto tree = fixtures::random_tree(7, rng);
    const auto topo = build_topology(tree);
    const auto h = random_vectors(topo.node_count(), 4, rng);
    const auto prop = propagate_undirected(topo, h, 1.0);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(max_diff(prop.h_prime[i], h[i]) < 1e-15);

    std::vector<Vector> p{Vector()};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 1; i < topo.node_count(); ++i) {
      const double a = u(rng);
      p.push_back((Vector(2) << a, 1.0 - a).finished());
    }
    const auto ht = random_vectors(topo.node_count(), 6, rng);
    const auto local = local_attention(topo, ht, p, 1.0);
    for (std::size_t i = 1; i < p.size(); ++i) CHECK(max_diff(local.p_tilde[i], p[i]) < 1e-15);
    const auto half = local_attention(topo, ht, p, 0.5);
    for (std::size_t i = 1; i < p.size(); ++i) CHECK(on_simplex(half.p_tilde[i]));
  }

  TEST_CASE("isolated posts keep their own stance") {
    // Two direct replies to the claim: no post neighbors.
    const auto tree = fixtures::make_tree({-1, -1});
    const auto topo = build_topology(tree);
    std::mt19937_64 rng(6);
    const auto ht = random_vectors(3, 4, rng);
    std::vector<Vector> p{Vector(), (Vector(2) << 0.9, 0.1).finished(), (Vector(2) << 0.2, 0.8).finished()};
    const auto local = local_attention(topo, ht, p, 0.3);
    CHECK(max_diff(local.p_tilde[1], p[1]) == 0.0);
    CHECK(max_diff(local.p_tilde[2], p[2]) == 0.0);
    CHECK(local.rows.empty());
    // The claim attends over both replies.
    const auto prop = propagate_undirected(topo, random_vectors(3, 4, rng), 0.3);
    REQUIRE(prop.rows.size() == 1);
    CHECK(prop.rows[0].node == 0);
    CHECK(prop.rows[0].neighbors == std::vector<int>{1, 2});
  }

  TEST_CASE("global attention by hand") {
    // e = (1,0), (0,1), h_c = (ln 3, 0): weights 3/4 and 1/4.
    const std::vector<Vector> e{(Vector(2) << 1, 0).finished(), (Vector(2) << 0, 1).finished()};
    const Vector hc = (Vector(2) << std::log(3.0), 0).finished();
    const std::vector<Vector> p{(Vector(2) << 1, 0).finished(), (Vector(2) << 0, 1).finished()};
    const auto g = global_attention_veracity(e, hc, p);
    CHECK(g.delta(0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(g.veracity(0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(g.veracity(1) == doctest::Approx(0.25).epsilon(1e-12));
    try {
      global_attention_veracity({}, hc, {});
      FAIL("expected degenerate bag");
    } catch (const Error& err) {
      CHECK(err.kind() == ErrorKind::kInput);
    }
  }

  TEST_CASE("stance head by hand and shape checks") {
    const Vector ht = (Vector(4) << 1, 0, 0, 0).finished();
    const Vector hpc = (Vector(2) << 0, 0).finished();
    Matrix w1 = Matrix::Zero(2, 4), w2 = Matrix::Zero(2, 2);
    w1(0, 0) = std::log(4.0);
    const Vector b = Vector::Zero(2);
    const Vector p = stance_probability(ht, hpc, w1, w2, b);
    CHECK(p(0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS_AS(stance_probability(ht, hpc, Matrix::Zero(3, 4), w2, b), Error);
    CHECK(fuse_representations(hpc, hpc).size() == 4);
    try {
      fuse_representations(hpc, Vector::Zero(3));
      FAIL("expected shape error");
    } catch (const Error& err) {
      CHECK(err.kind() == ErrorKind::kShape);
    }
  }

  TEST_CASE("hyperparameters outside the unit interval are rejected") {
    for (double bad : {-0.1, 1.5, std::nan("")}) {
      CHECK_THROWS_AS(validate_hyper({bad, 0.5}), Error);
      CHECK_THROWS_AS(validate_hyper({0.5, bad}), Error);
    }
    validate_hyper({0.0, 1.0});
  }

  TEST_CASE("empty bag is degenerate") {
    auto s = model_fixture::make_setup(7);
    const auto tree = fixtures::make_tree({});
    const auto enc = model_fixture::encode(s, tree);
    const auto out = s.classifiers[0].predict(enc);
    CHECK(out.degenerate);
    CHECK(out.veracity(0) == 0.5);
    CHECK(out.stance.empty());
  }

  TEST_CASE("variant switches") {
    std::mt19937_64 rng(8);
    const auto tree = fixtures::random_tree(8, rng);

    // woo equals the full model at lambda = 1.
    auto woo = model_fixture::make_setup(9, variant_for(AblationCode::kWoo), {0.3, 0.5});
    auto full1 = model_fixture::make_setup(9, {}, {0.3, 1.0});
    const auto enc = model_fixture::encode(woo, tree);
    for (std::size_t k = 0; k < 16; ++k) {
      const auto a = woo.classifiers[k].predict(enc), b = full1.classifiers[k].predict(enc);
      CHECK(max_diff(a.veracity, b.veracity) < 1e-15);
      CHECK(a.local_rows.empty());
    }

    // wos equals the full model at rho = 1 (claim key unaffected either way).
    auto wos = model_fixture::make_setup(9, variant_for(AblationCode::kWos));
    auto rho1 = model_fixture::make_setup(9, {}, {1.0, 0.5});
    CHECK(max_diff(wos.classifiers[3].predict(enc).veracity, rho1.classifiers[3].predict(enc).veracity) < 1e-12);

    // wog: uniform post weights.
    auto wog = model_fixture::make_setup(9, variant_for(AblationCode::kWog));
    const auto g = wog.classifiers[2].predict(enc);
    for (Eigen::Index i = 0; i < g.delta.size(); ++i) CHECK(g.delta(i) == doctest::Approx(1.0 / 8).epsilon(1e-15));

    // woe: explanation branch contributes nothing.
    auto woe = model_fixture::make_setup(9, variant_for(AblationCode::kWoe));
    const auto e = woe.classifiers[0].predict(enc);
    CHECK(on_simplex(e.delta));
    CHECK(max_diff(e.delta, Vector::Constant(8, 1.0 / 8)) < 1e-15);
    CHECK_FALSE(woe.classifiers[0].encode_explanation("anything").any());

    // woh: no local rows, weights still a distribution.
    auto woh = model_fixture::make_setup(9, variant_for(AblationCode::kWoh));
    const auto h = woh.classifiers[1].predict(enc);
    CHECK(h.local_rows.empty());
    CHECK(on_simplex(h.delta));
    CHECK(on_simplex(h.veracity));

    // wop: recurrent encoders over token ids.
    auto wop = model_fixture::make_setup(9, variant_for(AblationCode::kWop));
    const auto enc_tokens = model_fixture::encode(wop, tree, true);
    const auto r = wop.classifiers[5].predict(enc_tokens);
    CHECK(on_simplex(r.veracity));
    CHECK(wop.classifiers[5].params().contains("enc.claim.w_update"));
  }

  TEST_CASE("ablation codes") {
    for (const char* code : {"full", "wos", "woe", "wop", "woo", "wog", "woh", "woa"})
      CHECK(ablation_name(parse_ablation(code)) == code);
    try {
      parse_ablation("wox");
      FAIL("expected usage error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kUsage);
    }
  }

  TEST_CASE("value-level encoders reject empty text") {
    auto s = model_fixture::make_setup(10);
    CHECK(s.classifiers[0].encode_claim("the claim").size() == 8);
    CHECK_THROWS_AS(s.classifiers[0].encode_post(""), Error);
  }

  TEST_CASE("attention dump names nodes") {
    auto s = model_fixture::make_setup(11);
    const auto tree = fixtures::chain(3);
    const auto enc = model_fixture::encode(s, tree);
    const auto j = attention_dump_json(enc, s.classifiers[4].predict(enc), 4);
    CHECK(j["classifier"] == 4);
    CHECK(j["global"].size() == 3);
    CHECK(j["propagation"][0]["node"] == "c");
    CHECK(j["propagation"][0]["weights"].contains("c-t1"));
  }

  TEST_CASE("relabeling posts permutes stance outputs") {
    auto s = model_fixture::make_setup(12, {}, {0.3, 0.5});
    std::mt19937_64 rng(13);
    for (int t = 0; t < 10; ++t) {
      const auto tree = fixtures::random_tree(2 + t, rng);
      std::vector<std::size_t> order;
      const auto other = relabeled(tree, rng, order);
      validate_tree(other);
      // Explanation prompts name the post ids, so the node inputs are carried
      // over from the original encoding.
      const auto enc_a = model_fixture::encode(s, tree);
      auto enc_b = enc_a;
      enc_b.topology = build_topology(other);
      for (std::size_t i = 0; i < order.size(); ++i) {
        enc_b.post_ids[i] = other.posts[i].id;
        enc_b.posts[i] = enc_a.posts[order[i]];
        for (std::size_t k = 0; k < 16; ++k) enc_b.post_explanations[k][i] = enc_a.post_explanations[k][order[i]];
      }
      for (std::size_t k = 0; k < 16; k += 3) {
        const auto a = s.classifiers[k].predict(enc_a), b = s.classifiers[k].predict(enc_b);
        CHECK(max_diff(a.veracity, b.veracity) < 1e-12);
        for (std::size_t i = 0; i < order.size(); ++i) CHECK(max_diff(b.stance[i], a.stance[order[i]]) < 1e-12);
      }
    }
  }

  TEST_CASE("bag veracity lies between the smoothed instance probabilities") {
    std::mt19937_64 rng(14);
    for (double lambda : {0.0, 0.5, 1.0}) {
      auto s = model_fixture::make_setup(15, {}, {0.3, lambda});
      for (int t = 0; t < 10; ++t) {
        const auto tree = fixtures::random_tree(1 + t, rng);
        const auto enc = model_fixture::encode(s, tree);
        for (const auto& clf : s.classifiers) {
          const auto out = clf.predict(enc);
          double lo = 1.0, hi = 0.0;
          for (const auto& p : smoothed(out, lambda)) {
            lo = std::min(lo, p(0));
            hi = std::max(hi, p(0));
          }
          CHECK(out.veracity(0) >= lo - 1e-12);
          CHECK(out.veracity(0) <= hi + 1e-12);
        }
      }
    }
  }

  TEST_CASE("parameter registries are disjoint") {
    auto s = model_fixture::make_setup(16);
    std::set<const void*> seen;
    std::size_t total = 0;
    auto add = [&](const ad::ParameterSet& params) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        seen.insert(params[i].value().data());
        ++total;
      }
    };
    for (const auto& c : s.classifiers) add(c.params());
    add(s.aggregator.params());
    CHECK(total > 16);
    CHECK(seen.size() == total);
  }

}
