// Acceptance checks. Prints one PASS/FAIL line per criterion.
//   stancemil_acceptance [--criterion N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "model_fixture.hpp"
#include "oracle.hpp"
#include "stancemil/error.hpp"
#include "stancemil/pipeline.hpp"
#include "stancemil/synthetic.hpp"
#include "unit/fixtures.hpp"

using namespace stancemil;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string strf(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool on_simplex(const Vector& v) {
  if (v.size() == 0 || std::abs(v.sum() - 1.0) > 1e-12) return false;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v(i) >= 0.0 && v(i) <= 1.0)) return false;
  return true;
}

bool rows_on_simplex(const std::vector<AttentionRow>& rows) {
  for (const auto& r : rows)
    if (!on_simplex(Eigen::Map<const Vector>(r.weights.data(), static_cast<Eigen::Index>(r.weights.size()))))
      return false;
  return true;
}

double max_abs(const Vector& a, const Vector& b) {
  return a.size() == 0 && b.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig synthetic_config() {
  std::ifstream in(std::filesystem::path(STANCEMIL_SOURCE_DIR) / "configs" / "synthetic.json");
  if (!in) throw Error(ErrorKind::kIo, "configs/synthetic.json not found");
  return ModelConfig::from_json(nlohmann::json::parse(in));
}

std::vector<ConversationTree> synthetic(std::size_t n, std::uint64_t seed) {
  SyntheticConfig c;
  c.trees = n;
  return generate_synthetic(c, seed);
}

ModelConfig small_config(std::uint64_t seed) {
  return ModelConfig::from_json({{"seed", seed},
                                 {"encoder", {{"model_dim", 16}, {"ff_dim", 16}, {"hash_buckets", 256}}},
                                 {"stage1", {{"learning_rate", 0.005}, {"max_epochs", 3}}},
                                 {"stage2", {{"learning_rate", 0.01}, {"max_epochs", 5}}}});
}

// ---------------------------------------------------------------------------

Outcome simplex_checks() {
  auto s = model_fixture::make_setup(101, {}, {0.3, 0.5});
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<int> size(0, 20);
  int trees = 0;
  long vectors = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto tree = fixtures::random_tree(size(rng), rng, "c" + std::to_string(t));
    const auto enc = model_fixture::encode(s, tree);
    const auto outs = run_classifiers(enc, s.classifiers);
    bool ok = true;
    for (const auto& o : outs.per_classifier) {
      ok = ok && on_simplex(o.veracity) && rows_on_simplex(o.propagation_rows) && rows_on_simplex(o.local_rows);
      if (!o.degenerate) ok = ok && on_simplex(o.delta);
      for (const auto& p : o.stance) ok = ok && on_simplex(p);
      vectors += 1 + static_cast<long>(o.stance.size());
    }
    const auto joint = combine(outs, s.aggregator, s.pairs, 4, 4, false);
    ok = ok && on_simplex(joint.beta) && on_simplex(renormalized(joint.veracity));
    for (const auto& p : joint.stance) ok = ok && on_simplex(renormalized(p));
    if (!ok) return {false, strf("tree %d (%zu posts) has an output off the simplex", t, tree.posts.size())};
    ++trees;
  }
  return {true, strf("%d trees, %ld classifier distributions, beta and joint scores", trees, vectors)};
}

Outcome oracle_equivalence() {
  auto s = model_fixture::make_setup(201, {}, {0.3, 0.5});
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> size(0, 12);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto tree = fixtures::random_tree(size(rng), rng, "c" + std::to_string(t));
    const auto enc = model_fixture::encode(s, tree);
    for (const auto& clf : s.classifiers) {
      const auto got = clf.predict(enc);
      const auto want = oracle::forward_binary(clf, tree, enc);
      worst = std::max({worst, max_abs(got.veracity, want.veracity), max_abs(got.claim_summary, want.key)});
      if (!got.degenerate) worst = std::max(worst, max_abs(got.delta, want.delta));
      for (std::size_t i = 0; i < got.stance.size(); ++i) worst = std::max(worst, max_abs(got.stance[i], want.stance[i]));
    }
    const auto got = predict_joint(enc, s.classifiers, s.aggregator, s.pairs, 4, 4, false);
    const auto want = oracle::predict_joint(s.classifiers, s.aggregator, s.pairs, 4, 4, tree, enc);
    worst = std::max({worst, max_abs(got.beta, want.beta), max_abs(got.veracity, want.veracity)});
    for (std::size_t i = 0; i < got.stance.size(); ++i) worst = std::max(worst, max_abs(got.stance[i], want.stance[i]));
  }
  return {worst <= 1e-9, strf("100 trees, K=16, max abs difference %.2e (limit 1e-9)", worst)};
}

Outcome gradient_check_criterion() {
  auto s = model_fixture::make_setup(301, {}, {0.3, 0.5});
  const auto tree = fixtures::make_tree({-1, 0, 0, -1});  // claim + 4 posts
  const auto enc = model_fixture::encode(s, tree);
  double worst = 0.0;
  int probes = 0;
  std::string where;
  for (std::size_t k = 0; k < s.classifiers.size(); ++k) {
    const auto r = gradient_check(s.classifiers[k], enc, static_cast<int>(k % 2), 64, 303 + k);
    probes += r.probes;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      where = strf("k=%zu %s[%ld]", k, r.worst_parameter.c_str(), static_cast<long>(r.worst_index));
    }
    if (r.probes < 50) return {false, strf("classifier %zu: only %d probes", k, r.probes)};
  }
  return {worst < 1e-4, strf("%d probes over 16 classifiers, max relative error %.2e at %s (limit 1e-4)", probes, worst,
                            where.c_str())};
}

Outcome binarization_truth_table() {
  const Vocabulary stance = default_stance_vocabulary();
  struct Case {
    Vocabulary veracity;
    std::size_t expected;
  };
  const std::vector<Case> cases{{default_veracity_vocabulary(), 16}, {Vocabulary({"T", "F", "U"}), 12},
                                {Vocabulary({"R", "N"}), 8}};
  std::string detail;
  for (const auto& c : cases) {
    const auto pairs = enumerate_target_pairs(c.veracity, stance);
    if (pairs.size() != c.expected) return {false, strf("expected %zu classifiers, got %zu", c.expected, pairs.size())};
    int cells = 0;
    for (std::size_t g = 0; g < c.veracity.size(); ++g) {
      int positives = 0;
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const int want = pairs[k].veracity == c.veracity.code(g) ? 1 : 0;
        const int got = binarize_veracity_label(c.veracity.code(g), pairs[k], c.veracity);
        if (got != want || pairs[k].index != k ||
            pairs[k].veracity_index * stance.size() + pairs[k].stance_index != k)
          return {false, strf("K=%zu gold %s classifier %zu: label %d, expected %d", c.expected,
                             c.veracity.code(g).c_str(), k, got, want)};
        positives += got;
        ++cells;
      }
      if (positives != static_cast<int>(stance.size()))
        return {false, strf("K=%zu gold %s has %d positive classifiers", c.expected, c.veracity.code(g).c_str(),
                           positives)};
    }
    detail += strf("K=%zu (%d cells) ", c.expected, cells);
  }
  return {true, detail + "match the truth table"};
}

Outcome loss_closed_forms() {
  std::mt19937_64 rng(501);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::pair<double, int>> preds;
    double expect = 0.0;
    for (int i = 0; i < 1 + t % 7; ++i) {
      const double p = u(rng);
      const int y = static_cast<int>(rng() % 2);
      preds.emplace_back(p, y);
      expect -= y ? std::log(p) : std::log(1.0 - p);
    }
    worst = std::max(worst, std::abs(binary_loss(preds) - expect));
    ad::Tape tape;
    const auto var = binary_loss_var(tape.constant(preds[0].first), preds[0].second);
    const double single = preds[0].second ? -std::log(preds[0].first) : -std::log(1.0 - preds[0].first);
    worst = std::max(worst, std::abs(var.scalar() - single));

    Vector scores(4);
    for (int c = 0; c < 4; ++c) scores(c) = u(rng) / 4.0;
    const std::size_t gold = rng() % 4;
    double agg = 0.0;
    for (int c = 0; c < 4; ++c)
      agg -= static_cast<std::size_t>(c) == gold ? std::log(scores(c)) : std::log(1.0 - scores(c));
    worst = std::max(worst, std::abs(aggregation_claim_loss(scores, gold) - agg));
  }
  // Clamping at the boundaries.
  const double clamp = -std::log(kProbabilityEpsilon);
  worst = std::max(worst, std::abs(binary_loss({{0.0, 1}}) - clamp));
  return {worst <= 1e-10, strf("3000 random cases plus clamp, max deviation %.2e (limit 1e-10)", worst)};
}

Outcome synthetic_end_to_end() {
  const auto cfg = synthetic_config();
  const auto trees = synthetic(500, 7);
  const std::vector<ConversationTree> train(trees.begin(), trees.begin() + 400), test(trees.begin() + 400, trees.end());
  MockProvider provider;
  ExplanationCache cache;
  const ExplanationSource source{&provider, &cache, provider.id(), 1, {}};
  const auto res = run_ablations(cfg, {AblationCode::kFull, AblationCode::kWoa}, train, test, source);
  const auto& full = res[0].eval;
  const auto& woa = res[1].eval;
  const bool ver = full.rumor.micro_f1 >= 0.90;
  const bool stance = full.stance.macro_f1 >= 0.40;
  const bool attention = woa.rumor.micro_f1 < full.rumor.micro_f1;
  return {ver && stance && attention,
          strf("veracity micro-F1 %.3f (>= 0.90 %s), stance macro-F1 %.3f (>= 0.40 %s), woa veracity micro-F1 %.3f "
              "(< full %s)",
              full.rumor.micro_f1, ver ? "ok" : "FAILED", full.stance.macro_f1, stance ? "ok" : "FAILED",
              woa.rumor.micro_f1, attention ? "ok" : "FAILED")};
}

Outcome stage_isolation() {
  auto cfg = small_config(701);
  JointModel model(cfg);
  MockProvider provider;
  ExplanationCache cache;
  const ExplanationSource source{&provider, &cache, provider.id(), 1, {}};
  const auto train = prepare_data(model, synthetic(60, 702), source, true);
  const std::string agg_before_stage1 = model.aggregator().params().digest();
  train_stage1(model, train);
  const auto before = classifier_digests(model.classifiers());
  const std::string agg_before = model.aggregator().params().digest();
  if (agg_before != agg_before_stage1) return {false, "Stage 1 changed the aggregator"};
  const auto h2 = train_stage2(model, train);
  const auto after = classifier_digests(model.classifiers());
  const bool aggregator_moved = model.aggregator().params().digest() != agg_before;
  int changed = 0;
  for (std::size_t k = 0; k < before.size(); ++k) changed += before[k] != after[k];
  return {changed == 0 && aggregator_moved,
          strf("%zu classifier hashes, %d changed by Stage 2 (%d epochs); aggregator %s", before.size(), changed,
              h2.epochs(), aggregator_moved ? "updated" : "NOT updated")};
}

Outcome determinism() {
  fixtures::TempDir dir("accept-det");
  const auto train = synthetic(60, 801), test = synthetic(20, 802);
  std::vector<std::string> names;
  for (int run = 0; run < 3; ++run) {
    auto cfg = small_config(803);
    cfg.stage1.threads = run == 2 ? 4 : 1;
    MockProvider provider;
    ExplanationCache cache(dir.path / ("cache" + std::to_string(run)));
    const ExplanationSource source{&provider, &cache, provider.id(), run == 2 ? 4 : 1, {}};
    JointModel model(cfg);
    run_pipeline(model, prepare_data(model, train, source, true), prepare_data(model, test, source, false),
                 dir.path / ("run" + std::to_string(run)));
  }
  for (const char* f : {"predictions.jsonl", "loss_history.csv"})
    for (int run = 1; run < 3; ++run) {
      const auto a = slurp(dir.path / "run0" / f), b = slurp(dir.path / ("run" + std::to_string(run)) / f);
      if (a.empty() || a != b) return {false, strf("%s differs between run 0 and run %d", f, run)};
    }
  return {true, "predictions.jsonl and loss_history.csv byte-identical over 3 runs (1 and 4 threads)"};
}

Outcome sweep() {
  auto cfg = synthetic_config();
  cfg.stage1.threads = 4;
  const auto trees = synthetic(200, 901);
  const std::vector<ConversationTree> train(trees.begin(), trees.begin() + 160), test(trees.begin() + 160, trees.end());
  MockProvider provider;
  ExplanationCache cache;
  const ExplanationSource source{&provider, &cache, provider.id(), 1, {}};
  auto sc = SweepConfig::defaults();
  sc.base_rho = cfg.hyper.rho;
  sc.base_lambda = cfg.hyper.lambda;
  const auto rows = run_sensitivity(cfg, sc, train, test, source);

  JointModel model(cfg);
  const auto baseline = run_pipeline(model, prepare_data(model, train, source, true),
                                     prepare_data(model, test, source, false))
                            .eval;
  int zero_rows = 0;
  bool rho_row = false, lambda_row = false;
  for (const auto& r : rows) {
    if (r.deletion_ratio == 0.0 && r.rho == sc.base_rho && r.lambda == sc.base_lambda) {
      const auto& m = r.task == Task::kRumor ? baseline.rumor : baseline.stance;
      if (r.micro_f1 != m.micro_f1 || r.macro_f1 != m.macro_f1 || r.auc != m.auc)
        return {false, strf("deletion 0 row (%s) differs from the baseline run",
                           r.task == Task::kRumor ? "veracity" : "stance")};
      ++zero_rows;
    }
    rho_row = rho_row || (r.rho == 0.3 && r.deletion_ratio == 0.0);
    lambda_row = lambda_row || (r.lambda == 0.5 && r.deletion_ratio == 0.0);
  }
  return {zero_rows >= 2 && rho_row && lambda_row,
          strf("%zu rows; %d deletion-0 rows equal the baseline; rho=0.3 row %s; lambda=0.5 row %s", rows.size(),
              zero_rows, rho_row ? "present" : "missing", lambda_row ? "present" : "missing")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "simplex outputs", 60, simplex_checks},
      {2, "oracle equivalence", 120, oracle_equivalence},
      {3, "gradient check", 60, gradient_check_criterion},
      {4, "binarization truth table", 60, binarization_truth_table},
      {5, "loss closed forms", 60, loss_closed_forms},
      {6, "synthetic end-to-end", 900, synthetic_end_to_end},
      {7, "stage isolation", 300, stage_isolation},
      {8, "determinism", 300, determinism},
      {9, "sensitivity sweep", 1200, sweep},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      selected.push_back(std::stoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]...\n", argv[0]);
      return 2;
    }
  }
  spdlog::set_level(spdlog::level::warn);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += strf("; took %.1fs, budget %.0fs", secs, c.budget_seconds);
    }
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
