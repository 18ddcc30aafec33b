#include "stancemil/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "stancemil/error.hpp"
#include "stancemil/hashing.hpp"

namespace stancemil {

namespace fs = std::filesystem;

namespace {

TrainConfig stage_config(const nlohmann::json& j, const char* key, std::uint64_t seed) {
  nlohmann::json sub = j.contains(key) ? j.at(key) : nlohmann::json::object();
  if (!sub.contains("seed")) sub["seed"] = seed;
  return TrainConfig::from_json(sub);
}

std::uint64_t classifier_seed(std::uint64_t seed, std::size_t k) {
  return mix64(seed ^ (0x9e3779b97f4a7c15ULL * (k + 1)));
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.seed = j.value("seed", c.seed);
  const std::string preset = j.value("preset", std::string("default"));
  if (preset == "local-heavy") {
    c.hyper.lambda = 0.7;
  } else if (preset != "default") {
    throw Error(ErrorKind::kConfig, "unknown preset '" + preset + "' (expected default or local-heavy)");
  }
  c.hyper.rho = j.value("rho", c.hyper.rho);
  c.hyper.lambda = j.value("lambda", c.hyper.lambda);
  validate_hyper(c.hyper);
  c.ablation = parse_ablation(j.value("ablation", std::string("full")));

  nlohmann::json data = j.contains("data") ? j.at("data") : nlohmann::json::object();
  if (!data.contains("seed")) data["seed"] = c.seed;
  c.data = DatasetConfig::from_json(data);
  nlohmann::json enc = j.contains("encoder") ? j.at("encoder") : nlohmann::json::object();
  if (!enc.contains("seed")) enc["seed"] = c.seed;
  c.encoder = EncoderConfig::from_json(enc);
  c.stage1 = stage_config(j, "stage1", c.seed);
  c.stage2 = stage_config(j, "stage2", c.seed);
  c.stage1.freeze_encoders = c.stage1.freeze_encoders || !c.encoder.trainable;
  if (j.contains("provider")) c.provider = ProviderConfig::from_json(j.at("provider"));
  return c;
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["rho"] = hyper.rho;
  j["lambda"] = hyper.lambda;
  j["ablation"] = ablation_name(ablation);
  j["data"] = data.to_json();
  j["encoder"] = encoder.to_json();
  j["stage1"] = stage1.to_json();
  j["stage2"] = stage2.to_json();
  j["provider"] = provider.to_json();
  return j;
}

std::string provider_id_for(const ProviderConfig& config) {
  if (config.kind == "mock") return MockProvider().id();
  return "http:" + config.model;
}

JointModel::JointModel(ModelConfig config) : config_(std::move(config)) {
  validate_hyper(config_.hyper);
  pairs_ = enumerate_target_pairs(config_.data.veracity, config_.data.stance);
  backbones_ = make_backbones(config_.encoder);
  const ModelVariant variant = config_.variant();
  classifiers_.reserve(pairs_.size());
  for (const auto& pair : pairs_)
    classifiers_.emplace_back(pair, config_.encoder, backbones_, config_.hyper, variant,
                              classifier_seed(config_.seed, pair.index));
  aggregator_ = Aggregator(config_.encoder, backbones_, mix64(config_.seed ^ 0x5eed0a99u));
}

void JointModel::set_hyper(MilHyper hyper) {
  validate_hyper(hyper);
  config_.hyper = hyper;
  for (auto& c : classifiers_) c.set_hyper(hyper);
}

void JointModel::save_classifiers(const fs::path& run_dir) const {
  for (std::size_t k = 0; k < classifiers_.size(); ++k)
    save_snapshot(run_dir / ("classifier_" + std::to_string(k)) / "snapshot", classifiers_[k].params());
}

void JointModel::save_aggregator(const fs::path& run_dir) const {
  save_snapshot(run_dir / "aggregator" / "snapshot", aggregator_.params());
}

void JointModel::save_config(const fs::path& run_dir) const {
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "config.resolved");
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (run_dir / "config.resolved").string());
  out << config_.to_json().dump(2) << "\n";
}

void JointModel::load_classifiers(const fs::path& run_dir) {
  for (std::size_t k = 0; k < classifiers_.size(); ++k)
    load_snapshot(run_dir / ("classifier_" + std::to_string(k)) / "snapshot", classifiers_[k].params());
}

void JointModel::load_aggregator(const fs::path& run_dir) {
  load_snapshot(run_dir / "aggregator" / "snapshot", aggregator_.params());
}

JointModel JointModel::from_run(const fs::path& run_dir) {
  std::ifstream in(run_dir / "config.resolved");
  if (!in) throw Error(ErrorKind::kIo, "no config.resolved in " + run_dir.string() + " (run `train` first)");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, "config.resolved: " + std::string(e.what()));
  }
  return JointModel(ModelConfig::from_json(j));
}

// ---------------------------------------------------------------------------

std::vector<const EncodedTree*> PreparedData::encoded_ptrs() const {
  std::vector<const EncodedTree*> out;
  out.reserve(encoded.size());
  for (const auto& e : encoded) out.push_back(&e);
  return out;
}

PreparedData prepare_data(const JointModel& model, std::vector<ConversationTree> trees,
                          const ExplanationSource& source, bool require_labels) {
  if (source.cache == nullptr) throw Error(ErrorKind::kConfig, "explanation source has no cache");
  PreparedData data;
  data.trees = std::move(trees);
  const auto& pairs = model.pairs();

  std::vector<ExplanationRequest> requests;
  for (const auto& tree : data.trees) {
    auto r = tree_requests(tree, pairs, source.provider_id);
    requests.insert(requests.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  fetch_all(requests, source.provider, *source.cache, source.max_concurrent, source.retry);

  const bool tokens = model.config().variant().recurrent_encoder;
  data.encoded.reserve(data.trees.size());
  bool all_labeled = true;
  for (const auto& tree : data.trees) {
    auto ex = collect_tree_explanations(tree, pairs, model.veracity().size(), nullptr, source.provider_id,
                                        *source.cache);
    data.encoded.push_back(encode_tree(tree, ex, model.backbones(), model.config().encoder, tokens));
    if (!tree.gold_veracity) {
      all_labeled = false;
      if (require_labels) throw Error(ErrorKind::kLabel, "claim " + tree.claim_id + " has no gold veracity");
    }
  }
  if (all_labeled)
    for (const auto& tree : data.trees) data.gold_veracity.push_back(model.veracity().index_of(*tree.gold_veracity, "veracity"));
  return data;
}

std::vector<LossHistory> train_stage1(JointModel& model, const PreparedData& train) {
  if (train.gold_veracity.size() != train.trees.size())
    throw Error(ErrorKind::kLabel, "Stage 1 needs a gold veracity label on every training claim");
  return train_binary_classifiers(model.classifiers(), train.encoded_ptrs(), train.gold_veracity, model.veracity(),
                                  model.config().stage1);
}

LossHistory train_stage2(JointModel& model, const PreparedData& train) {
  if (train.gold_veracity.size() != train.trees.size())
    throw Error(ErrorKind::kLabel, "Stage 2 needs a gold veracity label on every training claim");
  if (model.uniform_beta()) return {};
  const auto before = classifier_digests(model.classifiers());
  std::vector<FrozenOutputs> outputs;
  outputs.reserve(train.encoded.size());
  for (const auto& e : train.encoded) outputs.push_back(run_classifiers(e, model.classifiers()));
  std::vector<const FrozenOutputs*> ptrs;
  for (const auto& o : outputs) ptrs.push_back(&o);
  auto history = train_aggregator(model.aggregator(), ptrs, train.gold_veracity, model.pairs(),
                                  model.veracity().size(), model.config().stage2);
  if (classifier_digests(model.classifiers()) != before)
    throw Error(ErrorKind::kInternal, "classifier parameters changed during Stage 2");
  return history;
}

std::vector<JointPrediction> predict_all(const JointModel& model, const PreparedData& data) {
  std::vector<JointPrediction> out;
  out.reserve(data.encoded.size());
  for (const auto& e : data.encoded)
    out.push_back(predict_joint(e, model.classifiers(), model.aggregator(), model.pairs(), model.veracity().size(),
                                model.stance().size(), model.uniform_beta()));
  return out;
}

nlohmann::ordered_json EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["rumor"] = rumor.to_json();
  j["stance"] = stance.count == 0 ? nlohmann::ordered_json(nullptr) : stance.to_json();
  return j;
}

EvalResult evaluate(const std::vector<JointPrediction>& predictions, const PreparedData& data,
                    const Vocabulary& veracity, const Vocabulary& stance) {
  if (predictions.size() != data.trees.size()) throw Error(ErrorKind::kShape, "prediction and tree counts differ");
  std::vector<std::pair<Vector, std::size_t>> rumor, stance_preds;
  for (std::size_t c = 0; c < predictions.size(); ++c) {
    const auto& tree = data.trees[c];
    const auto& pred = predictions[c];
    if (tree.gold_veracity) rumor.emplace_back(renormalized(pred.veracity), veracity.index_of(*tree.gold_veracity));
    for (std::size_t i = 0; i < tree.posts.size(); ++i)
      if (tree.posts[i].gold_stance)
        stance_preds.emplace_back(renormalized(pred.stance[i]), stance.index_of(*tree.posts[i].gold_stance));
  }
  EvalResult r;
  r.rumor = compute_metrics(rumor, veracity, Task::kRumor);
  if (!stance_preds.empty()) {
    r.stance = compute_metrics(stance_preds, stance, Task::kStance);
  } else {
    r.stance.task = Task::kStance;
  }
  return r;
}

void write_predictions(const fs::path& path, const std::vector<JointPrediction>& predictions,
                       const Vocabulary& veracity, const Vocabulary& stance) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& p : predictions) out << prediction_to_json(p, veracity, stance).dump() << "\n";
}

void write_loss_history(const fs::path& path, const std::vector<LossHistory>& stage1, const LossHistory* stage2) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "stage,classifier,epoch,loss\n";
  for (std::size_t k = 0; k < stage1.size(); ++k)
    for (std::size_t e = 0; e < stage1[k].epoch_loss.size(); ++e)
      out << "1," << k << "," << e + 1 << "," << format_double(stage1[k].epoch_loss[e]) << "\n";
  if (stage2)
    for (std::size_t e = 0; e < stage2->epoch_loss.size(); ++e)
      out << "2,aggregator," << e + 1 << "," << format_double(stage2->epoch_loss[e]) << "\n";
}

std::vector<LossHistory> read_stage1_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<LossHistory> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string stage, k, epoch, loss;
    std::getline(ss, stage, ',');
    std::getline(ss, k, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, loss, ',');
    if (stage != "1") continue;
    const std::size_t idx = std::stoul(k);
    if (out.size() <= idx) out.resize(idx + 1);
    out[idx].epoch_loss.push_back(std::stod(loss));
  }
  return out;
}

PipelineResult run_pipeline(JointModel& model, const PreparedData& train, const PreparedData& test,
                            const fs::path& run_dir) {
  PipelineResult result;
  if (!run_dir.empty()) model.save_config(run_dir);
  result.stage1 = train_stage1(model, train);
  if (!run_dir.empty()) model.save_classifiers(run_dir);
  result.stage2 = train_stage2(model, train);
  if (!run_dir.empty()) {
    model.save_aggregator(run_dir);
    write_loss_history(run_dir / "loss_history.csv", result.stage1, &result.stage2);
  }
  result.predictions = predict_all(model, test);
  result.eval = evaluate(result.predictions, test, model.veracity(), model.stance());
  if (!run_dir.empty()) {
    write_predictions(run_dir / "predictions.jsonl", result.predictions, model.veracity(), model.stance());
    std::ofstream(run_dir / "metrics.json") << result.eval.to_json().dump(2) << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<AblationResult> run_ablations(const ModelConfig& base, const std::vector<AblationCode>& codes,
                                          const std::vector<ConversationTree>& train,
                                          const std::vector<ConversationTree>& test,
                                          const ExplanationSource& source) {
  std::map<AblationCode, std::vector<BinaryClassifier>> trained;
  std::map<bool, std::pair<PreparedData, PreparedData>> prepared;  // keyed by "needs token ids"
  std::vector<AblationResult> results;
  for (AblationCode code : codes) {
    ModelConfig cfg = base;
    cfg.ablation = code;
    JointModel model(cfg);
    const bool tokens = cfg.variant().recurrent_encoder;
    if (!prepared.count(tokens))
      prepared.emplace(tokens, std::make_pair(prepare_data(model, train, source, true),
                                              prepare_data(model, test, source, false)));
    const auto& [train_data, test_data] = prepared.at(tokens);
    // Classifier weights play no part inside the binary classifiers.
    const AblationCode key = code == AblationCode::kWoa ? AblationCode::kFull : code;
    if (auto it = trained.find(key); it != trained.end()) {
      model.classifiers() = it->second;
    } else {
      train_stage1(model, train_data);
      trained.emplace(key, model.classifiers());
    }
    train_stage2(model, train_data);
    auto preds = predict_all(model, test_data);
    results.push_back({code, evaluate(preds, test_data, model.veracity(), model.stance())});
    spdlog::info("ablation {}: veracity micro-F1 {:.4f}, stance macro-F1 {:.4f}", ablation_name(code),
                 results.back().eval.rumor.micro_f1, results.back().eval.stance.macro_f1);
  }
  return results;
}

EvalResult run_ablation(AblationCode code, const ModelConfig& base, const std::vector<ConversationTree>& train,
                        const std::vector<ConversationTree>& test, const ExplanationSource& source) {
  return run_ablations(base, {code}, train, test, source).front().eval;
}

SweepConfig SweepConfig::defaults() {
  SweepConfig s;
  s.rho_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
  s.lambda_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
  s.deletion_ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  return s;
}

std::vector<SweepRow> run_sensitivity(const ModelConfig& base, const SweepConfig& sweep,
                                      const std::vector<ConversationTree>& train,
                                      const std::vector<ConversationTree>& test, const ExplanationSource& source) {
  auto check_grid = [](const std::vector<double>& grid, const char* what) {
    for (double x : grid)
      if (!(x >= 0.0 && x < 1.0))
        throw Error(ErrorKind::kParameter, std::string(what) + " grid values must lie in [0,1), got " + std::to_string(x));
  };
  check_grid(sweep.rho_grid, "rho");
  check_grid(sweep.lambda_grid, "lambda");
  check_grid(sweep.deletion_ratios, "deletion ratio");

  struct Setting {
    double rho, lambda, deletion;
  };
  std::vector<Setting> settings;
  for (double r : sweep.rho_grid) settings.push_back({r, sweep.grid_fixed, 0.0});
  for (double l : sweep.lambda_grid) settings.push_back({sweep.grid_fixed, l, 0.0});
  for (double d : sweep.deletion_ratios) settings.push_back({sweep.base_rho, sweep.base_lambda, d});
  if (settings.empty()) return {};

  JointModel probe(base);
  const PreparedData train_data = prepare_data(probe, train, source, true);
  std::map<double, PreparedData> test_data;
  auto test_for = [&](double ratio) -> const PreparedData& {
    auto it = test_data.find(ratio);
    if (it != test_data.end()) return it->second;
    std::vector<ConversationTree> trees;
    trees.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
      trees.push_back(ratio == 0.0 ? test[i] : delete_random_posts(test[i], ratio, mix64(sweep.deletion_seed + i)));
    return test_data.emplace(ratio, prepare_data(probe, std::move(trees), source, false)).first->second;
  };

  std::map<std::pair<double, double>, JointModel> models;
  std::vector<SweepRow> rows;
  for (const auto& s : settings) {
    auto key = std::make_pair(s.rho, s.lambda);
    auto it = models.find(key);
    if (it == models.end()) {
      ModelConfig cfg = base;
      cfg.hyper = {s.rho, s.lambda};
      JointModel model(cfg);
      train_stage1(model, train_data);
      train_stage2(model, train_data);
      it = models.emplace(key, std::move(model)).first;
    }
    const auto& data = test_for(s.deletion);
    auto eval = evaluate(predict_all(it->second, data), data, it->second.veracity(), it->second.stance());
    for (const MetricsReport* m : {&eval.rumor, &eval.stance}) {
      if (m->count == 0) continue;
      rows.push_back({m->task, s.rho, s.lambda, s.deletion, m->micro_f1, m->macro_f1, m->auc, base.seed});
    }
    spdlog::info("sweep rho={} lambda={} deletion={}: veracity micro-F1 {:.4f}", s.rho, s.lambda, s.deletion,
                 eval.rumor.micro_f1);
  }
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "task,rho,lambda,deletion_ratio,micro_f1,macro_f1,auc,seed\n";
  for (const auto& r : rows)
    out << task_name(r.task) << "," << format_double(r.rho) << "," << format_double(r.lambda) << ","
        << format_double(r.deletion_ratio) << "," << format_double(r.micro_f1) << "," << format_double(r.macro_f1)
        << "," << format_double(r.auc) << "," << r.seed << "\n";
}

nlohmann::ordered_json dump_attention(const JointModel& model, const PreparedData& data, const std::string& claim_id) {
  auto it = std::find_if(data.encoded.begin(), data.encoded.end(),
                         [&](const EncodedTree& e) { return e.claim_id == claim_id; });
  if (it == data.encoded.end()) throw Error(ErrorKind::kLookup, "claim '" + claim_id + "' is not in the dataset");
  const EncodedTree& tree = *it;
  const FrozenOutputs outputs = run_classifiers(tree, model.classifiers());
  const JointPrediction pred = combine(outputs, model.aggregator(), model.pairs(), model.veracity().size(),
                                       model.stance().size(), model.uniform_beta());
  const std::size_t k_count = outputs.per_classifier.size();
  const std::size_t n = tree.post_count();

  nlohmann::ordered_json j;
  j["claim_id"] = claim_id;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& p : model.pairs()) pairs.push_back(p.veracity + "/" + p.stance);
  j["pairs"] = pairs;
  j["beta"] = std::vector<double>(pred.beta.data(), pred.beta.data() + pred.beta.size());

  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < k_count; ++k) per.push_back(attention_dump_json(tree, outputs.per_classifier[k], k));
  j["classifiers"] = per;

  // Cross-classifier averages.
  std::vector<std::string> node_ids{tree.claim_id};
  node_ids.insert(node_ids.end(), tree.post_ids.begin(), tree.post_ids.end());
  std::map<int, AttentionRow> local;
  for (const auto& o : outputs.per_classifier)
    for (const auto& row : o.local_rows) {
      auto& acc = local[row.node];
      if (acc.neighbors.empty()) {
        acc = row;
        std::fill(acc.weights.begin(), acc.weights.end(), 0.0);
      }
      for (std::size_t t = 0; t < row.weights.size(); ++t) acc.weights[t] += row.weights[t] / static_cast<double>(k_count);
    }
  std::vector<AttentionRow> local_rows;
  for (auto& [node, row] : local) local_rows.push_back(row);
  Vector delta = Vector::Zero(static_cast<Eigen::Index>(n));
  for (const auto& o : outputs.per_classifier)
    if (o.delta.size() == static_cast<Eigen::Index>(n)) delta += o.delta / static_cast<double>(k_count);
  nlohmann::ordered_json global = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < n; ++i) global[tree.post_ids[i]] = delta(static_cast<Eigen::Index>(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return delta(a) > delta(b); });
  nlohmann::ordered_json top = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < std::min<std::size_t>(3, n); ++t) top.push_back(tree.post_ids[order[t]]);
  j["averaged"] = {{"local", attention_rows_to_json(local_rows, node_ids)}, {"global", global}, {"top_global", top}};
  return j;
}

}  // namespace stancemil
