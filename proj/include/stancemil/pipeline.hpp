#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stancemil/aggregation.hpp"
#include "stancemil/dataset.hpp"
#include "stancemil/encoders.hpp"
#include "stancemil/explanations.hpp"
#include "stancemil/metrics.hpp"
#include "stancemil/mil.hpp"
#include "stancemil/training.hpp"

namespace stancemil {

// Everything needed to build, train and evaluate a model.
struct ModelConfig {
  DatasetConfig data;
  EncoderConfig encoder;
  MilHyper hyper;
  AblationCode ablation = AblationCode::kFull;
  TrainConfig stage1;
  TrainConfig stage2;
  ProviderConfig provider;
  std::uint64_t seed = 0;

  // Presets: "default" (lambda 0.5) and "local-heavy" (lambda 0.7).
  static ModelConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  ModelVariant variant() const { return variant_for(ablation); }
};

std::string provider_id_for(const ProviderConfig& config);

class JointModel {
 public:
  explicit JointModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const std::vector<TargetPair>& pairs() const { return pairs_; }
  const Vocabulary& veracity() const { return config_.data.veracity; }
  const Vocabulary& stance() const { return config_.data.stance; }
  const Backbones& backbones() const { return backbones_; }
  std::vector<BinaryClassifier>& classifiers() { return classifiers_; }
  const std::vector<BinaryClassifier>& classifiers() const { return classifiers_; }
  Aggregator& aggregator() { return aggregator_; }
  const Aggregator& aggregator() const { return aggregator_; }
  bool uniform_beta() const { return !config_.variant().classifier_attention; }
  // Changes rho/lambda of every classifier without touching parameters.
  void set_hyper(MilHyper hyper);

  void save_classifiers(const std::filesystem::path& run_dir) const;
  void save_aggregator(const std::filesystem::path& run_dir) const;
  void save_config(const std::filesystem::path& run_dir) const;
  void load_classifiers(const std::filesystem::path& run_dir);
  void load_aggregator(const std::filesystem::path& run_dir);
  // Rebuilds a model from <run_dir>/config.resolved.
  static JointModel from_run(const std::filesystem::path& run_dir);

 private:
  ModelConfig config_;
  std::vector<TargetPair> pairs_;
  Backbones backbones_;
  std::vector<BinaryClassifier> classifiers_;
  Aggregator aggregator_;
};

// Where explanations come from: a cache, optionally backed by a provider.
struct ExplanationSource {
  ExplanationProvider* provider = nullptr;
  ExplanationCache* cache = nullptr;
  std::string provider_id;
  int max_concurrent = 1;
  RetryPolicy retry;
};

struct PreparedData {
  std::vector<ConversationTree> trees;
  std::vector<EncodedTree> encoded;
  std::vector<std::size_t> gold_veracity;  // only filled when every tree is labeled

  std::vector<const EncodedTree*> encoded_ptrs() const;
};

// Fetches every explanation the trees need (one generation-gap error lists all
// missing keys) and encodes the trees with the model's backbones.
PreparedData prepare_data(const JointModel& model, std::vector<ConversationTree> trees,
                          const ExplanationSource& source, bool require_labels);

std::vector<LossHistory> train_stage1(JointModel& model, const PreparedData& train);
// Trains only the aggregator (no-op under uniform classifier weights) and
// verifies that no classifier parameter changed.
LossHistory train_stage2(JointModel& model, const PreparedData& train);

std::vector<JointPrediction> predict_all(const JointModel& model, const PreparedData& data);

struct EvalResult {
  MetricsReport rumor;
  MetricsReport stance;
  nlohmann::ordered_json to_json() const;
};

EvalResult evaluate(const std::vector<JointPrediction>& predictions, const PreparedData& data,
                    const Vocabulary& veracity, const Vocabulary& stance);

void write_predictions(const std::filesystem::path& path, const std::vector<JointPrediction>& predictions,
                       const Vocabulary& veracity, const Vocabulary& stance);
// CSV columns: stage, classifier, epoch, loss.
void write_loss_history(const std::filesystem::path& path, const std::vector<LossHistory>& stage1,
                        const LossHistory* stage2);
std::vector<LossHistory> read_stage1_history(const std::filesystem::path& path);

struct PipelineResult {
  std::vector<LossHistory> stage1;
  LossHistory stage2;
  std::vector<JointPrediction> predictions;
  EvalResult eval;
};

// Stage 1, Stage 2, prediction and evaluation. With a run directory the
// snapshots, loss history, resolved config and predictions are written there.
PipelineResult run_pipeline(JointModel& model, const PreparedData& train, const PreparedData& test,
                            const std::filesystem::path& run_dir = {});

// ---------------------------------------------------------------------------

struct AblationResult {
  AblationCode code;
  EvalResult eval;
};

// Trains and evaluates each variant. Variants whose classifiers are identical
// (full and woa) share one Stage-1 run.
std::vector<AblationResult> run_ablations(const ModelConfig& base, const std::vector<AblationCode>& codes,
                                          const std::vector<ConversationTree>& train,
                                          const std::vector<ConversationTree>& test,
                                          const ExplanationSource& source);
EvalResult run_ablation(AblationCode code, const ModelConfig& base, const std::vector<ConversationTree>& train,
                        const std::vector<ConversationTree>& test, const ExplanationSource& source);

struct SweepConfig {
  std::vector<double> rho_grid;       // evaluated at lambda = grid_fixed
  std::vector<double> lambda_grid;    // evaluated at rho = grid_fixed
  std::vector<double> deletion_ratios;  // evaluated at (base_rho, base_lambda)
  double grid_fixed = 0.5;
  double base_rho = 0.3;
  double base_lambda = 0.5;
  std::uint64_t deletion_seed = 0;

  static SweepConfig defaults();  // 0.1..0.9 step 0.2 for both grids, deletion {0, 0.1, ..., 0.5}
};

struct SweepRow {
  Task task;
  double rho, lambda, deletion_ratio;
  double micro_f1, macro_f1, auc;
  std::uint64_t seed;
};

// Models are trained once per distinct (rho, lambda); deletion removes test
// posts only, from a model trained on the full training set.
std::vector<SweepRow> run_sensitivity(const ModelConfig& base, const SweepConfig& sweep,
                                      const std::vector<ConversationTree>& train,
                                      const std::vector<ConversationTree>& test, const ExplanationSource& source);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

// Per-classifier and cross-classifier averaged attention for one claim, with
// beta and the top-3 posts by averaged global weight.
nlohmann::ordered_json dump_attention(const JointModel& model, const PreparedData& data, const std::string& claim_id);

}  // namespace stancemil
