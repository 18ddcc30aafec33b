#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stancemil/aggregation.hpp"
#include "stancemil/autodiff.hpp"
#include "stancemil/mil.hpp"

namespace stancemil {

inline constexpr double kProbabilityEpsilon = 1e-7;

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int batch_size = 1;  // claims per optimizer step
  std::uint64_t seed = 0;
  double tolerance = 1e-5;  // |delta loss| threshold
  int convergence_window = 5;
  int threads = 1;          // parallel Stage-1 jobs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;     // decoupled (AdamW-style) decay, scaled by the learning rate
  bool freeze_encoders = false;  // Stage 1 updates only the head when set

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

// -sum [y log yhat + (1 - y) log(1 - yhat)], yhat clamped to [eps, 1 - eps].
double binary_loss(const std::vector<std::pair<double, int>>& predictions);
// Same summed binary cross-entropy, over (claim, veracity class) entries.
double aggregation_loss(const std::vector<std::pair<double, int>>& predictions);
// One claim's aggregation loss for raw class scores and a gold index.
double aggregation_claim_loss(const Vector& scores, std::size_t gold);

// Tape versions. `positive` is a 1x1 probability.
ad::Var binary_loss_var(const ad::Var& positive, int label);

class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}
  // Updates every parameter whose `skip` flag is false, then zeroes all grads.
  void step(ad::ParameterSet& params, const std::vector<bool>& skip = {});
  long steps() const { return t_; }

 private:
  TrainConfig config_;
  long t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

struct LossHistory {
  std::vector<double> epoch_loss;  // mean per-claim loss
  bool converged = false;
  int epochs() const { return static_cast<int>(epoch_loss.size()); }
};

// |delta| below tolerance for `window` consecutive epochs.
bool has_converged(const std::vector<double>& losses, double tolerance, int window);

// Stage 1 for one classifier. `labels` are the binarized bag labels.
LossHistory train_classifier(BinaryClassifier& classifier, const std::vector<const EncodedTree*>& trees,
                             const std::vector<int>& labels, const TrainConfig& config);

// Stage 1 for all K classifiers (independent jobs, up to config.threads at
// once). `gold_veracity[c]` indexes the veracity vocabulary.
std::vector<LossHistory> train_binary_classifiers(std::vector<BinaryClassifier>& classifiers,
                                                  const std::vector<const EncodedTree*>& trees,
                                                  const std::vector<std::size_t>& gold_veracity,
                                                  const Vocabulary& veracity, const TrainConfig& config);

// Stage 2: optimizes only the aggregator against the summed per-class loss,
// over cached outputs of the frozen classifiers.
LossHistory train_aggregator(Aggregator& aggregator, const std::vector<const FrozenOutputs*>& outputs,
                             const std::vector<std::size_t>& gold_veracity, const std::vector<TargetPair>& pairs,
                             std::size_t veracity_count, const TrainConfig& config);

// Digests of every classifier's parameters, in classifier order.
std::vector<std::string> classifier_digests(const std::vector<BinaryClassifier>& classifiers);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  int probes = 0;
  std::string worst_parameter;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Analytic vs central-difference gradients of the binary loss at `probes`
// coordinates, drawn from those with a nonzero analytic gradient (then from
// the rest if too few). Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradientCheckReport gradient_check(BinaryClassifier& classifier, const EncodedTree& tree, int label, int probes,
                                   std::uint64_t seed, double step = 1e-5);

// Binary snapshot of a parameter set: names, shapes and little-endian doubles.
void save_snapshot(const std::filesystem::path& path, const ad::ParameterSet& params);
// Loads into an existing set; names and shapes must match.
void load_snapshot(const std::filesystem::path& path, ad::ParameterSet& params);

}  // namespace stancemil
