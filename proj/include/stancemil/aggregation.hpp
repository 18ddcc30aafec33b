#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stancemil/autodiff.hpp"
#include "stancemil/encoders.hpp"
#include "stancemil/labels.hpp"
#include "stancemil/mil.hpp"

namespace stancemil {

// beta_k = softmax_k(h_bar_c . keys[k]).
Vector classifier_attention(const Vector& h_bar_c, const std::vector<Vector>& keys);

// Per post: score[s] = sum over pairs k with stance s of beta_k * p_k[0].
// p_per_post[i][k] is classifier k's 2-simplex for post i.
std::vector<Vector> aggregate_stance(const Vector& beta, const std::vector<std::vector<Vector>>& p_per_post,
                                     const std::vector<TargetPair>& pairs, std::size_t stance_count);

// score[v] = sum over pairs k with veracity v of beta_k * y_k[0].
Vector aggregate_veracity(const Vector& beta, const std::vector<Vector>& y_per_k,
                          const std::vector<TargetPair>& pairs, std::size_t veracity_count);

// First index of the maximum; vocabulary order breaks ties.
std::size_t argmax_first(const Vector& scores);

// Global claim encoder; its parameters are the only ones Stage 2 updates.
class Aggregator {
 public:
  Aggregator() = default;
  Aggregator(const EncoderConfig& encoder, const Backbones& backbones, std::uint64_t seed);

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  ad::Var encode(ad::Tape& tape, const ad::SparseFeatures& claim_global);
  Vector encode_claim_global(const ad::SparseFeatures& claim_global) const;
  Vector encode_claim_global(const std::string& text) const;

 private:
  Backbones backbones_;
  ad::ParameterSet params_;
  LinearEncoder encoder_;
};

// Outputs of the K frozen classifiers on one tree, plus what Stage 2 needs.
struct FrozenOutputs {
  std::string claim_id;
  std::vector<std::string> post_ids;
  ad::SparseFeatures claim_global;
  std::vector<BinaryOutput> per_classifier;
  bool degenerate = false;
};

FrozenOutputs run_classifiers(const EncodedTree& tree, const std::vector<BinaryClassifier>& classifiers);

struct JointPrediction {
  std::string claim_id;
  Vector beta;
  std::vector<std::string> post_ids;
  std::vector<Vector> stance;  // raw (sub-normalized) scores per post
  Vector veracity;             // raw scores
  std::size_t veracity_pred = 0;
  std::vector<std::size_t> stance_preds;
  bool degenerate = false;
};

// Classifier attention and grouped sums over cached classifier outputs. `uniform_beta` replaces the
// attention by 1/K.
JointPrediction combine(const FrozenOutputs& outputs, const Aggregator& aggregator,
                        const std::vector<TargetPair>& pairs, std::size_t veracity_count,
                        std::size_t stance_count, bool uniform_beta);

JointPrediction predict_joint(const EncodedTree& tree, const std::vector<BinaryClassifier>& classifiers,
                              const Aggregator& aggregator, const std::vector<TargetPair>& pairs,
                              std::size_t veracity_count, std::size_t stance_count, bool uniform_beta);

// Scores divided by their total mass (argmax-invariant); zero mass stays zero.
Vector renormalized(const Vector& scores);

// One JSONL record.
nlohmann::ordered_json prediction_to_json(const JointPrediction& prediction, const Vocabulary& veracity,
                                          const Vocabulary& stance);

}  // namespace stancemil
