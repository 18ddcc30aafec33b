#include "stancemil/aggregation.hpp"

#include <random>

#include "stancemil/error.hpp"

namespace stancemil {

using ad::Tape;
using ad::Var;

namespace {

void check_pairs(const std::vector<TargetPair>& pairs, std::size_t k_count) {
  if (pairs.size() != k_count)
    throw Error(ErrorKind::kConfig, "expected " + std::to_string(pairs.size()) + " classifier outputs, got " +
                                        std::to_string(k_count));
}

}  // namespace

Vector classifier_attention(const Vector& h_bar_c, const std::vector<Vector>& keys) {
  if (keys.empty()) throw Error(ErrorKind::kInput, "classifier attention needs at least one classifier");
  Vector scores(static_cast<Eigen::Index>(keys.size()));
  for (std::size_t k = 0; k < keys.size(); ++k) {
    if (keys[k].size() != h_bar_c.size())
      throw Error(ErrorKind::kShape, "classifier " + std::to_string(k) + " key has dimension " +
                                         std::to_string(keys[k].size()) + ", expected " +
                                         std::to_string(h_bar_c.size()));
    scores(static_cast<Eigen::Index>(k)) = h_bar_c.dot(keys[k]);
    if (!std::isfinite(scores(static_cast<Eigen::Index>(k))))
      throw Error(ErrorKind::kNumeric, "non-finite classifier similarity for k=" + std::to_string(k));
  }
  Tape tape;
  return ad::softmax(tape.constant(Matrix(scores))).value();
}

std::vector<Vector> aggregate_stance(const Vector& beta, const std::vector<std::vector<Vector>>& p_per_post,
                                     const std::vector<TargetPair>& pairs, std::size_t stance_count) {
  const auto groups = group_by_stance(pairs, stance_count);
  check_pairs(pairs, static_cast<std::size_t>(beta.size()));
  std::vector<Vector> out;
  out.reserve(p_per_post.size());
  for (const auto& per_k : p_per_post) {
    check_pairs(pairs, per_k.size());
    Vector scores = Vector::Zero(static_cast<Eigen::Index>(stance_count));
    for (std::size_t s = 0; s < stance_count; ++s)
      for (std::size_t k : groups[s]) scores(s) += beta(k) * per_k[k](0);
    out.push_back(std::move(scores));
  }
  return out;
}

Vector aggregate_veracity(const Vector& beta, const std::vector<Vector>& y_per_k,
                          const std::vector<TargetPair>& pairs, std::size_t veracity_count) {
  const auto groups = group_by_veracity(pairs, veracity_count);
  check_pairs(pairs, static_cast<std::size_t>(beta.size()));
  check_pairs(pairs, y_per_k.size());
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(veracity_count));
  for (std::size_t v = 0; v < veracity_count; ++v)
    for (std::size_t k : groups[v]) scores(v) += beta(k) * y_per_k[k](0);
  return scores;
}

std::size_t argmax_first(const Vector& scores) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores(i) > scores(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  return best;
}

Aggregator::Aggregator(const EncoderConfig& encoder, const Backbones& backbones, std::uint64_t seed)
    : backbones_(backbones) {
  std::mt19937_64 rng(seed);
  encoder_ = LinearEncoder(params_, "aggregator.claim", backbones_.explanation->dim(), encoder.model_dim, rng);
}

Var Aggregator::encode(Tape& tape, const ad::SparseFeatures& claim_global) {
  return encoder_.encode(tape, params_, claim_global);
}

Vector Aggregator::encode_claim_global(const ad::SparseFeatures& claim_global) const {
  Tape tape;
  return const_cast<Aggregator*>(this)->encode(tape, claim_global).value();
}

Vector Aggregator::encode_claim_global(const std::string& text) const {
  if (text.empty()) throw Error(ErrorKind::kInput, "cannot encode empty claim text");
  return encode_claim_global(backbones_.explanation->features(text));
}

FrozenOutputs run_classifiers(const EncodedTree& tree, const std::vector<BinaryClassifier>& classifiers) {
  FrozenOutputs out;
  out.claim_id = tree.claim_id;
  out.post_ids = tree.post_ids;
  out.claim_global = tree.claim_global;
  out.degenerate = tree.post_count() == 0;
  out.per_classifier.reserve(classifiers.size());
  for (const auto& c : classifiers) out.per_classifier.push_back(c.predict(tree));
  return out;
}

JointPrediction combine(const FrozenOutputs& outputs, const Aggregator& aggregator,
                        const std::vector<TargetPair>& pairs, std::size_t veracity_count,
                        std::size_t stance_count, bool uniform_beta) {
  const std::size_t k_count = outputs.per_classifier.size();
  if (k_count != pairs.size())
    throw Error(ErrorKind::kConfig, "claim " + outputs.claim_id + ": have " + std::to_string(k_count) +
                                        " classifier outputs for " + std::to_string(pairs.size()) + " pairs");
  JointPrediction pred;
  pred.claim_id = outputs.claim_id;
  pred.post_ids = outputs.post_ids;
  pred.degenerate = outputs.degenerate;
  if (uniform_beta) {
    pred.beta = Vector::Constant(static_cast<Eigen::Index>(k_count), 1.0 / static_cast<double>(k_count));
  } else {
    std::vector<Vector> keys;
    for (const auto& o : outputs.per_classifier) keys.push_back(o.claim_summary);
    pred.beta = classifier_attention(aggregator.encode_claim_global(outputs.claim_global), keys);
  }
  if (outputs.degenerate) {
    pred.veracity = Vector::Constant(static_cast<Eigen::Index>(veracity_count), 1.0 / static_cast<double>(veracity_count));
  } else {
    std::vector<Vector> y;
    for (const auto& o : outputs.per_classifier) y.push_back(o.veracity);
    pred.veracity = aggregate_veracity(pred.beta, y, pairs, veracity_count);
  }
  pred.veracity_pred = argmax_first(pred.veracity);

  const std::size_t n = outputs.post_ids.size();
  std::vector<std::vector<Vector>> p_per_post(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& o : outputs.per_classifier) p_per_post[i].push_back(o.stance[i]);
  pred.stance = aggregate_stance(pred.beta, p_per_post, pairs, stance_count);
  for (const auto& s : pred.stance) pred.stance_preds.push_back(argmax_first(s));
  return pred;
}

JointPrediction predict_joint(const EncodedTree& tree, const std::vector<BinaryClassifier>& classifiers,
                              const Aggregator& aggregator, const std::vector<TargetPair>& pairs,
                              std::size_t veracity_count, std::size_t stance_count, bool uniform_beta) {
  if (classifiers.size() != pairs.size())
    throw Error(ErrorKind::kConfig, "missing classifiers: have " + std::to_string(classifiers.size()) + " of " +
                                        std::to_string(pairs.size()));
  return combine(run_classifiers(tree, classifiers), aggregator, pairs, veracity_count, stance_count, uniform_beta);
}

Vector renormalized(const Vector& scores) {
  const double total = scores.sum();
  if (total <= 0.0) return scores;
  return scores / total;
}

nlohmann::ordered_json prediction_to_json(const JointPrediction& prediction, const Vocabulary& veracity,
                                          const Vocabulary& stance) {
  nlohmann::ordered_json j;
  j["claim_id"] = prediction.claim_id;
  nlohmann::ordered_json vs = nlohmann::ordered_json::object();
  for (std::size_t v = 0; v < veracity.size(); ++v) vs[veracity.code(v)] = prediction.veracity(v);
  j["veracity_scores"] = vs;
  j["veracity_pred"] = veracity.code(prediction.veracity_pred);
  nlohmann::ordered_json stances = nlohmann::ordered_json::object();
  nlohmann::ordered_json preds = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < prediction.post_ids.size(); ++i) {
    nlohmann::ordered_json ss = nlohmann::ordered_json::object();
    for (std::size_t s = 0; s < stance.size(); ++s) ss[stance.code(s)] = prediction.stance[i](s);
    stances[prediction.post_ids[i]] = ss;
    preds[prediction.post_ids[i]] = stance.code(prediction.stance_preds[i]);
  }
  j["stances"] = stances;
  j["stance_preds"] = preds;
  j["beta"] = std::vector<double>(prediction.beta.data(), prediction.beta.data() + prediction.beta.size());
  if (prediction.degenerate) j["degenerate"] = true;
  return j;
}

}  // namespace stancemil
