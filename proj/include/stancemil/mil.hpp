#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stancemil/autodiff.hpp"
#include "stancemil/encoders.hpp"
#include "stancemil/explanations.hpp"
#include "stancemil/labels.hpp"
#include "stancemil/tree.hpp"

namespace stancemil {

using ad::Matrix;
using ad::Vector;

// Retention ratios: rho for post propagation, lambda for local attention.
struct MilHyper {
  double rho = 0.3;
  double lambda = 0.5;
};

void validate_hyper(const MilHyper& hyper);

enum class GlobalAggregation { kExplanationAttention, kMean, kDotProduct };

// Architecture switches; the default is the full model. Each ablation code
// flips exactly one of these.
struct ModelVariant {
  bool post_propagation = true;
  bool explanations = true;
  bool recurrent_encoder = false;
  bool local_attention = true;
  GlobalAggregation global = GlobalAggregation::kExplanationAttention;
  bool classifier_attention = true;
};

enum class AblationCode { kFull, kWos, kWoe, kWop, kWoo, kWog, kWoh, kWoa };

AblationCode parse_ablation(const std::string& code);
std::string ablation_name(AblationCode code);
std::string ablation_description(AblationCode code);
ModelVariant variant_for(AblationCode code);

// Sparse attention row of one node: weights over its neighbor node indices.
struct AttentionRow {
  int node = 0;
  std::vector<int> neighbors;
  std::vector<double> weights;
};

// ---------------------------------------------------------------------------
// Tape-level building blocks. Node-indexed vectors use slot 0 for the claim.

namespace mil {

struct PropagationOut {
  std::vector<ad::Var> h_prime;
  std::vector<std::pair<int, ad::Var>> rows;  // node -> attention weights over its neighbors
};

// Undirected neighbor attention with retention rho. Posts attend over their
// post neighbors; the claim attends over its direct replies; nodes without
// neighbors keep their input.
PropagationOut propagate_undirected(const TreeTopology& topo, const std::vector<ad::Var>& h, double rho);

ad::Var fuse(const ad::Var& first, const ad::Var& second);

// softmax(W1 h_tilde + (W2 h_prime_c + b)); index 0 is the positive class.
ad::Var stance_probability(const ad::Var& logits, const ad::Var& claim_term);
ad::Var claim_logit_term(const ad::Var& w2, const ad::Var& h_prime_c, const ad::Var& bias);
ad::Var post_logits(const ad::Var& w1, const ad::Var& h_tilde);

struct LocalOut {
  std::vector<ad::Var> p_tilde;  // node-indexed, slot 0 unused
  std::vector<std::pair<int, ad::Var>> rows;
};

LocalOut local_attention(const TreeTopology& topo, const std::vector<ad::Var>& h_tilde,
                         const std::vector<ad::Var>& p, double lambda);

struct GlobalOut {
  ad::Var delta;     // n x 1 over posts
  ad::Var veracity;  // 2 x 1
};

// delta = softmax_i(e_i . h_c); veracity = sum_i delta_i p_tilde_i.
GlobalOut global_attention_veracity(const std::vector<ad::Var>& e_posts, const ad::Var& h_c,
                                    const std::vector<ad::Var>& p_tilde_posts);

}  // namespace mil

// ---------------------------------------------------------------------------
// Value-level operations.

struct PropagationResult {
  std::vector<Vector> h_prime;
  std::vector<AttentionRow> rows;
};

PropagationResult propagate_undirected(const TreeTopology& topo, const std::vector<Vector>& embeddings,
                                       double rho);
Vector fuse_representations(const Vector& h_prime, const Vector& e);
Vector stance_probability(const Vector& h_tilde, const Vector& h_prime_c, const Matrix& w1, const Matrix& w2,
                          const Vector& bias);

struct LocalAttentionResult {
  std::vector<Vector> p_tilde;  // node-indexed, slot 0 unused (empty)
  std::vector<AttentionRow> rows;
};

LocalAttentionResult local_attention(const TreeTopology& topo, const std::vector<Vector>& h_tilde,
                                     const std::vector<Vector>& p, double lambda);

struct GlobalAttentionResult {
  Vector delta;
  Vector veracity;
};

// Throws an input error ("degenerate bag") when there are no posts.
GlobalAttentionResult global_attention_veracity(const std::vector<Vector>& e_posts, const Vector& h_c,
                                                const std::vector<Vector>& p_tilde_posts);

// ---------------------------------------------------------------------------
// Encoded inputs for one tree. Backbone features are computed once and shared
// by every classifier.

struct EncodedTree {
  std::string claim_id;
  TreeTopology topology;
  std::vector<std::string> post_ids;
  ad::SparseFeatures claim;
  std::vector<ad::SparseFeatures> posts;
  ad::SparseFeatures claim_global;                              // explanation backbone on the claim text
  std::vector<ad::SparseFeatures> claim_explanations;          // [veracity index]
  std::vector<std::vector<ad::SparseFeatures>> post_explanations;  // [pair][post]
  // Token ids, filled only for the recurrent-encoder variant.
  std::vector<int> claim_tokens;
  std::vector<std::vector<int>> post_tokens;
  std::vector<std::vector<int>> claim_explanation_tokens;
  std::vector<std::vector<std::vector<int>>> post_explanation_tokens;

  std::size_t post_count() const { return posts.size(); }
};

EncodedTree encode_tree(const ConversationTree& tree, const TreeExplanations& explanations,
                        const Backbones& backbones, const EncoderConfig& encoder, bool with_tokens);

struct BinaryForward {
  std::vector<ad::Var> h, h_prime, e, h_tilde, p, p_tilde;  // node-indexed
  ad::Var delta;
  ad::Var veracity;
  std::vector<std::pair<int, ad::Var>> propagation_rows, local_rows;
  bool degenerate = false;
};

// Plain-value outputs of one classifier on one tree.
struct BinaryOutput {
  std::vector<Vector> stance;  // per post, 2-simplex
  Vector veracity;             // 2-simplex
  Vector claim_summary;        // d-dim projection of h_tilde_c for classifier attention
  std::vector<AttentionRow> propagation_rows;
  std::vector<AttentionRow> local_rows;
  Vector delta;
  bool degenerate = false;
};

// One (veracity, stance) target MIL classifier.
class BinaryClassifier {
 public:
  BinaryClassifier(TargetPair target, const EncoderConfig& encoder, const Backbones& backbones, MilHyper hyper,
                   ModelVariant variant, std::uint64_t seed);

  const TargetPair& target() const { return target_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const MilHyper& hyper() const { return hyper_; }
  void set_hyper(MilHyper hyper);
  const ModelVariant& variant() const { return variant_; }
  int model_dim() const { return dim_; }

  BinaryForward forward(ad::Tape& tape, const EncodedTree& tree);
  BinaryOutput predict(const EncodedTree& tree) const;
  static BinaryOutput extract(const BinaryForward& fwd, const EncodedTree& tree);

  // Stand-alone encoders (value level).
  Vector encode_claim(const std::string& text) const;
  Vector encode_post(const std::string& text) const;
  Vector encode_explanation(const std::string& text) const;
  void set_explanation_identity(const EncoderConfig& encoder);

 private:
  ad::Var encode_sentence(ad::Tape& tape, bool claim, const ad::SparseFeatures& x, const std::vector<int>& tokens);
  ad::Var encode_expl(ad::Tape& tape, const ad::SparseFeatures& x, const std::vector<int>& tokens);

  TargetPair target_;
  MilHyper hyper_;
  ModelVariant variant_;
  int dim_ = 0;
  int recurrent_max_tokens_ = 48;
  Backbones backbones_;
  ad::ParameterSet params_;
  LinearEncoder claim_encoder_, post_encoder_;
  ProjectionHead explanation_head_;
  RecurrentEncoder claim_rnn_, post_rnn_, explanation_rnn_;
  std::size_t w1_ = 0, w2_ = 0, bias_ = 0;
};

nlohmann::ordered_json attention_rows_to_json(const std::vector<AttentionRow>& rows,
                                              const std::vector<std::string>& node_ids);

// Attention dump for one (claim, classifier).
nlohmann::ordered_json attention_dump_json(const EncodedTree& tree, const BinaryOutput& out, std::size_t k);

}  // namespace stancemil
