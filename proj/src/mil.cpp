#include "stancemil/mil.hpp"

#include <cmath>
#include <random>

#include "stancemil/error.hpp"

namespace stancemil {

using ad::Tape;
using ad::Var;

void validate_hyper(const MilHyper& hyper) {
  if (!(hyper.rho >= 0.0 && hyper.rho <= 1.0))
    throw Error(ErrorKind::kParameter, "rho must lie in [0,1], got " + std::to_string(hyper.rho));
  if (!(hyper.lambda >= 0.0 && hyper.lambda <= 1.0))
    throw Error(ErrorKind::kParameter, "lambda must lie in [0,1], got " + std::to_string(hyper.lambda));
}

AblationCode parse_ablation(const std::string& code) {
  if (code == "full") return AblationCode::kFull;
  if (code == "wos") return AblationCode::kWos;
  if (code == "woe") return AblationCode::kWoe;
  if (code == "wop") return AblationCode::kWop;
  if (code == "woo") return AblationCode::kWoo;
  if (code == "wog") return AblationCode::kWog;
  if (code == "woh") return AblationCode::kWoh;
  if (code == "woa") return AblationCode::kWoa;
  throw Error(ErrorKind::kUsage, "unknown ablation code '" + code + "' (expected full, wos, woe, wop, woo, wog, woh, woa)");
}

std::string ablation_name(AblationCode code) {
  switch (code) {
    case AblationCode::kFull: return "full";
    case AblationCode::kWos: return "wos";
    case AblationCode::kWoe: return "woe";
    case AblationCode::kWop: return "wop";
    case AblationCode::kWoo: return "woo";
    case AblationCode::kWog: return "wog";
    case AblationCode::kWoh: return "woh";
    case AblationCode::kWoa: return "woa";
  }
  return "full";
}

std::string ablation_description(AblationCode code) {
  switch (code) {
    case AblationCode::kFull: return "full model";
    case AblationCode::kWos: return "no post propagation (h' = h)";
    case AblationCode::kWoe: return "no explanation branch (e = 0)";
    case AblationCode::kWop: return "gated recurrent encoders instead of the projection encoders";
    case AblationCode::kWoo: return "no local attention (p~ = p)";
    case AblationCode::kWog: return "mean over posts instead of explanation-guided global attention";
    case AblationCode::kWoh: return "single dot-product attention instead of local + global attention";
    case AblationCode::kWoa: return "uniform classifier weights";
  }
  return "";
}

ModelVariant variant_for(AblationCode code) {
  ModelVariant v;
  switch (code) {
    case AblationCode::kFull: break;
    case AblationCode::kWos: v.post_propagation = false; break;
    case AblationCode::kWoe: v.explanations = false; break;
    case AblationCode::kWop: v.recurrent_encoder = true; break;
    case AblationCode::kWoo: v.local_attention = false; break;
    case AblationCode::kWog: v.global = GlobalAggregation::kMean; break;
    case AblationCode::kWoh: v.global = GlobalAggregation::kDotProduct; break;
    case AblationCode::kWoa: v.classifier_attention = false; break;
  }
  return v;
}

namespace {

void check_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw Error(ErrorKind::kNumeric, "non-finite values in " + what);
}

// Softmax attention of `query` over the columns `keys`; returns the weights
// (m x 1) and the weighted sum of `values` columns.
std::pair<Var, Var> attend(const std::vector<Var>& keys, const Var& query, const std::vector<Var>& values) {
  Var key_matrix = ad::hstack(keys);
  Var weights = ad::softmax(ad::matmul(ad::transpose(key_matrix), query));
  Var mixed = ad::matmul(ad::hstack(values), weights);
  return {weights, mixed};
}

const std::vector<int>& neighbors_of(const TreeTopology& topo, std::size_t node) {
  return node == 0 ? topo.claim_replies : topo.post_neighbors[node];
}

AttentionRow to_row(int node, const std::vector<int>& neighbors, const Var& weights) {
  AttentionRow row;
  row.node = node;
  row.neighbors = neighbors;
  const Matrix& w = weights.value();
  row.weights.assign(w.data(), w.data() + w.size());
  return row;
}

std::vector<AttentionRow> to_rows(const TreeTopology& topo, const std::vector<std::pair<int, Var>>& rows) {
  std::vector<AttentionRow> out;
  out.reserve(rows.size());
  for (const auto& [node, w] : rows) out.push_back(to_row(node, neighbors_of(topo, node), w));
  return out;
}

void check_topology(const TreeTopology& topo, std::size_t count, const char* what) {
  if (count != topo.node_count())
    throw Error(ErrorKind::kShape, std::string(what) + ": expected " + std::to_string(topo.node_count()) +
                                       " node vectors, got " + std::to_string(count));
}

}  // namespace

namespace mil {

PropagationOut propagate_undirected(const TreeTopology& topo, const std::vector<Var>& h, double rho) {
  validate_hyper({rho, 0.0});
  check_topology(topo, h.size(), "propagate_undirected");
  PropagationOut out;
  out.h_prime.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& nb = neighbors_of(topo, i);
    if (nb.empty()) {
      out.h_prime[i] = h[i];
      continue;
    }
    std::vector<Var> keys;
    keys.reserve(nb.size());
    for (int j : nb) keys.push_back(h[j]);
    auto [weights, mixed] = attend(keys, h[i], keys);
    out.h_prime[i] = ad::mix(h[i], mixed, rho);
    out.rows.emplace_back(static_cast<int>(i), weights);
  }
  return out;
}

Var fuse(const Var& first, const Var& second) {
  if (first.rows() != second.rows() || first.cols() != 1 || second.cols() != 1)
    throw Error(ErrorKind::kShape, "fusion expects two d-vectors, got " + std::to_string(first.rows()) + "x" +
                                       std::to_string(first.cols()) + " and " + std::to_string(second.rows()) +
                                       "x" + std::to_string(second.cols()));
  return ad::concat({first, second});
}

Var claim_logit_term(const Var& w2, const Var& h_prime_c, const Var& bias) {
  return ad::add(ad::matmul(w2, h_prime_c), bias);
}

Var post_logits(const Var& w1, const Var& h_tilde) { return ad::matmul(w1, h_tilde); }

Var stance_probability(const Var& logits, const Var& claim_term) { return ad::softmax(ad::add(logits, claim_term)); }

LocalOut local_attention(const TreeTopology& topo, const std::vector<Var>& h_tilde, const std::vector<Var>& p,
                         double lambda) {
  validate_hyper({0.0, lambda});
  check_topology(topo, h_tilde.size(), "local_attention");
  check_topology(topo, p.size(), "local_attention");
  LocalOut out;
  out.p_tilde.resize(p.size());
  for (std::size_t i = 1; i < p.size(); ++i) {
    const auto& nb = topo.post_neighbors[i];
    if (nb.empty()) {
      out.p_tilde[i] = p[i];
      continue;
    }
    std::vector<Var> keys, values;
    for (int j : nb) {
      keys.push_back(h_tilde[j]);
      values.push_back(p[j]);
    }
    auto [weights, mixed] = attend(keys, h_tilde[i], values);
    out.p_tilde[i] = ad::mix(p[i], mixed, lambda);
    out.rows.emplace_back(static_cast<int>(i), weights);
  }
  return out;
}

GlobalOut global_attention_veracity(const std::vector<Var>& e_posts, const Var& h_c,
                                    const std::vector<Var>& p_tilde_posts) {
  if (e_posts.empty()) throw Error(ErrorKind::kInput, "degenerate bag: global attention needs at least one post");
  if (e_posts.size() != p_tilde_posts.size())
    throw Error(ErrorKind::kShape, "global attention: explanation and stance counts differ");
  auto [weights, mixed] = attend(e_posts, h_c, p_tilde_posts);
  return {weights, mixed};
}

}  // namespace mil

// ---------------------------------------------------------------------------

PropagationResult propagate_undirected(const TreeTopology& topo, const std::vector<Vector>& embeddings,
                                       double rho) {
  Tape tape;
  std::vector<Var> h;
  for (const auto& v : embeddings) h.push_back(tape.constant(Matrix(v)));
  auto out = mil::propagate_undirected(topo, h, rho);
  PropagationResult result;
  for (const auto& v : out.h_prime) result.h_prime.emplace_back(v.value());
  result.rows = to_rows(topo, out.rows);
  return result;
}

Vector fuse_representations(const Vector& h_prime, const Vector& e) {
  Tape tape;
  return mil::fuse(tape.constant(Matrix(h_prime)), tape.constant(Matrix(e))).value();
}

Vector stance_probability(const Vector& h_tilde, const Vector& h_prime_c, const Matrix& w1, const Matrix& w2,
                          const Vector& bias) {
  if (w1.rows() != 2 || w2.rows() != 2 || bias.size() != 2 || w1.cols() != h_tilde.size() ||
      w2.cols() != h_prime_c.size())
    throw Error(ErrorKind::kShape, "stance head expects W1 (2 x 2d), W2 (2 x d) and a 2-vector bias");
  Tape tape;
  Var claim_term = mil::claim_logit_term(tape.constant(w2), tape.constant(Matrix(h_prime_c)),
                                         tape.constant(Matrix(bias)));
  Var logits = mil::post_logits(tape.constant(w1), tape.constant(Matrix(h_tilde)));
  check_finite(ad::add(logits, claim_term).value(), "stance logits");
  return mil::stance_probability(logits, claim_term).value();
}

LocalAttentionResult local_attention(const TreeTopology& topo, const std::vector<Vector>& h_tilde,
                                     const std::vector<Vector>& p, double lambda) {
  Tape tape;
  std::vector<Var> ht, pv;
  for (const auto& v : h_tilde) ht.push_back(tape.constant(Matrix(v)));
  // Slot 0 is the claim: placeholder, never read.
  for (std::size_t i = 0; i < p.size(); ++i)
    pv.push_back(tape.constant(i == 0 && p[i].size() == 0 ? Matrix(Matrix::Zero(2, 1)) : Matrix(p[i])));
  auto out = mil::local_attention(topo, ht, pv, lambda);
  LocalAttentionResult result;
  result.p_tilde.resize(p.size());
  for (std::size_t i = 1; i < p.size(); ++i) result.p_tilde[i] = out.p_tilde[i].value();
  result.rows = to_rows(topo, out.rows);
  return result;
}

GlobalAttentionResult global_attention_veracity(const std::vector<Vector>& e_posts, const Vector& h_c,
                                                const std::vector<Vector>& p_tilde_posts) {
  Tape tape;
  std::vector<Var> e, p;
  for (const auto& v : e_posts) e.push_back(tape.constant(Matrix(v)));
  for (const auto& v : p_tilde_posts) p.push_back(tape.constant(Matrix(v)));
  auto out = mil::global_attention_veracity(e, tape.constant(Matrix(h_c)), p);
  return {out.delta.value(), out.veracity.value()};
}

// ---------------------------------------------------------------------------

EncodedTree encode_tree(const ConversationTree& tree, const TreeExplanations& explanations,
                        const Backbones& backbones, const EncoderConfig& encoder, bool with_tokens) {
  EncodedTree out;
  out.claim_id = tree.claim_id;
  out.topology = build_topology(tree);
  const Backbone& sent = *backbones.sentence;
  const Backbone& expl = *backbones.explanation;
  const int cap = encoder.recurrent_max_tokens;

  out.claim = sent.features(tree.claim_text);
  out.claim_global = expl.features(tree.claim_text);
  for (const auto& post : tree.posts) {
    out.post_ids.push_back(post.id);
    out.posts.push_back(sent.features(post.text));
  }
  for (const auto& text : explanations.claim) out.claim_explanations.push_back(expl.features(text));
  out.post_explanations.resize(explanations.post.size());
  for (std::size_t k = 0; k < explanations.post.size(); ++k) {
    if (explanations.post[k].size() != tree.posts.size())
      throw Error(ErrorKind::kShape, "claim " + tree.claim_id + ": explanation count for classifier " +
                                         std::to_string(k) + " does not match the post count");
    for (const auto& text : explanations.post[k]) out.post_explanations[k].push_back(expl.features(text));
  }
  if (with_tokens) {
    out.claim_tokens = sent.token_ids(tree.claim_text, cap);
    for (const auto& post : tree.posts) out.post_tokens.push_back(sent.token_ids(post.text, cap));
    for (const auto& text : explanations.claim) out.claim_explanation_tokens.push_back(expl.token_ids(text, cap));
    out.post_explanation_tokens.resize(explanations.post.size());
    for (std::size_t k = 0; k < explanations.post.size(); ++k)
      for (const auto& text : explanations.post[k]) out.post_explanation_tokens[k].push_back(expl.token_ids(text, cap));
  }
  return out;
}

BinaryClassifier::BinaryClassifier(TargetPair target, const EncoderConfig& encoder, const Backbones& backbones,
                                   MilHyper hyper, ModelVariant variant, std::uint64_t seed)
    : target_(std::move(target)),
      hyper_(hyper),
      variant_(variant),
      dim_(encoder.model_dim),
      recurrent_max_tokens_(encoder.recurrent_max_tokens),
      backbones_(backbones) {
  validate_hyper(hyper_);
  if (dim_ <= 0) throw Error(ErrorKind::kConfig, "model_dim must be positive");
  std::mt19937_64 rng(seed);
  const int d = dim_;
  if (variant_.recurrent_encoder) {
    claim_rnn_ = RecurrentEncoder(params_, "enc.claim", backbones_.sentence->vocabulary_size(), d, rng);
    post_rnn_ = RecurrentEncoder(params_, "enc.post", backbones_.sentence->vocabulary_size(), d, rng);
    explanation_rnn_ = RecurrentEncoder(params_, "enc.explanation", backbones_.explanation->vocabulary_size(), d, rng);
  } else {
    claim_encoder_ = LinearEncoder(params_, "enc.claim", backbones_.sentence->dim(), d, rng);
    post_encoder_ = LinearEncoder(params_, "enc.post", backbones_.sentence->dim(), d, rng);
    explanation_head_ = ProjectionHead(params_, "enc.explanation", backbones_.explanation->dim(), d, encoder.ff_dim, rng);
  }
  params_.add("head.w1", xavier_matrix(2, 2 * d, rng));
  w1_ = params_.size() - 1;
  params_.add("head.w2", xavier_matrix(2, d, rng));
  w2_ = params_.size() - 1;
  params_.add("head.bias", Matrix::Zero(2, 1));
  bias_ = params_.size() - 1;
}

void BinaryClassifier::set_hyper(MilHyper hyper) {
  validate_hyper(hyper);
  hyper_ = hyper;
}

void BinaryClassifier::set_explanation_identity(const EncoderConfig&) {
  if (!variant_.recurrent_encoder) explanation_head_.set_identity_truncation(params_);
}

Var BinaryClassifier::encode_sentence(Tape& tape, bool claim, const ad::SparseFeatures& x,
                                      const std::vector<int>& tokens) {
  if (variant_.recurrent_encoder) return (claim ? claim_rnn_ : post_rnn_).encode(tape, params_, tokens);
  return (claim ? claim_encoder_ : post_encoder_).encode(tape, params_, x);
}

Var BinaryClassifier::encode_expl(Tape& tape, const ad::SparseFeatures& x, const std::vector<int>& tokens) {
  if (!variant_.explanations) return tape.constant(Matrix::Zero(dim_, 1));
  if (variant_.recurrent_encoder) return explanation_rnn_.encode(tape, params_, tokens);
  return explanation_head_.encode(tape, params_, x);
}

BinaryForward BinaryClassifier::forward(Tape& tape, const EncodedTree& tree) {
  const std::size_t n = tree.post_count();
  const std::size_t k = target_.index;
  const std::size_t v = target_.veracity_index;
  if (k >= tree.post_explanations.size() || v >= tree.claim_explanations.size())
    throw Error(ErrorKind::kConfig, "claim " + tree.claim_id + " lacks explanations for classifier " +
                                        std::to_string(k));
  const bool rec = variant_.recurrent_encoder;
  static const std::vector<int> kNoTokens;
  auto tokens = [&](const std::vector<int>* t) -> const std::vector<int>& { return rec ? *t : kNoTokens; };

  BinaryForward f;
  // Sentence and explanation encodings.
  f.h.resize(n + 1);
  f.e.resize(n + 1);
  f.h[0] = encode_sentence(tape, true, tree.claim, tokens(rec ? &tree.claim_tokens : nullptr));
  f.e[0] = encode_expl(tape, tree.claim_explanations[v],
                       tokens(rec ? &tree.claim_explanation_tokens[v] : nullptr));
  for (std::size_t i = 0; i < n; ++i) {
    f.h[i + 1] = encode_sentence(tape, false, tree.posts[i], tokens(rec ? &tree.post_tokens[i] : nullptr));
    f.e[i + 1] = encode_expl(tape, tree.post_explanations[k][i],
                             tokens(rec ? &tree.post_explanation_tokens[k][i] : nullptr));
  }

  // Neighbor propagation.
  if (variant_.post_propagation) {
    auto prop = mil::propagate_undirected(tree.topology, f.h, hyper_.rho);
    f.h_prime = std::move(prop.h_prime);
    f.propagation_rows = std::move(prop.rows);
  } else {
    f.h_prime = f.h;
  }

  // Fusion: the claim keeps its unpropagated encoding.
  f.h_tilde.resize(n + 1);
  f.h_tilde[0] = mil::fuse(f.h[0], f.e[0]);
  for (std::size_t i = 1; i <= n; ++i) f.h_tilde[i] = mil::fuse(f.h_prime[i], f.e[i]);

  if (n == 0) {
    f.degenerate = true;
    f.veracity = tape.constant(Matrix::Constant(2, 1, 0.5));
    f.delta = tape.constant(Matrix(0, 1));
    f.p.resize(1);
    f.p_tilde.resize(1);
    return f;
  }

  // Binary stance head.
  Var w1 = tape.parameter(params_[w1_]);
  Var claim_term = mil::claim_logit_term(tape.parameter(params_[w2_]), f.h_prime[0], tape.parameter(params_[bias_]));
  f.p.resize(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    Var logits = mil::post_logits(w1, f.h_tilde[i]);
    f.p[i] = mil::stance_probability(logits, claim_term);
    if (!f.p[i].value().allFinite())
      throw Error(ErrorKind::kNumeric, "stance head: non-finite logits for post " + tree.post_ids[i - 1] +
                                           " of claim " + tree.claim_id);
  }

  // Local smoothing.
  const bool dot_product = variant_.global == GlobalAggregation::kDotProduct;
  if (variant_.local_attention && !dot_product) {
    auto local = mil::local_attention(tree.topology, f.h_tilde, f.p, hyper_.lambda);
    f.p_tilde = std::move(local.p_tilde);
    f.local_rows = std::move(local.rows);
  } else {
    f.p_tilde = f.p;
  }

  // Bag-level veracity.
  std::vector<Var> p_posts(f.p_tilde.begin() + 1, f.p_tilde.end());
  switch (variant_.global) {
    case GlobalAggregation::kExplanationAttention: {
      std::vector<Var> e_posts(f.e.begin() + 1, f.e.end());
      auto g = mil::global_attention_veracity(e_posts, f.h[0], p_posts);
      f.delta = g.delta;
      f.veracity = g.veracity;
      break;
    }
    case GlobalAggregation::kMean: {
      f.delta = tape.constant(Matrix::Constant(static_cast<Eigen::Index>(n), 1, 1.0 / static_cast<double>(n)));
      f.veracity = ad::matmul(ad::hstack(p_posts), f.delta);
      break;
    }
    case GlobalAggregation::kDotProduct: {
      const double scale = 1.0 / std::sqrt(2.0 * dim_);
      std::vector<Var> keys(f.h_tilde.begin() + 1, f.h_tilde.end());
      Var scores = ad::scale(ad::matmul(ad::transpose(ad::hstack(keys)), f.h_tilde[0]), scale);
      f.delta = ad::softmax(scores);
      f.veracity = ad::matmul(ad::hstack(p_posts), f.delta);
      break;
    }
  }
  return f;
}

BinaryOutput BinaryClassifier::extract(const BinaryForward& fwd, const EncodedTree& tree) {
  BinaryOutput out;
  out.degenerate = fwd.degenerate;
  out.veracity = fwd.veracity.value();
  out.delta = fwd.delta.value();
  // Classifier-attention key: [I | I] applied to h_tilde_c = h_c || e_c.
  out.claim_summary = fwd.h[0].value() + fwd.e[0].value();
  for (std::size_t i = 1; i < fwd.p.size(); ++i) out.stance.emplace_back(fwd.p[i].value());
  out.propagation_rows = to_rows(tree.topology, fwd.propagation_rows);
  out.local_rows = to_rows(tree.topology, fwd.local_rows);
  return out;
}

BinaryOutput BinaryClassifier::predict(const EncodedTree& tree) const {
  Tape tape;
  // forward() only reads parameter values; nothing is written without backward().
  auto fwd = const_cast<BinaryClassifier*>(this)->forward(tape, tree);
  return extract(fwd, tree);
}

Vector BinaryClassifier::encode_claim(const std::string& text) const {
  if (text.empty()) throw Error(ErrorKind::kInput, "cannot encode empty claim text");
  Tape tape;
  auto* self = const_cast<BinaryClassifier*>(this);
  return self->encode_sentence(tape, true, backbones_.sentence->features(text),
                               backbones_.sentence->token_ids(text, recurrent_max_tokens_)).value();
}

Vector BinaryClassifier::encode_post(const std::string& text) const {
  if (text.empty()) throw Error(ErrorKind::kInput, "cannot encode empty post text");
  Tape tape;
  auto* self = const_cast<BinaryClassifier*>(this);
  return self->encode_sentence(tape, false, backbones_.sentence->features(text),
                               backbones_.sentence->token_ids(text, recurrent_max_tokens_)).value();
}

Vector BinaryClassifier::encode_explanation(const std::string& text) const {
  if (text.empty()) throw Error(ErrorKind::kInput, "cannot encode empty explanation text");
  Tape tape;
  auto* self = const_cast<BinaryClassifier*>(this);
  return self->encode_expl(tape, backbones_.explanation->features(text),
                           backbones_.explanation->token_ids(text, recurrent_max_tokens_)).value();
}

nlohmann::ordered_json attention_rows_to_json(const std::vector<AttentionRow>& rows,
                                              const std::vector<std::string>& node_ids) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json weights = nlohmann::ordered_json::object();
    for (std::size_t j = 0; j < row.neighbors.size(); ++j) weights[node_ids[row.neighbors[j]]] = row.weights[j];
    out.push_back({{"node", node_ids[row.node]}, {"weights", weights}});
  }
  return out;
}

nlohmann::ordered_json attention_dump_json(const EncodedTree& tree, const BinaryOutput& out, std::size_t k) {
  std::vector<std::string> node_ids{tree.claim_id};
  node_ids.insert(node_ids.end(), tree.post_ids.begin(), tree.post_ids.end());
  nlohmann::ordered_json global = nlohmann::ordered_json::object();
  for (Eigen::Index i = 0; i < out.delta.size(); ++i) global[tree.post_ids[i]] = out.delta(i);
  return {{"claim_id", tree.claim_id},
          {"classifier", k},
          {"propagation", attention_rows_to_json(out.propagation_rows, node_ids)},
          {"local", attention_rows_to_json(out.local_rows, node_ids)},
          {"global", global}};
}

}  // namespace stancemil
