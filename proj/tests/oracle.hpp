#pragma once

// Loop-based reference for one classifier and the joint prediction. It reads
// parameters by name and rebuilds neighborhoods from parent ids.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stancemil/aggregation.hpp"
#include "stancemil/mil.hpp"
#include "stancemil/tree.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd dense(const stancemil::ad::SparseFeatures& f) {
  VectorXd x = VectorXd::Zero(f.dim);
  for (std::size_t i = 0; i < f.index.size(); ++i) x(f.index[i]) += f.value[i];
  return x;
}

inline VectorXd softmax(const std::vector<double>& s) {
  double m = -INFINITY;
  for (double v : s) m = std::max(m, v);
  VectorXd out(static_cast<Eigen::Index>(s.size()));
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += (out(i) = std::exp(s[i] - m));
  return out / z;
}

struct Neighborhoods {
  std::vector<std::vector<int>> of;  // node-indexed; node 0 lists direct replies
};

inline Neighborhoods neighborhoods(const stancemil::ConversationTree& tree) {
  const std::size_t n = tree.posts.size();
  std::map<std::string, int> node;
  node[tree.claim_id] = 0;
  for (std::size_t i = 0; i < n; ++i) node[tree.posts[i].id] = static_cast<int>(i + 1);
  Neighborhoods nb;
  nb.of.resize(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    const int p = node.at(tree.posts[i - 1].parent_id);
    if (p == 0) {
      nb.of[0].push_back(static_cast<int>(i));
    } else {
      nb.of[i].push_back(p);
      nb.of[p].push_back(static_cast<int>(i));
    }
  }
  return nb;
}

struct BinaryResult {
  std::vector<VectorXd> stance;  // per post
  VectorXd veracity;
  VectorXd delta;
  VectorXd key;
};

inline BinaryResult forward_binary(const stancemil::BinaryClassifier& clf, const stancemil::ConversationTree& tree,
                                   const stancemil::EncodedTree& enc) {
  const auto& P = clf.params();
  auto W = [&](const std::string& name) -> const MatrixXd& { return P.get(name).value(); };
  auto bias = [&](const std::string& name) -> VectorXd { return P.get(name).value().col(0); };
  const double rho = clf.hyper().rho, lambda = clf.hyper().lambda;
  const std::size_t n = tree.posts.size();
  const std::size_t k = clf.target().index, v = clf.target().veracity_index;

  auto explain = [&](const stancemil::ad::SparseFeatures& f) {
    VectorXd z = W("enc.explanation.weight") * dense(f) + bias("enc.explanation.bias");
    if (P.contains("enc.explanation.ff_in.weight")) {
      VectorXd hidden = (W("enc.explanation.ff_in.weight") * z + bias("enc.explanation.ff_in.bias")).cwiseMax(0.0);
      z += W("enc.explanation.ff_out.weight") * hidden + bias("enc.explanation.ff_out.bias");
    }
    return z;
  };

  std::vector<VectorXd> h(n + 1), e(n + 1);
  h[0] = W("enc.claim.weight") * dense(enc.claim) + bias("enc.claim.bias");
  e[0] = explain(enc.claim_explanations[v]);
  for (std::size_t i = 1; i <= n; ++i) {
    h[i] = W("enc.post.weight") * dense(enc.posts[i - 1]) + bias("enc.post.bias");
    e[i] = explain(enc.post_explanations[k][i - 1]);
  }

  const auto nb = neighborhoods(tree);
  std::vector<VectorXd> hp(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    if (nb.of[i].empty()) {
      hp[i] = h[i];
      continue;
    }
    std::vector<double> s;
    for (int j : nb.of[i]) s.push_back(h[i].dot(h[j]));
    const VectorXd a = softmax(s);
    VectorXd mixed = VectorXd::Zero(h[i].size());
    for (std::size_t t = 0; t < nb.of[i].size(); ++t) mixed += a(t) * h[nb.of[i][t]];
    hp[i] = rho * h[i] + (1.0 - rho) * mixed;
  }

  auto cat = [](const VectorXd& a, const VectorXd& b) {
    VectorXd out(a.size() + b.size());
    out << a, b;
    return out;
  };
  std::vector<VectorXd> ht(n + 1);
  ht[0] = cat(h[0], e[0]);
  for (std::size_t i = 1; i <= n; ++i) ht[i] = cat(hp[i], e[i]);

  BinaryResult r;
  r.key = h[0] + e[0];
  if (n == 0) {
    r.veracity = VectorXd::Constant(2, 0.5);
    return r;
  }
  const VectorXd claim_term = W("head.w2") * hp[0] + bias("head.bias");
  std::vector<VectorXd> p(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    const VectorXd logits = W("head.w1") * ht[i] + claim_term;
    p[i] = softmax({logits(0), logits(1)});
  }

  std::vector<VectorXd> pt(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    std::vector<int> posts;
    for (int j : nb.of[i]) posts.push_back(j);
    if (posts.empty()) {
      pt[i] = p[i];
      continue;
    }
    std::vector<double> s;
    for (int j : posts) s.push_back(ht[i].dot(ht[j]));
    const VectorXd a = softmax(s);
    VectorXd mixed = VectorXd::Zero(2);
    for (std::size_t t = 0; t < posts.size(); ++t) mixed += a(t) * p[posts[t]];
    pt[i] = lambda * p[i] + (1.0 - lambda) * mixed;
  }

  std::vector<double> s;
  for (std::size_t i = 1; i <= n; ++i) s.push_back(e[i].dot(h[0]));
  r.delta = softmax(s);
  r.veracity = VectorXd::Zero(2);
  for (std::size_t i = 1; i <= n; ++i) {
    r.veracity += r.delta(i - 1) * pt[i];
    r.stance.push_back(p[i]);
  }
  return r;
}

struct JointResult {
  VectorXd beta;
  VectorXd veracity;
  std::vector<VectorXd> stance;
};

inline JointResult predict_joint(const std::vector<stancemil::BinaryClassifier>& classifiers,
                                 const stancemil::Aggregator& aggregator,
                                 const std::vector<stancemil::TargetPair>& pairs, std::size_t veracity_count,
                                 std::size_t stance_count, const stancemil::ConversationTree& tree,
                                 const stancemil::EncodedTree& enc) {
  const auto& A = aggregator.params();
  const VectorXd hbar =
      A.get("aggregator.claim.weight").value() * dense(enc.claim_global) + A.get("aggregator.claim.bias").value().col(0);
  std::vector<BinaryResult> outs;
  std::vector<double> scores;
  for (const auto& c : classifiers) {
    outs.push_back(forward_binary(c, tree, enc));
    scores.push_back(hbar.dot(outs.back().key));
  }
  JointResult r;
  r.beta = softmax(scores);
  const std::size_t n = tree.posts.size();
  r.veracity = VectorXd::Zero(static_cast<Eigen::Index>(veracity_count));
  r.stance.assign(n, VectorXd::Zero(static_cast<Eigen::Index>(stance_count)));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (n == 0)
      r.veracity(pairs[k].veracity_index) = 1.0 / static_cast<double>(veracity_count);
    else
      r.veracity(pairs[k].veracity_index) += r.beta(k) * outs[k].veracity(0);
    for (std::size_t i = 0; i < n; ++i) r.stance[i](pairs[k].stance_index) += r.beta(k) * outs[k].stance[i](0);
  }
  return r;
}

}  // namespace oracle
