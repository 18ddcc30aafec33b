#include "stancemil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "stancemil/aggregation.hpp"
#include "stancemil/error.hpp"

namespace stancemil {

std::string task_name(Task task) { return task == Task::kRumor ? "rumor" : "stance"; }

double binary_auc(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw Error(ErrorKind::kShape, "score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over ties.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    } else {
      neg += 1.0;
    }
  }
  if (pos == 0.0 || neg == 0.0) throw Error(ErrorKind::kInput, "AUC needs both positive and negative examples");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

MetricsReport compute_metrics(const std::vector<std::pair<ad::Vector, std::size_t>>& predictions,
                              const Vocabulary& labels, Task task) {
  if (predictions.empty()) throw Error(ErrorKind::kInput, "no predictions to evaluate");
  const std::size_t n_cls = labels.size();
  MetricsReport r;
  r.task = task;
  r.labels = labels.codes();
  r.count = predictions.size();
  r.confusion.assign(n_cls, std::vector<std::size_t>(n_cls, 0));
  r.support.assign(n_cls, 0);
  std::size_t correct = 0;
  for (const auto& [scores, gold] : predictions) {
    if (gold >= n_cls) throw Error(ErrorKind::kVocabulary, "gold label index out of range");
    if (static_cast<std::size_t>(scores.size()) != n_cls || !scores.allFinite())
      throw Error(ErrorKind::kInput, "score vectors must be finite with one entry per label");
    const std::size_t pred = argmax_first(scores);
    ++r.confusion[gold][pred];
    ++r.support[gold];
    if (pred == gold) ++correct;
  }
  r.micro_f1 = static_cast<double>(correct) / static_cast<double>(r.count);

  r.per_class_f1.assign(n_cls, 0.0);
  for (std::size_t c = 0; c < n_cls; ++c) {
    std::size_t tp = r.confusion[c][c], predicted = 0;
    for (std::size_t g = 0; g < n_cls; ++g) predicted += r.confusion[g][c];
    if (r.support[c] == 0) {
      spdlog::warn("{}: class {} has no gold examples; its F1 counts as 0", task_name(task), labels.code(c));
      continue;
    }
    if (tp == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
    const double recall = static_cast<double>(tp) / static_cast<double>(r.support[c]);
    r.per_class_f1[c] = 2.0 * precision * recall / (precision + recall);
  }
  r.macro_f1 = std::accumulate(r.per_class_f1.begin(), r.per_class_f1.end(), 0.0) / static_cast<double>(n_cls);

  double auc_sum = 0.0;
  std::size_t auc_classes = 0;
  for (std::size_t c = 0; c < n_cls; ++c) {
    if (r.support[c] == 0 || r.support[c] == r.count) continue;
    std::vector<double> scores;
    std::vector<int> positive;
    for (const auto& [s, gold] : predictions) {
      scores.push_back(s(static_cast<Eigen::Index>(c)));
      positive.push_back(gold == c ? 1 : 0);
    }
    auc_sum += binary_auc(scores, positive);
    ++auc_classes;
  }
  if (auc_classes == 0) {
    spdlog::warn("{}: AUC undefined (no class has both outcomes); reporting 0.5", task_name(task));
    r.auc = 0.5;
  } else {
    r.auc = auc_sum / static_cast<double>(auc_classes);
  }
  return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task_name(task);
  j["auc_averaging"] = "one-vs-rest, macro";
  j["count"] = count;
  j["auc"] = auc;
  j["micro_f1"] = micro_f1;
  j["macro_f1"] = macro_f1;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  nlohmann::ordered_json sup = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < labels.size(); ++c) {
    per[labels[c]] = per_class_f1[c];
    sup[labels[c]] = support[c];
  }
  j["per_class_f1"] = per;
  j["support"] = sup;
  j["confusion"] = confusion;
  return j;
}

}  // namespace stancemil
