#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stancemil/autodiff.hpp"
#include "stancemil/labels.hpp"

namespace stancemil {

enum class Task { kRumor, kStance };

std::string task_name(Task task);

struct MetricsReport {
  Task task = Task::kRumor;
  double auc = 0.0;  // one-vs-rest, macro over classes with both outcomes present
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::string> labels;
  std::vector<double> per_class_f1;
  std::vector<std::size_t> support;
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][pred]

  nlohmann::ordered_json to_json() const;
};

// Mann-Whitney AUC; tied scores count one half.
double binary_auc(const std::vector<double>& scores, const std::vector<int>& positive);

MetricsReport compute_metrics(const std::vector<std::pair<ad::Vector, std::size_t>>& predictions,
                              const Vocabulary& labels, Task task);

}  // namespace stancemil
