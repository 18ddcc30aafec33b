#include "stancemil/labels.hpp"

#include <algorithm>
#include <unordered_set>

#include "stancemil/error.hpp"

namespace stancemil {

Vocabulary::Vocabulary(std::vector<std::string> codes) : codes_(std::move(codes)) {
  if (codes_.empty()) throw Error(ErrorKind::kConfig, "vocabulary must not be empty");
  std::unordered_set<std::string> seen;
  for (const auto& c : codes_) {
    if (c.empty()) throw Error(ErrorKind::kConfig, "vocabulary contains an empty code");
    if (!seen.insert(c).second)
      throw Error(ErrorKind::kConfig, "duplicate vocabulary entry '" + c + "'");
  }
}

const std::string& Vocabulary::code(std::size_t index) const {
  if (index >= codes_.size())
    throw Error(ErrorKind::kIndex, "vocabulary index " + std::to_string(index) + " out of range");
  return codes_[index];
}

std::optional<std::size_t> Vocabulary::find(std::string_view code) const {
  auto it = std::find(codes_.begin(), codes_.end(), code);
  if (it == codes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - codes_.begin());
}

std::size_t Vocabulary::index_of(std::string_view code, std::string_view what) const {
  if (auto i = find(code)) return *i;
  std::string known;
  for (const auto& c : codes_) known += (known.empty() ? "" : ",") + c;
  throw Error(ErrorKind::kVocabulary,
              "unknown " + std::string(what) + " '" + std::string(code) + "' (expected one of " +
                  known + ")");
}

Vocabulary default_veracity_vocabulary() { return Vocabulary({"N", "T", "F", "U"}); }
Vocabulary default_stance_vocabulary() { return Vocabulary({"S", "D", "Q", "C"}); }

std::string veracity_display_name(std::string_view code) {
  if (code == "N") return "non-rumor";
  if (code == "T") return "true rumor";
  if (code == "F") return "false rumor";
  if (code == "U") return "unverified rumor";
  if (code == "R") return "rumor";
  return std::string(code);
}

std::string stance_display_name(std::string_view code) {
  if (code == "S") return "support";
  if (code == "D") return "deny";
  if (code == "Q") return "question";
  if (code == "C") return "comment";
  return std::string(code);
}

std::vector<TargetPair> enumerate_target_pairs(const Vocabulary& veracity,
                                               const Vocabulary& stance) {
  if (veracity.empty() || stance.empty())
    throw Error(ErrorKind::kConfig, "target-pair vocabularies must be non-empty");
  std::vector<TargetPair> pairs;
  pairs.reserve(veracity.size() * stance.size());
  for (std::size_t v = 0; v < veracity.size(); ++v) {
    for (std::size_t s = 0; s < stance.size(); ++s) {
      pairs.push_back({veracity.code(v), stance.code(s), v, s, pairs.size()});
    }
  }
  return pairs;
}

int binarize_veracity_label(std::string_view gold, const TargetPair& pair,
                            const Vocabulary& veracity) {
  auto g = veracity.find(gold);
  if (!g) throw Error(ErrorKind::kLabel, "gold veracity '" + std::string(gold) +
                                             "' is not in the classifier vocabulary");
  if (!veracity.contains(pair.veracity))
    throw Error(ErrorKind::kLabel,
                "pair veracity '" + pair.veracity + "' is not in the classifier vocabulary");
  return gold == pair.veracity ? 1 : 0;
}

std::vector<std::vector<std::size_t>> group_by_stance(const std::vector<TargetPair>& pairs,
                                                      std::size_t stance_count) {
  std::vector<std::vector<std::size_t>> groups(stance_count);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (pairs[k].stance_index >= stance_count)
      throw Error(ErrorKind::kConfig, "pair " + std::to_string(k) + " has stance index out of range");
    groups[pairs[k].stance_index].push_back(k);
  }
  return groups;
}

std::vector<std::vector<std::size_t>> group_by_veracity(const std::vector<TargetPair>& pairs,
                                                        std::size_t veracity_count) {
  std::vector<std::vector<std::size_t>> groups(veracity_count);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (pairs[k].veracity_index >= veracity_count)
      throw Error(ErrorKind::kConfig,
                  "pair " + std::to_string(k) + " has veracity index out of range");
    groups[pairs[k].veracity_index].push_back(k);
  }
  return groups;
}

}  // namespace stancemil
