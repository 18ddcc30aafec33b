#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stancemil {

// An ordered, duplicate-free set of short label codes ("N", "T", "S", ...).
// Order matters: it fixes target-pair indices and argmax tie-breaking.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> codes);

  std::size_t size() const { return codes_.size(); }
  bool empty() const { return codes_.empty(); }
  const std::string& code(std::size_t index) const;
  const std::vector<std::string>& codes() const { return codes_; }
  std::optional<std::size_t> find(std::string_view code) const;
  // Throws a vocabulary error naming `what` when the code is absent.
  std::size_t index_of(std::string_view code, std::string_view what = "label") const;
  bool contains(std::string_view code) const { return find(code).has_value(); }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> codes_;
};

Vocabulary default_veracity_vocabulary();  // {N, T, F, U}
Vocabulary default_stance_vocabulary();    // {S, D, Q, C}

// Human-readable names used in prompts: "true rumor", "support", ...
// Unknown codes fall back to the code itself.
std::string veracity_display_name(std::string_view code);
std::string stance_display_name(std::string_view code);

struct TargetPair {
  std::string veracity;
  std::string stance;
  std::size_t veracity_index = 0;
  std::size_t stance_index = 0;
  std::size_t index = 0;

  friend bool operator==(const TargetPair&, const TargetPair&) = default;
};

// Veracity-major, stance-minor enumeration; K = |veracity| * |stance|.
std::vector<TargetPair> enumerate_target_pairs(const Vocabulary& veracity,
                                               const Vocabulary& stance);

// 1 iff the gold veracity equals the pair's veracity target.
int binarize_veracity_label(std::string_view gold, const TargetPair& pair,
                            const Vocabulary& veracity);

// Indices of the pairs sharing a stance (or veracity) target, in pair order.
std::vector<std::vector<std::size_t>> group_by_stance(const std::vector<TargetPair>& pairs,
                                                      std::size_t stance_count);
std::vector<std::vector<std::size_t>> group_by_veracity(const std::vector<TargetPair>& pairs,
                                                        std::size_t veracity_count);

}  // namespace stancemil
