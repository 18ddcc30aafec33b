#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stancemil/labels.hpp"
#include "stancemil/tree.hpp"

namespace stancemil {

// Planted-rule corpus: each tree's veracity fixes the distribution its posts'
// stances are drawn from, and post texts carry stance cue words.
struct SyntheticConfig {
  std::size_t trees = 500;
  int min_posts = 5;
  int max_posts = 15;
  Vocabulary veracity = default_veracity_vocabulary();
  Vocabulary stance = default_stance_vocabulary();
  std::vector<double> class_priors;                  // per veracity; empty = uniform
  std::vector<std::vector<double>> stance_mixture;   // [veracity][stance]; empty = defaults
  double reply_to_claim = 0.5;                       // chance a post answers the claim directly
  // Chance a claim opens with a phrase typical of its veracity ("officials
  // confirm", "unverified reports say", ...). Without it, stance mixtures are
  // the only signal.
  double claim_cue_rate = 0.5;
  std::string id_prefix = "c";

  void validate() const;
  static SyntheticConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

// F -> 60% D, T -> 60% S, U -> 40% Q, N -> 70% C, remainder spread evenly.
// Rows for codes without a salient stance are uniform.
std::vector<std::vector<double>> default_stance_mixture(const Vocabulary& veracity, const Vocabulary& stance);

std::vector<ConversationTree> generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

// Cue words the generator plants for a stance code (empty for unknown codes).
const std::vector<std::string>& stance_cue_words(const std::string& stance);
// Claim opener planted for a veracity code (empty for unknown codes).
const std::string& veracity_cue_phrase(const std::string& veracity);

}  // namespace stancemil
