#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "stancemil/autodiff.hpp"

namespace stancemil {

enum class EncoderBackend { kPretrainedSentence, kPretrainedToken, kToyHashBow };

EncoderBackend parse_backend(const std::string& name);
std::string backend_name(EncoderBackend backend);

struct EncoderConfig {
  EncoderBackend backend = EncoderBackend::kToyHashBow;
  int model_dim = 300;
  // Width of the residual feed-forward block inside each projection head;
  // 0 disables the block.
  int ff_dim = 600;
  bool trainable = true;
  std::uint64_t seed = 0;
  int hash_buckets = 2048;
  // Pretrained backends read frozen vectors from these files.
  std::string sentence_table;
  std::string explanation_table;
  // Token cap for the recurrent encoder used by the "wop" ablation.
  int recurrent_max_tokens = 48;

  static EncoderConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

// Lower-cased alphanumeric tokens; bytes >= 0x80 count as word characters so
// UTF-8 text tokenizes sensibly.
std::vector<std::string> tokenize(std::string_view text);

// Frozen text featurizer ("backbone"). Output feeds a trainable projection.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual int dim() const = 0;
  virtual ad::SparseFeatures features(std::string_view text) const = 0;
  // Bucketed token ids for sequence encoders.
  virtual std::vector<int> token_ids(std::string_view text, int max_tokens) const;
  virtual int vocabulary_size() const { return dim(); }
};

// Feature-hashed bag of words. Each token contributes sign * (0.5 + u) to one
// bucket, with bucket, sign and u all derived from a seeded 64-bit hash of the
// token, and the result is L2-normalized.
class HashBagBackbone final : public Backbone {
 public:
  HashBagBackbone(int buckets, std::uint64_t seed);
  int dim() const override { return buckets_; }
  ad::SparseFeatures features(std::string_view text) const override;
  std::vector<int> token_ids(std::string_view text, int max_tokens) const override;

 private:
  int buckets_;
  std::uint64_t seed_;
};

// Precomputed sentence vectors keyed by SHA-256 of the text (JSONL lines of
// {"sha256": hex, "vector": [...]}, or {"text": str, "vector": [...]}).
class SentenceTableBackbone final : public Backbone {
 public:
  explicit SentenceTableBackbone(const std::filesystem::path& path);
  int dim() const override { return dim_; }
  ad::SparseFeatures features(std::string_view text) const override;

 private:
  int dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

// Word-vector table in GloVe text format, mean-pooled over known tokens.
class TokenTableBackbone final : public Backbone {
 public:
  explicit TokenTableBackbone(const std::filesystem::path& path);
  int dim() const override { return dim_; }
  ad::SparseFeatures features(std::string_view text) const override;

 private:
  int dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

struct Backbones {
  std::shared_ptr<const Backbone> sentence;     // claims and posts
  std::shared_ptr<const Backbone> explanation;  // explanations and the global claim encoder
};

Backbones make_backbones(const EncoderConfig& config);

// The modules below hold parameter indices into a caller-owned ParameterSet,
// so a copied set stays usable with the same module descriptors.

// backbone -> d linear map (sentence encoders and the global claim encoder).
class LinearEncoder {
 public:
  LinearEncoder() = default;
  LinearEncoder(ad::ParameterSet& params, const std::string& prefix, int in_dim, int out_dim,
                std::mt19937_64& rng);
  ad::Var encode(ad::Tape& tape, ad::ParameterSet& params, const ad::SparseFeatures& x) const;

 private:
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
};

// backbone -> d linear map followed by an optional residual feed-forward
// block d -> ff -> d whose output layer starts at zero.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(ad::ParameterSet& params, const std::string& prefix, int in_dim, int out_dim,
                 int ff_dim, std::mt19937_64& rng);
  ad::Var encode(ad::Tape& tape, ad::ParameterSet& params, const ad::SparseFeatures& x) const;
  // Linear part := [I_d | 0] with zero bias; the residual block is zeroed.
  void set_identity_truncation(ad::ParameterSet& params) const;

 private:
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
  bool has_ff_ = false;
  std::size_t ff_in_ = 0, ff_in_bias_ = 0, ff_out_ = 0, ff_out_bias_ = 0;
};

// Gated recurrent encoder over bucketed token embeddings; final hidden state.
class RecurrentEncoder {
 public:
  RecurrentEncoder() = default;
  RecurrentEncoder(ad::ParameterSet& params, const std::string& prefix, int vocab, int dim,
                   std::mt19937_64& rng);
  ad::Var encode(ad::Tape& tape, ad::ParameterSet& params, const std::vector<int>& tokens) const;

 private:
  int dim_ = 0;
  std::size_t embed_ = 0;
  std::size_t wz_ = 0, wr_ = 0, wh_ = 0, uz_ = 0, ur_ = 0, uh_ = 0, bz_ = 0, br_ = 0, bh_ = 0;
};

// Initializers shared by the modules.
ad::Matrix gaussian_matrix(int rows, int cols, double stddev, std::mt19937_64& rng);
ad::Matrix xavier_matrix(int rows, int cols, std::mt19937_64& rng);

}  // namespace stancemil
