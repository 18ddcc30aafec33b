#include "stancemil/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "stancemil/error.hpp"
#include "stancemil/hashing.hpp"

namespace stancemil {

using ad::Matrix;
using ad::Parameter;
using ad::ParameterSet;
using ad::SparseFeatures;
using ad::Tape;
using ad::Var;

EncoderBackend parse_backend(const std::string& name) {
  if (name == "toy-hash-bow") return EncoderBackend::kToyHashBow;
  if (name == "pretrained-sentence") return EncoderBackend::kPretrainedSentence;
  if (name == "pretrained-token") return EncoderBackend::kPretrainedToken;
  throw Error(ErrorKind::kConfig, "unknown encoder backend '" + name + "'");
}

std::string backend_name(EncoderBackend backend) {
  switch (backend) {
    case EncoderBackend::kToyHashBow: return "toy-hash-bow";
    case EncoderBackend::kPretrainedSentence: return "pretrained-sentence";
    case EncoderBackend::kPretrainedToken: return "pretrained-token";
  }
  return "unknown";
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  if (j.contains("backend")) c.backend = parse_backend(j.at("backend").get<std::string>());
  c.model_dim = j.value("model_dim", c.model_dim);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.trainable = j.value("trainable", c.trainable);
  c.seed = j.value("seed", c.seed);
  c.hash_buckets = j.value("hash_buckets", c.hash_buckets);
  c.sentence_table = j.value("sentence_table", c.sentence_table);
  c.explanation_table = j.value("explanation_table", c.explanation_table);
  c.recurrent_max_tokens = j.value("recurrent_max_tokens", c.recurrent_max_tokens);
  if (c.model_dim < 1) throw Error(ErrorKind::kConfig, "model_dim must be >= 1");
  if (c.ff_dim < 0) throw Error(ErrorKind::kConfig, "ff_dim must be >= 0");
  if (c.hash_buckets < c.model_dim && c.backend == EncoderBackend::kToyHashBow)
    throw Error(ErrorKind::kConfig, "hash_buckets must be >= model_dim");
  return c;
}

nlohmann::ordered_json EncoderConfig::to_json() const {
  nlohmann::ordered_json j;
  j["backend"] = backend_name(backend);
  j["model_dim"] = model_dim;
  j["ff_dim"] = ff_dim;
  j["trainable"] = trainable;
  j["seed"] = seed;
  j["hash_buckets"] = hash_buckets;
  j["sentence_table"] = sentence_table;
  j["explanation_table"] = explanation_table;
  j["recurrent_max_tokens"] = recurrent_max_tokens;
  return j;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80 || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<int> Backbone::token_ids(std::string_view text, int max_tokens) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) {
    if (static_cast<int>(ids.size()) >= max_tokens) break;
    ids.push_back(static_cast<int>(fnv1a64(tok) % static_cast<std::uint64_t>(vocabulary_size())));
  }
  return ids;
}

// ---------------------------------------------------------------------------

HashBagBackbone::HashBagBackbone(int buckets, std::uint64_t seed) : buckets_(buckets), seed_(seed) {
  if (buckets < 1) throw Error(ErrorKind::kConfig, "hash_buckets must be >= 1");
}

SparseFeatures HashBagBackbone::features(std::string_view text) const {
  std::map<int, double> acc;
  for (const auto& tok : tokenize(text)) {
    const std::uint64_t h = fnv1a64(tok, seed_);
    const std::uint64_t g = mix64(h);
    const int bucket = static_cast<int>(h % static_cast<std::uint64_t>(buckets_));
    const double sign = (g >> 63) ? -1.0 : 1.0;
    const double u = static_cast<double>(g & ((1ULL << 52) - 1)) / static_cast<double>(1ULL << 52);
    acc[bucket] += sign * (0.5 + u);
  }
  double norm = 0.0;
  for (const auto& [b, v] : acc) norm += v * v;
  norm = std::sqrt(norm);
  SparseFeatures f;
  f.dim = buckets_;
  for (const auto& [b, v] : acc) {
    if (v == 0.0) continue;
    f.index.push_back(b);
    f.value.push_back(v / norm);
  }
  return f;
}

std::vector<int> HashBagBackbone::token_ids(std::string_view text, int max_tokens) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) {
    if (static_cast<int>(ids.size()) >= max_tokens) break;
    ids.push_back(static_cast<int>(fnv1a64(tok, seed_) % static_cast<std::uint64_t>(buckets_)));
  }
  return ids;
}

// ---------------------------------------------------------------------------

namespace {

SparseFeatures dense_features(const std::vector<double>& v) {
  SparseFeatures f;
  f.dim = static_cast<int>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    f.index.push_back(static_cast<int>(i));
    f.value.push_back(v[i]);
  }
  return f;
}

}  // namespace

SentenceTableBackbone::SentenceTableBackbone(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open sentence table " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    auto vec = j.at("vector").get<std::vector<double>>();
    if (dim_ == 0) dim_ = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim_)
      throw Error(ErrorKind::kShape, "sentence table rows have inconsistent dimension");
    const std::string key =
        j.contains("sha256") ? j["sha256"].get<std::string>() : sha256_hex(j.at("text").get<std::string>());
    table_[key] = std::move(vec);
  }
  if (dim_ == 0) throw Error(ErrorKind::kInput, "sentence table " + path.string() + " is empty");
}

SparseFeatures SentenceTableBackbone::features(std::string_view text) const {
  auto it = table_.find(sha256_hex(text));
  if (it == table_.end())
    throw Error(ErrorKind::kInput, "no precomputed vector for text '" + std::string(text.substr(0, 60)) + "'");
  return dense_features(it->second);
}

TokenTableBackbone::TokenTableBackbone(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open token table " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vec;
    double x;
    while (ss >> x) vec.push_back(x);
    if (dim_ == 0) dim_ = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim_)
      throw Error(ErrorKind::kShape, "token table rows have inconsistent dimension");
    table_[word] = std::move(vec);
  }
  if (dim_ == 0) throw Error(ErrorKind::kInput, "token table " + path.string() + " is empty");
}

SparseFeatures TokenTableBackbone::features(std::string_view text) const {
  std::vector<double> mean(static_cast<std::size_t>(dim_), 0.0);
  int hits = 0;
  for (const auto& tok : tokenize(text)) {
    auto it = table_.find(tok);
    if (it == table_.end()) continue;
    for (int i = 0; i < dim_; ++i) mean[static_cast<std::size_t>(i)] += it->second[static_cast<std::size_t>(i)];
    ++hits;
  }
  if (hits > 0)
    for (auto& v : mean) v /= hits;
  return dense_features(mean);
}

Backbones make_backbones(const EncoderConfig& config) {
  Backbones b;
  switch (config.backend) {
    case EncoderBackend::kToyHashBow:
      b.sentence = std::make_shared<HashBagBackbone>(config.hash_buckets, config.seed);
      b.explanation = std::make_shared<HashBagBackbone>(config.hash_buckets, config.seed + 1);
      break;
    case EncoderBackend::kPretrainedSentence:
      if (config.sentence_table.empty() || config.explanation_table.empty())
        throw Error(ErrorKind::kConfig, "pretrained-sentence backend needs sentence_table and explanation_table");
      b.sentence = std::make_shared<SentenceTableBackbone>(config.sentence_table);
      b.explanation = std::make_shared<SentenceTableBackbone>(config.explanation_table);
      break;
    case EncoderBackend::kPretrainedToken:
      if (config.sentence_table.empty())
        throw Error(ErrorKind::kConfig, "pretrained-token backend needs sentence_table");
      b.sentence = std::make_shared<TokenTableBackbone>(config.sentence_table);
      b.explanation = config.explanation_table.empty()
                          ? b.sentence
                          : std::make_shared<TokenTableBackbone>(config.explanation_table);
      break;
  }
  return b;
}

// ---------------------------------------------------------------------------

Matrix gaussian_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

Matrix xavier_matrix(int rows, int cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

namespace {

std::size_t add_param(ParameterSet& params, const std::string& name, Matrix value) {
  params.add(name, std::move(value));
  return params.size() - 1;
}

}  // namespace

LinearEncoder::LinearEncoder(ParameterSet& params, const std::string& prefix, int in_dim, int out_dim,
                             std::mt19937_64& rng) {
  // Inputs are unit-norm, so N(0, 1/d) keeps outputs near unit norm.
  weight_ = add_param(params, prefix + ".weight",
                      gaussian_matrix(out_dim, in_dim, 1.0 / std::sqrt(static_cast<double>(out_dim)), rng));
  bias_ = add_param(params, prefix + ".bias", Matrix::Zero(out_dim, 1));
}

Var LinearEncoder::encode(Tape& tape, ParameterSet& params, const SparseFeatures& x) const {
  return ad::sparse_affine(tape, params[weight_], params[bias_], x);
}

ProjectionHead::ProjectionHead(ParameterSet& params, const std::string& prefix, int in_dim, int out_dim,
                               int ff_dim, std::mt19937_64& rng) {
  weight_ = add_param(params, prefix + ".weight",
                      gaussian_matrix(out_dim, in_dim, 1.0 / std::sqrt(static_cast<double>(out_dim)), rng));
  bias_ = add_param(params, prefix + ".bias", Matrix::Zero(out_dim, 1));
  if (ff_dim > 0) {
    has_ff_ = true;
    ff_in_ = add_param(params, prefix + ".ff_in.weight", xavier_matrix(ff_dim, out_dim, rng));
    ff_in_bias_ = add_param(params, prefix + ".ff_in.bias", Matrix::Zero(ff_dim, 1));
    ff_out_ = add_param(params, prefix + ".ff_out.weight", Matrix::Zero(out_dim, ff_dim));
    ff_out_bias_ = add_param(params, prefix + ".ff_out.bias", Matrix::Zero(out_dim, 1));
  }
}

Var ProjectionHead::encode(Tape& tape, ParameterSet& params, const SparseFeatures& x) const {
  Var z = ad::sparse_affine(tape, params[weight_], params[bias_], x);
  if (!has_ff_) return z;
  Var hidden = ad::relu(ad::add(ad::matmul(tape.parameter(params[ff_in_]), z), tape.parameter(params[ff_in_bias_])));
  Var out = ad::add(ad::matmul(tape.parameter(params[ff_out_]), hidden), tape.parameter(params[ff_out_bias_]));
  return ad::add(z, out);
}

void ProjectionHead::set_identity_truncation(ParameterSet& params) const {
  Matrix& w = params[weight_].value();
  w.setZero();
  const Eigen::Index n = std::min(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < n; ++i) w(i, i) = 1.0;
  params[bias_].value().setZero();
  if (has_ff_) {
    params[ff_out_].value().setZero();
    params[ff_out_bias_].value().setZero();
  }
}

RecurrentEncoder::RecurrentEncoder(ParameterSet& params, const std::string& prefix, int vocab, int dim,
                                   std::mt19937_64& rng)
    : dim_(dim) {
  embed_ = add_param(params, prefix + ".embedding",
                     gaussian_matrix(dim, vocab, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
  wz_ = add_param(params, prefix + ".w_update", xavier_matrix(dim, dim, rng));
  wr_ = add_param(params, prefix + ".w_reset", xavier_matrix(dim, dim, rng));
  wh_ = add_param(params, prefix + ".w_candidate", xavier_matrix(dim, dim, rng));
  uz_ = add_param(params, prefix + ".u_update", xavier_matrix(dim, dim, rng));
  ur_ = add_param(params, prefix + ".u_reset", xavier_matrix(dim, dim, rng));
  uh_ = add_param(params, prefix + ".u_candidate", xavier_matrix(dim, dim, rng));
  bz_ = add_param(params, prefix + ".b_update", Matrix::Zero(dim, 1));
  br_ = add_param(params, prefix + ".b_reset", Matrix::Zero(dim, 1));
  bh_ = add_param(params, prefix + ".b_candidate", Matrix::Zero(dim, 1));
}

Var RecurrentEncoder::encode(Tape& tape, ParameterSet& params, const std::vector<int>& tokens) const {
  Var h = tape.constant(Matrix::Zero(dim_, 1));
  if (tokens.empty()) return h;
  Var wz = tape.parameter(params[wz_]), wr = tape.parameter(params[wr_]), wh = tape.parameter(params[wh_]);
  Var uz = tape.parameter(params[uz_]), ur = tape.parameter(params[ur_]), uh = tape.parameter(params[uh_]);
  Var bz = tape.parameter(params[bz_]), br = tape.parameter(params[br_]), bh = tape.parameter(params[bh_]);
  for (int tok : tokens) {
    Var x = ad::embedding_column(tape, params[embed_], tok);
    Var z = ad::sigmoid(ad::add(ad::add(ad::matmul(wz, x), ad::matmul(uz, h)), bz));
    Var r = ad::sigmoid(ad::add(ad::add(ad::matmul(wr, x), ad::matmul(ur, h)), br));
    Var cand = ad::tanh(ad::add(ad::add(ad::matmul(wh, x), ad::matmul(uh, ad::hadamard(r, h))), bh));
    // h = (1 - z) * h + z * cand
    h = ad::add(ad::hadamard(ad::one_minus(z), h), ad::hadamard(z, cand));
  }
  return h;
}

}  // namespace stancemil
