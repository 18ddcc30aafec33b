#include "stancemil/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "stancemil/error.hpp"
#include "stancemil/hashing.hpp"

namespace stancemil {

namespace fs = std::filesystem;
using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::kConfig, "learning_rate must be positive");
  if (max_epochs < 0) throw Error(ErrorKind::kConfig, "max_epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::kConfig, "batch_size must be >= 1");
  if (convergence_window < 1) throw Error(ErrorKind::kConfig, "convergence_window must be >= 1");
  if (threads < 1) throw Error(ErrorKind::kConfig, "threads must be >= 1");
  if (tolerance < 0.0) throw Error(ErrorKind::kConfig, "tolerance must be >= 0");
  if (weight_decay < 0.0) throw Error(ErrorKind::kConfig, "weight_decay must be >= 0");
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.convergence_window = j.value("convergence_window", c.convergence_window);
  c.threads = j.value("threads", c.threads);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.freeze_encoders = j.value("freeze_encoders", c.freeze_encoders);
  c.validate();
  return c;
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["max_epochs"] = max_epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["convergence_window"] = convergence_window;
  j["threads"] = threads;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_epsilon"] = adam_epsilon;
  j["weight_decay"] = weight_decay;
  j["freeze_encoders"] = freeze_encoders;
  return j;
}

namespace {

double bce(double yhat, int y) {
  if (y != 0 && y != 1) throw Error(ErrorKind::kLabel, "binary target must be 0 or 1, got " + std::to_string(y));
  if (!std::isfinite(yhat)) throw Error(ErrorKind::kNumeric, "non-finite prediction in loss");
  const double p = std::clamp(yhat, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace

double binary_loss(const std::vector<std::pair<double, int>>& predictions) {
  double total = 0.0;
  for (const auto& [yhat, y] : predictions) total += bce(yhat, y);
  return total;
}

double aggregation_loss(const std::vector<std::pair<double, int>>& predictions) { return binary_loss(predictions); }

double aggregation_claim_loss(const Vector& scores, std::size_t gold) {
  if (gold >= static_cast<std::size_t>(scores.size()))
    throw Error(ErrorKind::kLabel, "gold index out of range for aggregation loss");
  double total = 0.0;
  for (Eigen::Index m = 0; m < scores.size(); ++m) total += bce(scores(m), static_cast<std::size_t>(m) == gold ? 1 : 0);
  return total;
}

Var binary_loss_var(const Var& positive, int label) {
  if (label != 0 && label != 1) throw Error(ErrorKind::kLabel, "binary target must be 0 or 1");
  Var p = ad::clamp(positive, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return ad::scale(ad::log(label == 1 ? p : ad::one_minus(p)), -1.0);
}

void Adam::step(ad::ParameterSet& params, const std::vector<bool>& skip) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(Matrix::Zero(params[i].value().rows(), params[i].value().cols()));
      v_.push_back(Matrix::Zero(params[i].value().rows(), params[i].value().cols()));
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  const double eps = config_.adam_epsilon;
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = params[i];
    if (i < skip.size() && skip[i]) {
      p.zero_grad();
      continue;
    }
    const double* g = p.grad().data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* w = p.value().data();
    const Eigen::Index n = p.value().size();
    for (Eigen::Index j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] = decay * w[j] - lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
    p.zero_grad();
  }
}

bool has_converged(const std::vector<double>& losses, double tolerance, int window) {
  if (static_cast<int>(losses.size()) <= window) return false;
  for (std::size_t t = losses.size() - static_cast<std::size_t>(window); t < losses.size(); ++t)
    if (!(std::abs(losses[t] - losses[t - 1]) < tolerance)) return false;
  return true;
}

namespace {

std::vector<bool> encoder_skip_mask(const ad::ParameterSet& params, bool freeze) {
  std::vector<bool> skip(params.size(), false);
  if (!freeze) return skip;
  for (std::size_t i = 0; i < params.size(); ++i) skip[i] = params[i].name().rfind("enc.", 0) == 0;
  return skip;
}

// Shared epoch loop. `step_loss(index, tape)` returns the claim's loss Var, or
// an invalid Var to skip the claim.
template <typename LossFn>
LossHistory run_epochs(ad::ParameterSet& params, std::size_t count, const TrainConfig& config, std::uint64_t seed,
                       const std::vector<bool>& skip, const std::string& label, LossFn&& step_loss) {
  config.validate();
  LossHistory history;
  Adam adam(config);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const Vector snapshot = params.flatten_values();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t used = 0, in_batch = 0;
    params.zero_grad();
    for (std::size_t idx : order) {
      Tape tape;
      Var loss = step_loss(idx, tape);
      if (!loss.valid()) continue;
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        params.assign_values(snapshot);
        throw Error(ErrorKind::kNumeric, label + ": non-finite loss at epoch " + std::to_string(epoch + 1) +
                                             "; parameters restored to the previous epoch");
      }
      tape.backward(loss);
      total += value;
      ++used;
      if (++in_batch == static_cast<std::size_t>(config.batch_size)) {
        adam.step(params, skip);
        in_batch = 0;
      }
    }
    if (in_batch > 0) adam.step(params, skip);
    history.epoch_loss.push_back(used == 0 ? 0.0 : total / static_cast<double>(used));
    if (has_converged(history.epoch_loss, config.tolerance, config.convergence_window)) {
      history.converged = true;
      break;
    }
  }
  return history;
}

}  // namespace

LossHistory train_classifier(BinaryClassifier& classifier, const std::vector<const EncodedTree*>& trees,
                             const std::vector<int>& labels, const TrainConfig& config) {
  if (trees.size() != labels.size()) throw Error(ErrorKind::kShape, "tree and label counts differ");
  const std::uint64_t seed = mix64(config.seed ^ (0x9e3779b97f4a7c15ULL * (classifier.target().index + 1)));
  const auto skip = encoder_skip_mask(classifier.params(), config.freeze_encoders);
  const std::string label = "classifier " + std::to_string(classifier.target().index);
  return run_epochs(classifier.params(), trees.size(), config, seed, skip, label, [&](std::size_t i, Tape& tape) {
    if (trees[i]->post_count() == 0) return Var();
    auto fwd = classifier.forward(tape, *trees[i]);
    return binary_loss_var(ad::element(fwd.veracity, 0), labels[i]);
  });
}

std::vector<LossHistory> train_binary_classifiers(std::vector<BinaryClassifier>& classifiers,
                                                  const std::vector<const EncodedTree*>& trees,
                                                  const std::vector<std::size_t>& gold_veracity,
                                                  const Vocabulary& veracity, const TrainConfig& config) {
  config.validate();
  if (trees.size() != gold_veracity.size()) throw Error(ErrorKind::kShape, "tree and label counts differ");
  std::vector<LossHistory> histories(classifiers.size());
  std::vector<std::exception_ptr> errors(classifiers.size());
  auto job = [&](std::size_t k) {
    try {
      std::vector<int> labels;
      labels.reserve(gold_veracity.size());
      for (std::size_t g : gold_veracity)
        labels.push_back(binarize_veracity_label(veracity.code(g), classifiers[k].target(), veracity));
      histories[k] = train_classifier(classifiers[k], trees, labels, config);
      spdlog::debug("classifier {} ({},{}): {} epochs, final loss {:.6f}", k, classifiers[k].target().veracity,
                    classifiers[k].target().stance, histories[k].epochs(),
                    histories[k].epoch_loss.empty() ? 0.0 : histories[k].epoch_loss.back());
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.threads), classifiers.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < classifiers.size(); ++k) job(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < classifiers.size(); k = next++) job(k);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return histories;
}

LossHistory train_aggregator(Aggregator& aggregator, const std::vector<const FrozenOutputs*>& outputs,
                             const std::vector<std::size_t>& gold_veracity, const std::vector<TargetPair>& pairs,
                             std::size_t veracity_count, const TrainConfig& config) {
  if (outputs.size() != gold_veracity.size()) throw Error(ErrorKind::kShape, "output and label counts differ");
  const Eigen::Index k_count = static_cast<Eigen::Index>(pairs.size());
  // Per claim: keys (d x K) and the grouping matrix G (N_r x K) holding each
  // classifier's positive veracity probability in its veracity row.
  struct Cached {
    Matrix keys, grouped;
    bool skip = false;
  };
  std::vector<Cached> cache(outputs.size());
  for (std::size_t c = 0; c < outputs.size(); ++c) {
    const auto& o = *outputs[c];
    if (o.per_classifier.size() != pairs.size())
      throw Error(ErrorKind::kConfig, "claim " + o.claim_id + ": classifier outputs do not cover all pairs");
    if (o.degenerate) {
      cache[c].skip = true;
      continue;
    }
    const Eigen::Index d = o.per_classifier[0].claim_summary.size();
    cache[c].keys.resize(d, k_count);
    cache[c].grouped = Matrix::Zero(static_cast<Eigen::Index>(veracity_count), k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      cache[c].keys.col(k) = o.per_classifier[k].claim_summary;
      cache[c].grouped(static_cast<Eigen::Index>(pairs[k].veracity_index), k) = o.per_classifier[k].veracity(0);
    }
  }
  const std::uint64_t seed = mix64(config.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  return run_epochs(aggregator.params(), outputs.size(), config, seed, {}, "aggregator", [&](std::size_t c, Tape& tape) {
    if (cache[c].skip) return Var();
    Var h_bar = aggregator.encode(tape, outputs[c]->claim_global);
    Var beta = ad::softmax(ad::matmul(ad::transpose(tape.constant(cache[c].keys)), h_bar));
    Var scores = ad::clamp(ad::matmul(tape.constant(cache[c].grouped), beta), kProbabilityEpsilon,
                           1.0 - kProbabilityEpsilon);
    Matrix target = Matrix::Zero(static_cast<Eigen::Index>(veracity_count), 1);
    target(static_cast<Eigen::Index>(gold_veracity[c]), 0) = 1.0;
    Var y = tape.constant(target);
    // -sum [y log s + (1 - y) log(1 - s)]
    Var ll = ad::add(ad::hadamard(y, ad::log(scores)), ad::hadamard(ad::one_minus(y), ad::log(ad::one_minus(scores))));
    return ad::scale(ad::sum(ll), -1.0);
  });
}

std::vector<std::string> classifier_digests(const std::vector<BinaryClassifier>& classifiers) {
  std::vector<std::string> out;
  out.reserve(classifiers.size());
  for (const auto& c : classifiers) out.push_back(c.params().digest());
  return out;
}

GradientCheckReport gradient_check(BinaryClassifier& classifier, const EncodedTree& tree, int label, int probes,
                                   std::uint64_t seed, double step) {
  if (probes < 1) throw Error(ErrorKind::kParameter, "probe count must be positive");
  if (tree.post_count() == 0) throw Error(ErrorKind::kInput, "gradient check needs a tree with posts");
  auto& params = classifier.params();
  auto loss_at = [&]() {
    Tape tape;
    auto fwd = classifier.forward(tape, tree);
    return binary_loss_var(ad::element(fwd.veracity, 0), label).scalar();
  };

  params.zero_grad();
  {
    Tape tape;
    auto fwd = classifier.forward(tape, tree);
    Var loss = binary_loss_var(ad::element(fwd.veracity, 0), label);
    tape.backward(loss);
  }
  struct Coord {
    std::size_t param;
    Eigen::Index index;
  };
  std::vector<Coord> active, inactive;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Matrix& g = params[p].grad();
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g.data()[i]))
        throw Error(ErrorKind::kNumeric, "non-finite gradient at " + params[p].name() + "[" + std::to_string(i) + "]");
      (g.data()[i] != 0.0 ? active : inactive).push_back({p, i});
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(active.begin(), active.end(), rng);
  std::shuffle(inactive.begin(), inactive.end(), rng);
  std::vector<Coord> chosen(active.begin(), active.begin() + std::min<std::size_t>(active.size(), probes));
  for (std::size_t i = 0; chosen.size() < static_cast<std::size_t>(probes) && i < inactive.size(); ++i)
    chosen.push_back(inactive[i]);

  GradientCheckReport report;
  for (const auto& c : chosen) {
    double& w = params[c.param].value().data()[c.index];
    const double analytic = params[c.param].grad().data()[c.index];
    const double saved = w;
    w = saved + step;
    const double up = loss_at();
    w = saved - step;
    const double down = loss_at();
    w = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++report.probes;
    if (rel >= report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = params[c.param].name();
      report.worst_index = c.index;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  params.zero_grad();
  return report;
}

namespace {

constexpr char kSnapshotMagic[8] = {'S', 'M', 'I', 'L', 'S', 'N', 'P', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const fs::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw Error(ErrorKind::kIo, "truncated snapshot " + path.string());
  return value;
}

}  // namespace

void save_snapshot(const fs::path& path, const ad::ParameterSet& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    write_pod<std::uint64_t>(out, params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      write_pod<std::uint64_t>(out, p.name().size());
      out.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
      write_pod<std::int64_t>(out, p.value().rows());
      write_pod<std::int64_t>(out, p.value().cols());
      out.write(reinterpret_cast<const char*>(p.value().data()),
                static_cast<std::streamsize>(p.value().size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::kIo, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void load_snapshot(const fs::path& path, ad::ParameterSet& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open snapshot " + path.string());
  char magic[sizeof(kSnapshotMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0)
    throw Error(ErrorKind::kParse, path.string() + " is not a parameter snapshot");
  const auto count = read_pod<std::uint64_t>(in, path);
  if (count != params.size())
    throw Error(ErrorKind::kConfig, "snapshot " + path.string() + " has " + std::to_string(count) +
                                        " parameters, model expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto len = read_pod<std::uint64_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rows = read_pod<std::int64_t>(in, path);
    const auto cols = read_pod<std::int64_t>(in, path);
    auto& p = params[i];
    if (name != p.name() || rows != p.value().rows() || cols != p.value().cols())
      throw Error(ErrorKind::kConfig, "snapshot " + path.string() + " parameter '" + name +
                                          "' does not match model parameter '" + p.name() + "'");
    if (!in.read(reinterpret_cast<char*>(p.value().data()), static_cast<std::streamsize>(p.value().size() * sizeof(double))))
      throw Error(ErrorKind::kIo, "truncated snapshot " + path.string());
  }
}

}  // namespace stancemil
