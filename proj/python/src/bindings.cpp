#include <memory>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "stancemil/error.hpp"
#include "stancemil/labels.hpp"
#include "stancemil/metrics.hpp"
#include "stancemil/pipeline.hpp"
#include "stancemil/synthetic.hpp"
#include "stancemil/training.hpp"

namespace py = pybind11;
using namespace stancemil;

// JSON crosses the boundary as text; the Python package wraps it.
namespace {

std::vector<ConversationTree> parse_trees(const std::string& text, const DatasetConfig& config) {
  const auto j = nlohmann::json::parse(text);
  std::vector<ConversationTree> trees;
  for (const auto& record : j) trees.push_back(parse_tree_record(record, config));
  return trees;
}

std::string trees_to_text(const std::vector<ConversationTree>& trees) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& t : trees) out.push_back(tree_to_json(t));
  return out.dump();
}

std::string histories_to_text(const std::vector<LossHistory>& hs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : hs) out.push_back(h.epoch_loss);
  return out.dump();
}

class Data {
 public:
  explicit Data(PreparedData d) : data(std::move(d)) {}
  std::size_t size() const { return data.trees.size(); }
  std::vector<std::string> claim_ids() const {
    std::vector<std::string> ids;
    for (const auto& t : data.trees) ids.push_back(t.claim_id);
    return ids;
  }
  PreparedData data;
};

class Model {
 public:
  Model(const std::string& config_json, const std::string& provider, const std::filesystem::path& cache_dir)
      : model_(ModelConfig::from_json(nlohmann::json::parse(config_json))), cache_(cache_dir) {
    set_provider(provider);
  }

  static std::unique_ptr<Model> from_run(const std::filesystem::path& run_dir, const std::string& provider,
                                         const std::filesystem::path& cache_dir) {
    auto m = std::unique_ptr<Model>(new Model(JointModel::from_run(run_dir), cache_dir));
    m->model_.load_classifiers(run_dir);
    m->model_.load_aggregator(run_dir);
    m->set_provider(provider);
    return m;
  }

  std::string config() const { return model_.config().to_json().dump(); }

  Data prepare(const std::string& trees_json, bool require_labels) {
    auto trees = parse_trees(trees_json, model_.config().data);
    py::gil_scoped_release release;
    return Data(prepare_data(model_, std::move(trees), source(), require_labels));
  }

  std::string train_stage1(const Data& train) {
    py::gil_scoped_release release;
    return histories_to_text(stancemil::train_stage1(model_, train.data));
  }

  std::string train_stage2(const Data& train) {
    py::gil_scoped_release release;
    return histories_to_text({stancemil::train_stage2(model_, train.data)});
  }

  std::string predict(const Data& data) const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& p : predict_all(model_, data.data)) out.push_back(prediction_to_json(p, model_.veracity(), model_.stance()));
    return out.dump();
  }

  std::string evaluate(const Data& data) const {
    return stancemil::evaluate(predict_all(model_, data.data), data.data, model_.veracity(), model_.stance())
        .to_json()
        .dump();
  }

  std::string run(const Data& train, const Data& test, const std::filesystem::path& run_dir) {
    py::gil_scoped_release release;
    return run_pipeline(model_, train.data, test.data, run_dir).eval.to_json().dump();
  }

  std::string attention(const Data& data, const std::string& claim_id) const {
    return dump_attention(model_, data.data, claim_id).dump();
  }

  std::vector<std::string> digests() const { return classifier_digests(model_.classifiers()); }
  std::string aggregator_digest() const { return model_.aggregator().params().digest(); }

  void save(const std::filesystem::path& run_dir) const {
    model_.save_config(run_dir);
    model_.save_classifiers(run_dir);
    model_.save_aggregator(run_dir);
  }

 private:
  Model(JointModel model, const std::filesystem::path& cache_dir) : model_(std::move(model)), cache_(cache_dir) {}

  void set_provider(const std::string& kind) {
    if (kind == "mock") {
      provider_ = std::make_unique<MockProvider>();
    } else if (kind == "config") {
      provider_ = make_provider(model_.config().provider);
    } else if (kind != "none") {
      throw Error(ErrorKind::kUsage, "provider must be mock, config or none, not '" + kind + "'");
    }
  }

  ExplanationSource source() {
    ExplanationSource s;
    s.provider = provider_.get();
    s.cache = &cache_;
    s.provider_id = provider_ ? provider_->id() : provider_id_for(model_.config().provider);
    s.max_concurrent = model_.config().provider.max_concurrent;
    s.retry = RetryPolicy{model_.config().provider.max_retries, model_.config().provider.backoff_seconds};
    return s;
  }

  JointModel model_;
  ExplanationCache cache_;
  std::unique_ptr<ExplanationProvider> provider_;
};

std::string run_ablations_py(const std::string& config_json, const std::vector<std::string>& codes,
                             const std::string& train_json, const std::string& test_json) {
  const auto config = ModelConfig::from_json(nlohmann::json::parse(config_json));
  std::vector<AblationCode> parsed;
  for (const auto& c : codes) parsed.push_back(parse_ablation(c));
  const auto train = parse_trees(train_json, config.data), test = parse_trees(test_json, config.data);
  MockProvider provider;
  ExplanationCache cache;
  ExplanationSource source;
  source.provider = &provider;
  source.cache = &cache;
  source.provider_id = provider.id();
  std::vector<AblationResult> results;
  {
    py::gil_scoped_release release;
    results = run_ablations(config, parsed, train, test, source);
  }
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& r : results) out[ablation_name(r.code)] = r.eval.to_json();
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of stancemil";

  static py::exception<Error> error(m, "StancemilError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(to_string(e.kind())), e.what()).ptr());
    } catch (const nlohmann::json::exception& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string("parse"), e.what()).ptr());
    }
  });

  m.def("generate_synthetic",
        [](const std::string& config_json, std::uint64_t seed) {
          return trees_to_text(generate_synthetic(SyntheticConfig::from_json(nlohmann::json::parse(config_json)), seed));
        },
        py::arg("config_json"), py::arg("seed"));

  m.def("target_pairs", [](const std::vector<std::string>& veracity, const std::vector<std::string>& stance) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& p : enumerate_target_pairs(Vocabulary(veracity), Vocabulary(stance)))
      out.emplace_back(p.veracity, p.stance);
    return out;
  });

  m.def("binarize", [](const std::string& gold, const std::vector<std::string>& veracity,
                       const std::vector<std::string>& stance) {
    const Vocabulary v(veracity);
    std::vector<int> labels;
    for (const auto& p : enumerate_target_pairs(v, Vocabulary(stance))) labels.push_back(binarize_veracity_label(gold, p, v));
    return labels;
  });

  m.def("binary_loss", &binary_loss, py::arg("predictions"));
  m.def("aggregation_claim_loss",
        [](const std::vector<double>& scores, std::size_t gold) {
          return aggregation_claim_loss(Eigen::Map<const Vector>(scores.data(), static_cast<Eigen::Index>(scores.size())),
                                        gold);
        },
        py::arg("scores"), py::arg("gold"));
  m.def("binary_auc", &binary_auc, py::arg("scores"), py::arg("positive"));

  py::class_<Data>(m, "PreparedData")
      .def("__len__", &Data::size)
      .def_property_readonly("claim_ids", &Data::claim_ids);

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, const std::string&, const std::filesystem::path&>(), py::arg("config_json"),
           py::arg("provider") = "mock", py::arg("cache_dir") = std::filesystem::path())
      .def_static("from_run", &Model::from_run, py::arg("run_dir"), py::arg("provider") = "mock",
                  py::arg("cache_dir") = std::filesystem::path())
      .def("config", &Model::config)
      .def("prepare", &Model::prepare, py::arg("trees_json"), py::arg("require_labels"))
      .def("train_stage1", &Model::train_stage1)
      .def("train_stage2", &Model::train_stage2)
      .def("predict", &Model::predict)
      .def("evaluate", &Model::evaluate)
      .def("run", &Model::run, py::arg("train"), py::arg("test"), py::arg("run_dir") = std::filesystem::path())
      .def("attention", &Model::attention)
      .def("classifier_digests", &Model::digests)
      .def("aggregator_digest", &Model::aggregator_digest)
      .def("save", &Model::save);

  m.def("run_ablations", &run_ablations_py, py::arg("config_json"), py::arg("codes"), py::arg("train_json"),
        py::arg("test_json"));
}
