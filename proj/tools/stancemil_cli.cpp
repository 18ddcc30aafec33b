#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "stancemil/dataset.hpp"
#include "stancemil/error.hpp"
#include "stancemil/explanations.hpp"
#include "stancemil/pipeline.hpp"
#include "stancemil/synthetic.hpp"

namespace fs = std::filesystem;
using namespace stancemil;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

void echo_config(const std::string& command, const nlohmann::ordered_json& config) {
  nlohmann::ordered_json out;
  out["command"] = command;
  out["config"] = config;
  std::cerr << "resolved config: " << out.dump() << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kUsage, flag + ": '" + item + "' is not a number");
    }
  }
  return out;
}

// Shared flags for commands that build a model from a config file.
struct ModelFlags {
  std::string config;
  std::string cache = "explanations";
  bool mock = false;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config, "Model config JSON");
    app->add_option("--cache", cache, "Explanation cache directory")->capture_default_str();
    app->add_flag("--mock", mock, "Generate missing explanations with the offline mock provider");
    app->add_option("--seed", seed, "Override the config seed");
  }

  ModelConfig resolve() const {
    nlohmann::json j = read_json_file(config);
    if (seed) j["seed"] = *seed;
    return ModelConfig::from_json(j);
  }
};

// Owns the provider and cache behind an ExplanationSource.
struct SourceHolder {
  std::unique_ptr<ExplanationProvider> provider;
  std::unique_ptr<ExplanationCache> cache;
  ExplanationSource source;

  // `allow_provider` lets `explain` call the configured provider; training
  // and evaluation only read the cache unless --mock is given.
  SourceHolder(const ModelConfig& config, const std::string& cache_dir, bool mock, bool allow_provider) {
    cache = std::make_unique<ExplanationCache>(cache_dir);
    ProviderConfig pc = config.provider;
    if (mock) pc.kind = "mock";
    if (mock || allow_provider) provider = make_provider(pc);
    source.provider = provider.get();
    source.cache = cache.get();
    source.provider_id = provider_id_for(pc);
    source.max_concurrent = pc.max_concurrent;
    source.retry = RetryPolicy{pc.max_retries, pc.backoff_seconds};
  }
};

std::vector<ConversationTree> load_trees(const std::string& path, const DatasetConfig& config) {
  auto result = load_dataset(path, DatasetSchema::kCanonical, config);
  for (const auto& d : result.diagnostics)
    spdlog::warn("{}: skipped {}: {}", path, d.record, d.message);
  if (result.trees.empty()) throw Error(ErrorKind::kInput, path + " contains no usable trees");
  return result.trees;
}

std::string metrics_csv(const EvalResult& eval) {
  std::string out = "task,auc,micro_f1,macro_f1\n";
  for (const MetricsReport* r : {&eval.rumor, &eval.stance}) {
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f\n", task_name(r->task).c_str(), r->auc, r->micro_f1,
                  r->macro_f1);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, std::uint64_t seed, std::optional<std::size_t> trees,
              const std::string& out) {
  SyntheticConfig sc = SyntheticConfig::from_json(read_json_file(config_path));
  if (trees) sc.trees = *trees;
  sc.validate();
  nlohmann::ordered_json echo = sc.to_json();
  echo["seed"] = seed;
  echo_config("synth", echo);
  write_dataset(out, generate_synthetic(sc, seed));
  spdlog::info("wrote {} trees to {}", sc.trees, out);
  return 0;
}

int cmd_ingest(const std::string& input, const std::string& schema, const std::string& config_path,
               const std::string& out, bool strict) {
  nlohmann::json j = read_json_file(config_path);
  DatasetConfig dc = DatasetConfig::from_json(j.contains("data") ? j.at("data") : j);
  nlohmann::ordered_json echo = dc.to_json();
  echo["schema"] = schema;
  echo["strict"] = strict;
  echo_config("ingest", echo);
  auto result = load_dataset(input, parse_schema(schema), dc, LoadOptions{strict});
  std::vector<ConversationTree> kept;
  for (const auto& t : result.trees) kept.push_back(preprocess_tree(t, dc.max_posts));
  write_dataset(out, kept);
  nlohmann::ordered_json report;
  report["input"] = input;
  report["kept"] = kept.size();
  report["rejected"] = nlohmann::ordered_json::array();
  for (const auto& d : result.diagnostics)
    report["rejected"].push_back({{"record", d.record}, {"kind", std::string(to_string(d.kind))}, {"message", d.message}});
  write_text(fs::path(out).string() + ".report.json", report.dump(2) + "\n");
  spdlog::info("kept {} trees, rejected {}", kept.size(), result.diagnostics.size());
  return 0;
}

int cmd_explain(const ModelFlags& flags, const std::vector<std::string>& data) {
  ModelConfig cfg = flags.resolve();
  echo_config("explain", cfg.to_json());
  SourceHolder holder(cfg, flags.cache, flags.mock, true);
  JointModel model(cfg);
  std::vector<ExplanationRequest> requests;
  for (const auto& path : data)
    for (const auto& tree : load_trees(path, cfg.data)) {
      auto r = tree_requests(tree, model.pairs(), holder.source.provider_id);
      requests.insert(requests.end(), r.begin(), r.end());
    }
  const std::size_t before = holder.provider->call_count();
  fetch_all(requests, holder.provider.get(), *holder.cache, holder.source.max_concurrent, holder.source.retry);
  spdlog::info("{} requests, {} provider calls, cache at {}", requests.size(), holder.provider->call_count() - before,
               flags.cache);
  return 0;
}

int cmd_train(const ModelFlags& flags, const std::string& data, const std::string& run) {
  ModelConfig cfg = flags.resolve();
  echo_config("train", cfg.to_json());
  SourceHolder holder(cfg, flags.cache, flags.mock, false);
  JointModel model(cfg);
  auto prepared = prepare_data(model, load_trees(data, cfg.data), holder.source, true);
  fs::create_directories(run);
  model.save_config(run);
  auto history = train_stage1(model, prepared);
  model.save_classifiers(run);
  // The untrained aggregator is saved too so `eval` works before `aggregate`.
  model.save_aggregator(run);
  write_loss_history(fs::path(run) / "loss_history.csv", history, nullptr);
  spdlog::info("stage 1 done: {} classifiers saved under {}", history.size(), run);
  return 0;
}

int cmd_aggregate(const std::string& run, const std::string& data, const std::string& cache, bool mock) {
  JointModel model = JointModel::from_run(run);
  echo_config("aggregate", model.config().to_json());
  model.load_classifiers(run);
  SourceHolder holder(model.config(), cache, mock, false);
  auto prepared = prepare_data(model, load_trees(data, model.config().data), holder.source, true);
  auto history = train_stage2(model, prepared);
  model.save_aggregator(run);
  const fs::path hist = fs::path(run) / "loss_history.csv";
  write_loss_history(hist, read_stage1_history(hist), &history);
  spdlog::info("stage 2 done after {} epochs", history.epochs());
  return 0;
}

int cmd_eval(const std::string& run, const std::string& data, const std::string& cache, bool mock,
             const std::string& out_dir) {
  JointModel model = JointModel::from_run(run);
  echo_config("eval", model.config().to_json());
  model.load_classifiers(run);
  model.load_aggregator(run);
  SourceHolder holder(model.config(), cache, mock, false);
  auto prepared = prepare_data(model, load_trees(data, model.config().data), holder.source, false);
  auto predictions = predict_all(model, prepared);
  const fs::path out = out_dir.empty() ? fs::path(run) : fs::path(out_dir);
  fs::create_directories(out);
  write_predictions(out / "predictions.jsonl", predictions, model.veracity(), model.stance());
  if (prepared.gold_veracity.size() != prepared.trees.size()) {
    spdlog::warn("some trees lack gold labels; predictions written, metrics skipped");
    return 0;
  }
  auto eval = evaluate(predictions, prepared, model.veracity(), model.stance());
  write_text(out / "metrics.json", eval.to_json().dump(2) + "\n");
  write_text(out / "metrics.csv", metrics_csv(eval));
  std::cout << metrics_csv(eval);
  return 0;
}

int cmd_ablate(const ModelFlags& flags, const std::string& train, const std::string& test,
               const std::string& variants, const std::string& out) {
  ModelConfig cfg = flags.resolve();
  std::vector<AblationCode> codes;
  std::stringstream ss(variants);
  std::string item;
  while (std::getline(ss, item, ',')) codes.push_back(parse_ablation(item));
  nlohmann::ordered_json echo = cfg.to_json();
  echo["variants"] = variants;
  echo_config("ablate", echo);
  SourceHolder holder(cfg, flags.cache, flags.mock, false);
  auto results = run_ablations(cfg, codes, load_trees(train, cfg.data), load_trees(test, cfg.data), holder.source);
  std::string csv = "variant,task,auc,micro_f1,macro_f1\n";
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    for (const MetricsReport* m : {&r.eval.rumor, &r.eval.stance}) {
      char line[200];
      std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f\n", ablation_name(r.code).c_str(),
                    task_name(m->task).c_str(), m->auc, m->micro_f1, m->macro_f1);
      csv += line;
    }
    report.push_back({{"variant", ablation_name(r.code)}, {"description", ablation_description(r.code)},
                      {"metrics", r.eval.to_json()}});
  }
  write_text(out, csv);
  write_text(fs::path(out).replace_extension(".json"), report.dump(2) + "\n");
  std::cout << csv;
  return 0;
}

int cmd_sweep(const ModelFlags& flags, const std::string& train, const std::string& test,
              const std::optional<std::string>& rho, const std::optional<std::string>& lambda,
              const std::optional<std::string>& deletion, const std::string& out) {
  ModelConfig cfg = flags.resolve();
  SweepConfig sweep = SweepConfig::defaults();
  if (rho) sweep.rho_grid = parse_list(*rho, "--rho");
  if (lambda) sweep.lambda_grid = parse_list(*lambda, "--lambda");
  if (deletion) sweep.deletion_ratios = parse_list(*deletion, "--deletion");
  sweep.deletion_seed = cfg.seed;
  nlohmann::ordered_json echo = cfg.to_json();
  echo["sweep"] = {{"rho", sweep.rho_grid},
                   {"lambda", sweep.lambda_grid},
                   {"deletion", sweep.deletion_ratios},
                   {"grid_fixed", sweep.grid_fixed},
                   {"base_rho", sweep.base_rho},
                   {"base_lambda", sweep.base_lambda}};
  echo_config("sweep", echo);
  SourceHolder holder(cfg, flags.cache, flags.mock, false);
  auto rows = run_sensitivity(cfg, sweep, load_trees(train, cfg.data), load_trees(test, cfg.data), holder.source);
  write_sweep_csv(out, rows);
  spdlog::info("wrote {} rows to {}", rows.size(), out);
  return 0;
}

int cmd_dump_attention(const std::string& run, const std::string& data, const std::string& cache, bool mock,
                       const std::string& claim, const std::string& out) {
  JointModel model = JointModel::from_run(run);
  nlohmann::ordered_json echo = model.config().to_json();
  echo["claim"] = claim;
  echo_config("dump-attention", echo);
  model.load_classifiers(run);
  model.load_aggregator(run);
  SourceHolder holder(model.config(), cache, mock, false);
  auto trees = load_trees(data, model.config().data);
  std::vector<ConversationTree> selected;
  for (auto& t : trees)
    if (t.claim_id == claim) selected.push_back(std::move(t));
  if (selected.empty()) throw Error(ErrorKind::kLookup, "claim '" + claim + "' not found in " + data);
  auto prepared = prepare_data(model, selected, holder.source, false);
  const std::string text = dump_attention(model, prepared, claim).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised joint claim veracity and post stance detection"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a planted-rule synthetic corpus");
  std::string synth_config, synth_out;
  std::uint64_t synth_seed = 0;
  std::optional<std::size_t> synth_trees;
  synth->add_option("--config", synth_config, "Generator config JSON");
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--trees", synth_trees, "Number of trees");
  synth->add_option("--out", synth_out, "Output JSONL")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate, convert and preprocess a raw dataset");
  std::string ingest_input, ingest_schema = "canonical", ingest_config, ingest_out;
  bool ingest_strict = false;
  ingest->add_option("--input", ingest_input, "Raw dataset (JSONL)")->required();
  ingest->add_option("--schema", ingest_schema, "canonical or pheme")->capture_default_str();
  ingest->add_option("--config", ingest_config, "Dataset config JSON (or a model config with a data section)");
  ingest->add_option("--out", ingest_out, "Output canonical JSONL")->required();
  ingest->add_flag("--strict", ingest_strict, "Fail on the first rejected record");

  // explain
  auto* explain = app.add_subcommand("explain", "Generate and cache explanations");
  ModelFlags explain_flags;
  std::vector<std::string> explain_data;
  explain_flags.add(explain);
  explain->add_option("--data", explain_data, "Canonical JSONL files")->required();

  // train
  auto* train = app.add_subcommand("train", "Stage 1: train the binary classifiers");
  ModelFlags train_flags;
  std::string train_data, train_run;
  train_flags.add(train);
  train->add_option("--data", train_data, "Training JSONL")->required();
  train->add_option("--run", train_run, "Run directory")->required();

  // aggregate
  auto* aggregate = app.add_subcommand("aggregate", "Stage 2: train the classifier aggregator");
  std::string agg_run, agg_data, agg_cache = "explanations";
  bool agg_mock = false;
  aggregate->add_option("--run", agg_run, "Run directory from `train`")->required();
  aggregate->add_option("--data", agg_data, "Training JSONL")->required();
  aggregate->add_option("--cache", agg_cache, "Explanation cache directory")->capture_default_str();
  aggregate->add_flag("--mock", agg_mock, "Generate missing explanations with the mock provider");

  // eval
  auto* eval = app.add_subcommand("eval", "Predict and score a labeled split");
  std::string eval_run, eval_data, eval_cache = "explanations", eval_out;
  bool eval_mock = false;
  eval->add_option("--run", eval_run, "Run directory")->required();
  eval->add_option("--data", eval_data, "Evaluation JSONL")->required();
  eval->add_option("--cache", eval_cache, "Explanation cache directory")->capture_default_str();
  eval->add_option("--out", eval_out, "Output directory (default: the run directory)");
  eval->add_flag("--mock", eval_mock, "Generate missing explanations with the mock provider");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  ModelFlags ablate_flags;
  std::string ablate_train, ablate_test, ablate_variants = "full,wos,woe,wop,woo,wog,woh,woa", ablate_out;
  ablate_flags.add(ablate);
  ablate->add_option("--train", ablate_train, "Training JSONL")->required();
  ablate->add_option("--test", ablate_test, "Test JSONL")->required();
  ablate->add_option("--variants", ablate_variants, "Comma-separated variant codes")->capture_default_str();
  ablate->add_option("--out", ablate_out, "Output CSV (a .json report is written next to it)")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Sensitivity sweep over rho, lambda and post deletion");
  ModelFlags sweep_flags;
  std::string sweep_train, sweep_test, sweep_out;
  std::optional<std::string> sweep_rho, sweep_lambda, sweep_deletion;
  sweep_flags.add(sweep);
  sweep->add_option("--train", sweep_train, "Training JSONL")->required();
  sweep->add_option("--test", sweep_test, "Test JSONL")->required();
  sweep->add_option("--rho", sweep_rho, "Comma-separated rho grid (lambda fixed at 0.5)");
  sweep->add_option("--lambda", sweep_lambda, "Comma-separated lambda grid (rho fixed at 0.5)");
  sweep->add_option("--deletion", sweep_deletion, "Comma-separated test-time deletion ratios");
  sweep->add_option("--out", sweep_out, "Output CSV")->required();

  // dump-attention
  auto* dump = app.add_subcommand("dump-attention", "Write attention scores for one claim");
  std::string dump_run, dump_data, dump_cache = "explanations", dump_claim, dump_out;
  bool dump_mock = false;
  dump->add_option("--run", dump_run, "Run directory")->required();
  dump->add_option("--data", dump_data, "JSONL containing the claim")->required();
  dump->add_option("--claim", dump_claim, "Claim id")->required();
  dump->add_option("--cache", dump_cache, "Explanation cache directory")->capture_default_str();
  dump->add_option("--out", dump_out, "Output JSON (default: stdout)");
  dump->add_flag("--mock", dump_mock, "Generate missing explanations with the mock provider");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    spdlog::set_default_logger(spdlog::stderr_color_mt("stancemil"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (synth->parsed()) return cmd_synth(synth_config, synth_seed, synth_trees, synth_out);
    if (ingest->parsed()) return cmd_ingest(ingest_input, ingest_schema, ingest_config, ingest_out, ingest_strict);
    if (explain->parsed()) return cmd_explain(explain_flags, explain_data);
    if (train->parsed()) return cmd_train(train_flags, train_data, train_run);
    if (aggregate->parsed()) return cmd_aggregate(agg_run, agg_data, agg_cache, agg_mock);
    if (eval->parsed()) return cmd_eval(eval_run, eval_data, eval_cache, eval_mock, eval_out);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, ablate_train, ablate_test, ablate_variants, ablate_out);
    if (sweep->parsed())
      return cmd_sweep(sweep_flags, sweep_train, sweep_test, sweep_rho, sweep_lambda, sweep_deletion, sweep_out);
    if (dump->parsed()) return cmd_dump_attention(dump_run, dump_data, dump_cache, dump_mock, dump_claim, dump_out);
  } catch (const Error& e) {
    std::cerr << "stancemil: " << e.what() << "\n";
    return e.kind() == ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "stancemil: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
