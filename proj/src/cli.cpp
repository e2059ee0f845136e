#include "idtrace/cli.hpp"

#include <chrono>
#include <future>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "idtrace/captioner.hpp"
#include "idtrace/core.hpp"
#include "idtrace/extraction.hpp"
#include "idtrace/gateway.hpp"
#include "idtrace/metrics.hpp"
#include "idtrace/mock_backends.hpp"
#include "idtrace/prompts.hpp"
#include "idtrace/sfslab.hpp"
#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::cli {

using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string data_dir;
  std::string backend = "mock:vision";
  std::string endpoint;
  std::string cache_dir;
  std::string model;
  int in_flight = 4;
  std::string label;
};

void add_global_options(CLI::App* cmd, GlobalOptions& opts) {
  cmd->add_option("--data-dir", opts.data_dir,
                  "Directory with catalog/prompts/scene formats (default: IDTRACE_DATA_DIR or "
                  "the shipped data/)");
  cmd->add_option("--backend", opts.backend,
                  "Model backend: replay | http | mock:vision | mock:echo | mock:onehot");
  cmd->add_option("--endpoint", opts.endpoint, "HTTP endpoint base (default: IDTRACE_ENDPOINT)");
  cmd->add_option("--cache-dir", opts.cache_dir,
                  "Fixture cache directory (default: IDTRACE_CACHE_DIR)");
  cmd->add_option("--model", opts.model, "Chat model id");
  cmd->add_option("--in-flight", opts.in_flight, "Max concurrent model requests");
  cmd->add_option("--label", opts.label, "Run label recorded in the manifest");
}

std::filesystem::path resolve_data_dir(const GlobalOptions& opts) {
  if (!opts.data_dir.empty()) return opts.data_dir;
  return prompts::default_data_dir();
}

std::unique_ptr<gateway::Gateway> make_gateway(const GlobalOptions& opts,
                                               const std::vector<core::AnnotatedClip>& clips) {
  gateway::GatewayConfig config = gateway::GatewayConfig::from_environment();
  if (!opts.endpoint.empty()) config.endpoint = opts.endpoint;
  if (!opts.cache_dir.empty()) config.cache_dir = opts.cache_dir;
  if (!opts.model.empty()) config.model = opts.model;
  config.in_flight = opts.in_flight;

  std::unique_ptr<gateway::ChatBackend> backend;
  if (opts.backend == "replay") {
    config.kind = gateway::BackendKind::Replay;
  } else if (opts.backend == "http") {
    config.kind = gateway::BackendKind::HttpChat;
  } else if (opts.backend.rfind("mock:", 0) == 0) {
    config.kind = gateway::BackendKind::Mock;
    config.mock_name = opts.backend.substr(5);
    if (config.mock_name == "vision") {
      backend = std::make_unique<gateway::SimBackend>(clips);
    }
  } else {
    throw gateway::ConfigError("unknown backend: " + opts.backend);
  }
  return std::make_unique<gateway::Gateway>(config, std::move(backend));
}

std::unique_ptr<extraction::Judge> make_judge(const std::string& name,
                                              const std::string& criterion,
                                              gateway::Gateway& gw,
                                              const prompts::PromptLibrary& lib) {
  if (name == "exact") return std::make_unique<extraction::ExactTextJudge>();
  if (name == "token") return std::make_unique<extraction::TokenJudge>();
  if (name == "feature-overlap") return std::make_unique<extraction::FeatureOverlapJudge>();
  if (name == "profile-equality") return std::make_unique<extraction::ProfileEqualityJudge>();
  if (name == "llm") {
    const std::string tmpl = criterion == "features_only" ? "rice_summary" : "same_person_judge";
    return std::make_unique<extraction::LlmJudge>(gw, lib.get(tmpl));
  }
  throw gateway::ConfigError("unknown judge: " + name);
}

void require_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument("no such file: " + path.string());
  }
}

// ---- run manifests ----

class ManifestBuilder {
 public:
  ManifestBuilder(std::string command, const GlobalOptions& opts, json config)
      : command_(std::move(command)), label_(opts.label), config_(std::move(config)) {
    start_ = std::chrono::steady_clock::now();
    started_at_ = utc_timestamp();
  }

  void add_input(const std::filesystem::path& path) {
    if (std::filesystem::is_regular_file(path)) {
      inputs_[path.string()] = sha256_hex(read_text_file(path));
    }
  }
  void add_output(const std::filesystem::path& path) {
    if (std::filesystem::is_regular_file(path)) {
      outputs_[path.string()] = sha256_hex(read_text_file(path));
    }
  }

  void write(const std::filesystem::path& path) const {
    json inputs = json::object();
    for (const auto& [k, v] : inputs_) inputs[k] = v;
    json outputs = json::object();
    for (const auto& [k, v] : outputs_) outputs[k] = v;
    const std::string run_id =
        sha256_hex(command_ + config_.dump() + inputs.dump()).substr(0, 12);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start_)
                          .count();
    const json doc{{"run_id", run_id},
                   {"command", command_},
                   {"label", label_.empty() ? run_id : label_},
                   {"config", config_},
                   {"inputs", inputs},
                   {"outputs", outputs},
                   {"started_at", started_at_},
                   {"finished_at", utc_timestamp()},
                   {"duration_ms", ms}};
    write_text_file_atomic(path, doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string label_;
  json config_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
  std::string started_at_;
};

// ---- evaluate ----

int cmd_evaluate(const GlobalOptions& opts, const std::string& dataset_path,
                 const std::string& predictions_path, const std::string& out_path, bool strict) {
  require_file(dataset_path);
  require_file(predictions_path);
  const auto clips = core::load_dataset(dataset_path);
  const auto predictions = core::load_predictions(predictions_path);

  std::map<std::string, const core::ClipPrediction*> by_clip;
  for (const auto& p : predictions) by_clip[p.clip_id] = &p;
  std::map<std::string, bool> dataset_ids;
  for (const auto& c : clips) dataset_ids[c.clip_id] = true;

  int skipped = 0;
  for (const auto& p : predictions) {
    if (!dataset_ids.count(p.clip_id)) {
      const std::string msg = "prediction for unknown clip '" + p.clip_id + "'";
      if (strict) throw core::SchemaError(msg);
      log_warn(msg + ", skipped");
      ++skipped;
    }
  }

  std::vector<std::string> clip_ids;
  std::vector<metrics::IdMatchReport> reports;
  for (const auto& clip : clips) {
    auto it = by_clip.find(clip.clip_id);
    if (it == by_clip.end()) {
      const std::string msg = "no prediction for clip '" + clip.clip_id + "'";
      if (strict) throw core::SchemaError(msg);
      log_warn(msg + ", skipped");
      ++skipped;
      continue;
    }
    try {
      reports.push_back(metrics::evaluate_clip(it->second->identities, clip.ground_truth));
      clip_ids.push_back(clip.clip_id);
    } catch (const metrics::MetricError& e) {
      if (strict) throw;
      log_warn("clip '" + clip.clip_id + "': " + e.what() + ", skipped");
      ++skipped;
    }
  }
  if (reports.empty()) {
    std::cerr << "error: no clips could be evaluated\n";
    return 2;
  }

  ManifestBuilder manifest("evaluate", opts,
                           json{{"dataset", dataset_path},
                                {"predictions", predictions_path},
                                {"strict", strict}});
  manifest.add_input(dataset_path);
  manifest.add_input(predictions_path);

  const auto aggregate = metrics::aggregate_reports(reports);
  metrics::write_report(out_path, clip_ids, reports, aggregate);
  manifest.add_output(out_path);
  manifest.write(out_path + ".manifest.json");

  std::ostringstream table;
  table << "clips evaluated: " << reports.size();
  if (skipped > 0) table << " (skipped: " << skipped << ")";
  table << "\n        precision    recall       similarity\n";
  auto row = [&](const char* name, double p, double r, double s) {
    table << name;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  %9.6f  %9.6f  %9.6f\n", p, r, s);
    table << buf;
  };
  row("pooled", aggregate.pooled.precision, aggregate.pooled.recall,
      aggregate.pooled.sequence_similarity);
  row("macro ", aggregate.macro_precision, aggregate.macro_recall, aggregate.macro_similarity);
  std::cout << table.str();
  return skipped > 0 ? 1 : 0;
}

// ---- extract ----

int cmd_extract(const GlobalOptions& opts, const std::string& dataset_path,
                const std::string& captions_path, const std::string& judge_name, double threshold,
                const std::string& out_dir) {
  require_file(dataset_path);
  require_file(captions_path);
  const auto clips = core::load_dataset(dataset_path);
  const auto captions = captioner::load_captions(captions_path);
  const auto data_dir = resolve_data_dir(opts);
  const auto lib = prompts::PromptLibrary::load_dir(data_dir / "prompts");
  auto gw = make_gateway(opts, clips);
  auto judge = make_judge(judge_name, "unrestricted", *gw, lib);

  std::map<std::string, std::string> caption_by_clip;
  for (const auto& entry : captions) caption_by_clip[entry.clip_id] = entry.caption;

  struct ClipOutcome {
    std::string clip_id;
    std::optional<extraction::ExtractionResult> result;
    std::string error;
  };

  std::vector<std::future<ClipOutcome>> futures;
  for (const auto& clip : clips) {
    futures.push_back(std::async(std::launch::async, [&, clip_ptr = &clip] {
      ClipOutcome outcome;
      outcome.clip_id = clip_ptr->clip_id;
      auto it = caption_by_clip.find(clip_ptr->clip_id);
      if (it == caption_by_clip.end()) {
        outcome.error = "no caption provided";
        return outcome;
      }
      try {
        outcome.result = extraction::extract_predictions(it->second, *clip_ptr, *gw, *judge,
                                                         threshold, lib);
      } catch (const std::exception& e) {
        outcome.error = e.what();
      }
      return outcome;
    }));
  }

  std::filesystem::create_directories(out_dir);
  std::vector<core::ClipPrediction> predictions;
  std::vector<std::string> failures;
  for (auto& f : futures) {
    ClipOutcome outcome = f.get();
    if (!outcome.result) {
      failures.push_back(outcome.clip_id + ": " + outcome.error);
      continue;
    }
    extraction::write_audit_bundle(std::filesystem::path(out_dir) / outcome.clip_id,
                                   *outcome.result);
    predictions.push_back(core::ClipPrediction{outcome.clip_id, outcome.result->sequences});
  }
  const auto predictions_path = std::filesystem::path(out_dir) / "predictions.json";
  core::write_predictions(predictions_path, predictions);

  ManifestBuilder manifest("extract", opts,
                           json{{"dataset", dataset_path},
                                {"captions", captions_path},
                                {"judge", judge_name},
                                {"threshold", threshold},
                                {"backend", opts.backend}});
  manifest.add_input(dataset_path);
  manifest.add_input(captions_path);
  manifest.add_output(predictions_path);
  manifest.write(std::filesystem::path(out_dir) / "run_manifest.json");

  std::cerr << "extracted " << predictions.size() << " of " << clips.size() << " clips\n";
  for (const auto& failure : failures) std::cerr << "  failed: " << failure << "\n";
  return failures.empty() ? 0 : 1;
}

// ---- caption ----

int cmd_caption(const GlobalOptions& opts, const std::string& dataset_path,
                const std::string& mode_name, int window_len, const std::string& catalog_path,
                const std::string& judge_name, double threshold, const std::string& out_dir) {
  require_file(dataset_path);
  const auto clips = core::load_dataset(dataset_path);
  const auto data_dir = resolve_data_dir(opts);
  const auto lib = prompts::PromptLibrary::load_dir(data_dir / "prompts");

  captioner::PipelineConfig config;
  config.mode = captioner::mode_from_string(mode_name);
  config.window_len = window_len;
  config.link_threshold = threshold;
  config.extract_threshold = threshold;
  const std::filesystem::path catalog_file =
      catalog_path.empty() ? data_dir / "catalog.json" : std::filesystem::path(catalog_path);
  require_file(catalog_file);
  const auto catalog = sfslab::FeatureCatalog::load(catalog_file);
  config.sfs = catalog.sfs;
  config.validate();

  auto gw = make_gateway(opts, clips);
  auto judge = make_judge(judge_name, config.judge_criterion, *gw, lib);

  std::filesystem::create_directories(out_dir);
  std::vector<core::ClipPrediction> predictions;
  std::vector<std::string> failures;
  int window_failures = 0;
  for (const auto& clip : clips) {
    try {
      const auto result = captioner::run_pipeline(clip, config, *gw, *judge, lib);
      window_failures += static_cast<int>(result.window_failures.size());
      captioner::write_caption_output(
          std::filesystem::path(out_dir) / (clip.clip_id + ".caption.json"), clip.clip_id,
          config.mode, result);
      predictions.push_back(core::ClipPrediction{clip.clip_id, result.sequences});
    } catch (const std::exception& e) {
      failures.push_back(clip.clip_id + ": " + e.what());
    }
  }
  const auto predictions_path = std::filesystem::path(out_dir) / "predictions.json";
  core::write_predictions(predictions_path, predictions);

  ManifestBuilder manifest("caption", opts,
                           json{{"dataset", dataset_path},
                                {"mode", mode_name},
                                {"window", window_len},
                                {"catalog", catalog_file.string()},
                                {"judge", judge_name},
                                {"threshold", threshold},
                                {"backend", opts.backend}});
  manifest.add_input(dataset_path);
  manifest.add_input(catalog_file);
  manifest.add_output(predictions_path);
  manifest.write(std::filesystem::path(out_dir) / "run_manifest.json");

  std::cerr << "captioned " << predictions.size() << " of " << clips.size() << " clips ("
            << window_failures << " window failures)\n";
  for (const auto& failure : failures) std::cerr << "  failed: " << failure << "\n";
  return (failures.empty() && window_failures == 0) ? 0 : 1;
}

// ---- sfs commands ----

std::unique_ptr<sfslab::TrialJudge> make_trial_judge(const std::string& name,
                                                     gateway::Gateway& gw,
                                                     const prompts::PromptLibrary& lib) {
  if (name == "profile-equality") return std::make_unique<sfslab::ProfileEqualityTrialJudge>();
  if (name == "extras-sensitive") return std::make_unique<sfslab::ExtrasSensitiveTrialJudge>();
  if (name.rfind("keyed:", 0) == 0) {
    return std::make_unique<sfslab::KeyedFeatureTrialJudge>(name.substr(6));
  }
  if (name == "llm") return std::make_unique<sfslab::LlmTrialJudge>(gw, lib.get("trial_judge"));
  throw gateway::ConfigError("unknown trial judge: " + name);
}

json scores_to_json(const sfslab::SearchState& state) {
  json scores = json::object();
  for (const auto& [feature, s] : state.scores) {
    scores[feature] = json{{"base", metrics::round6(s.base)},
                           {"contrast", metrics::round6(s.contrast)},
                           {"mixture", metrics::round6(s.mixture)},
                           {"base_n", s.base_n},
                           {"contrast_n", s.contrast_n},
                           {"mixture_n", s.mixture_n}};
  }
  return json{{"completed_n", state.completed_n},
              {"surviving", state.surviving},
              {"scores", scores},
              {"pruning_log", state.pruning_log}};
}

sfslab::SearchState state_from_json(const json& j) {
  sfslab::SearchState state;
  state.completed_n = j.at("completed_n").get<int>();
  state.surviving = j.at("surviving").get<std::vector<std::string>>();
  state.pruning_log = j.at("pruning_log").get<std::vector<std::string>>();
  return state;
}

int cmd_sfs_search(const GlobalOptions& opts, const std::string& catalog_path,
                   const std::string& formats_dir, const std::string& judge_name,
                   const sfslab::SearchBudget& budget, const std::string& out_dir, bool resume) {
  const auto data_dir = resolve_data_dir(opts);
  const std::filesystem::path catalog_file =
      catalog_path.empty() ? data_dir / "catalog.json" : std::filesystem::path(catalog_path);
  const std::filesystem::path formats_path =
      formats_dir.empty() ? data_dir / "scene_formats" : std::filesystem::path(formats_dir);
  require_file(catalog_file);
  const auto catalog = sfslab::FeatureCatalog::load(catalog_file);
  const auto formats = sfslab::SceneFormat::load_dir(formats_path);
  const auto lib = prompts::PromptLibrary::load_dir(data_dir / "prompts");
  auto gw = make_gateway(opts, {});
  auto judge = make_trial_judge(judge_name, *gw, lib);

  std::filesystem::create_directories(out_dir);
  const auto checkpoint_path = std::filesystem::path(out_dir) / "checkpoint.json";
  const auto trace_path = std::filesystem::path(out_dir) / "trace.jsonl";

  std::optional<sfslab::SearchState> resume_state;
  std::vector<sfslab::TraceEntry> trace_prefix;
  if (resume && std::filesystem::exists(checkpoint_path)) {
    resume_state = state_from_json(json::parse(read_text_file(checkpoint_path)));
    if (std::filesystem::exists(trace_path)) {
      trace_prefix = sfslab::load_trace(trace_path);
    }
    std::cerr << "resuming after n=" << resume_state->completed_n << "\n";
  }

  ManifestBuilder manifest("sfs-search", opts,
                           json{{"catalog", catalog_file.string()},
                                {"formats", formats_path.string()},
                                {"judge", judge_name},
                                {"max_n", budget.max_n},
                                {"max_combinations_per_n", budget.max_combinations_per_n},
                                {"formats_per_combination", budget.formats_per_combination},
                                {"drop_fraction", budget.drop_fraction},
                                {"mixture_gap", budget.mixture_gap},
                                {"seed", budget.seed},
                                {"backend", opts.backend}});
  manifest.add_input(catalog_file);

  try {
    const auto result =
        sfslab::search_sfs(catalog, formats, budget, *judge, resume_state, trace_prefix);
    sfslab::write_trace(trace_path, result.trace);
    write_text_file_atomic(std::filesystem::path(out_dir) / "sfs.json",
                           json{{"sfs", result.sfs},
                                {"trace_hash", sfslab::trace_hash(result.trace)}}
                                   .dump(2) +
                               "\n");
    write_text_file_atomic(std::filesystem::path(out_dir) / "state.json",
                           scores_to_json(result.state).dump(2) + "\n");
    if (std::filesystem::exists(checkpoint_path)) std::filesystem::remove(checkpoint_path);
    manifest.add_output(std::filesystem::path(out_dir) / "sfs.json");
    manifest.add_output(trace_path);
    manifest.write(std::filesystem::path(out_dir) / "run_manifest.json");
    std::cout << "sfs:";
    for (const auto& f : result.sfs) std::cout << ' ' << f;
    std::cout << "\n";
    return 0;
  } catch (const sfslab::SearchInterrupted& e) {
    sfslab::write_trace(trace_path, e.trace);
    write_text_file_atomic(checkpoint_path, scores_to_json(e.state).dump(2) + "\n");
    std::cerr << "search interrupted (" << e.what() << "); checkpoint written, rerun with "
                 "--resume\n";
    return 1;
  }
}

int cmd_sfs_eval(const GlobalOptions& opts, const std::string& catalog_path,
                 const std::string& formats_dir, const std::string& judge_name, int reps,
                 uint64_t seed, const std::string& out_path) {
  const auto data_dir = resolve_data_dir(opts);
  const std::filesystem::path catalog_file =
      catalog_path.empty() ? data_dir / "catalog.json" : std::filesystem::path(catalog_path);
  const std::filesystem::path formats_path =
      formats_dir.empty() ? data_dir / "scene_formats" : std::filesystem::path(formats_dir);
  require_file(catalog_file);
  const auto catalog = sfslab::FeatureCatalog::load(catalog_file);
  if (catalog.sfs.empty()) throw sfslab::SfsError("catalog has no sfs list to evaluate");
  const auto formats = sfslab::SceneFormat::load_dir(formats_path);
  const auto lib = prompts::PromptLibrary::load_dir(data_dir / "prompts");
  auto gw = make_gateway(opts, {});
  auto judge = make_trial_judge(judge_name, *gw, lib);

  const auto scores =
      sfslab::evaluate_sfs_strength(catalog, catalog.sfs, formats, *judge, reps, seed);
  write_text_file_atomic(out_path, json{{"base", metrics::round6(scores.base)},
                                        {"mixture", metrics::round6(scores.mixture)},
                                        {"mixture_contrast",
                                         metrics::round6(scores.mixture_contrast)},
                                        {"trials", scores.trials}}
                                           .dump(2) +
                                       "\n");

  ManifestBuilder manifest("sfs-eval", opts,
                           json{{"catalog", catalog_file.string()},
                                {"judge", judge_name},
                                {"reps", reps},
                                {"seed", seed},
                                {"backend", opts.backend}});
  manifest.add_input(catalog_file);
  manifest.add_output(out_path);
  manifest.write(out_path + ".manifest.json");

  std::cout << "base " << scores.base << "  mixture " << scores.mixture << "  mixture_contrast "
            << scores.mixture_contrast << "\n";
  return 0;
}

class UnrestrictedMockPairJudge : public sfslab::PairJudge {
 public:
  std::string name() const override { return "unrestricted"; }
  bool same(const sfslab::LabeledPair& pair) override {
    // Confusable stand-in: identical profiles, or a coincidental match of
    // both scene and action.
    return pair.profile_a == pair.profile_b ||
           (pair.scene_a == pair.scene_b && pair.action_a == pair.action_b);
  }
};

int cmd_judge_bench(const GlobalOptions& opts, const std::string& catalog_path,
                    const std::string& criterion, const std::string& judge_kind, int people,
                    int photos, int pairs, uint64_t seed, const std::string& out_path) {
  const auto data_dir = resolve_data_dir(opts);
  const std::filesystem::path catalog_file =
      catalog_path.empty() ? data_dir / "catalog.json" : std::filesystem::path(catalog_path);
  require_file(catalog_file);
  const auto catalog = sfslab::FeatureCatalog::load(catalog_file);
  const auto corpus = sfslab::make_pair_corpus(catalog, people, photos, pairs, seed);

  std::unique_ptr<sfslab::PairJudge> judge;
  if (judge_kind == "mock") {
    if (criterion == "features") judge = std::make_unique<sfslab::ProfilePairJudge>();
    else if (criterion == "environment") judge = std::make_unique<sfslab::ScenePairJudge>();
    else if (criterion == "actions") judge = std::make_unique<sfslab::ActionPairJudge>();
    else if (criterion == "unrestricted") judge = std::make_unique<UnrestrictedMockPairJudge>();
    else throw gateway::ConfigError("unknown criterion: " + criterion);
  } else if (judge_kind == "llm") {
    const auto lib = prompts::PromptLibrary::load_dir(data_dir / "prompts");
    static std::unique_ptr<gateway::Gateway> gw;  // keep alive for the judge
    gw = make_gateway(opts, {});
    judge = std::make_unique<sfslab::LlmPairJudge>(*gw, lib.get("judge_criterion_" + criterion));
  } else {
    throw gateway::ConfigError("judge must be mock or llm");
  }

  const auto result = sfslab::judge_criterion_bench(corpus, *judge);
  write_text_file_atomic(out_path,
                         json{{"criterion", criterion},
                              {"judge", judge->name()},
                              {"precision", metrics::round6(result.precision)},
                              {"recall", metrics::round6(result.recall)},
                              {"true_positives", result.true_positives},
                              {"predicted_same", result.predicted_same},
                              {"actually_same", result.actually_same},
                              {"pairs", static_cast<long long>(corpus.size())}}
                                 .dump(2) +
                             "\n");

  ManifestBuilder manifest("judge-bench", opts,
                           json{{"catalog", catalog_file.string()},
                                {"criterion", criterion},
                                {"judge", judge_kind},
                                {"people", people},
                                {"photos", photos},
                                {"pairs", pairs},
                                {"seed", seed}});
  manifest.add_input(catalog_file);
  manifest.add_output(out_path);
  manifest.write(out_path + ".manifest.json");

  std::cout << criterion << ": precision " << result.precision << "  recall " << result.recall
            << "\n";
  return 0;
}

// ---- report ----

int cmd_report(const std::vector<std::string>& run_paths, const std::string& format,
               const std::string& out_path) {
  if (run_paths.empty()) throw std::invalid_argument("report: no runs given");

  struct Row {
    std::string label;
    double precision, recall, similarity;
  };
  std::vector<Row> rows;
  for (const auto& path : run_paths) {
    require_file(path);
    const json manifest = json::parse(read_text_file(path));
    if (!manifest.contains("outputs")) {
      throw std::invalid_argument("run manifest has no outputs: " + path);
    }
    std::optional<json> pooled;
    for (auto it = manifest.at("outputs").begin(); it != manifest.at("outputs").end(); ++it) {
      if (!std::filesystem::exists(it.key())) continue;
      json doc;
      try {
        doc = json::parse(read_text_file(it.key()));
      } catch (const json::exception&) {
        continue;
      }
      if (doc.is_object() && doc.contains("pooled")) {
        pooled = doc.at("pooled");
        break;
      }
    }
    if (!pooled) {
      throw std::invalid_argument("run has no metrics report with a pooled block: " + path);
    }
    rows.push_back(Row{manifest.value("label", path), pooled->at("precision").get<double>(),
                       pooled->at("recall").get<double>(),
                       pooled->at("sequence_similarity").get<double>()});
  }

  std::ostringstream out;
  if (format == "csv") {
    out << "label,precision,recall,sequence_similarity\n";
    for (const Row& r : rows) {
      out << r.label << ',' << metrics::round6(r.precision) << ',' << metrics::round6(r.recall)
          << ',' << metrics::round6(r.similarity) << "\n";
    }
  } else {
    out << "label                     precision    recall       similarity\n";
    for (const Row& r : rows) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%-24s  %9.6f  %9.6f  %9.6f\n", r.label.c_str(),
                    r.precision, r.recall, r.similarity);
      out << buf;
    }
  }
  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    write_text_file_atomic(out_path, out.str());
  }
  return 0;
}

// ---- synth ----

int cmd_synth(const std::string& out_path, uint64_t seed, int n_clips, int n_frames, int n_ids,
              double rate) {
  std::vector<core::AnnotatedClip> clips;
  for (int i = 0; i < n_clips; ++i) {
    clips.push_back(core::synthesize_clip(seed + static_cast<uint64_t>(i), n_frames, n_ids, rate));
  }
  core::write_dataset(out_path, clips);
  std::cout << "wrote " << clips.size() << " synthetic clips to " << out_path << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"idtrace: identity-consistency tooling for long-video captions"};
  app.require_subcommand(1);

  GlobalOptions opts;

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against a dataset");
  std::string dataset, predictions, out, captions, mode = "rice", judge = "profile-equality";
  std::string catalog, formats;
  bool strict = false;
  double threshold = 0.5;
  int window = 4;
  evaluate->add_option("--dataset", dataset)->required();
  evaluate->add_option("--predictions", predictions)->required();
  evaluate->add_option("--out", out)->required();
  evaluate->add_flag("--strict", strict, "Fail on clip-id mismatches");
  add_global_options(evaluate, opts);

  // extract
  auto* extract = app.add_subcommand("extract", "Extract ID sequences from captions");
  extract->add_option("--dataset", dataset)->required();
  extract->add_option("--captions", captions)->required();
  extract->add_option("--judge", judge, "exact|token|feature-overlap|profile-equality|llm");
  extract->add_option("--threshold", threshold);
  extract->add_option("--out", out)->required();
  add_global_options(extract, opts);

  // caption
  auto* caption = app.add_subcommand("caption", "Run a captioning pipeline over a dataset");
  caption->add_option("--dataset", dataset)->required();
  caption->add_option("--mode", mode, "st|mtsc-text|mtsc-notext|mtdc|rice|baseline");
  caption->add_option("--window", window, "Multi-frame window length");
  caption->add_option("--catalog", catalog, "Feature catalog (default: <data>/catalog.json)");
  caption->add_option("--judge", judge);
  caption->add_option("--threshold", threshold);
  caption->add_option("--out", out)->required();
  add_global_options(caption, opts);

  // sfs-search
  auto* search = app.add_subcommand("sfs-search", "Explore features for a strong feature set");
  sfslab::SearchBudget budget;
  bool resume = false;
  std::string trial_judge = "profile-equality";
  search->add_option("--catalog", catalog);
  search->add_option("--formats", formats, "Scene-format directory");
  search->add_option("--judge", trial_judge,
                     "llm|profile-equality|extras-sensitive|keyed:<feature>");
  search->add_option("--max-n", budget.max_n);
  search->add_option("--max-combos", budget.max_combinations_per_n);
  search->add_option("--formats-per-combo", budget.formats_per_combination);
  search->add_option("--drop-fraction", budget.drop_fraction);
  search->add_option("--mixture-gap", budget.mixture_gap);
  search->add_option("--seed", budget.seed);
  search->add_flag("--resume", resume, "Resume from a checkpoint in --out");
  search->add_option("--out", out)->required();
  add_global_options(search, opts);

  // sfs-eval
  auto* sfs_eval = app.add_subcommand("sfs-eval", "Run the three-mode strength battery");
  int reps = 5;
  uint64_t seed = 0;
  sfs_eval->add_option("--catalog", catalog);
  sfs_eval->add_option("--formats", formats);
  sfs_eval->add_option("--judge", trial_judge);
  sfs_eval->add_option("--reps", reps, "Repetitions per scene format");
  sfs_eval->add_option("--seed", seed);
  sfs_eval->add_option("--out", out)->required();
  add_global_options(sfs_eval, opts);

  // judge-bench
  auto* bench = app.add_subcommand("judge-bench", "Criterion comparison on labeled pairs");
  std::string criterion = "features", bench_judge = "mock";
  int people = 10, photos = 10, pairs = 200;
  bench->add_option("--catalog", catalog);
  bench->add_option("--criterion", criterion, "features|actions|environment|unrestricted");
  bench->add_option("--judge", bench_judge, "mock|llm");
  bench->add_option("--people", people);
  bench->add_option("--photos", photos, "Photos per person");
  bench->add_option("--pairs", pairs);
  bench->add_option("--seed", seed);
  bench->add_option("--out", out)->required();
  add_global_options(bench, opts);

  // report
  auto* report = app.add_subcommand("report", "Cross-run comparison table");
  std::vector<std::string> runs;
  std::string format = "table";
  report->add_option("--runs", runs, "Run manifest paths")->required();
  report->add_option("--format", format, "table|csv");
  report->add_option("--out", out);
  add_global_options(report, opts);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset manifest");
  int n_clips = 10, n_frames = 30, n_ids = 8;
  double rate = 0.28;
  synth->add_option("--out", out)->required();
  synth->add_option("--seed", seed);
  synth->add_option("--clips", n_clips);
  synth->add_option("--frames", n_frames);
  synth->add_option("--ids", n_ids);
  synth->add_option("--rate", rate);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (evaluate->parsed()) return cmd_evaluate(opts, dataset, predictions, out, strict);
    if (extract->parsed()) return cmd_extract(opts, dataset, captions, judge, threshold, out);
    if (caption->parsed()) {
      return cmd_caption(opts, dataset, mode, window, catalog, judge, threshold, out);
    }
    if (search->parsed()) {
      return cmd_sfs_search(opts, catalog, formats, trial_judge, budget, out, resume);
    }
    if (sfs_eval->parsed()) {
      return cmd_sfs_eval(opts, catalog, formats, trial_judge, reps, seed, out);
    }
    if (bench->parsed()) {
      return cmd_judge_bench(opts, catalog, criterion, bench_judge, people, photos, pairs, seed,
                             out);
    }
    if (report->parsed()) return cmd_report(runs, format, out);
    if (synth->parsed()) return cmd_synth(out, seed, n_clips, n_frames, n_ids, rate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

int main_entry(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace idtrace::cli
