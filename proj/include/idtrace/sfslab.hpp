#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "idtrace/core.hpp"
#include "idtrace/gateway.hpp"
#include "idtrace/prompts.hpp"

namespace idtrace::sfslab {

struct SfsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A single trial failed irrecoverably (unparseable verdict); it is excluded
// from aggregates with a log entry.
struct TrialError : SfsError {
  using SfsError::SfsError;
};

struct FeatureCatalog {
  struct Feature {
    std::string name;
    std::vector<std::string> values;
  };
  std::vector<Feature> features;
  std::vector<std::string> sfs;

  void validate() const;
  const Feature* find(const std::string& name) const;
  std::vector<std::string> names() const;

  static FeatureCatalog load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Caption templates with {{anchor}} (the probed individual, required in the
// first and last frame) and {{blank_k}} placeholders for other people.
struct SceneFormat {
  std::string name;
  std::vector<std::string> frames;

  void validate() const;
  static SceneFormat from_file(const std::filesystem::path& path);
  static std::vector<SceneFormat> load_dir(const std::filesystem::path& dir);
};

enum class TrialMode { Base, Contrast, MixtureFirst, MixtureLast, MixtureContrast };
std::string to_string(TrialMode mode);

struct TrialSpec {
  TrialMode mode = TrialMode::Base;
  std::string format_name;
  std::vector<std::string> probe_features;
  std::vector<std::string> extra_features;
  std::map<std::string, std::string> first_probe_values;
  std::map<std::string, std::string> last_probe_values;
  std::map<std::string, std::string> first_extra_values;
  std::map<std::string, std::string> last_extra_values;
  uint64_t fill_seed = 0;

  // Canonical content hash; the replayable identity of the trial.
  std::string hash() const;
};

struct Trial {
  TrialSpec spec;
  std::vector<std::string> filled_frames;
  std::string first_anchor_text;
  std::string last_anchor_text;
  bool expected_same = true;

  const std::string& first_caption() const { return filled_frames.front(); }
  const std::string& last_caption() const { return filled_frames.back(); }
};

// Draws value assignments for a trial. Deterministic for a fixed seed.
TrialSpec make_trial_spec(const FeatureCatalog& catalog, TrialMode mode,
                          const std::vector<std::string>& probe_features,
                          const SceneFormat& format, uint64_t seed);

// Fills the scene format. Pure function of (format, spec, seed): anchors get
// the spec's value assignments, distractor blanks get seeded random renders.
Trial instantiate_trial(const SceneFormat& format, const TrialSpec& spec, uint64_t seed);

// Answers "are the two probed individuals the same person".
class TrialJudge {
 public:
  virtual ~TrialJudge() = default;
  virtual std::string name() const = 0;
  virtual bool same(const Trial& trial) = 0;
};

// Compares the shared probe values only; extras are ignored.
class ProfileEqualityTrialJudge : public TrialJudge {
 public:
  std::string name() const override { return "profile-equality"; }
  bool same(const Trial& trial) override;
};

// "different" as soon as the extra-feature assignments differ.
class ExtrasSensitiveTrialJudge : public TrialJudge {
 public:
  std::string name() const override { return "extras-sensitive"; }
  bool same(const Trial& trial) override;
};

// "same" iff the keyed feature is in the probe set (planted-feature mock).
class KeyedFeatureTrialJudge : public TrialJudge {
 public:
  explicit KeyedFeatureTrialJudge(std::string feature) : feature_(std::move(feature)) {}
  std::string name() const override { return "keyed:" + feature_; }
  bool same(const Trial& trial) override;

 private:
  std::string feature_;
};

// Model-backed, constrained same/different reply; one corrective re-ask,
// then TrialError.
class LlmTrialJudge : public TrialJudge {
 public:
  LlmTrialJudge(gateway::Gateway& gw, prompts::PromptTemplate prompt)
      : gateway_(gw), prompt_(std::move(prompt)) {}
  std::string name() const override { return "llm"; }
  bool same(const Trial& trial) override;

 private:
  gateway::Gateway& gateway_;
  prompts::PromptTemplate prompt_;
};

bool run_trial(const Trial& trial, TrialJudge& judge);

struct TraceEntry {
  TrialSpec spec;
  std::string spec_hash;
  bool verdict = false;  // raw judge answer: true = "same"
};

// Hash over the ordered (spec hash, verdict) pairs; replayed runs must
// reproduce it bit-identically.
std::string trace_hash(const std::vector<TraceEntry>& trace);
void write_trace(const std::filesystem::path& path, const std::vector<TraceEntry>& trace);
std::vector<TraceEntry> load_trace(const std::filesystem::path& path);

struct SearchBudget {
  int max_n = 4;
  int max_combinations_per_n = 120;  // seeded sample when C(m,n) exceeds this
  int formats_per_combination = 5;
  // Quartile pruning: drop every feature whose base score is <= the value at
  // the drop_fraction quantile, unless that value already equals the best
  // score. 0 disables.
  double drop_fraction = 0.25;
  // Robustness pruning: drop features with mixture score < base - gap.
  // Negative disables.
  double mixture_gap = 0.15;
  uint64_t seed = 0;
};

struct FeatureScores {
  double base = 0.0, contrast = 0.0, mixture = 0.0;
  long long base_n = 0, contrast_n = 0, mixture_n = 0;
};

struct SearchState {
  int completed_n = 0;
  std::vector<std::string> surviving;
  std::map<std::string, FeatureScores> scores;  // from the last completed round
  std::vector<std::string> pruning_log;
};

struct SearchResult {
  std::vector<std::string> sfs;
  SearchState state;
  std::vector<TraceEntry> trace;
};

// Thrown on gateway exhaustion mid-search; carries a resumable checkpoint of
// the completed rounds.
struct SearchInterrupted : SfsError {
  SearchInterrupted(const std::string& what, SearchState s, std::vector<TraceEntry> t)
      : SfsError(what), state(std::move(s)), trace(std::move(t)) {}
  SearchState state;
  std::vector<TraceEntry> trace;
};

// The feature-set exploration: for n = 1..max_n, enumerate (or sample)
// probe combinations over the surviving features, run base/contrast/mixture
// trials on sampled scene formats, aggregate per-feature scores as the mean
// over trials containing the feature, and prune. Survivors are the sfs.
SearchResult search_sfs(const FeatureCatalog& catalog, const std::vector<SceneFormat>& formats,
                        const SearchBudget& budget, TrialJudge& judge,
                        const std::optional<SearchState>& resume_from = std::nullopt,
                        std::vector<TraceEntry> trace_prefix = {});

struct StrengthScores {
  double base = 0.0;
  double mixture = 0.0;
  double mixture_contrast = 0.0;
  long long trials = 0;
};

// Three-mode battery over a fixed feature set.
StrengthScores evaluate_sfs_strength(const FeatureCatalog& catalog,
                                     const std::vector<std::string>& sfs,
                                     const std::vector<SceneFormat>& formats, TrialJudge& judge,
                                     int reps_per_format, uint64_t seed);

// ---- judge-criterion bench ----

struct LabeledPair {
  std::string description_a;
  std::string description_b;
  bool same = false;
  core::FeatureProfile profile_a, profile_b;
  std::string scene_a, scene_b;
  std::string action_a, action_b;
};

// Synthetic photo-pair corpus: people with distinct profiles; scenes and
// actions drawn independently of identity.
std::vector<LabeledPair> make_pair_corpus(const FeatureCatalog& catalog, int n_people,
                                          int photos_per_person, int n_pairs, uint64_t seed);

class PairJudge {
 public:
  virtual ~PairJudge() = default;
  virtual std::string name() const = 0;
  virtual bool same(const LabeledPair& pair) = 0;
};

class ProfilePairJudge : public PairJudge {
 public:
  std::string name() const override { return "features"; }
  bool same(const LabeledPair& pair) override { return pair.profile_a == pair.profile_b; }
};

class ScenePairJudge : public PairJudge {
 public:
  std::string name() const override { return "environment"; }
  bool same(const LabeledPair& pair) override { return pair.scene_a == pair.scene_b; }
};

class ActionPairJudge : public PairJudge {
 public:
  std::string name() const override { return "actions"; }
  bool same(const LabeledPair& pair) override { return pair.action_a == pair.action_b; }
};

class LlmPairJudge : public PairJudge {
 public:
  LlmPairJudge(gateway::Gateway& gw, prompts::PromptTemplate prompt)
      : gateway_(gw), prompt_(std::move(prompt)) {}
  std::string name() const override { return "llm"; }
  bool same(const LabeledPair& pair) override;

 private:
  gateway::Gateway& gateway_;
  prompts::PromptTemplate prompt_;
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  long long true_positives = 0;
  long long predicted_same = 0;
  long long actually_same = 0;
};

PrecisionRecall judge_criterion_bench(const std::vector<LabeledPair>& pairs, PairJudge& judge);

}  // namespace idtrace::sfslab
