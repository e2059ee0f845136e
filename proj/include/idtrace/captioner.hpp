#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idtrace/core.hpp"
#include "idtrace/extraction.hpp"
#include "idtrace/gateway.hpp"
#include "idtrace/prompts.hpp"

namespace idtrace::captioner {

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Mode { ST, MTSCText, MTSCNoText, MTDC, RICE, Baseline };

Mode mode_from_string(const std::string& name);
std::string to_string(Mode mode);

struct PipelineConfig {
  Mode mode = Mode::RICE;
  int window_len = 4;
  std::vector<std::string> sfs;  // feature vocabulary for window captions
  // features_only | actions | environment | unrestricted. With features_only
  // the linking judge is fed profile renders only — stripped mechanically,
  // not by prompt.
  std::string judge_criterion = "features_only";
  double link_threshold = 0.5;
  double extract_threshold = 0.5;  // free-text modes

  void validate() const;
};

struct WindowCharacter {
  core::CharacterDescription description;  // features restricted to sfs
  std::vector<int> frames;                 // clip frame indices inside the window
};

struct WindowCaption {
  int window_index = 0;
  std::vector<int> frame_indices;
  std::string text;  // may reference characters as {c1}, {c2}, ...
  std::vector<WindowCharacter> characters;
};

// Non-overlapping contiguous 1-based inclusive ranges covering 1..n_frames;
// the last window may be short.
std::vector<std::pair<int, int>> plan_windows(int n_frames, int window_len);

// One model exchange for a window of frames; the reply must be the JSON
// window-caption object. One corrective re-prompt, then PipelineError.
WindowCaption caption_window(const std::vector<core::FrameRef>& frames,
                             const PipelineConfig& config, gateway::Gateway& gw,
                             const prompts::PromptLibrary& prompts);

struct RegistryEntry {
  std::string label;  // "person 1", "person 2", ...
  core::CharacterDescription canonical;
  core::FeatureProfile profile;
  std::vector<int> frames;
};

struct LinkStep {
  int window_index = 0;
  size_t character_index = 0;
  extraction::JudgeVerdict verdict;
  bool created_new_entry = false;
  size_t entry_index = 0;
  // What the judge actually saw (assertable: features_only must contain no
  // action or environment text).
  std::string judge_saw_established;
  std::string judge_saw_candidate;
};

struct SummaryResult {
  std::string caption;
  std::vector<RegistryEntry> registry;
  std::vector<LinkStep> links;
};

// Links window characters into a cross-window registry via find_most_fit and
// renders the final caption with stable registry labels substituted for the
// {ck} placeholders.
SummaryResult summarize_windows(const std::vector<WindowCaption>& windows,
                                const PipelineConfig& config, extraction::Judge& judge);

struct WindowFailure {
  int window_index = 0;
  std::string message;
};

struct PipelineResult {
  std::string caption;
  std::vector<core::IdSequence> sequences;
  std::vector<RegistryEntry> registry;
  std::vector<WindowCaption> windows;  // RICE audit
  std::vector<LinkStep> links;
  std::vector<WindowFailure> window_failures;
  std::vector<std::string> stage_log;
  std::optional<extraction::ExtractionResult> extraction;  // free-text modes
};

// Runs the configured pipeline. For RICE the registry is authoritative for
// the predicted sequences; free-text modes run the extraction pipeline over
// the final caption.
PipelineResult run_pipeline(const core::AnnotatedClip& clip, const PipelineConfig& config,
                            gateway::Gateway& gw, extraction::Judge& judge,
                            const prompts::PromptLibrary& prompts);

// {"clip_id", "mode", "caption", "registry":[{label, frames, profile}]}
std::string render_caption_output(const std::string& clip_id, Mode mode,
                                  const PipelineResult& result);
void write_caption_output(const std::filesystem::path& path, const std::string& clip_id,
                          Mode mode, const PipelineResult& result);

struct CaptionFileEntry {
  std::string clip_id;
  std::string caption;
};

// Reads caption files: an array of objects carrying at least clip_id and
// caption (caption-output files qualify), or one bare object.
std::vector<CaptionFileEntry> load_captions(const std::filesystem::path& path);

}  // namespace idtrace::captioner
