#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "idtrace/core.hpp"
#include "idtrace/gateway.hpp"
#include "idtrace/prompts.hpp"

namespace idtrace::extraction {

struct ExtractionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One tracked character: the most recently accepted description plus the full
// (frame, description) history it was built from.
struct CharacterTrack {
  core::CharacterDescription canonical;
  std::vector<std::pair<int, core::CharacterDescription>> history;

  // Unique frame indices, increasing (projection of history).
  std::vector<int> frames() const;
};

struct JudgeVerdict {
  std::optional<size_t> candidate_index;
  std::optional<double> score;
};

// Answers "how likely are these two descriptions the same person" in [0,1].
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  virtual double score(const core::CharacterDescription& established,
                       const core::CharacterDescription& candidate) = 0;
};

// 1.0 iff the whole surface texts are equal after whitespace/case folding.
class ExactTextJudge : public Judge {
 public:
  std::string name() const override { return "exact"; }
  double score(const core::CharacterDescription& a, const core::CharacterDescription& b) override;
};

// Compares the first parenthesized token of each description (the profile
// render in synthetic captions); falls back to whole-text equality.
class TokenJudge : public Judge {
 public:
  std::string name() const override { return "token"; }
  double score(const core::CharacterDescription& a, const core::CharacterDescription& b) override;
};

// Fraction of feature slots with equal values, over max(|a|,|b|). Profiles
// are parsed from the surface text when not attached.
class FeatureOverlapJudge : public Judge {
 public:
  std::string name() const override { return "feature-overlap"; }
  double score(const core::CharacterDescription& a, const core::CharacterDescription& b) override;
};

// 1.0 iff both profiles are present, non-empty, and identical.
class ProfileEqualityJudge : public Judge {
 public:
  std::string name() const override { return "profile-equality"; }
  double score(const core::CharacterDescription& a, const core::CharacterDescription& b) override;
};

// Model-backed judge: one exchange per comparison through the gateway.
class LlmJudge : public Judge {
 public:
  LlmJudge(gateway::Gateway& gw, prompts::PromptTemplate prompt)
      : gateway_(gw), prompt_(std::move(prompt)) {}
  std::string name() const override { return "llm"; }
  double score(const core::CharacterDescription& a, const core::CharacterDescription& b) override;

 private:
  gateway::Gateway& gateway_;
  prompts::PromptTemplate prompt_;
};

// Replaces the surface text by the profile render so the judge can only see
// features (no actions, no environment).
core::CharacterDescription strip_to_features(const core::CharacterDescription& description);

// Best-scoring track for the candidate; ties break to the lowest track
// index; scores outside [0,1] are clamped with a warning. Empty track lists
// yield an empty verdict.
JudgeVerdict find_most_fit(std::span<const CharacterTrack> tracks,
                           const core::CharacterDescription& candidate, Judge& judge);

// Splits a caption into per-frame segments. Captions that already carry
// [frame k] markers take a deterministic parser path with no model call;
// otherwise the frame-indexing prompt runs with a mechanical verbatim check
// and one corrective re-prompt.
core::StructuredCaption assign_frame_indices(const std::string& caption,
                                             const core::AnnotatedClip& clip,
                                             gateway::Gateway& gw,
                                             const prompts::PromptLibrary& prompts);

// Extracts verbatim character description spans from one segment.
std::vector<core::CharacterDescription> extract_characters(const core::CaptionSegment& segment,
                                                           gateway::Gateway& gw,
                                                           const prompts::PromptLibrary& prompts);

struct UpdateStep {
  int frame_index = 0;
  std::string candidate_text;
  JudgeVerdict verdict;
  bool created_new_track = false;
  size_t track_index = 0;
};

struct UpdateResult {
  std::vector<CharacterTrack> tracks;
  std::vector<UpdateStep> steps;

  // Tracks projected to IdSequences labeled track-1..track-n.
  std::vector<core::IdSequence> sequences() const;
};

// Thrown when the judge fails mid-run; carries the partial state.
struct SequenceUpdateError : ExtractionError {
  SequenceUpdateError(const std::string& what, UpdateResult partial_state, size_t next)
      : ExtractionError(what), partial(std::move(partial_state)), next_segment(next) {}
  UpdateResult partial;
  size_t next_segment;
};

// The dynamic sequence updating algorithm: tracks initialize from the first
// populated frame's distinct characters; later candidates join the
// best-scoring track when score > threshold, else open a new track. Within
// one frame a track absorbs at most one candidate, and tracks created in a
// frame only become match targets from the next frame on.
UpdateResult run_sequence_update(const core::StructuredCaption& caption, Judge& judge,
                                 double threshold);
std::vector<core::IdSequence> dynamic_sequence_update(const core::StructuredCaption& caption,
                                                      Judge& judge, double threshold);

struct ExtractionResult {
  std::vector<core::IdSequence> sequences;
  core::StructuredCaption structured;
  UpdateResult update;
};

// Full pipeline: frame indexing -> character extraction -> sequence update.
// Stage failures surface as ExtractionError prefixed with the stage name.
ExtractionResult extract_predictions(const std::string& caption, const core::AnnotatedClip& clip,
                                     gateway::Gateway& gw, Judge& judge, double threshold,
                                     const prompts::PromptLibrary& prompts);

// Audit bundle: one file per stage under dir.
void write_audit_bundle(const std::filesystem::path& dir, const ExtractionResult& result);

}  // namespace idtrace::extraction
