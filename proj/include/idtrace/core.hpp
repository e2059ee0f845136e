#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace idtrace::core {

// Feature name -> value, e.g. {"hair color": "silver"}. Map order (alphabetic
// by feature name) is the canonical render order everywhere.
using FeatureProfile = std::map<std::string, std::string>;

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One key frame of a clip. Frame indices are 1-based.
struct FrameRef {
  std::string clip_id;
  int index = 0;
  std::string image_key;

  bool operator==(const FrameRef&) const = default;
};

// One identity's appearance frames, strictly increasing.
struct IdSequence {
  std::string label;
  std::vector<int> frames;

  bool operator==(const IdSequence&) const = default;
};

struct AnnotatedClip {
  std::string clip_id;
  std::vector<FrameRef> frames;  // ordered 1..N, no gaps
  std::vector<IdSequence> ground_truth;
  std::string source;
  // Feature profiles by identity label. Synthetic clips always carry these;
  // ingested datasets may.
  std::map<std::string, FeatureProfile> profiles;

  bool operator==(const AnnotatedClip&) const = default;

  int frame_count() const { return static_cast<int>(frames.size()); }
  bool has_frame(int index) const { return index >= 1 && index <= frame_count(); }
};

struct CharacterDescription {
  std::string surface_text;
  std::optional<FeatureProfile> features;

  bool operator==(const CharacterDescription&) const = default;
};

struct CaptionSegment {
  int frame_index = 0;
  std::string text;
  std::vector<CharacterDescription> characters;

  bool operator==(const CaptionSegment&) const = default;
};

// A caption decomposed into per-frame segments.
struct StructuredCaption {
  std::string clip_id;
  std::vector<CaptionSegment> segments;
  std::string full_text;

  bool operator==(const StructuredCaption&) const = default;
};

// Per-clip prediction as exchanged on disk.
struct ClipPrediction {
  std::string clip_id;
  std::vector<IdSequence> identities;

  bool operator==(const ClipPrediction&) const = default;
};

void validate_sequence(const IdSequence& seq, const AnnotatedClip* clip = nullptr);
void validate_clip(const AnnotatedClip& clip);
void validate_structured_caption(const StructuredCaption& caption, const AnnotatedClip& clip);

enum class MissingImagePolicy { Warn, Fail };

// Dataset manifest I/O. The manifest is a single JSON file:
//   {"clips":[{"clip_id", "frames":[{"index","image"}],
//              "identities":[{"label","frames"[, "profile"]}][, "source"]}]}
std::vector<AnnotatedClip> load_dataset(const std::filesystem::path& path,
                                        MissingImagePolicy policy = MissingImagePolicy::Warn);
void write_dataset(const std::filesystem::path& path, const std::vector<AnnotatedClip>& clips);

// Prediction files hold an array of per-clip objects
// {"clip_id", "identities":[{"label","frames"}]}; a single bare object is
// also accepted.
std::vector<ClipPrediction> load_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path,
                       const std::vector<ClipPrediction>& predictions);

// Deterministic synthetic clip generator. Every identity appears in at least
// one frame; identities carry distinct feature profiles drawn from the
// built-in strong-feature vocabulary so deterministic judges and the vision
// mock can operate without a remote model.
AnnotatedClip synthesize_clip(uint64_t seed, int n_frames, int n_ids, double appearance_rate);

// "hair color: silver; hairstyle: bun" (alphabetic feature order).
std::string render_profile(const FeatureProfile& profile);

// Inverse of render_profile. Returns nullopt when text is not a render.
std::optional<FeatureProfile> parse_profile_render(const std::string& text);

// "A person (<profile render>) appears." — the canonical sentence form used
// by synthetic captions and mock captioners.
std::string render_person(const FeatureProfile& profile);

// Renders a ground-truth clip as a frame-marked caption:
//   [frame 1] A person (...) appears. A person (...) appears. [frame 2] ...
// Frames with no identities still emit a marker and a filler sentence.
std::string render_caption(const AnnotatedClip& clip);

// Feature names used by synthesize_clip (a fixed strong-feature vocabulary,
// also present in the shipped catalog's sfs list).
const std::vector<std::string>& synthetic_feature_names();

}  // namespace idtrace::core
