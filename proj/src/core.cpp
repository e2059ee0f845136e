#include "idtrace/core.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "idtrace/rng.hpp"
#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::core {

using nlohmann::json;

namespace {

struct SyntheticFeature {
  const char* name;
  std::vector<const char*> values;
};

// Mirrors the sfs entries of data/catalog.json. Kept small on purpose: value
// diversity only has to guarantee distinct profiles for ~10 identities.
const std::vector<SyntheticFeature>& synthetic_features() {
  static const std::vector<SyntheticFeature> table = {
      {"gender", {"man", "woman"}},
      {"age group", {"child", "teenager", "young adult", "middle-aged", "elderly"}},
      {"hair color", {"black", "brown", "blond", "red", "gray", "silver"}},
      {"hair length", {"bald", "buzzed", "short", "shoulder-length", "long"}},
      {"hairstyle", {"straight", "wavy", "curly", "braided", "ponytail", "bun"}},
      {"facial hair", {"clean-shaven", "stubble", "mustache", "goatee", "full beard"}},
      {"glasses", {"none", "round glasses", "square glasses", "rimless glasses", "sunglasses"}},
      {"headwear", {"none", "baseball cap", "beanie", "wide-brim hat", "headscarf"}},
      {"top type", {"t-shirt", "dress shirt", "blouse", "hoodie", "sweater", "polo shirt"}},
      {"top color", {"white", "black", "red", "blue", "green", "yellow", "gray", "pink"}},
      {"outerwear", {"none", "denim jacket", "leather jacket", "blazer", "raincoat", "cardigan"}},
  };
  return table;
}

FeatureProfile draw_profile(Rng& rng) {
  FeatureProfile profile;
  for (const auto& feature : synthetic_features()) {
    profile[feature.name] = feature.values[rng.below(feature.values.size())];
  }
  return profile;
}

}  // namespace

const std::vector<std::string>& synthetic_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : synthetic_features()) out.emplace_back(f.name);
    return out;
  }();
  return names;
}

void validate_sequence(const IdSequence& seq, const AnnotatedClip* clip) {
  if (seq.label.empty()) throw SchemaError("identity with empty label");
  if (seq.frames.empty())
    throw SchemaError("identity '" + seq.label + "' has an empty frame list");
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    if (i > 0 && seq.frames[i] <= seq.frames[i - 1]) {
      throw SchemaError("identity '" + seq.label +
                        "' frames not strictly increasing at position " + std::to_string(i));
    }
    if (clip != nullptr && !clip->has_frame(seq.frames[i])) {
      throw SchemaError("identity '" + seq.label + "' references frame " +
                        std::to_string(seq.frames[i]) + " outside clip '" + clip->clip_id + "'");
    }
  }
}

void validate_clip(const AnnotatedClip& clip) {
  if (clip.clip_id.empty()) throw SchemaError("clip with empty clip_id");
  for (size_t i = 0; i < clip.frames.size(); ++i) {
    const FrameRef& f = clip.frames[i];
    const int expected = static_cast<int>(i) + 1;
    if (f.index != expected) {
      throw SchemaError("clip '" + clip.clip_id + "': gap at index " + std::to_string(expected));
    }
    if (f.image_key.empty()) {
      throw SchemaError("clip '" + clip.clip_id + "': frame " + std::to_string(f.index) +
                        " has an empty image key");
    }
  }
  std::set<std::string> labels;
  for (const IdSequence& seq : clip.ground_truth) {
    if (!labels.insert(seq.label).second) {
      throw SchemaError("clip '" + clip.clip_id + "': duplicate identity label '" + seq.label +
                        "'");
    }
    validate_sequence(seq, &clip);
  }
}

void validate_structured_caption(const StructuredCaption& caption, const AnnotatedClip& clip) {
  int previous = 0;
  for (const CaptionSegment& seg : caption.segments) {
    if (seg.frame_index <= previous) {
      throw SchemaError("structured caption for '" + caption.clip_id +
                        "': frame indices not strictly increasing at frame " +
                        std::to_string(seg.frame_index));
    }
    if (!clip.has_frame(seg.frame_index)) {
      throw SchemaError("structured caption for '" + caption.clip_id + "': frame " +
                        std::to_string(seg.frame_index) + " outside clip");
    }
    previous = seg.frame_index;
    for (const CharacterDescription& c : seg.characters) {
      if (c.surface_text.empty())
        throw SchemaError("structured caption: empty character description");
    }
  }
  std::string joined;
  for (const CaptionSegment& seg : caption.segments) {
    joined += seg.text;
    joined += ' ';
  }
  if (normalize_ws(joined) != normalize_ws(caption.full_text)) {
    throw SchemaError("structured caption for '" + caption.clip_id +
                      "': segments do not reassemble the full text");
  }
}

namespace {

json profile_to_json(const FeatureProfile& p) {
  json j = json::object();
  for (const auto& [k, v] : p) j[k] = v;
  return j;
}

FeatureProfile profile_from_json(const json& j) {
  FeatureProfile p;
  for (auto it = j.begin(); it != j.end(); ++it) p[it.key()] = it.value().get<std::string>();
  return p;
}

IdSequence sequence_from_json(const json& j, const std::string& where) {
  if (!j.contains("label") || !j.contains("frames")) {
    throw SchemaError(where + ": identity entry missing 'label' or 'frames'");
  }
  IdSequence seq;
  seq.label = j.at("label").get<std::string>();
  for (const auto& f : j.at("frames")) seq.frames.push_back(f.get<int>());
  return seq;
}

}  // namespace

std::vector<AnnotatedClip> load_dataset(const std::filesystem::path& path,
                                        MissingImagePolicy policy) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SchemaError("manifest '" + path.string() + "': " + e.what());
  }
  if (!doc.is_object() || !doc.contains("clips") || !doc.at("clips").is_array()) {
    throw SchemaError("manifest '" + path.string() + "': top level must be {\"clips\": [...]}");
  }
  const auto base_dir = path.parent_path();
  std::vector<AnnotatedClip> clips;
  for (const auto& jc : doc.at("clips")) {
    AnnotatedClip clip;
    if (!jc.contains("clip_id")) throw SchemaError("manifest clip missing 'clip_id'");
    clip.clip_id = jc.at("clip_id").get<std::string>();
    const std::string where = "clip '" + clip.clip_id + "'";
    if (!jc.contains("frames") || !jc.at("frames").is_array()) {
      throw SchemaError(where + ": missing 'frames' array");
    }
    for (const auto& jf : jc.at("frames")) {
      FrameRef f;
      f.clip_id = clip.clip_id;
      f.index = jf.at("index").get<int>();
      f.image_key = jf.at("image").get<std::string>();
      clip.frames.push_back(std::move(f));
    }
    if (jc.contains("identities")) {
      for (const auto& ji : jc.at("identities")) {
        clip.ground_truth.push_back(sequence_from_json(ji, where));
        if (ji.contains("profile")) {
          clip.profiles[clip.ground_truth.back().label] = profile_from_json(ji.at("profile"));
        }
      }
    }
    if (jc.contains("source")) clip.source = jc.at("source").get<std::string>();
    validate_clip(clip);

    for (const FrameRef& f : clip.frames) {
      // Scheme-prefixed keys (synthetic://, http://) are virtual; only bare
      // paths are checked against the filesystem.
      if (f.image_key.find("://") != std::string::npos) continue;
      std::filesystem::path img(f.image_key);
      if (img.is_relative()) img = base_dir / img;
      if (!std::filesystem::exists(img)) {
        const std::string msg = where + ": missing image file '" + f.image_key + "'";
        if (policy == MissingImagePolicy::Fail) throw IngestionError(msg);
        log_warn(msg);
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

void write_dataset(const std::filesystem::path& path, const std::vector<AnnotatedClip>& clips) {
  json jclips = json::array();
  for (const AnnotatedClip& clip : clips) {
    json jc;
    jc["clip_id"] = clip.clip_id;
    json jframes = json::array();
    for (const FrameRef& f : clip.frames) {
      jframes.push_back(json{{"index", f.index}, {"image", f.image_key}});
    }
    jc["frames"] = std::move(jframes);
    json jids = json::array();
    for (const IdSequence& seq : clip.ground_truth) {
      json ji{{"label", seq.label}, {"frames", seq.frames}};
      if (auto it = clip.profiles.find(seq.label); it != clip.profiles.end()) {
        ji["profile"] = profile_to_json(it->second);
      }
      jids.push_back(std::move(ji));
    }
    jc["identities"] = std::move(jids);
    if (!clip.source.empty()) jc["source"] = clip.source;
    jclips.push_back(std::move(jc));
  }
  write_text_file_atomic(path, json{{"clips", std::move(jclips)}}.dump(2) + "\n");
}

std::vector<ClipPrediction> load_predictions(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SchemaError("predictions '" + path.string() + "': " + e.what());
  }
  json arr = doc.is_array() ? doc : json::array({doc});
  std::vector<ClipPrediction> out;
  for (const auto& jp : arr) {
    if (!jp.contains("clip_id")) throw SchemaError("prediction entry missing 'clip_id'");
    ClipPrediction p;
    p.clip_id = jp.at("clip_id").get<std::string>();
    if (jp.contains("identities")) {
      for (const auto& ji : jp.at("identities")) {
        IdSequence seq = sequence_from_json(ji, "prediction '" + p.clip_id + "'");
        validate_sequence(seq);
        p.identities.push_back(std::move(seq));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<ClipPrediction>& predictions) {
  json arr = json::array();
  for (const ClipPrediction& p : predictions) {
    json jids = json::array();
    for (const IdSequence& seq : p.identities) {
      jids.push_back(json{{"label", seq.label}, {"frames", seq.frames}});
    }
    arr.push_back(json{{"clip_id", p.clip_id}, {"identities", std::move(jids)}});
  }
  write_text_file_atomic(path, arr.dump(2) + "\n");
}

AnnotatedClip synthesize_clip(uint64_t seed, int n_frames, int n_ids, double appearance_rate) {
  if (n_frames < 2) throw std::invalid_argument("synthesize_clip: n_frames must be >= 2");
  if (n_ids < 1) throw std::invalid_argument("synthesize_clip: n_ids must be >= 1");
  if (appearance_rate < 0.0 || appearance_rate > 1.0) {
    throw std::invalid_argument("synthesize_clip: appearance_rate must be in [0,1]");
  }

  Rng rng(seed * 0x51ed270b7a2cf345ULL + 0x9e3779b97f4a7c15ULL);
  AnnotatedClip clip;
  clip.clip_id = "synth-" + std::to_string(seed) + "-" + std::to_string(n_frames) + "x" +
                 std::to_string(n_ids);
  clip.source = "synthetic";
  for (int i = 1; i <= n_frames; ++i) {
    clip.frames.push_back(FrameRef{clip.clip_id, i,
                                   "synthetic://" + clip.clip_id + "/frame-" + std::to_string(i)});
  }

  std::set<std::string> seen_renders;
  for (int k = 1; k <= n_ids; ++k) {
    const std::string label = "id-" + std::to_string(k);
    FeatureProfile profile = draw_profile(rng);
    // Redraw until distinct so text judges can tell identities apart.
    while (!seen_renders.insert(render_profile(profile)).second) profile = draw_profile(rng);
    clip.profiles[label] = std::move(profile);

    IdSequence seq;
    seq.label = label;
    for (int f = 1; f <= n_frames; ++f) {
      if (rng.chance(appearance_rate)) seq.frames.push_back(f);
    }
    if (seq.frames.empty()) {
      seq.frames.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(n_frames))) + 1);
    }
    clip.ground_truth.push_back(std::move(seq));
  }
  validate_clip(clip);
  return clip;
}

std::string render_profile(const FeatureProfile& profile) {
  std::string out;
  for (const auto& [name, value] : profile) {
    if (!out.empty()) out += "; ";
    out += name + ": " + value;
  }
  return out;
}

std::optional<FeatureProfile> parse_profile_render(const std::string& text) {
  FeatureProfile profile;
  std::string body = normalize_ws(text);
  // Accept either a bare render or the person-sentence parenthetical.
  const auto open = body.find('(');
  if (open != std::string::npos) {
    const auto close = body.find(')', open);
    if (close == std::string::npos) return std::nullopt;
    body = body.substr(open + 1, close - open - 1);
  }
  size_t pos = 0;
  while (pos < body.size()) {
    size_t end = body.find(';', pos);
    if (end == std::string::npos) end = body.size();
    const std::string item = normalize_ws(body.substr(pos, end - pos));
    pos = end + 1;
    if (item.empty()) continue;
    const size_t colon = item.find(':');
    if (colon == std::string::npos) return std::nullopt;
    const std::string name = normalize_ws(item.substr(0, colon));
    const std::string value = normalize_ws(item.substr(colon + 1));
    if (name.empty() || value.empty()) return std::nullopt;
    profile[name] = value;
  }
  if (profile.empty()) return std::nullopt;
  return profile;
}

std::string render_person(const FeatureProfile& profile) {
  return "A person (" + render_profile(profile) + ") appears.";
}

std::string render_caption(const AnnotatedClip& clip) {
  std::ostringstream out;
  for (const FrameRef& frame : clip.frames) {
    if (frame.index > 1) out << ' ';
    out << "[frame " << frame.index << "]";
    bool anyone = false;
    for (const IdSequence& seq : clip.ground_truth) {
      if (!std::binary_search(seq.frames.begin(), seq.frames.end(), frame.index)) continue;
      anyone = true;
      out << ' ';
      if (auto it = clip.profiles.find(seq.label); it != clip.profiles.end()) {
        out << render_person(it->second);
      } else {
        out << "A person called " << seq.label << " appears.";
      }
    }
    if (!anyone) out << " The scene is empty.";
  }
  return out.str();
}

}  // namespace idtrace::core
