#include "idtrace/extraction.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::extraction {

using nlohmann::json;

std::vector<int> CharacterTrack::frames() const {
  std::vector<int> out;
  for (const auto& [frame, desc] : history) {
    if (out.empty() || out.back() != frame) out.push_back(frame);
  }
  return out;
}

namespace {

std::string fold(const std::string& s) { return to_lower(normalize_ws(s)); }

std::optional<std::string> first_parenthetical(const std::string& s) {
  const auto open = s.find('(');
  if (open == std::string::npos) return std::nullopt;
  const auto close = s.find(')', open);
  if (close == std::string::npos) return std::nullopt;
  return s.substr(open + 1, close - open - 1);
}

core::FeatureProfile effective_profile(const core::CharacterDescription& d) {
  if (d.features && !d.features->empty()) return *d.features;
  if (auto parsed = core::parse_profile_render(d.surface_text)) return *parsed;
  return {};
}

}  // namespace

double ExactTextJudge::score(const core::CharacterDescription& a,
                             const core::CharacterDescription& b) {
  return fold(a.surface_text) == fold(b.surface_text) ? 1.0 : 0.0;
}

double TokenJudge::score(const core::CharacterDescription& a,
                         const core::CharacterDescription& b) {
  const auto ta = first_parenthetical(a.surface_text);
  const auto tb = first_parenthetical(b.surface_text);
  if (ta && tb) return fold(*ta) == fold(*tb) ? 1.0 : 0.0;
  return fold(a.surface_text) == fold(b.surface_text) ? 1.0 : 0.0;
}

double FeatureOverlapJudge::score(const core::CharacterDescription& a,
                                  const core::CharacterDescription& b) {
  const core::FeatureProfile pa = effective_profile(a);
  const core::FeatureProfile pb = effective_profile(b);
  if (pa.empty() || pb.empty()) return 0.0;
  size_t matching = 0;
  for (const auto& [name, value] : pa) {
    auto it = pb.find(name);
    if (it != pb.end() && it->second == value) ++matching;
  }
  return static_cast<double>(matching) /
         static_cast<double>(std::max(pa.size(), pb.size()));
}

double ProfileEqualityJudge::score(const core::CharacterDescription& a,
                                   const core::CharacterDescription& b) {
  const core::FeatureProfile pa = effective_profile(a);
  const core::FeatureProfile pb = effective_profile(b);
  if (pa.empty() || pb.empty()) return 0.0;
  return pa == pb ? 1.0 : 0.0;
}

double LlmJudge::score(const core::CharacterDescription& a,
                       const core::CharacterDescription& b) {
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user", prompt_.render({{"established", a.surface_text}, {"candidate", b.surface_text}}),
      {}});
  const gateway::ChatResponse response = gateway_.chat(request);
  const auto parsed = first_number(response.text);
  if (!parsed) {
    throw ExtractionError("judge reply carries no numeric score: " + response.text);
  }
  return *parsed;
}

core::CharacterDescription strip_to_features(const core::CharacterDescription& description) {
  core::CharacterDescription out;
  const core::FeatureProfile profile = effective_profile(description);
  out.surface_text = core::render_profile(profile);
  if (!profile.empty()) out.features = profile;
  return out;
}

JudgeVerdict find_most_fit(std::span<const CharacterTrack> tracks,
                           const core::CharacterDescription& candidate, Judge& judge) {
  JudgeVerdict verdict;
  for (size_t i = 0; i < tracks.size(); ++i) {
    double s = judge.score(tracks[i].canonical, candidate);
    if (s < 0.0 || s > 1.0) {
      log_warn("judge '" + judge.name() + "' returned out-of-range score " + std::to_string(s) +
               ", clamping");
      s = std::clamp(s, 0.0, 1.0);
    }
    if (!verdict.score || s > *verdict.score) {  // ties keep the lowest index
      verdict.score = s;
      verdict.candidate_index = i;
    }
  }
  return verdict;
}

namespace {

struct Marker {
  int frame = 0;
  size_t begin = 0;  // start of the marker token
  size_t end = 0;    // one past the marker token
};

std::vector<Marker> find_markers(const std::string& text) {
  static const std::regex marker_re(R"(\[\s*[Ff]rame\s+(\d+)\s*\])");
  std::vector<Marker> markers;
  auto begin = std::sregex_iterator(text.begin(), text.end(), marker_re);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    Marker m;
    m.frame = std::stoi((*it)[1].str());
    m.begin = static_cast<size_t>(it->position(0));
    m.end = m.begin + static_cast<size_t>(it->length(0));
    markers.push_back(m);
  }
  return markers;
}

bool starts_with_marker(const std::string& text) {
  const auto markers = find_markers(text);
  if (markers.empty()) return false;
  return normalize_ws(text.substr(0, markers.front().begin)).empty();
}

core::StructuredCaption parse_marked_caption(const std::string& text,
                                             const core::AnnotatedClip& clip) {
  const auto markers = find_markers(text);
  if (markers.empty()) throw ExtractionError("no [frame k] markers in caption");
  core::StructuredCaption structured;
  structured.clip_id = clip.clip_id;
  int previous = 0;
  for (size_t i = 0; i < markers.size(); ++i) {
    const size_t body_begin = markers[i].end;
    const size_t body_end = i + 1 < markers.size() ? markers[i + 1].begin : text.size();
    core::CaptionSegment segment;
    segment.frame_index = markers[i].frame;
    segment.text = normalize_ws(text.substr(body_begin, body_end - body_begin));
    if (segment.frame_index <= previous || !clip.has_frame(segment.frame_index)) {
      throw ExtractionError("marker sequence invalid at [frame " +
                            std::to_string(segment.frame_index) + "] for clip '" + clip.clip_id +
                            "'");
    }
    previous = segment.frame_index;
    structured.segments.push_back(std::move(segment));
  }
  std::string joined;
  for (const auto& seg : structured.segments) {
    joined += seg.text;
    joined += ' ';
  }
  structured.full_text = normalize_ws(joined);
  return structured;
}

}  // namespace

core::StructuredCaption assign_frame_indices(const std::string& caption,
                                             const core::AnnotatedClip& clip,
                                             gateway::Gateway& gw,
                                             const prompts::PromptLibrary& prompts) {
  core::StructuredCaption structured;
  structured.clip_id = clip.clip_id;
  if (normalize_ws(caption).empty()) return structured;

  // Deterministic fast path for captions that already carry markers.
  if (starts_with_marker(caption)) return parse_marked_caption(caption, clip);

  const auto& tmpl = prompts.get("frame_index");
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user",
      tmpl.render({{"caption", caption}, {"frame_count", std::to_string(clip.frame_count())}}),
      {}});

  auto verify = [&](const std::string& reply) -> std::optional<core::StructuredCaption> {
    core::StructuredCaption parsed;
    try {
      parsed = parse_marked_caption(reply, clip);
    } catch (const ExtractionError&) {
      return std::nullopt;
    }
    for (const auto& seg : parsed.segments) {
      if (!is_verbatim_span(caption, seg.text)) return std::nullopt;
    }
    if (parsed.full_text != normalize_ws(caption)) return std::nullopt;
    parsed.full_text = caption;
    return parsed;
  };

  gateway::ChatResponse response = gw.chat(request);
  if (auto ok = verify(response.text)) return *ok;

  gateway::ChatRequest retry = request;
  retry.messages.push_back(gateway::ChatMessage{"assistant", response.text, {}});
  retry.messages.push_back(gateway::ChatMessage{
      "user",
      "Your previous answer altered the caption text. Repeat it, inserting only [frame k] "
      "markers and changing nothing else.",
      {}});
  response = gw.chat(retry);
  if (auto ok = verify(response.text)) return *ok;

  // Build a short diff for the error.
  std::string detail = "model output is not a verbatim segmentation";
  try {
    const auto parsed = parse_marked_caption(response.text, clip);
    for (const auto& seg : parsed.segments) {
      if (!is_verbatim_span(caption, seg.text)) {
        detail += "; offending segment [frame " + std::to_string(seg.frame_index) +
                  "]: \"" + seg.text + "\"";
        break;
      }
    }
  } catch (const ExtractionError& e) {
    detail += std::string("; ") + e.what();
  }
  throw ExtractionError("frame indexing failed after re-prompt: " + detail);
}

std::vector<core::CharacterDescription> extract_characters(const core::CaptionSegment& segment,
                                                           gateway::Gateway& gw,
                                                           const prompts::PromptLibrary& prompts) {
  const auto& tmpl = prompts.get("character_extract");
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user",
      tmpl.render({{"segment", segment.text}, {"frame", std::to_string(segment.frame_index)}}),
      {}});

  auto parse = [&](const std::string& reply)
      -> std::optional<std::vector<core::CharacterDescription>> {
    const auto open = reply.find('[');
    const auto close = reply.rfind(']');
    if (open == std::string::npos || close == std::string::npos || close < open) {
      return std::nullopt;
    }
    json arr;
    try {
      arr = json::parse(reply.substr(open, close - open + 1));
    } catch (const json::exception&) {
      return std::nullopt;
    }
    if (!arr.is_array()) return std::nullopt;
    std::vector<core::CharacterDescription> out;
    for (const auto& item : arr) {
      if (!item.is_string()) return std::nullopt;
      core::CharacterDescription desc;
      desc.surface_text = item.get<std::string>();
      if (desc.surface_text.empty() || !is_verbatim_span(segment.text, desc.surface_text)) {
        return std::nullopt;
      }
      desc.features = core::parse_profile_render(desc.surface_text);
      out.push_back(std::move(desc));
    }
    return out;
  };

  gateway::ChatResponse response = gw.chat(request);
  if (auto ok = parse(response.text)) return *ok;

  gateway::ChatRequest retry = request;
  retry.messages.push_back(gateway::ChatMessage{"assistant", response.text, {}});
  retry.messages.push_back(gateway::ChatMessage{
      "user",
      "Reply with only a JSON array of description strings copied verbatim from the frame "
      "text.",
      {}});
  response = gw.chat(retry);
  if (auto ok = parse(response.text)) return *ok;
  throw ExtractionError("character extraction failed after re-prompt for frame " +
                        std::to_string(segment.frame_index) + "; raw reply: " + response.text);
}

std::vector<core::IdSequence> UpdateResult::sequences() const {
  std::vector<core::IdSequence> out;
  for (size_t i = 0; i < tracks.size(); ++i) {
    out.push_back(core::IdSequence{"track-" + std::to_string(i + 1), tracks[i].frames()});
  }
  return out;
}

UpdateResult run_sequence_update(const core::StructuredCaption& caption, Judge& judge,
                                 double threshold) {
  if (threshold <= 0.0 || threshold > 1.0) {
    throw ExtractionError("sequence update threshold must be in (0,1]");
  }
  UpdateResult result;
  for (size_t seg_index = 0; seg_index < caption.segments.size(); ++seg_index) {
    const auto& segment = caption.segments[seg_index];
    const bool initializing = result.tracks.empty();
    std::set<size_t> absorbed;
    std::set<size_t> created_now;
    std::set<std::string> created_texts;  // first-frame dedupe

    for (const auto& candidate : segment.characters) {
      UpdateStep step;
      step.frame_index = segment.frame_index;
      step.candidate_text = candidate.surface_text;

      if (initializing) {
        // The first populated frame seeds one track per distinct description.
        const std::string key = fold(candidate.surface_text);
        auto found = created_texts.find(key);
        if (found != created_texts.end()) {
          size_t idx = 0;
          for (size_t t : created_now) {
            if (fold(result.tracks[t].canonical.surface_text) == key) {
              idx = t;
              break;
            }
          }
          result.tracks[idx].history.emplace_back(segment.frame_index, candidate);
          step.created_new_track = false;
          step.track_index = idx;
          result.steps.push_back(std::move(step));
          continue;
        }
        created_texts.insert(key);
        result.tracks.push_back(CharacterTrack{candidate, {{segment.frame_index, candidate}}});
        created_now.insert(result.tracks.size() - 1);
        step.created_new_track = true;
        step.track_index = result.tracks.size() - 1;
        result.steps.push_back(std::move(step));
        continue;
      }

      // Eligible tracks: not yet updated this frame and not created this
      // frame.
      std::vector<size_t> eligible;
      std::vector<CharacterTrack> views;
      for (size_t t = 0; t < result.tracks.size(); ++t) {
        if (absorbed.count(t) || created_now.count(t)) continue;
        eligible.push_back(t);
        views.push_back(result.tracks[t]);
      }

      JudgeVerdict verdict;
      try {
        verdict = find_most_fit(views, candidate, judge);
      } catch (const std::exception& e) {
        throw SequenceUpdateError(
            std::string("judge failed at frame ") + std::to_string(segment.frame_index) + ": " +
                e.what(),
            result, seg_index);
      }
      if (verdict.candidate_index) {
        verdict.candidate_index = eligible[*verdict.candidate_index];
      }
      step.verdict = verdict;

      if (verdict.score && *verdict.score > threshold) {
        const size_t idx = *verdict.candidate_index;
        result.tracks[idx].history.emplace_back(segment.frame_index, candidate);
        result.tracks[idx].canonical = candidate;
        absorbed.insert(idx);
        step.created_new_track = false;
        step.track_index = idx;
      } else {
        result.tracks.push_back(CharacterTrack{candidate, {{segment.frame_index, candidate}}});
        created_now.insert(result.tracks.size() - 1);
        step.created_new_track = true;
        step.track_index = result.tracks.size() - 1;
      }
      result.steps.push_back(std::move(step));
    }
  }
  return result;
}

std::vector<core::IdSequence> dynamic_sequence_update(const core::StructuredCaption& caption,
                                                      Judge& judge, double threshold) {
  return run_sequence_update(caption, judge, threshold).sequences();
}

ExtractionResult extract_predictions(const std::string& caption, const core::AnnotatedClip& clip,
                                     gateway::Gateway& gw, Judge& judge, double threshold,
                                     const prompts::PromptLibrary& prompts) {
  ExtractionResult result;
  if (normalize_ws(caption).empty()) {
    result.structured.clip_id = clip.clip_id;
    return result;
  }

  try {
    result.structured = assign_frame_indices(caption, clip, gw, prompts);
  } catch (const ExtractionError& e) {
    throw ExtractionError(std::string("stage frame-indexing: ") + e.what());
  }

  for (auto& segment : result.structured.segments) {
    try {
      segment.characters = extract_characters(segment, gw, prompts);
    } catch (const ExtractionError& e) {
      throw ExtractionError("stage character-extraction (frame " +
                            std::to_string(segment.frame_index) + "): " + e.what());
    }
  }

  try {
    result.update = run_sequence_update(result.structured, judge, threshold);
  } catch (const SequenceUpdateError&) {
    throw;
  } catch (const ExtractionError& e) {
    throw ExtractionError(std::string("stage sequence-update: ") + e.what());
  }
  result.sequences = result.update.sequences();
  for (const auto& seq : result.sequences) {
    for (int frame : seq.frames) {
      if (!clip.has_frame(frame)) {
        throw ExtractionError("extracted frame " + std::to_string(frame) + " outside clip '" +
                              clip.clip_id + "'");
      }
    }
  }
  return result;
}

namespace {

json verdict_to_json(const JudgeVerdict& v) {
  json j = json::object();
  if (v.candidate_index) j["candidate_index"] = *v.candidate_index;
  if (v.score) j["score"] = *v.score;
  return j;
}

}  // namespace

void write_audit_bundle(const std::filesystem::path& dir, const ExtractionResult& result) {
  std::filesystem::create_directories(dir);

  json structured;
  structured["clip_id"] = result.structured.clip_id;
  structured["full_text"] = result.structured.full_text;
  json segs = json::array();
  for (const auto& seg : result.structured.segments) {
    segs.push_back(json{{"frame", seg.frame_index}, {"text", seg.text}});
  }
  structured["segments"] = segs;
  write_text_file_atomic(dir / "01_structured_caption.json", structured.dump(2) + "\n");

  json characters = json::array();
  for (const auto& seg : result.structured.segments) {
    json names = json::array();
    for (const auto& c : seg.characters) names.push_back(c.surface_text);
    characters.push_back(json{{"frame", seg.frame_index}, {"characters", names}});
  }
  write_text_file_atomic(dir / "02_characters.json", characters.dump(2) + "\n");

  json steps = json::array();
  for (const auto& step : result.update.steps) {
    steps.push_back(json{{"frame", step.frame_index},
                         {"candidate", step.candidate_text},
                         {"verdict", verdict_to_json(step.verdict)},
                         {"created_new_track", step.created_new_track},
                         {"track", step.track_index}});
  }
  write_text_file_atomic(dir / "03_verdicts.json", steps.dump(2) + "\n");

  json sequences = json::array();
  for (const auto& seq : result.sequences) {
    sequences.push_back(json{{"label", seq.label}, {"frames", seq.frames}});
  }
  write_text_file_atomic(dir / "04_sequences.json", sequences.dump(2) + "\n");
}

}  // namespace idtrace::extraction
