#include "idtrace/captioner.hpp"

#include <algorithm>
#include <future>
#include <regex>
#include <set>
#include <sstream>

#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::captioner {

using nlohmann::json;

Mode mode_from_string(const std::string& name) {
  const std::string m = to_lower(normalize_ws(name));
  if (m == "st") return Mode::ST;
  if (m == "mtsc-text" || m == "mtsc_text" || m == "mtsc") return Mode::MTSCText;
  if (m == "mtsc-notext" || m == "mtsc_notext") return Mode::MTSCNoText;
  if (m == "mtdc") return Mode::MTDC;
  if (m == "rice") return Mode::RICE;
  if (m == "baseline") return Mode::Baseline;
  throw PipelineError("unknown pipeline mode: " + name);
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::ST: return "st";
    case Mode::MTSCText: return "mtsc-text";
    case Mode::MTSCNoText: return "mtsc-notext";
    case Mode::MTDC: return "mtdc";
    case Mode::RICE: return "rice";
    case Mode::Baseline: return "baseline";
  }
  return "unknown";
}

void PipelineConfig::validate() const {
  if (window_len < 1) throw PipelineError("window_len must be >= 1");
  if (mode == Mode::RICE) {
    if (window_len < 2) throw PipelineError("rice requires window_len >= 2");
    if (sfs.empty()) throw PipelineError("rice requires a non-empty strong feature set");
  }
  if (link_threshold <= 0.0 || link_threshold > 1.0) {
    throw PipelineError("link_threshold must be in (0,1]");
  }
}

std::vector<std::pair<int, int>> plan_windows(int n_frames, int window_len) {
  if (n_frames < 1) throw PipelineError("plan_windows: n_frames must be >= 1");
  if (window_len < 1) throw PipelineError("plan_windows: window_len must be >= 1");
  std::vector<std::pair<int, int>> windows;
  for (int start = 1; start <= n_frames; start += window_len) {
    windows.emplace_back(start, std::min(start + window_len - 1, n_frames));
  }
  return windows;
}

namespace {

std::string join_ints(const std::vector<int>& values) {
  std::ostringstream out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ", ";
    out << values[i];
  }
  return out.str();
}

std::string join_strings(const std::vector<std::string>& values) {
  std::ostringstream out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ", ";
    out << values[i];
  }
  return out.str();
}

std::optional<WindowCaption> parse_window_reply(const std::string& reply,
                                                const PipelineConfig& config,
                                                const std::vector<int>& window_frames) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    return std::nullopt;
  }
  json doc;
  try {
    doc = json::parse(reply.substr(open, close - open + 1));
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (!doc.is_object() || !doc.contains("caption") || !doc.contains("characters") ||
      !doc.at("characters").is_array()) {
    return std::nullopt;
  }

  const std::set<std::string> allowed(config.sfs.begin(), config.sfs.end());
  const std::set<int> in_window(window_frames.begin(), window_frames.end());
  WindowCaption window;
  window.text = doc.at("caption").get<std::string>();
  for (const auto& jc : doc.at("characters")) {
    if (!jc.is_object() || !jc.contains("description")) return std::nullopt;
    WindowCharacter character;
    character.description.surface_text = jc.at("description").get<std::string>();
    if (character.description.surface_text.empty()) return std::nullopt;
    core::FeatureProfile profile;
    if (jc.contains("features") && jc.at("features").is_object()) {
      for (auto it = jc.at("features").begin(); it != jc.at("features").end(); ++it) {
        if (!allowed.empty() && allowed.count(it.key()) == 0) {
          log_warn("window caption: dropping feature outside the strong feature set: " +
                   it.key());
          continue;
        }
        profile[it.key()] = it.value().get<std::string>();
      }
    }
    if (!profile.empty()) character.description.features = profile;
    if (jc.contains("frames") && jc.at("frames").is_array()) {
      for (const auto& f : jc.at("frames")) {
        const int frame = f.get<int>();
        if (in_window.count(frame)) character.frames.push_back(frame);
      }
      std::sort(character.frames.begin(), character.frames.end());
      character.frames.erase(std::unique(character.frames.begin(), character.frames.end()),
                             character.frames.end());
    }
    if (character.frames.empty()) character.frames = window_frames;
    window.characters.push_back(std::move(character));
  }
  return window;
}

}  // namespace

WindowCaption caption_window(const std::vector<core::FrameRef>& frames,
                             const PipelineConfig& config, gateway::Gateway& gw,
                             const prompts::PromptLibrary& prompts) {
  if (frames.empty()) throw PipelineError("caption_window: empty frame list");
  std::vector<int> indices;
  std::vector<std::string> keys;
  for (const auto& f : frames) {
    indices.push_back(f.index);
    keys.push_back(f.image_key);
  }

  const auto& tmpl = prompts.get("rice_window");
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user",
      tmpl.render({{"frames", join_ints(indices)}, {"sfs_features", join_strings(config.sfs)}}),
      keys});

  gateway::ChatResponse response = gw.chat(request);
  if (auto window = parse_window_reply(response.text, config, indices)) {
    window->frame_indices = indices;
    return *window;
  }

  gateway::ChatRequest retry = request;
  retry.messages.push_back(gateway::ChatMessage{"assistant", response.text, {}});
  retry.messages.push_back(gateway::ChatMessage{
      "user", "Reply with only the JSON object in the requested shape.", {}});
  response = gw.chat(retry);
  if (auto window = parse_window_reply(response.text, config, indices)) {
    window->frame_indices = indices;
    return *window;
  }
  throw PipelineError("window caption unparseable after re-prompt (frames " + join_ints(indices) +
                      ")");
}

namespace {

core::CharacterDescription judge_view(const core::CharacterDescription& description,
                                      const std::string& criterion) {
  if (criterion == "features_only") return extraction::strip_to_features(description);
  return description;
}

std::string substitute_placeholders(const std::string& text,
                                    const std::vector<std::string>& labels) {
  static const std::regex placeholder_re(R"(\{c(\d+)\})");
  std::string out;
  out.reserve(text.size());
  auto begin = std::sregex_iterator(text.begin(), text.end(), placeholder_re);
  size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const size_t pos = static_cast<size_t>(it->position(0));
    out.append(text, last, pos - last);
    const size_t index = std::stoul((*it)[1].str());
    if (index >= 1 && index <= labels.size()) {
      out.append(labels[index - 1]);
    } else {
      out.append(it->str(0));  // dangling placeholder left as-is
    }
    last = pos + static_cast<size_t>(it->length(0));
  }
  out.append(text, last, std::string::npos);
  return out;
}

}  // namespace

SummaryResult summarize_windows(const std::vector<WindowCaption>& windows,
                                const PipelineConfig& config, extraction::Judge& judge) {
  if (windows.empty()) throw PipelineError("summarize_windows: no windows");
  SummaryResult result;

  for (const WindowCaption& window : windows) {
    std::set<size_t> absorbed;
    std::set<size_t> created_now;
    std::vector<std::string> labels_for_window;

    for (size_t ci = 0; ci < window.characters.size(); ++ci) {
      const WindowCharacter& character = window.characters[ci];
      const core::CharacterDescription candidate_view =
          judge_view(character.description, config.judge_criterion);

      std::vector<size_t> eligible;
      std::vector<extraction::CharacterTrack> views;
      for (size_t e = 0; e < result.registry.size(); ++e) {
        if (absorbed.count(e) || created_now.count(e)) continue;
        eligible.push_back(e);
        extraction::CharacterTrack view;
        view.canonical = judge_view(result.registry[e].canonical, config.judge_criterion);
        views.push_back(std::move(view));
      }

      extraction::JudgeVerdict verdict = extraction::find_most_fit(views, candidate_view, judge);
      if (verdict.candidate_index) verdict.candidate_index = eligible[*verdict.candidate_index];

      LinkStep step;
      step.window_index = window.window_index;
      step.character_index = ci;
      step.verdict = verdict;
      step.judge_saw_candidate = candidate_view.surface_text;
      if (verdict.candidate_index) {
        step.judge_saw_established =
            judge_view(result.registry[*verdict.candidate_index].canonical,
                       config.judge_criterion)
                .surface_text;
      }

      size_t entry_index;
      if (verdict.score && *verdict.score > config.link_threshold) {
        entry_index = *verdict.candidate_index;
        RegistryEntry& entry = result.registry[entry_index];
        entry.canonical = character.description;
        if (character.description.features && !character.description.features->empty()) {
          entry.profile = *character.description.features;
        }
        entry.frames.insert(entry.frames.end(), character.frames.begin(), character.frames.end());
        absorbed.insert(entry_index);
        step.created_new_entry = false;
      } else {
        RegistryEntry entry;
        entry.label = "person " + std::to_string(result.registry.size() + 1);
        entry.canonical = character.description;
        if (character.description.features) entry.profile = *character.description.features;
        entry.frames = character.frames;
        result.registry.push_back(std::move(entry));
        entry_index = result.registry.size() - 1;
        created_now.insert(entry_index);
        step.created_new_entry = true;
      }
      step.entry_index = entry_index;
      labels_for_window.push_back(result.registry[entry_index].label);
      result.links.push_back(std::move(step));
    }

    if (!result.caption.empty()) result.caption += '\n';
    result.caption += substitute_placeholders(window.text, labels_for_window);
  }

  for (RegistryEntry& entry : result.registry) {
    std::sort(entry.frames.begin(), entry.frames.end());
    entry.frames.erase(std::unique(entry.frames.begin(), entry.frames.end()),
                       entry.frames.end());
  }
  return result;
}

namespace {

std::string accumulate_marked(const std::vector<std::pair<int, std::string>>& frame_captions) {
  std::ostringstream out;
  for (size_t i = 0; i < frame_captions.size(); ++i) {
    if (i > 0) out << ' ';
    const std::string& text = frame_captions[i].second;
    // Per-frame captions may already carry their marker (the sim backend
    // emits them); only add one when missing.
    if (text.rfind("[frame", 0) == 0) {
      out << text;
    } else {
      out << "[frame " << frame_captions[i].first << "] " << text;
    }
  }
  return out.str();
}

std::string run_free_text_stages(const core::AnnotatedClip& clip, const PipelineConfig& config,
                                 gateway::Gateway& gw, const prompts::PromptLibrary& prompts,
                                 std::vector<std::string>& stage_log) {
  const bool baseline = config.mode == Mode::Baseline;
  const auto& caption_tmpl = prompts.get(baseline ? "baseline_caption" : "caption_stage");

  if (config.mode == Mode::ST) {
    std::vector<int> indices;
    std::vector<std::string> keys;
    for (const auto& f : clip.frames) {
      indices.push_back(f.index);
      keys.push_back(f.image_key);
    }
    gateway::ChatRequest request;
    request.messages.push_back(gateway::ChatMessage{
        "user",
        caption_tmpl.render({{"frames", join_ints(indices)}, {"previous_caption", ""}}),
        keys});
    stage_log.push_back("caption: single exchange with " + std::to_string(keys.size()) +
                        " frames");
    return gw.chat(request).text;
  }

  const bool shared_context = config.mode == Mode::MTSCText || config.mode == Mode::MTSCNoText;
  const bool carry_text = config.mode != Mode::MTSCNoText;

  std::vector<gateway::ChatMessage> history;
  std::vector<std::pair<int, std::string>> frame_captions;
  for (const auto& frame : clip.frames) {
    std::string previous;
    if (carry_text && !frame_captions.empty()) {
      if (shared_context) {
        previous = frame_captions.back().second;  // last caption only
      } else {
        previous = accumulate_marked(frame_captions);  // text is the only carrier
      }
    }
    gateway::ChatMessage message{
        "user",
        caption_tmpl.render(
            {{"frames", std::to_string(frame.index)}, {"previous_caption", previous}}),
        {frame.image_key}};

    gateway::ChatRequest request;
    if (shared_context) {
      request.messages = history;
      request.messages.push_back(message);
    } else {
      request.messages.push_back(message);
    }
    const gateway::ChatResponse response = gw.chat(request);
    if (shared_context) {
      history.push_back(message);
      history.push_back(gateway::ChatMessage{"assistant", response.text, {}});
    }
    frame_captions.emplace_back(frame.index, response.text);
  }
  stage_log.push_back("caption: " + std::to_string(frame_captions.size()) +
                      " per-frame exchanges");

  const auto& summary_tmpl = prompts.get("summary_stage");
  gateway::ChatMessage summary_msg{
      "user", summary_tmpl.render({{"captions", accumulate_marked(frame_captions)}}), {}};
  gateway::ChatRequest summary;
  if (shared_context) {
    summary.messages = history;
    summary.messages.push_back(summary_msg);
  } else {
    summary.messages.push_back(summary_msg);
  }
  stage_log.push_back("summary: one exchange");
  return gw.chat(summary).text;
}

}  // namespace

PipelineResult run_pipeline(const core::AnnotatedClip& clip, const PipelineConfig& config,
                            gateway::Gateway& gw, extraction::Judge& judge,
                            const prompts::PromptLibrary& prompts) {
  config.validate();
  PipelineResult result;

  if (config.mode == Mode::RICE) {
    const auto ranges = plan_windows(clip.frame_count(), config.window_len);
    std::vector<std::future<WindowCaption>> futures;
    futures.reserve(ranges.size());
    for (const auto& [lo, hi] : ranges) {
      std::vector<core::FrameRef> frames(clip.frames.begin() + (lo - 1),
                                         clip.frames.begin() + hi);
      futures.push_back(std::async(std::launch::async, [frames, &config, &gw, &prompts] {
        return caption_window(frames, config, gw, prompts);
      }));
    }
    for (size_t w = 0; w < futures.size(); ++w) {
      try {
        WindowCaption window = futures[w].get();
        window.window_index = static_cast<int>(w) + 1;
        result.windows.push_back(std::move(window));
      } catch (const std::exception& e) {
        result.window_failures.push_back(WindowFailure{static_cast<int>(w) + 1, e.what()});
        log_warn("window " + std::to_string(w + 1) + " failed: " + e.what());
      }
    }
    result.stage_log.push_back("windows: " + std::to_string(result.windows.size()) + " of " +
                               std::to_string(ranges.size()) + " captioned");
    if (result.windows.empty()) {
      throw PipelineError("all windows failed for clip '" + clip.clip_id + "'");
    }

    SummaryResult summary = summarize_windows(result.windows, config, judge);
    result.caption = std::move(summary.caption);
    result.registry = std::move(summary.registry);
    result.links = std::move(summary.links);
    for (const RegistryEntry& entry : result.registry) {
      result.sequences.push_back(core::IdSequence{entry.label, entry.frames});
    }
    result.stage_log.push_back("summary: " + std::to_string(result.registry.size()) +
                               " registry entries");
    return result;
  }

  result.caption = run_free_text_stages(clip, config, gw, prompts, result.stage_log);

  // Free-text modes go through the extraction pipeline, mirroring how such
  // captions are evaluated.
  extraction::ExtractionResult extracted = extraction::extract_predictions(
      result.caption, clip, gw, judge, config.extract_threshold, prompts);
  result.sequences = extracted.sequences;
  for (size_t i = 0; i < extracted.update.tracks.size(); ++i) {
    const auto& track = extracted.update.tracks[i];
    RegistryEntry entry;
    entry.label = "track-" + std::to_string(i + 1);
    entry.canonical = track.canonical;
    if (track.canonical.features) entry.profile = *track.canonical.features;
    entry.frames = track.frames();
    result.registry.push_back(std::move(entry));
  }
  result.extraction = std::move(extracted);
  result.stage_log.push_back("extraction: " + std::to_string(result.sequences.size()) +
                             " sequences");
  return result;
}

std::string render_caption_output(const std::string& clip_id, Mode mode,
                                  const PipelineResult& result) {
  json registry = json::array();
  for (const RegistryEntry& entry : result.registry) {
    json profile = json::object();
    for (const auto& [k, v] : entry.profile) profile[k] = v;
    registry.push_back(
        json{{"label", entry.label}, {"frames", entry.frames}, {"profile", profile}});
  }
  return json{{"clip_id", clip_id},
              {"mode", to_string(mode)},
              {"caption", result.caption},
              {"registry", registry}}
             .dump(2) +
         "\n";
}

void write_caption_output(const std::filesystem::path& path, const std::string& clip_id,
                          Mode mode, const PipelineResult& result) {
  write_text_file_atomic(path, render_caption_output(clip_id, mode, result));
}

std::vector<CaptionFileEntry> load_captions(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw PipelineError("captions file '" + path.string() + "': " + e.what());
  }
  json arr = doc.is_array() ? doc : json::array({doc});
  std::vector<CaptionFileEntry> out;
  for (const auto& jc : arr) {
    if (!jc.contains("clip_id") || !jc.contains("caption")) {
      throw PipelineError("captions file entry missing clip_id or caption");
    }
    out.push_back(CaptionFileEntry{jc.at("clip_id").get<std::string>(),
                                   jc.at("caption").get<std::string>()});
  }
  return out;
}

}  // namespace idtrace::captioner
