#include "idtrace/mock_backends.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::gateway {

using nlohmann::json;

ChatResponse EchoBackend::chat(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == "user") return ChatResponse{it->text, {}, 0.0};
  }
  return ChatResponse{"", {}, 0.0};
}

std::vector<std::vector<double>> OneHotBackend::embed(const std::vector<std::string>& texts) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const std::string& text : texts) {
    const std::string key = to_lower(normalize_ws(text));
    auto [it, inserted] = index_.try_emplace(key, index_.size());
    if (inserted && it->second >= dimension_) {
      throw GatewayError("onehot backend: distinct string capacity exceeded");
    }
    std::vector<double> v(dimension_, 0.0);
    v[it->second] = 1.0;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::string> prompt_blocks(const std::string& text) {
  std::vector<std::string> blocks;
  size_t pos = 0;
  while (true) {
    const size_t open = text.find("<<<", pos);
    if (open == std::string::npos) break;
    const size_t close = text.find(">>>", open + 3);
    if (close == std::string::npos) break;
    blocks.push_back(normalize_ws(text.substr(open + 3, close - open - 3)));
    pos = close + 3;
  }
  return blocks;
}

std::string prompt_task(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role != "user") continue;
    const std::string& text = it->text;
    const std::string tag = "### task:";
    if (text.rfind(tag, 0) != 0) return "";
    const size_t eol = text.find('\n');
    return normalize_ws(text.substr(tag.size(), eol == std::string::npos
                                                    ? std::string::npos
                                                    : eol - tag.size()));
  }
  return "";
}

SimBackend::SimBackend(std::vector<core::AnnotatedClip> clips) : clips_(std::move(clips)) {
  for (const core::AnnotatedClip& clip : clips_) {
    for (const core::FrameRef& frame : clip.frames) {
      by_image_key_[frame.image_key] = FrameView{&clip, frame.index};
    }
  }
}

const SimBackend::FrameView* SimBackend::resolve(const std::string& image_key) const {
  auto it = by_image_key_.find(image_key);
  return it == by_image_key_.end() ? nullptr : &it->second;
}

std::string SimBackend::describe_frame(const FrameView& view) const {
  std::ostringstream out;
  out << "[frame " << view.frame_index << "]";
  bool anyone = false;
  for (const core::IdSequence& seq : view.clip->ground_truth) {
    if (!std::binary_search(seq.frames.begin(), seq.frames.end(), view.frame_index)) continue;
    anyone = true;
    out << ' ';
    if (auto it = view.clip->profiles.find(seq.label); it != view.clip->profiles.end()) {
      out << core::render_person(it->second);
    } else {
      out << "A person called " << seq.label << " appears.";
    }
  }
  if (!anyone) out << " The scene is empty.";
  return out.str();
}

namespace {

// Verbatim person spans, the same shapes render_caption emits.
std::vector<std::string> find_person_spans(const std::string& text) {
  std::vector<std::string> spans;
  const std::string lower = to_lower(text);
  size_t pos = 0;
  while (true) {
    const size_t hit = lower.find("a person", pos);
    if (hit == std::string::npos) break;
    size_t end = hit + 8;
    if (end < text.size() && text.compare(end, 2, " (") == 0) {
      const size_t close = text.find(')', end);
      if (close == std::string::npos) {
        pos = end;
        continue;
      }
      end = close + 1;
    } else if (lower.compare(end, 8, " called ") == 0) {
      size_t word_end = end + 8;
      while (word_end < text.size() && !std::isspace(static_cast<unsigned char>(text[word_end])) &&
             text[word_end] != '.' && text[word_end] != ',') {
        ++word_end;
      }
      end = word_end;
    }
    spans.push_back(text.substr(hit, end - hit));
    pos = end;
  }
  return spans;
}

double word_jaccard(const std::string& a, const std::string& b) {
  auto words = [](const std::string& s) {
    std::set<std::string> out;
    std::istringstream in(to_lower(normalize_ws(s)));
    std::string w;
    while (in >> w) out.insert(w);
    return out;
  };
  const auto wa = words(a);
  const auto wb = words(b);
  if (wa.empty() && wb.empty()) return 1.0;
  size_t common = 0;
  for (const auto& w : wa) common += wb.count(w);
  const size_t uni = wa.size() + wb.size() - common;
  return uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
}

}  // namespace

ChatResponse SimBackend::chat(const ChatRequest& request) {
  const std::string task = prompt_task(request);
  const ChatMessage* last_user = nullptr;
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == "user") {
      last_user = &*it;
      break;
    }
  }
  if (last_user == nullptr) throw GatewayError("sim backend: no user message");
  const auto blocks = prompt_blocks(last_user->text);

  if (task == "frame_index") {
    if (blocks.empty()) throw GatewayError("sim backend: frame_index prompt without caption");
    std::ostringstream out;
    const auto sentences = split_sentences(blocks[0]);
    for (size_t i = 0; i < sentences.size(); ++i) {
      if (i > 0) out << ' ';
      out << "[frame " << (i + 1) << "] " << sentences[i] << '.';
    }
    return ChatResponse{out.str(), {}, 0.0};
  }

  if (task == "character_extract") {
    if (blocks.empty()) throw GatewayError("sim backend: character_extract prompt without segment");
    return ChatResponse{json(find_person_spans(blocks[0])).dump(), {}, 0.0};
  }

  if (task == "same_person_judge") {
    if (blocks.size() < 2) throw GatewayError("sim backend: judge prompt needs two descriptions");
    const bool same = to_lower(normalize_ws(blocks[0])) == to_lower(normalize_ws(blocks[1]));
    return ChatResponse{same ? "score: 1.0" : "score: 0.0", {}, 0.0};
  }

  if (task == "pair_judge") {
    if (blocks.size() < 2) throw GatewayError("sim backend: pair judge needs two descriptions");
    const bool same = to_lower(normalize_ws(blocks[0])) == to_lower(normalize_ws(blocks[1]));
    return ChatResponse{same ? "same" : "different", {}, 0.0};
  }

  if (task == "trial_judge") {
    // Blocks: first caption, person A, last caption, person B.
    if (blocks.size() < 4) throw GatewayError("sim backend: trial judge needs four blocks");
    const bool same = to_lower(normalize_ws(blocks[1])) == to_lower(normalize_ws(blocks[3]));
    return ChatResponse{same ? "same" : "different", {}, 0.0};
  }

  if (task == "gpt_score") {
    if (blocks.size() < 2) throw GatewayError("sim backend: gpt_score needs two blocks");
    const double score = std::round(word_jaccard(blocks[0], blocks[1]) * 100.0) / 10.0;
    std::ostringstream out;
    out << "score: " << score;
    return ChatResponse{out.str(), {}, 0.0};
  }

  if (task == "caption_stage") {
    std::ostringstream out;
    bool first = true;
    for (const std::string& key : last_user->attachments) {
      const FrameView* view = resolve(key);
      if (view == nullptr) throw GatewayError("sim backend: unknown frame attachment " + key);
      if (!first) out << ' ';
      out << describe_frame(*view);
      first = false;
    }
    return ChatResponse{out.str(), {}, 0.0};
  }

  if (task == "summary_stage") {
    if (blocks.empty()) throw GatewayError("sim backend: summary prompt without captions");
    return ChatResponse{blocks[0], {}, 0.0};
  }

  if (task == "window_caption") {
    std::vector<const FrameView*> views;
    for (const std::string& key : last_user->attachments) {
      const FrameView* view = resolve(key);
      if (view == nullptr) throw GatewayError("sim backend: unknown frame attachment " + key);
      views.push_back(view);
    }
    if (views.empty()) throw GatewayError("sim backend: window caption without frames");

    // Characters in order of first appearance within the window.
    struct Entry {
      std::string render;
      core::FeatureProfile profile;
      std::vector<int> frames;
    };
    std::vector<Entry> entries;
    std::map<std::string, size_t> by_render;
    std::ostringstream caption;
    bool first_frame = true;
    for (const FrameView* view : views) {
      if (!first_frame) caption << ' ';
      first_frame = false;
      caption << "Frame " << view->frame_index << ":";
      bool anyone = false;
      for (const core::IdSequence& seq : view->clip->ground_truth) {
        if (!std::binary_search(seq.frames.begin(), seq.frames.end(), view->frame_index)) continue;
        core::FeatureProfile profile;
        if (auto it = view->clip->profiles.find(seq.label); it != view->clip->profiles.end()) {
          profile = it->second;
        } else {
          profile["label"] = seq.label;
        }
        const std::string render = core::render_profile(profile);
        auto [it, inserted] = by_render.try_emplace(render, entries.size());
        if (inserted) entries.push_back(Entry{render, profile, {}});
        entries[it->second].frames.push_back(view->frame_index);
        caption << (anyone ? ", " : " ") << "{c" << (it->second + 1) << "}";
        anyone = true;
      }
      caption << (anyone ? " present." : " nobody present.");
    }

    json characters = json::array();
    for (const Entry& e : entries) {
      json features = json::object();
      for (const auto& [k, v] : e.profile) features[k] = v;
      characters.push_back(json{{"description", "a person (" + e.render + ")"},
                                {"features", features},
                                {"frames", e.frames}});
    }
    return ChatResponse{
        json{{"caption", caption.str()}, {"characters", characters}}.dump(), {}, 0.0};
  }

  throw GatewayError("sim backend: unsupported task tag '" + task + "'");
}

std::unique_ptr<ChatBackend> make_mock_backend(const std::string& mock_name) {
  if (mock_name == "echo") return std::make_unique<EchoBackend>();
  if (mock_name == "onehot") return std::make_unique<OneHotBackend>();
  throw ConfigError("mock backend '" + mock_name +
                    "' requires explicit construction (or is unknown)");
}

}  // namespace idtrace::gateway
