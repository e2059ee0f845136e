#include "idtrace/sfslab.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "idtrace/rng.hpp"
#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::sfslab {

using nlohmann::json;

void FeatureCatalog::validate() const {
  std::set<std::string> names;
  for (const Feature& f : features) {
    if (f.name.empty()) throw SfsError("catalog: feature with empty name");
    if (f.values.empty()) throw SfsError("catalog: feature '" + f.name + "' has no values");
    if (!names.insert(f.name).second) {
      throw SfsError("catalog: duplicate feature '" + f.name + "'");
    }
  }
  for (const std::string& s : sfs) {
    if (names.count(s) == 0) {
      throw SfsError("catalog: sfs entry '" + s + "' is not a catalog feature");
    }
  }
}

const FeatureCatalog::Feature* FeatureCatalog::find(const std::string& name) const {
  for (const Feature& f : features) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::vector<std::string> FeatureCatalog::names() const {
  std::vector<std::string> out;
  for (const Feature& f : features) out.push_back(f.name);
  return out;
}

FeatureCatalog FeatureCatalog::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SfsError("catalog '" + path.string() + "': " + e.what());
  }
  FeatureCatalog catalog;
  for (const auto& jf : doc.at("features")) {
    Feature f;
    f.name = jf.at("name").get<std::string>();
    for (const auto& v : jf.at("values")) f.values.push_back(v.get<std::string>());
    catalog.features.push_back(std::move(f));
  }
  if (doc.contains("sfs")) {
    for (const auto& s : doc.at("sfs")) catalog.sfs.push_back(s.get<std::string>());
  }
  catalog.validate();
  return catalog;
}

void FeatureCatalog::save(const std::filesystem::path& path) const {
  json jfeatures = json::array();
  for (const Feature& f : features) {
    jfeatures.push_back(json{{"name", f.name}, {"values", f.values}});
  }
  write_text_file_atomic(path, json{{"features", jfeatures}, {"sfs", sfs}}.dump(2) + "\n");
}

void SceneFormat::validate() const {
  if (frames.size() < 2) throw SfsError("scene format '" + name + "' needs at least 2 frames");
  if (frames.front().find("{{anchor}}") == std::string::npos ||
      frames.back().find("{{anchor}}") == std::string::npos) {
    throw SfsError("scene format '" + name +
                   "': first and last frames must contain {{anchor}}");
  }
}

SceneFormat SceneFormat::from_file(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SfsError("scene format '" + path.string() + "': " + e.what());
  }
  SceneFormat format;
  format.name = doc.value("name", path.stem().string());
  for (const auto& f : doc.at("frames")) format.frames.push_back(f.get<std::string>());
  format.validate();
  return format;
}

std::vector<SceneFormat> SceneFormat::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw SfsError("scene format directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<SceneFormat> formats;
  for (const auto& p : paths) formats.push_back(SceneFormat::from_file(p));
  if (formats.empty()) throw SfsError("no scene formats in " + dir.string());
  return formats;
}

std::string to_string(TrialMode mode) {
  switch (mode) {
    case TrialMode::Base: return "base";
    case TrialMode::Contrast: return "contrast";
    case TrialMode::MixtureFirst: return "mixture_first";
    case TrialMode::MixtureLast: return "mixture_last";
    case TrialMode::MixtureContrast: return "mixture_contrast";
  }
  return "unknown";
}

namespace {

json values_to_json(const std::map<std::string, std::string>& values) {
  json j = json::object();
  for (const auto& [k, v] : values) j[k] = v;
  return j;
}

std::map<std::string, std::string> values_from_json(const json& j) {
  std::map<std::string, std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<std::string>();
  return out;
}

json spec_to_json(const TrialSpec& spec) {
  return json{{"mode", to_string(spec.mode)},
              {"format", spec.format_name},
              {"probe_features", spec.probe_features},
              {"extra_features", spec.extra_features},
              {"first_probe_values", values_to_json(spec.first_probe_values)},
              {"last_probe_values", values_to_json(spec.last_probe_values)},
              {"first_extra_values", values_to_json(spec.first_extra_values)},
              {"last_extra_values", values_to_json(spec.last_extra_values)},
              {"fill_seed", spec.fill_seed}};
}

TrialMode mode_from_name(const std::string& name) {
  if (name == "base") return TrialMode::Base;
  if (name == "contrast") return TrialMode::Contrast;
  if (name == "mixture_first") return TrialMode::MixtureFirst;
  if (name == "mixture_last") return TrialMode::MixtureLast;
  if (name == "mixture_contrast") return TrialMode::MixtureContrast;
  throw SfsError("unknown trial mode: " + name);
}

TrialSpec spec_from_json(const json& j) {
  TrialSpec spec;
  spec.mode = mode_from_name(j.at("mode").get<std::string>());
  spec.format_name = j.at("format").get<std::string>();
  spec.probe_features = j.at("probe_features").get<std::vector<std::string>>();
  spec.extra_features = j.at("extra_features").get<std::vector<std::string>>();
  spec.first_probe_values = values_from_json(j.at("first_probe_values"));
  spec.last_probe_values = values_from_json(j.at("last_probe_values"));
  spec.first_extra_values = values_from_json(j.at("first_extra_values"));
  spec.last_extra_values = values_from_json(j.at("last_extra_values"));
  spec.fill_seed = j.at("fill_seed").get<uint64_t>();
  return spec;
}

const FeatureCatalog::Feature& require_feature(const FeatureCatalog& catalog,
                                               const std::string& name) {
  const auto* f = catalog.find(name);
  if (f == nullptr) throw SfsError("spec error: feature '" + name + "' not in catalog");
  return *f;
}

std::string pick_value(const FeatureCatalog::Feature& feature, Rng& rng) {
  return feature.values[rng.below(feature.values.size())];
}

std::pair<std::string, std::string> pick_two_values(const FeatureCatalog::Feature& feature,
                                                    Rng& rng) {
  if (feature.values.size() < 2) {
    throw SfsError("spec error: feature '" + feature.name +
                   "' needs at least 2 values for contrasting assignments");
  }
  const size_t a = rng.below(feature.values.size());
  size_t b = rng.below(feature.values.size() - 1);
  if (b >= a) ++b;
  return {feature.values[a], feature.values[b]};
}

std::vector<std::string> draw_extras(const FeatureCatalog& catalog,
                                     const std::vector<std::string>& probe, Rng& rng) {
  std::vector<std::string> pool;
  const std::set<std::string> probe_set(probe.begin(), probe.end());
  for (const auto& f : catalog.features) {
    if (probe_set.count(f.name) == 0 && f.values.size() >= 2) pool.push_back(f.name);
  }
  const size_t want = std::min<size_t>(4 + rng.below(5), pool.size());  // 4..8
  rng.shuffle(pool);
  pool.resize(want);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

std::string TrialSpec::hash() const { return sha256_hex(spec_to_json(*this).dump()); }

TrialSpec make_trial_spec(const FeatureCatalog& catalog, TrialMode mode,
                          const std::vector<std::string>& probe_features,
                          const SceneFormat& format, uint64_t seed) {
  if (probe_features.empty()) throw SfsError("spec error: empty probe feature set");
  Rng rng(seed);
  TrialSpec spec;
  spec.mode = mode;
  spec.format_name = format.name;
  spec.probe_features = probe_features;
  std::sort(spec.probe_features.begin(), spec.probe_features.end());
  spec.fill_seed = rng.next();

  for (const std::string& name : spec.probe_features) {
    const auto& feature = require_feature(catalog, name);
    if (mode == TrialMode::Contrast) {
      auto [first, last] = pick_two_values(feature, rng);
      spec.first_probe_values[name] = first;
      spec.last_probe_values[name] = last;
    } else {
      const std::string value = pick_value(feature, rng);
      spec.first_probe_values[name] = value;
      spec.last_probe_values[name] = value;
    }
  }

  if (mode == TrialMode::MixtureFirst || mode == TrialMode::MixtureLast ||
      mode == TrialMode::MixtureContrast) {
    spec.extra_features = draw_extras(catalog, spec.probe_features, rng);
    for (const std::string& name : spec.extra_features) {
      const auto& feature = require_feature(catalog, name);
      if (mode == TrialMode::MixtureFirst) {
        spec.first_extra_values[name] = pick_value(feature, rng);
      } else if (mode == TrialMode::MixtureLast) {
        spec.last_extra_values[name] = pick_value(feature, rng);
      } else {  // MixtureContrast: both sides carry the extras, differing
        auto [first, last] = pick_two_values(feature, rng);
        spec.first_extra_values[name] = first;
        spec.last_extra_values[name] = last;
      }
    }
  }
  return spec;
}

namespace {

std::string render_anchor(const std::map<std::string, std::string>& probe_values,
                          const std::map<std::string, std::string>& extra_values) {
  core::FeatureProfile profile;
  for (const auto& [k, v] : probe_values) profile[k] = v;
  for (const auto& [k, v] : extra_values) profile[k] = v;
  return "a person (" + core::render_profile(profile) + ")";
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

// Filler people for non-anchor blanks. A small fixed vocabulary keeps
// instantiate_trial a pure function of (format, spec, seed).
std::string distractor_render(Rng& rng) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> vocabulary = {
      {"hair color", {"black", "brown", "blond", "gray"}},
      {"top color", {"white", "navy", "olive", "maroon"}},
      {"top type", {"t-shirt", "sweater", "dress shirt"}},
      {"headwear", {"none", "baseball cap", "beanie"}},
      {"build", {"slim", "average", "heavyset"}},
  };
  core::FeatureProfile profile;
  const size_t count = 2 + rng.below(3);  // 2..4 features
  for (size_t i = 0; i < count; ++i) {
    const auto& [name, values] = vocabulary[rng.below(vocabulary.size())];
    profile[name] = values[rng.below(values.size())];
  }
  return "a person (" + core::render_profile(profile) + ")";
}

}  // namespace

Trial instantiate_trial(const SceneFormat& format, const TrialSpec& spec, uint64_t seed) {
  format.validate();
  if (spec.first_probe_values.size() != spec.probe_features.size() ||
      spec.last_probe_values.size() != spec.probe_features.size()) {
    throw SfsError("spec error: probe values do not cover the probe features");
  }

  Trial trial;
  trial.spec = spec;
  trial.expected_same = spec.mode != TrialMode::Contrast;
  trial.first_anchor_text = render_anchor(spec.first_probe_values, spec.first_extra_values);
  trial.last_anchor_text = render_anchor(spec.last_probe_values, spec.last_extra_values);

  Rng rng(seed ^ spec.fill_seed);
  // One deterministic render per distinct blank name, consistent across
  // frames within the trial.
  std::map<std::string, std::string> blank_fills;
  for (size_t i = 0; i < format.frames.size(); ++i) {
    std::string text = format.frames[i];
    const std::string anchor_fill =
        (i == 0) ? trial.first_anchor_text
                 : (i + 1 == format.frames.size() ? trial.last_anchor_text
                                                  : trial.first_anchor_text);
    text = replace_all(text, "{{anchor}}", anchor_fill);
    size_t pos = 0;
    while ((pos = text.find("{{", pos)) != std::string::npos) {
      const size_t end = text.find("}}", pos);
      if (end == std::string::npos) break;
      const std::string token = text.substr(pos, end - pos + 2);
      auto it = blank_fills.find(token);
      if (it == blank_fills.end()) {
        it = blank_fills.emplace(token, distractor_render(rng)).first;
      }
      text.replace(pos, token.size(), it->second);
      pos += it->second.size();
    }
    trial.filled_frames.push_back(std::move(text));
  }
  return trial;
}

bool ProfileEqualityTrialJudge::same(const Trial& trial) {
  return trial.spec.first_probe_values == trial.spec.last_probe_values;
}

bool ExtrasSensitiveTrialJudge::same(const Trial& trial) {
  if (trial.spec.first_extra_values != trial.spec.last_extra_values) return false;
  return trial.spec.first_probe_values == trial.spec.last_probe_values;
}

bool KeyedFeatureTrialJudge::same(const Trial& trial) {
  return std::find(trial.spec.probe_features.begin(), trial.spec.probe_features.end(),
                   feature_) != trial.spec.probe_features.end();
}

namespace {

std::optional<bool> parse_same_different(const std::string& text) {
  std::istringstream in(to_lower(normalize_ws(text)));
  std::string word;
  while (in >> word) {
    while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word.back()))) {
      word.pop_back();
    }
    if (word == "same" || word == "yes") return true;
    if (word == "different" || word == "no") return false;
  }
  return std::nullopt;
}

}  // namespace

bool LlmTrialJudge::same(const Trial& trial) {
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user",
      prompt_.render({{"first_caption", trial.first_caption()},
                      {"first_anchor", trial.first_anchor_text},
                      {"last_caption", trial.last_caption()},
                      {"last_anchor", trial.last_anchor_text}}),
      {}});
  gateway::ChatResponse response = gateway_.chat(request);
  auto verdict = parse_same_different(response.text);
  if (!verdict) {
    gateway::ChatRequest retry = request;
    retry.messages.push_back(gateway::ChatMessage{"assistant", response.text, {}});
    retry.messages.push_back(
        gateway::ChatMessage{"user", "Answer with the single word: same or different.", {}});
    response = gateway_.chat(retry);
    verdict = parse_same_different(response.text);
  }
  if (!verdict) throw TrialError("unparseable trial verdict: " + response.text);
  return *verdict;
}

bool run_trial(const Trial& trial, TrialJudge& judge) { return judge.same(trial); }

std::string trace_hash(const std::vector<TraceEntry>& trace) {
  std::string blob;
  for (const TraceEntry& entry : trace) {
    blob += entry.spec_hash;
    blob += entry.verdict ? ":1\n" : ":0\n";
  }
  return sha256_hex(blob);
}

void write_trace(const std::filesystem::path& path, const std::vector<TraceEntry>& trace) {
  std::ostringstream out;
  for (const TraceEntry& entry : trace) {
    out << json{{"spec", spec_to_json(entry.spec)},
                {"hash", entry.spec_hash},
                {"verdict", entry.verdict}}
               .dump()
        << "\n";
  }
  write_text_file_atomic(path, out.str());
}

std::vector<TraceEntry> load_trace(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<TraceEntry> trace;
  std::string line;
  while (std::getline(in, line)) {
    if (normalize_ws(line).empty()) continue;
    const json j = json::parse(line);
    TraceEntry entry;
    entry.spec = spec_from_json(j.at("spec"));
    entry.spec_hash = j.at("hash").get<std::string>();
    entry.verdict = j.at("verdict").get<bool>();
    trace.push_back(std::move(entry));
  }
  return trace;
}

namespace {

// n-subsets of [0, m), lexicographic.
std::vector<std::vector<size_t>> enumerate_combinations(size_t m, size_t n) {
  std::vector<std::vector<size_t>> out;
  if (n > m || n == 0) return out;
  std::vector<size_t> combo(n);
  for (size_t i = 0; i < n; ++i) combo[i] = i;
  while (true) {
    out.push_back(combo);
    size_t i = n;
    while (i > 0 && combo[i - 1] == m - n + i - 1) --i;
    if (i == 0) break;
    ++combo[i - 1];
    for (size_t j = i; j < n; ++j) combo[j] = combo[j - 1] + 1;
  }
  return out;
}

struct ScoreAccumulator {
  long long hits = 0;
  long long total = 0;
  double mean() const { return total == 0 ? 0.0 : static_cast<double>(hits) / total; }
};

}  // namespace

SearchResult search_sfs(const FeatureCatalog& catalog, const std::vector<SceneFormat>& formats,
                        const SearchBudget& budget, TrialJudge& judge,
                        const std::optional<SearchState>& resume_from,
                        std::vector<TraceEntry> trace_prefix) {
  catalog.validate();
  if (formats.empty()) throw SfsError("search_sfs: no scene formats");
  if (budget.max_n < 1) throw SfsError("search_sfs: max_n must be >= 1");

  SearchResult result;
  result.trace = std::move(trace_prefix);
  if (resume_from) {
    result.state = *resume_from;
  } else {
    result.state.surviving = catalog.names();
  }

  for (int n = result.state.completed_n + 1; n <= budget.max_n; ++n) {
    std::vector<std::string> surviving = result.state.surviving;
    std::sort(surviving.begin(), surviving.end());
    const size_t m = surviving.size();

    auto combos = enumerate_combinations(m, static_cast<size_t>(n));
    if (combos.empty()) {
      result.state.completed_n = n;
      continue;  // fewer surviving features than the tuple size
    }
    Rng round_rng(budget.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(n)));
    if (budget.max_combinations_per_n > 0 &&
        combos.size() > static_cast<size_t>(budget.max_combinations_per_n)) {
      round_rng.shuffle(combos);
      combos.resize(static_cast<size_t>(budget.max_combinations_per_n));
      std::sort(combos.begin(), combos.end());
    }

    std::map<std::string, ScoreAccumulator> base_acc, contrast_acc, mixture_acc;
    const TrialMode round_modes[] = {TrialMode::Base, TrialMode::Contrast,
                                     TrialMode::MixtureFirst, TrialMode::MixtureLast};

    for (size_t ci = 0; ci < combos.size(); ++ci) {
      std::vector<std::string> probe;
      for (size_t idx : combos[ci]) probe.push_back(surviving[idx]);

      for (int fi = 0; fi < budget.formats_per_combination; ++fi) {
        const SceneFormat& format = formats[round_rng.below(formats.size())];
        for (TrialMode mode : round_modes) {
          const uint64_t trial_seed = round_rng.next();
          const TrialSpec spec = make_trial_spec(catalog, mode, probe, format, trial_seed);
          const Trial trial = instantiate_trial(format, spec, trial_seed);

          bool verdict;
          try {
            verdict = run_trial(trial, judge);
          } catch (const TrialError& e) {
            result.state.pruning_log.push_back("n=" + std::to_string(n) +
                                               " trial excluded: " + e.what());
            continue;
          } catch (const gateway::GatewayError& e) {
            throw SearchInterrupted(
                std::string("gateway exhausted during search: ") + e.what(), result.state,
                result.trace);
          }
          result.trace.push_back(TraceEntry{spec, spec.hash(), verdict});

          for (const std::string& feature : probe) {
            switch (mode) {
              case TrialMode::Base: {
                auto& acc = base_acc[feature];
                acc.hits += verdict ? 1 : 0;
                ++acc.total;
                break;
              }
              case TrialMode::Contrast: {
                auto& acc = contrast_acc[feature];
                acc.hits += verdict ? 0 : 1;  // success = told apart
                ++acc.total;
                break;
              }
              default: {
                auto& acc = mixture_acc[feature];
                acc.hits += verdict ? 1 : 0;
                ++acc.total;
                break;
              }
            }
          }
        }
      }
    }

    result.state.scores.clear();
    for (const std::string& feature : surviving) {
      FeatureScores scores;
      scores.base = base_acc[feature].mean();
      scores.base_n = base_acc[feature].total;
      scores.contrast = contrast_acc[feature].mean();
      scores.contrast_n = contrast_acc[feature].total;
      scores.mixture = mixture_acc[feature].mean();
      scores.mixture_n = mixture_acc[feature].total;
      result.state.scores[feature] = scores;
    }

    // Prune. Quartile rule: sort by base score ascending, find the value at
    // the drop_fraction boundary, drop everything at or below it unless the
    // boundary already equals the best score (all-tied round).
    std::set<std::string> dropped;
    if (budget.drop_fraction > 0.0 && surviving.size() > 1) {
      std::vector<std::pair<double, std::string>> ranked;
      for (const std::string& f : surviving) {
        ranked.emplace_back(result.state.scores[f].base, f);
      }
      std::sort(ranked.begin(), ranked.end());
      const size_t boundary = static_cast<size_t>(std::max(
          0.0, std::ceil(budget.drop_fraction * static_cast<double>(ranked.size())) - 1.0));
      const double cut = ranked[boundary].first;
      const double best = ranked.back().first;
      if (cut < best) {
        for (const auto& [score, f] : ranked) {
          if (score <= cut) {
            dropped.insert(f);
            result.state.pruning_log.push_back(
                "n=" + std::to_string(n) + " drop '" + f + "' base=" + std::to_string(score) +
                " (lowest-scoring group)");
          }
        }
      }
    }
    if (budget.mixture_gap >= 0.0) {
      for (const std::string& f : surviving) {
        const FeatureScores& s = result.state.scores[f];
        if (s.mixture_n > 0 && s.base_n > 0 && s.mixture < s.base - budget.mixture_gap) {
          if (dropped.insert(f).second) {
            result.state.pruning_log.push_back(
                "n=" + std::to_string(n) + " drop '" + f + "' mixture=" +
                std::to_string(s.mixture) + " below base=" + std::to_string(s.base) +
                " (not robust)");
          }
        }
      }
    }
    if (dropped.size() >= surviving.size()) {
      // Never drop everything; keep the best-scoring feature.
      std::string best_feature = surviving.front();
      double best_score = -1.0;
      for (const std::string& f : surviving) {
        if (result.state.scores[f].base > best_score) {
          best_score = result.state.scores[f].base;
          best_feature = f;
        }
      }
      dropped.erase(best_feature);
      result.state.pruning_log.push_back("n=" + std::to_string(n) + " keep '" + best_feature +
                                         "' (floor of one survivor)");
    }

    std::vector<std::string> next;
    for (const std::string& f : result.state.surviving) {
      if (dropped.count(f) == 0) next.push_back(f);
    }
    result.state.surviving = std::move(next);
    result.state.completed_n = n;
  }

  // Survivors reported in catalog order.
  for (const std::string& name : catalog.names()) {
    if (std::find(result.state.surviving.begin(), result.state.surviving.end(), name) !=
        result.state.surviving.end()) {
      result.sfs.push_back(name);
    }
  }
  return result;
}

StrengthScores evaluate_sfs_strength(const FeatureCatalog& catalog,
                                     const std::vector<std::string>& sfs,
                                     const std::vector<SceneFormat>& formats, TrialJudge& judge,
                                     int reps_per_format, uint64_t seed) {
  catalog.validate();
  if (sfs.empty()) throw SfsError("evaluate_sfs_strength: empty feature set");
  if (formats.empty()) throw SfsError("evaluate_sfs_strength: no scene formats");
  Rng rng(seed ^ 0xa0761d6478bd642fULL);

  ScoreAccumulator base, mixture, mixture_contrast;
  long long trials = 0;
  const TrialMode modes[] = {TrialMode::Base, TrialMode::MixtureFirst, TrialMode::MixtureLast,
                             TrialMode::MixtureContrast};
  for (const SceneFormat& format : formats) {
    for (int rep = 0; rep < reps_per_format; ++rep) {
      for (TrialMode mode : modes) {
        const uint64_t trial_seed = rng.next();
        const TrialSpec spec = make_trial_spec(catalog, mode, sfs, format, trial_seed);
        const Trial trial = instantiate_trial(format, spec, trial_seed);
        bool verdict;
        try {
          verdict = run_trial(trial, judge);
        } catch (const TrialError& e) {
          log_warn(std::string("strength trial excluded: ") + e.what());
          continue;
        }
        ++trials;
        switch (mode) {
          case TrialMode::Base:
            base.hits += verdict ? 1 : 0;
            ++base.total;
            break;
          case TrialMode::MixtureContrast:
            mixture_contrast.hits += verdict ? 1 : 0;
            ++mixture_contrast.total;
            break;
          default:
            mixture.hits += verdict ? 1 : 0;
            ++mixture.total;
            break;
        }
      }
    }
  }
  StrengthScores scores;
  scores.base = base.mean();
  scores.mixture = mixture.mean();
  scores.mixture_contrast = mixture_contrast.mean();
  scores.trials = trials;
  return scores;
}

namespace {

const std::vector<std::string>& scene_phrases() {
  static const std::vector<std::string> scenes = {
      "in a park",          "on a rooftop", "in a subway station",
      "at a sidewalk cafe", "on a beach",   "in an open-plan office"};
  return scenes;
}

const std::vector<std::string>& action_phrases() {
  static const std::vector<std::string> actions = {
      "reading a newspaper", "drinking coffee",        "waving at someone",
      "jogging",             "talking on the phone",   "tying a shoelace"};
  return actions;
}

}  // namespace

std::vector<LabeledPair> make_pair_corpus(const FeatureCatalog& catalog, int n_people,
                                          int photos_per_person, int n_pairs, uint64_t seed) {
  catalog.validate();
  if (n_people < 2 || photos_per_person < 1 || n_pairs < 1) {
    throw SfsError("make_pair_corpus: need >= 2 people, >= 1 photo each, >= 1 pair");
  }
  Rng rng(seed ^ 0x243f6a8885a308d3ULL);

  const auto& feature_names =
      catalog.sfs.empty() ? catalog.names() : catalog.sfs;
  std::vector<core::FeatureProfile> people;
  std::set<std::string> renders;
  for (int p = 0; p < n_people; ++p) {
    core::FeatureProfile profile;
    do {
      profile.clear();
      for (const std::string& name : feature_names) {
        const auto& feature = *catalog.find(name);
        profile[name] = feature.values[rng.below(feature.values.size())];
      }
    } while (!renders.insert(core::render_profile(profile)).second);
    people.push_back(std::move(profile));
  }

  struct Photo {
    int person;
    std::string scene, action, description;
  };
  std::vector<Photo> photos;
  for (int p = 0; p < n_people; ++p) {
    for (int k = 0; k < photos_per_person; ++k) {
      Photo photo;
      photo.person = p;
      photo.scene = rng.pick(scene_phrases());
      photo.action = rng.pick(action_phrases());
      photo.description = "A person (" + core::render_profile(people[p]) + ") is " +
                          photo.action + " " + photo.scene + ".";
      photos.push_back(std::move(photo));
    }
  }

  std::vector<LabeledPair> pairs;
  for (int i = 0; i < n_pairs; ++i) {
    const Photo& a = photos[rng.below(photos.size())];
    const Photo& b = photos[rng.below(photos.size())];
    LabeledPair pair;
    pair.description_a = a.description;
    pair.description_b = b.description;
    pair.same = a.person == b.person;
    pair.profile_a = people[a.person];
    pair.profile_b = people[b.person];
    pair.scene_a = a.scene;
    pair.scene_b = b.scene;
    pair.action_a = a.action;
    pair.action_b = b.action;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

bool LlmPairJudge::same(const LabeledPair& pair) {
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user",
      prompt_.render(
          {{"description_a", pair.description_a}, {"description_b", pair.description_b}}),
      {}});
  gateway::ChatResponse response = gateway_.chat(request);
  auto verdict = parse_same_different(response.text);
  if (!verdict) {
    gateway::ChatRequest retry = request;
    retry.messages.push_back(gateway::ChatMessage{"assistant", response.text, {}});
    retry.messages.push_back(
        gateway::ChatMessage{"user", "Answer with the single word: same or different.", {}});
    response = gateway_.chat(retry);
    verdict = parse_same_different(response.text);
  }
  if (!verdict) throw TrialError("unparseable pair verdict: " + response.text);
  return *verdict;
}

PrecisionRecall judge_criterion_bench(const std::vector<LabeledPair>& pairs, PairJudge& judge) {
  if (pairs.empty()) throw SfsError("judge_criterion_bench: empty pair list");
  PrecisionRecall result;
  for (const LabeledPair& pair : pairs) {
    bool predicted;
    try {
      predicted = judge.same(pair);
    } catch (const TrialError& e) {
      log_warn(std::string("pair excluded: ") + e.what());
      continue;
    }
    result.predicted_same += predicted ? 1 : 0;
    result.actually_same += pair.same ? 1 : 0;
    result.true_positives += (predicted && pair.same) ? 1 : 0;
  }
  result.precision = result.predicted_same == 0
                         ? (result.actually_same == 0 ? 1.0 : 0.0)
                         : static_cast<double>(result.true_positives) / result.predicted_same;
  result.recall = result.actually_same == 0
                      ? (result.predicted_same == 0 ? 1.0 : 0.0)
                      : static_cast<double>(result.true_positives) / result.actually_same;
  return result;
}

}  // namespace idtrace::sfslab
