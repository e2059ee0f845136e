#include "idtrace/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "idtrace/gateway.hpp"
#include "idtrace/prompts.hpp"
#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::metrics {

using nlohmann::json;

PairMultiset decompose_pairs(const std::vector<core::IdSequence>& ids) {
  PairMultiset pairs;
  for (const core::IdSequence& seq : ids) {
    for (size_t i = 0; i < seq.frames.size(); ++i) {
      for (size_t j = i + 1; j < seq.frames.size(); ++j) {
        pairs[{seq.frames[i], seq.frames[j]}] += 1;
      }
    }
  }
  return pairs;
}

long long multiset_size(const PairMultiset& pairs) {
  long long total = 0;
  for (const auto& [key, count] : pairs) total += count;
  return total;
}

long long multiset_intersection_size(const PairMultiset& a, const PairMultiset& b) {
  long long total = 0;
  for (const auto& [key, count] : a) {
    auto it = b.find(key);
    if (it != b.end()) total += std::min(count, it->second);
  }
  return total;
}

namespace {

double ratio_with_empty_rule(long long numerator, long long denominator,
                             long long counterpart_size) {
  if (denominator == 0) return counterpart_size == 0 ? 1.0 : 0.0;
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

}  // namespace

std::pair<double, double> pair_precision_recall(const std::vector<core::IdSequence>& pred,
                                                const std::vector<core::IdSequence>& gt) {
  const PairMultiset p = decompose_pairs(pred);
  const PairMultiset g = decompose_pairs(gt);
  const long long tp = multiset_intersection_size(p, g);
  const long long np = multiset_size(p);
  const long long ng = multiset_size(g);
  return {ratio_with_empty_rule(tp, np, ng), ratio_with_empty_rule(tp, ng, np)};
}

MatchingProblem build_matching_problem(const std::vector<core::IdSequence>& pred,
                                       const std::vector<core::IdSequence>& gt) {
  MatchingProblem problem;
  problem.left = pred;
  problem.right = gt;
  problem.weights.assign(pred.size(), std::vector<long long>(gt.size(), 0));
  for (size_t i = 0; i < pred.size(); ++i) {
    for (size_t j = 0; j < gt.size(); ++j) {
      // Frame lists are strictly increasing, so a linear merge counts the
      // intersection.
      const auto& a = pred[i].frames;
      const auto& b = gt[j].frames;
      size_t x = 0, y = 0;
      long long common = 0;
      while (x < a.size() && y < b.size()) {
        if (a[x] == b[y]) {
          ++common;
          ++x;
          ++y;
        } else if (a[x] < b[y]) {
          ++x;
        } else {
          ++y;
        }
      }
      problem.weights[i][j] = common;
    }
  }
  return problem;
}

double sequence_similarity(const std::vector<core::IdSequence>& pred,
                           const std::vector<core::IdSequence>& gt) {
  if (gt.empty()) throw MetricError("undefined: empty ground truth");
  long long gt_total = 0;
  for (const core::IdSequence& seq : gt) gt_total += static_cast<long long>(seq.frames.size());
  const MatchingProblem problem = build_matching_problem(pred, gt);
  const Assignment assignment = solve_assignment(problem.weights);
  const double value = static_cast<double>(assignment.total_weight) /
                       static_cast<double>(gt_total);
  return std::clamp(value, 0.0, 1.0);
}

IdMatchReport evaluate_clip(const std::vector<core::IdSequence>& pred,
                            const std::vector<core::IdSequence>& gt) {
  if (gt.empty()) throw MetricError("undefined: empty ground truth");
  IdMatchReport report;
  const PairMultiset p = decompose_pairs(pred);
  const PairMultiset g = decompose_pairs(gt);
  report.counts.true_positive_pairs = multiset_intersection_size(p, g);
  report.counts.pred_pairs = multiset_size(p);
  report.counts.gt_pairs = multiset_size(g);
  for (const core::IdSequence& seq : gt) {
    report.counts.gt_total += static_cast<long long>(seq.frames.size());
  }

  const MatchingProblem problem = build_matching_problem(pred, gt);
  const Assignment assignment = solve_assignment(problem.weights);
  report.counts.matched_weight = assignment.total_weight;
  for (const auto& [row, col] : assignment.pairs) {
    report.matched_pairs.push_back(
        MatchedPair{pred[row].label, gt[col].label, problem.weights[row][col]});
  }

  report.precision = ratio_with_empty_rule(report.counts.true_positive_pairs,
                                           report.counts.pred_pairs, report.counts.gt_pairs);
  report.recall = ratio_with_empty_rule(report.counts.true_positive_pairs,
                                        report.counts.gt_pairs, report.counts.pred_pairs);
  report.sequence_similarity =
      std::clamp(static_cast<double>(report.counts.matched_weight) /
                     static_cast<double>(report.counts.gt_total),
                 0.0, 1.0);
  return report;
}

AggregateReport aggregate_reports(const std::vector<IdMatchReport>& per_clip) {
  if (per_clip.empty()) throw MetricError("aggregate_reports: no reports");
  AggregateReport agg;
  agg.clip_count = per_clip.size();
  double sum_p = 0, sum_r = 0, sum_s = 0;
  for (const IdMatchReport& r : per_clip) {
    agg.pooled.counts.true_positive_pairs += r.counts.true_positive_pairs;
    agg.pooled.counts.pred_pairs += r.counts.pred_pairs;
    agg.pooled.counts.gt_pairs += r.counts.gt_pairs;
    agg.pooled.counts.matched_weight += r.counts.matched_weight;
    agg.pooled.counts.gt_total += r.counts.gt_total;
    sum_p += r.precision;
    sum_r += r.recall;
    sum_s += r.sequence_similarity;
  }
  const auto& c = agg.pooled.counts;
  agg.pooled.precision = ratio_with_empty_rule(c.true_positive_pairs, c.pred_pairs, c.gt_pairs);
  agg.pooled.recall = ratio_with_empty_rule(c.true_positive_pairs, c.gt_pairs, c.pred_pairs);
  agg.pooled.sequence_similarity =
      c.gt_total == 0
          ? 0.0
          : std::clamp(static_cast<double>(c.matched_weight) / static_cast<double>(c.gt_total),
                       0.0, 1.0);
  const double n = static_cast<double>(per_clip.size());
  agg.macro_precision = sum_p / n;
  agg.macro_recall = sum_r / n;
  agg.macro_similarity = sum_s / n;
  return agg;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MetricError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    log_warn("cosine: zero-norm embedding treated as similarity 0");
    return 0.0;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double text_coverage(const CoverageInput& input, Embedder& embedder) {
  if (input.ground_segments.empty()) throw MetricError("text_coverage: no ground segments");
  if (input.threshold <= 0.0 || input.threshold > 1.0) {
    throw MetricError("text_coverage: threshold must be in (0, 1]");
  }
  if (input.predicted_sub_sentences.empty()) return 0.0;

  const auto g_vecs = embedder.embed(input.ground_segments);
  const auto p_vecs = embedder.embed(input.predicted_sub_sentences);
  long long covered = 0;
  for (const auto& g : g_vecs) {
    double best = -1.0;
    for (const auto& p : p_vecs) best = std::max(best, cosine_similarity(g, p));
    if (best >= input.threshold) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(input.ground_segments.size());
}

double gpt_score(const std::string& prediction, const std::string& ground_truth,
                 gateway::Gateway& judge_gateway, const prompts::PromptTemplate& rubric) {
  gateway::ChatRequest request;
  request.messages.push_back(gateway::ChatMessage{
      "user",
      rubric.render({{"prediction", prediction}, {"reference", ground_truth}}),
      {}});
  gateway::ChatResponse response = judge_gateway.chat(request);
  auto parsed = first_number(response.text);
  if (!parsed) {
    gateway::ChatRequest retry = request;
    retry.messages.push_back(gateway::ChatMessage{"assistant", response.text, {}});
    retry.messages.push_back(gateway::ChatMessage{
        "user", "Reply with only the numeric score between 0 and 10.", {}});
    response = judge_gateway.chat(retry);
    parsed = first_number(response.text);
  }
  if (!parsed) throw ScoringError("gpt_score: no numeric score in judge reply", response.text);
  return std::clamp(*parsed, 0.0, 10.0);
}

double round6(double value) { return std::round(value * 1e6) / 1e6; }

namespace {

json report_to_json(const IdMatchReport& report, bool include_pairs) {
  json j;
  j["precision"] = round6(report.precision);
  j["recall"] = round6(report.recall);
  j["sequence_similarity"] = round6(report.sequence_similarity);
  if (include_pairs) {
    json pairs = json::array();
    for (const MatchedPair& p : report.matched_pairs) {
      pairs.push_back(json{{"pred", p.pred_label}, {"gt", p.gt_label}, {"weight", p.weight}});
    }
    j["matched_pairs"] = std::move(pairs);
  }
  return j;
}

}  // namespace

std::string render_report_json(const std::vector<std::string>& clip_ids,
                               const std::vector<IdMatchReport>& per_clip,
                               const AggregateReport& aggregate) {
  json doc = json::object();
  for (size_t i = 0; i < clip_ids.size(); ++i) {
    doc[clip_ids[i]] = report_to_json(per_clip[i], /*include_pairs=*/true);
  }
  doc["pooled"] = report_to_json(aggregate.pooled, /*include_pairs=*/false);
  doc["macro"] = json{{"precision", round6(aggregate.macro_precision)},
                      {"recall", round6(aggregate.macro_recall)},
                      {"sequence_similarity", round6(aggregate.macro_similarity)}};
  return doc.dump(2) + "\n";
}

void write_report(const std::filesystem::path& path, const std::vector<std::string>& clip_ids,
                  const std::vector<IdMatchReport>& per_clip, const AggregateReport& aggregate) {
  write_text_file_atomic(path, render_report_json(clip_ids, per_clip, aggregate));
}

}  // namespace idtrace::metrics
