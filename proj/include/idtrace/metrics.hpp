#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "idtrace/assignment.hpp"
#include "idtrace/core.hpp"

namespace idtrace::gateway {
class Gateway;
}
namespace idtrace::prompts {
struct PromptTemplate;
}

namespace idtrace::metrics {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScoringError : std::runtime_error {
  ScoringError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_response(std::move(raw)) {}
  std::string raw_response;
};

// Unordered same-identity frame pairs with multiplicities. Keys are (a, b)
// with a < b; multiplicities accumulate across identities.
using PairMultiset = std::map<std::pair<int, int>, long long>;

PairMultiset decompose_pairs(const std::vector<core::IdSequence>& ids);

long long multiset_size(const PairMultiset& pairs);

// Multiset intersection size: sum over keys of min(count_a, count_b).
long long multiset_intersection_size(const PairMultiset& a, const PairMultiset& b);

// precision = TP / |pred pairs|, recall = TP / |gt pairs|. A ratio with a
// zero denominator is 1.0 when the other side's multiset is also empty and
// 0.0 otherwise.
std::pair<double, double> pair_precision_recall(const std::vector<core::IdSequence>& pred,
                                                const std::vector<core::IdSequence>& gt);

struct MatchingProblem {
  std::vector<core::IdSequence> left;   // predicted (U)
  std::vector<core::IdSequence> right;  // ground truth (V)
  WeightMatrix weights;                 // |intersection of frame lists|
};

MatchingProblem build_matching_problem(const std::vector<core::IdSequence>& pred,
                                       const std::vector<core::IdSequence>& gt);

// Optimal-assignment overlap normalized by the total ground-truth appearance
// count. Throws MetricError("undefined: empty ground truth") when gt is empty.
double sequence_similarity(const std::vector<core::IdSequence>& pred,
                           const std::vector<core::IdSequence>& gt);

struct MatchedPair {
  std::string pred_label;
  std::string gt_label;
  long long weight = 0;
};

// Raw counts backing one clip's scores; pooling sums these.
struct ClipCounts {
  long long true_positive_pairs = 0;
  long long pred_pairs = 0;
  long long gt_pairs = 0;
  long long matched_weight = 0;
  long long gt_total = 0;  // sum of ground-truth sequence lengths
};

struct IdMatchReport {
  double precision = 0.0;
  double recall = 0.0;
  double sequence_similarity = 0.0;
  std::vector<MatchedPair> matched_pairs;
  ClipCounts counts;
};

IdMatchReport evaluate_clip(const std::vector<core::IdSequence>& pred,
                            const std::vector<core::IdSequence>& gt);

struct AggregateReport {
  IdMatchReport pooled;  // micro scores from summed counts
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_similarity = 0.0;
  size_t clip_count = 0;
};

// Requires at least one report.
AggregateReport aggregate_reports(const std::vector<IdMatchReport>& per_clip);

// Text -> fixed-dimension vector. The gateway adapter and the one-hot mock
// both implement this.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

struct CoverageInput {
  std::vector<std::string> ground_segments;
  std::vector<std::string> predicted_sub_sentences;
  double threshold = 0.7;  // rho
};

// Fraction of ground segments whose best cosine match among the predicted
// sub-sentences reaches the threshold.
double text_coverage(const CoverageInput& input, Embedder& embedder);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Asks the judge model to score `prediction` against `ground_truth` on the
// 0-10 rubric; parses the first number of the reply. One corrective re-ask,
// then ScoringError carrying the raw response.
double gpt_score(const std::string& prediction, const std::string& ground_truth,
                 gateway::Gateway& judge_gateway, const prompts::PromptTemplate& rubric);

// Report file: {"<clip_id>": {...}, "pooled": {...}, "macro": {...}} with
// numbers rounded to 6 decimals for golden-file stability.
std::string render_report_json(const std::vector<std::string>& clip_ids,
                               const std::vector<IdMatchReport>& per_clip,
                               const AggregateReport& aggregate);
void write_report(const std::filesystem::path& path, const std::vector<std::string>& clip_ids,
                  const std::vector<IdMatchReport>& per_clip, const AggregateReport& aggregate);

double round6(double value);

}  // namespace idtrace::metrics
