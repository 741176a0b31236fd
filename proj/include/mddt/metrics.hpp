#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mddt/common.hpp"

namespace mddt::metrics {

// ---- classification ---------------------------------------------------------

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// MDD is the positive class. An unparseable answer is always counted as an
/// error: FN on a positive case, FP on a negative one.
ConfusionCounts confusion(std::span<const Label> truth, std::span<const Answer> predicted);

/// nullopt marks a rate whose denominator is zero.
using Rate = std::optional<double>;

struct ClassificationMetrics {
  Rate acc;
  Rate f1;
  Rate spe;
  Rate sens;
  Rate ppv;
  Rate npv;
};

ClassificationMetrics classification_metrics(const ConfusionCounts& counts);

/// Harmonic mean of precision and recall; nullopt when both are zero.
Rate f1_score(double ppv, double sens);

// ---- ROC / AUC --------------------------------------------------------------

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are called positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

/// Labels are 1 (positive) or 0. Throws DomainError unless both classes occur.
double auc(std::span<const int> labels, std::span<const double> scores);
RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  double covariance = 0.0;
  double variance = 0.0;  // of auc_a - auc_b
  double z = 0.0;
  double p_value = 1.0;
};

/// Paired DeLong comparison of two scorings of the same cases.
DelongResult delong_test(std::span<const int> labels, std::span<const double> scores_a,
                         std::span<const double> scores_b);

// ---- text -------------------------------------------------------------------

/// A named, versioned tokenizer.
struct Tokenizer {
  std::string name;
  std::function<std::vector<std::string>(std::string_view)> split;
};

/// Splits on whitespace only.
const Tokenizer& whitespace_tokenizer();
/// Lower-cased runs of letters/digits; every other visible character is a
/// token of its own. Used for the overlap scores.
const Tokenizer& word_tokenizer();

struct TextOverlapScores {
  double bleu = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double avg_tokens = 0.0;  // hypothesis length under the word tokenizer
};

/// Clipped n-gram precision of hyp against the references; nullopt when hyp
/// has no n-grams of that order.
std::optional<double> modified_precision(std::span<const std::string> hyp,
                                         std::span<const std::vector<std::string>> refs, int n);
/// BLEU-4, uniform weights, brevity penalty against the closest reference length.
double bleu(std::span<const std::string> hyp, std::span<const std::vector<std::string>> refs);
/// LCS-based F1, best over references.
double rouge_l(std::span<const std::string> hyp, std::span<const std::vector<std::string>> refs);
/// Exact unigram matching with a fragmentation penalty, best over references.
double meteor(std::span<const std::string> hyp, std::span<const std::vector<std::string>> refs);

/// Throws DomainError when references is empty. An empty hypothesis scores 0.
TextOverlapScores text_overlap(std::string_view hypothesis,
                               std::span<const std::string> references);

/// Mean token count; nullopt for an empty set.
std::optional<double> mean_tokens(std::span<const std::string> outputs, const Tokenizer& tokenizer);

// ---- reports ----------------------------------------------------------------

struct TierRow {
  std::string tier;
  std::size_t n = 0;
  Rate accuracy;
  Rate f1;
  std::optional<double> avg_tokens;
};

/// One row of a tier comparison from raw responses and their truth.
TierRow tier_row(std::string tier, std::span<const std::string> responses,
                 std::span<const Label> truth, const Tokenizer& tokenizer);

struct MethodRow {
  std::string method;
  ConfusionCounts counts;
  ClassificationMetrics metrics;
  std::optional<double> auc;
};

MethodRow method_row(std::string method, std::span<const Label> truth,
                     std::span<const Answer> predicted, std::span<const double> scores);

struct EvalReport {
  std::vector<MethodRow> methods;
  std::vector<TierRow> tiers;
  std::optional<DelongResult> delong;  // first method against the second
  std::string delong_pair;
};

nlohmann::json to_json(const MethodRow& row);
nlohmann::json to_json(const TierRow& row);
nlohmann::json to_json(const DelongResult& result);
nlohmann::json to_json(const EvalReport& report);

std::string roc_csv(const RocCurve& curve);

}  // namespace mddt::metrics
