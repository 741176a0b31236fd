#include "mddt/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "mddt/oracle.hpp"
#include "mddt/stats.hpp"

namespace mddt::metrics {

namespace {

Rate ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_scores(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw DomainError(fmt::format("{} labels but {} scores", labels.size(), scores.size()));
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw DomainError(fmt::format("score {} is not finite", i));
    pos += static_cast<std::size_t>(labels[i]);
  }
  if (pos == 0 || pos == labels.size()) {
    throw DomainError("AUC needs both positive and negative cases");
  }
}

struct Placements {
  double auc = 0.0;
  std::vector<double> v10;  // per positive: share of negatives it outscores
  std::vector<double> v01;  // per negative: share of positives outscoring it
};

// Placement values from three midrank passes.
Placements placements(std::span<const int> labels, std::span<const double> scores) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());
  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  const auto r_all = stats::midranks(all);
  const auto r_pos = stats::midranks(pos);
  const auto r_neg = stats::midranks(neg);
  Placements out;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    rank_sum += r_all[i];
    out.v10.push_back((r_all[i] - r_pos[i]) / n);
  }
  for (std::size_t j = 0; j < neg.size(); ++j) {
    out.v01.push_back(1.0 - (r_all[pos.size() + j] - r_neg[j]) / m);
  }
  out.auc = (rank_sum - m * (m + 1.0) / 2.0) / (m * n);
  return out;
}

double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1.0);
}

bool word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<Ngram, std::size_t> out;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    ++out[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                tokens.begin() + static_cast<std::ptrdiff_t>(i + un))];
  }
  return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double meteor_single(std::span<const std::string> hyp, std::span<const std::string> ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  std::vector<bool> used(ref.size(), false);
  // ref position matched by each hyp token, or npos
  constexpr auto npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> align(hyp.size(), npos);
  std::size_t last = npos;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    std::size_t pick = npos;
    // keep runs together when the next reference token matches
    if (last != npos && last + 1 < ref.size() && !used[last + 1] && ref[last + 1] == hyp[i]) {
      pick = last + 1;
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == hyp[i]) {
          pick = j;
          break;
        }
      }
    }
    align[i] = pick;
    if (pick != npos) used[pick] = true;
    last = pick;
  }
  double matches = 0.0;
  double chunks = 0.0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (align[i] == npos) continue;
    matches += 1.0;
    const bool continues = i > 0 && align[i - 1] != npos && align[i - 1] + 1 == align[i];
    if (!continues) chunks += 1.0;
  }
  if (matches == 0.0) return 0.0;
  const double p = matches / static_cast<double>(hyp.size());
  const double r = matches / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(chunks / matches, 3.0);
  return fmean * (1.0 - penalty);
}

void check_refs(std::span<const std::vector<std::string>> refs) {
  if (refs.empty()) throw DomainError("text overlap needs at least one reference");
}

}  // namespace

ConfusionCounts confusion(std::span<const Label> truth, std::span<const Answer> predicted) {
  if (truth.size() != predicted.size()) {
    throw DomainError(fmt::format("{} labels but {} predictions", truth.size(), predicted.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool positive = truth[i] == Label::MDD;
    const bool correct = matches(predicted[i], truth[i]);
    if (positive) {
      (correct ? c.tp : c.fn) += 1;
    } else {
      (correct ? c.tn : c.fp) += 1;
    }
  }
  return c;
}

Rate f1_score(double ppv, double sens) {
  if (ppv + sens <= 0.0) return std::nullopt;
  return 2.0 * ppv * sens / (ppv + sens);
}

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  ClassificationMetrics m;
  m.acc = ratio(c.tp + c.tn, c.total());
  m.sens = ratio(c.tp, c.tp + c.fn);
  m.spe = ratio(c.tn, c.tn + c.fp);
  m.ppv = ratio(c.tp, c.tp + c.fp);
  m.npv = ratio(c.tn, c.tn + c.fn);
  // 2TP / (2TP + FP + FN), defined whenever any positive is predicted or present
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

double auc(std::span<const int> labels, std::span<const double> scores) {
  check_scores(labels, scores);
  return placements(labels, scores).auc;
}

RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores) {
  check_scores(labels, scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double m = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n = static_cast<double>(labels.size()) - m;
  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (labels[order[k]] ? tp : fp) += 1.0;
      ++k;
    }
    curve.points.push_back({fp / n, tp / m, s});
  }
  curve.auc = placements(labels, scores).auc;
  return curve;
}

DelongResult delong_test(std::span<const int> labels, std::span<const double> scores_a,
                         std::span<const double> scores_b) {
  check_scores(labels, scores_a);
  check_scores(labels, scores_b);
  const auto a = placements(labels, scores_a);
  const auto b = placements(labels, scores_b);
  const double m = static_cast<double>(a.v10.size());
  const double n = static_cast<double>(a.v01.size());
  DelongResult r;
  r.auc_a = a.auc;
  r.auc_b = b.auc;
  r.var_a = sample_cov(a.v10, a.v10) / m + sample_cov(a.v01, a.v01) / n;
  r.var_b = sample_cov(b.v10, b.v10) / m + sample_cov(b.v01, b.v01) / n;
  r.covariance = sample_cov(a.v10, b.v10) / m + sample_cov(a.v01, b.v01) / n;
  r.variance = std::max(0.0, r.var_a + r.var_b - 2.0 * r.covariance);
  const double diff = r.auc_a - r.auc_b;
  if (r.variance <= 0.0) {
    if (diff == 0.0) {
      r.z = 0.0;
      r.p_value = 1.0;
    } else {
      r.z = diff > 0.0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  r.z = diff / std::sqrt(r.variance);
  r.p_value = stats::two_sided_normal_p(r.z);
  return r;
}

const Tokenizer& whitespace_tokenizer() {
  static const Tokenizer t{"whitespace-v1", [](std::string_view text) {
                             std::vector<std::string> out;
                             std::size_t i = 0;
                             while (i < text.size()) {
                               while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
                               const std::size_t start = i;
                               while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
                               if (i > start) out.emplace_back(text.substr(start, i - start));
                             }
                             return out;
                           }};
  return t;
}

const Tokenizer& word_tokenizer() {
  static const Tokenizer t{"words-v1", [](std::string_view text) {
                             std::vector<std::string> out;
                             std::size_t i = 0;
                             while (i < text.size()) {
                               const auto c = static_cast<unsigned char>(text[i]);
                               if (std::isspace(c)) {
                                 ++i;
                               } else if (word_byte(c)) {
                                 std::string w;
                                 while (i < text.size() && word_byte(static_cast<unsigned char>(text[i]))) {
                                   w += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
                                   ++i;
                                 }
                                 out.push_back(std::move(w));
                               } else {
                                 out.emplace_back(1, text[i]);
                                 ++i;
                               }
                             }
                             return out;
                           }};
  return t;
}

std::optional<double> modified_precision(std::span<const std::string> hyp,
                                         std::span<const std::vector<std::string>> refs, int n) {
  check_refs(refs);
  if (n < 1) throw DomainError("n-gram order must be >= 1");
  const auto counts = ngram_counts(hyp, n);
  if (counts.empty()) return std::nullopt;
  std::map<Ngram, std::size_t> max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
  }
  std::size_t clipped = 0;
  std::size_t total = 0;
  for (const auto& [g, k] : counts) {
    const auto it = max_ref.find(g);
    clipped += std::min(k, it == max_ref.end() ? 0 : it->second);
    total += k;
  }
  return static_cast<double>(clipped) / static_cast<double>(total);
}

double bleu(std::span<const std::string> hyp, std::span<const std::vector<std::string>> refs) {
  check_refs(refs);
  if (hyp.empty()) return 0.0;
  // orders longer than the hypothesis are left out of the geometric mean
  const int orders = static_cast<int>(std::min<std::size_t>(4, hyp.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= orders; ++n) {
    const double p = *modified_precision(hyp, refs, n);
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  // closest reference length, shorter wins ties
  const double c = static_cast<double>(hyp.size());
  double r = static_cast<double>(refs.front().size());
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / orders), 0.0, 1.0);
}

double rouge_l(std::span<const std::string> hyp, std::span<const std::vector<std::string>> refs) {
  check_refs(refs);
  double best = 0.0;
  for (const auto& ref : refs) {
    if (hyp.empty() || ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(hyp, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(hyp.size());
    const double r = lcs / static_cast<double>(ref.size());
    best = std::max(best, 2.0 * p * r / (p + r));
  }
  return best;
}

double meteor(std::span<const std::string> hyp, std::span<const std::vector<std::string>> refs) {
  check_refs(refs);
  double best = 0.0;
  for (const auto& ref : refs) best = std::max(best, meteor_single(hyp, ref));
  return best;
}

TextOverlapScores text_overlap(std::string_view hypothesis, std::span<const std::string> references) {
  if (references.empty()) throw DomainError("text overlap needs at least one reference");
  const auto& tok = word_tokenizer();
  const auto hyp = tok.split(hypothesis);
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(tok.split(r));
  TextOverlapScores s;
  s.avg_tokens = static_cast<double>(hyp.size());
  if (hyp.empty()) return s;
  s.bleu = bleu(hyp, refs);
  s.rouge_l = rouge_l(hyp, refs);
  s.meteor = meteor(hyp, refs);
  return s;
}

std::optional<double> mean_tokens(std::span<const std::string> outputs, const Tokenizer& tokenizer) {
  if (outputs.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& o : outputs) total += static_cast<double>(tokenizer.split(o).size());
  return total / static_cast<double>(outputs.size());
}

TierRow tier_row(std::string tier, std::span<const std::string> responses,
                 std::span<const Label> truth, const Tokenizer& tokenizer) {
  if (responses.size() != truth.size()) {
    throw DomainError(fmt::format("{} responses but {} labels", responses.size(), truth.size()));
  }
  std::vector<Answer> predicted;
  for (const auto& r : responses) predicted.push_back(oracle::extract_answer(r));
  const auto m = classification_metrics(confusion(truth, predicted));
  return {std::move(tier), responses.size(), m.acc, m.f1, mean_tokens(responses, tokenizer)};
}

MethodRow method_row(std::string method, std::span<const Label> truth,
                     std::span<const Answer> predicted, std::span<const double> scores) {
  MethodRow row;
  row.method = std::move(method);
  row.counts = confusion(truth, predicted);
  row.metrics = classification_metrics(row.counts);
  std::vector<int> labels;
  for (auto t : truth) labels.push_back(t == Label::MDD ? 1 : 0);
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                    std::count(labels.begin(), labels.end(), 0) > 0;
  if (!scores.empty() && both) row.auc = auc(labels, scores);
  return row;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const MethodRow& row) {
  const auto& m = row.metrics;
  return {{"method", row.method},
          {"ACC", opt(m.acc)},
          {"F1", opt(m.f1)},
          {"AUC", opt(row.auc)},
          {"SPE", opt(m.spe)},
          {"SENS", opt(m.sens)},
          {"PPV", opt(m.ppv)},
          {"NPV", opt(m.npv)},
          {"counts", {{"TP", row.counts.tp}, {"FP", row.counts.fp}, {"TN", row.counts.tn}, {"FN", row.counts.fn}}}};
}

nlohmann::json to_json(const TierRow& row) {
  return {{"method", row.tier},
          {"n", row.n},
          {"Accuracy", opt(row.accuracy)},
          {"F1-Score", opt(row.f1)},
          {"Average Tokens", opt(row.avg_tokens)}};
}

nlohmann::json to_json(const DelongResult& r) {
  const auto finite = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"auc_a", r.auc_a},       {"auc_b", r.auc_b}, {"var_a", r.var_a},
          {"var_b", r.var_b},       {"covariance", r.covariance},
          {"variance", r.variance}, {"z", finite(r.z)}, {"p_value", r.p_value}};
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["methods"] = nlohmann::json::array();
  for (const auto& m : report.methods) j["methods"].push_back(to_json(m));
  j["tiers"] = nlohmann::json::array();
  for (const auto& t : report.tiers) j["tiers"].push_back(to_json(t));
  if (report.delong) {
    j["delong"] = to_json(*report.delong);
    j["delong"]["pair"] = report.delong_pair;
  } else {
    j["delong"] = nullptr;
  }
  return j;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : curve.points) {
    out += fmt::format("{:.10g},{:.10g},{}\n", p.fpr, p.tpr,
                       std::isfinite(p.threshold) ? fmt::format("{:.10g}", p.threshold) : "inf");
  }
  return out;
}

}  // namespace mddt::metrics
