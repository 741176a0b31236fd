#include <gtest/gtest.h>

#include <cmath>

#include "mddt/common.hpp"
#include "mddt/metrics.hpp"
#include "unit/fixtures.hpp"
#include "unit/oracles.hpp"

namespace mddt::metrics {
namespace {

std::vector<std::string> words(std::string_view s) { return whitespace_tokenizer().split(s); }

TEST(Classification, SymmetricMatrix) {
  const auto m = classification_metrics({8, 2, 8, 2});
  EXPECT_DOUBLE_EQ(*m.acc, 0.8);
  EXPECT_DOUBLE_EQ(*m.f1, 0.8);
  EXPECT_DOUBLE_EQ(*m.sens, 0.8);
  EXPECT_DOUBLE_EQ(*m.spe, 0.8);
  EXPECT_DOUBLE_EQ(*m.ppv, 0.8);
  EXPECT_DOUBLE_EQ(*m.npv, 0.8);
}

TEST(Classification, ZeroDenominatorsAreUndefined) {
  const auto m = classification_metrics({0, 3, 5, 0});
  EXPECT_FALSE(m.sens.has_value());
  EXPECT_DOUBLE_EQ(*m.ppv, 0.0);
  EXPECT_DOUBLE_EQ(*m.spe, 5.0 / 8.0);
  const auto empty = classification_metrics({});
  EXPECT_FALSE(empty.acc.has_value());
  EXPECT_FALSE(empty.f1.has_value());
  EXPECT_FALSE(f1_score(0.0, 0.0).has_value());
}

TEST(Classification, F1AgreesWithPrecisionRecallForm) {
  for (std::size_t tp = 1; tp < 20; tp += 3) {
    for (std::size_t fp = 0; fp < 10; fp += 2) {
      for (std::size_t fn = 0; fn < 10; fn += 3) {
        const auto m = classification_metrics({tp, fp, 7, fn});
        EXPECT_NEAR(*m.f1, *f1_score(*m.ppv, *m.sens), 1e-12);
      }
    }
  }
}

TEST(Classification, UnparseableIsAlwaysAnError) {
  const std::vector<Label> truth = {Label::MDD, Label::HC, Label::MDD, Label::HC};
  const std::vector<Answer> pred = {Answer::Unparseable, Answer::Unparseable, Answer::MDD, Answer::HC};
  EXPECT_EQ(confusion(truth, pred), (ConfusionCounts{1, 1, 1, 1}));
  EXPECT_THROW(confusion(truth, std::span(pred).first(2)), DomainError);
}

TEST(Classification, PublishedTableF1IsConsistent) {
  for (const auto& row : testing::kMethodTable) {
    EXPECT_NEAR(*f1_score(row.ppv, row.sens), row.f1, 0.01) << row.method;
  }
  EXPECT_NEAR(*f1_score(0.6438, 0.6596), 0.6516, 5e-5);
}

TEST(Auc, WorkedCase) {
  const std::vector<int> y = {1, 0, 1, 0};
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.2};
  EXPECT_EQ(auc(y, s), 0.75);
}

TEST(Auc, SeparatedAndTied) {
  EXPECT_EQ(auc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.2, 0.3, 0.4}), 1.0);
  EXPECT_EQ(auc(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.5, 0.5, 0.5, 0.5}), 0.5);
  EXPECT_THROW(auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), DomainError);
  EXPECT_THROW(auc(std::vector<int>{1, 2}, std::vector<double>{0.1, 0.2}), DomainError);
  EXPECT_THROW(auc(std::vector<int>{1, 0}, std::vector<double>{0.1}), DomainError);
}

TEST(Auc, EqualsPairCountingWithTies) {
  for (std::uint64_t s = 0; s < 300; ++s) {
    const std::size_t n = 2 + derive_seed(s, "n") % 199;
    std::vector<int> y(n);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 1 ? 1 : (i < 2 ? 0 : static_cast<int>(derive_seed(s, 2 * i) % 2));
      // coarse grid forces ties
      x[i] = static_cast<double>(derive_seed(s, 2 * i + 1) % (1 + s % 12));
    }
    const double original = auc(y, x);
    EXPECT_EQ(original, testing::brute_force_auc(y, x)) << "case " << s;
    // flipping labels complements the AUC
    for (auto& v : y) v = 1 - v;
    EXPECT_NEAR(auc(y, x), 1.0 - original, 1e-12);
  }
}

TEST(Roc, MonotoneWithEndpoints) {
  const std::vector<int> y = {1, 0, 1, 0, 1, 1, 0};
  const std::vector<double> s = {0.9, 0.8, 0.8, 0.2, 0.5, 0.1, 0.1};
  const auto c = roc_curve(y, s);
  ASSERT_GE(c.points.size(), 2u);
  EXPECT_EQ(c.points.front().fpr, 0.0);
  EXPECT_EQ(c.points.front().tpr, 0.0);
  EXPECT_EQ(c.points.back().fpr, 1.0);
  EXPECT_EQ(c.points.back().tpr, 1.0);
  double area = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
    EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
    area += (c.points[i].fpr - c.points[i - 1].fpr) * (c.points[i].tpr + c.points[i - 1].tpr) / 2.0;
  }
  EXPECT_NEAR(area, c.auc, 1e-12);
  EXPECT_EQ(c.auc, testing::brute_force_auc(y, s));
  const auto csv = roc_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fpr,tpr,threshold");
  EXPECT_NE(csv.find("0,0,inf"), std::string::npos);
}

TEST(Delong, SelfComparison) {
  const auto d = testing::simulate_paired(120, 3);
  const auto r = delong_test(d.labels, d.a, d.a);
  EXPECT_EQ(r.z, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Delong, SwapFlipsSign) {
  const auto d = testing::simulate_paired(150, 4);
  const auto ab = delong_test(d.labels, d.a, d.b);
  const auto ba = delong_test(d.labels, d.b, d.a);
  EXPECT_NEAR(ab.z, -ba.z, 1e-12);
  EXPECT_NEAR(ab.p_value, ba.p_value, 1e-12);
  EXPECT_GT(ab.z, 0.0);
  EXPECT_EQ(ab.z > 0.0, ab.auc_a > ab.auc_b);
  EXPECT_GE(ab.p_value, 0.0);
  EXPECT_LE(ab.p_value, 1.0);
}

TEST(Delong, VarianceMatchesBootstrap) {
  const auto d = testing::simulate_paired(200, 5);
  const auto r = delong_test(d.labels, d.a, d.b);
  const double boot = testing::bootstrap_delta_variance(d, 10000, 6);
  EXPECT_NEAR(r.variance / boot, 1.0, 0.10) << "delong " << r.variance << " bootstrap " << boot;
}

TEST(Delong, SingleAucVarianceMatchesClosedFormForSeparatedData) {
  // perfectly separated: every placement is 1 or 0, so both variances vanish
  const std::vector<int> y = {1, 1, 0, 0};
  const std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
  const auto r = delong_test(y, s, s);
  EXPECT_EQ(r.var_a, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Text, Tokenizers) {
  EXPECT_EQ(words("hello world").size(), 2u);
  EXPECT_EQ(words("  a\tb\n c ").size(), 3u);
  EXPECT_EQ(word_tokenizer().split("Step 1: BMI is 24.5."),
            (std::vector<std::string>{"step", "1", ":", "bmi", "is", "24", ".", "5", "."}));
  EXPECT_EQ(*mean_tokens(std::vector<std::string>{"hello world"}, whitespace_tokenizer()), 2.0);
  EXPECT_FALSE(mean_tokens(std::vector<std::string>{}, whitespace_tokenizer()).has_value());
}

TEST(Text, ClippedUnigramPrecision) {
  const std::vector<std::vector<std::string>> refs = {words("the cat sat")};
  EXPECT_DOUBLE_EQ(*modified_precision(words("the the the the"), refs, 1), 0.25);
  EXPECT_FALSE(modified_precision(words("the"), refs, 2).has_value());
}

TEST(Text, IdentityAndDisjoint) {
  const std::vector<std::string> ref = {"the participant sleeps six hours per night"};
  const auto same = text_overlap(ref[0], ref);
  EXPECT_DOUBLE_EQ(same.bleu, 1.0);
  EXPECT_DOUBLE_EQ(same.rouge_l, 1.0);
  EXPECT_GT(same.meteor, 0.99);
  EXPECT_EQ(same.avg_tokens, 7.0);
  const auto none = text_overlap("alpha beta gamma delta", ref);
  EXPECT_EQ(none.bleu, 0.0);
  EXPECT_EQ(none.rouge_l, 0.0);
  EXPECT_EQ(none.meteor, 0.0);
  const auto empty = text_overlap("", ref);
  EXPECT_EQ(empty.bleu + empty.rouge_l + empty.meteor, 0.0);
  EXPECT_THROW(text_overlap("x", std::vector<std::string>{}), DomainError);
  EXPECT_DOUBLE_EQ(text_overlap("short", std::vector<std::string>{"short"}).bleu, 1.0);
}

TEST(Text, HandComputedScores) {
  const std::vector<std::vector<std::string>> refs = {words("a b c d e f")};
  const auto hyp = words("a b x d e f");
  // p1 5/6, p2 3/5, p3 1/4, p4 0/3
  EXPECT_EQ(bleu(hyp, refs), 0.0);
  const auto hyp2 = words("a b c d x f");
  // p1 5/6, p2 3/5, p3 2/4, p4 1/3, equal lengths
  EXPECT_NEAR(bleu(hyp2, refs), std::pow(5.0 / 6 * 3.0 / 5 * 2.0 / 4 * 1.0 / 3, 0.25), 1e-12);
  // LCS 5 of 6 on both sides
  EXPECT_NEAR(rouge_l(hyp2, refs), 5.0 / 6.0, 1e-12);
  // 5 matches in 2 chunks: Fmean 5/6, penalty 0.5 (2/5)^3
  EXPECT_NEAR(meteor(hyp2, refs), 5.0 / 6.0 * (1.0 - 0.5 * std::pow(0.4, 3)), 1e-12);
  // brevity penalty
  const auto shorter = words("a b c d");
  EXPECT_NEAR(bleu(shorter, refs), std::exp(1.0 - 6.0 / 4.0), 1e-12);
}

TEST(Text, ScoresStayInUnitInterval) {
  const std::vector<std::string> pool = {"a", "b", "c", "the", "is", "."};
  for (std::uint64_t s = 0; s < 300; ++s) {
    std::string h;
    std::string r;
    for (std::size_t i = 0; i < derive_seed(s, "h") % 12; ++i) h += pool[derive_seed(s, i) % 6] + " ";
    for (std::size_t i = 0; i < 1 + derive_seed(s, "r") % 12; ++i) r += pool[derive_seed(s, 100 + i) % 6] + " ";
    const auto t = text_overlap(h, std::vector<std::string>{r});
    for (double v : {t.bleu, t.rouge_l, t.meteor}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Report, TierRowAndJson) {
  const std::vector<std::string> responses = {"<answer>MDD</answer>", "<answer>HC</answer>", "no idea"};
  const std::vector<Label> truth = {Label::MDD, Label::MDD, Label::HC};
  const auto row = tier_row("direct", responses, truth, whitespace_tokenizer());
  EXPECT_EQ(row.n, 3u);
  EXPECT_NEAR(*row.accuracy, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(*row.avg_tokens, 4.0 / 3.0, 1e-12);

  const std::vector<Answer> pred = {Answer::MDD, Answer::HC, Answer::HC};
  const std::vector<double> scores = {0.9, 0.4, 0.2};
  EvalReport report;
  report.methods.push_back(method_row("toy", truth, pred, scores));
  report.tiers.push_back(row);
  const std::vector<int> y = {1, 1, 0};
  report.delong = delong_test(y, scores, scores);
  report.delong_pair = "toy vs toy";
  const auto j = to_json(report);
  for (const char* key : {"ACC", "F1", "AUC", "SPE", "SENS", "PPV", "NPV"}) {
    EXPECT_TRUE(j["methods"][0].contains(key)) << key;
  }
  EXPECT_EQ(j["methods"][0]["AUC"].get<double>(), 1.0);
  EXPECT_TRUE(j["tiers"][0].contains("Average Tokens"));
  EXPECT_EQ(j["delong"]["p_value"].get<double>(), 1.0);
  // undefined rates serialize as null, never NaN
  const auto undefined = to_json(method_row("empty", std::vector<Label>{Label::HC},
                                            std::vector<Answer>{Answer::HC}, std::vector<double>{}));
  EXPECT_TRUE(undefined["SENS"].is_null());
  EXPECT_TRUE(undefined["AUC"].is_null());
}

}  // namespace
}  // namespace mddt::metrics
