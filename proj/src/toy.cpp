#include "mddt/toy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace mddt::toy {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w = {"<bos>",   "<eos>", "<think>", "</think>",  "<answer>",
                                  "</answer>", "MDD",  "HC",      "risk_high", "risk_low"};
    for (const auto name : cue_names()) {
      w.push_back(std::string(name));
      w.push_back(std::string(name) + "_no");
    }
    return w;
  }();
  return words;
}

int token_id(std::string_view word) {
  const auto& v = vocabulary();
  const auto it = std::find(v.begin(), v.end(), word);
  if (it == v.end()) throw DomainError(fmt::format("'{}' is not in the toy vocabulary", word));
  return static_cast<int>(it - v.begin());
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (t < 0 || t >= kVocabSize) throw DomainError(fmt::format("token id {} out of range", t));
    if (!out.empty()) out += ' ';
    out += vocabulary()[static_cast<std::size_t>(t)];
  }
  return out;
}

policy::PolicyShape default_shape(int dim) { return {kVocabSize, dim, 32}; }

std::vector<int> encode_prompt(const CueVector& cues) {
  std::vector<int> p = {kBos};
  for (std::size_t k = 0; k < kCueCount; ++k) {
    p.push_back(kFirstCue + 2 * static_cast<int>(k) + (cues[k] ? 0 : 1));
  }
  return p;
}

std::vector<int> target_tokens(Label label) {
  const bool mdd = label == Label::MDD;
  return {kThink, mdd ? kRiskHigh : kRiskLow, kThinkEnd, kAnswer, mdd ? kMdd : kHc, kAnswerEnd,
          kEos};
}

policy::TokenSeq make_example(const CueVector& cues, Label label) {
  policy::TokenSeq seq{encode_prompt(cues), static_cast<std::size_t>(kPromptLength)};
  const auto target = target_tokens(label);
  seq.tokens.insert(seq.tokens.end(), target.begin(), target.end());
  return seq;
}

namespace {

bool scaffold_token(int t) {
  return t == kBos || t == kEos || t == kThink || t == kThinkEnd || t == kAnswer ||
         t == kAnswerEnd || t == kMdd || t == kHc;
}

}  // namespace

bool well_formed(std::span<const int> c) {
  // <think> x+ </think> <answer> L </answer> <eos>
  if (c.size() < 7 || c[0] != kThink) return false;
  std::size_t i = 1;
  while (i < c.size() && !scaffold_token(c[i])) ++i;
  if (i == 1 || c.size() - i != 5) return false;
  return c[i] == kThinkEnd && c[i + 1] == kAnswer && (c[i + 2] == kMdd || c[i + 2] == kHc) &&
         c[i + 3] == kAnswerEnd && c[i + 4] == kEos;
}

Answer extract_answer(std::span<const int> c) {
  Answer found = Answer::Unparseable;
  for (std::size_t i = 0; i + 2 < c.size(); ++i) {
    if (c[i] == kAnswer && c[i + 2] == kAnswerEnd) {
      if (c[i + 1] == kMdd) found = Answer::MDD;
      if (c[i + 1] == kHc) found = Answer::HC;
    }
  }
  return found;
}

Label LinearRule::operator()(const CueVector& cues) const {
  int score = 0;
  for (std::size_t k = 0; k < kCueCount; ++k) score += cues[k] ? weights[k] : 0;
  return score >= threshold ? Label::MDD : Label::HC;
}

LinearRule default_rule() { return {{2, 3, 3, 2, 1, 1, 1, 1}, 4}; }

std::vector<ToyQuery> linear_rule_task(std::size_t n, std::uint64_t seed, const LinearRule& rule) {
  std::vector<ToyQuery> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ToyQuery q;
    q.id = fmt::format("T{:06d}", i);
    const auto s = derive_seed(seed, i);
    for (std::size_t k = 0; k < kCueCount; ++k) q.cues[k] = unit_interval(derive_seed(s, k)) < 0.3;
    q.truth = rule(q.cues);
    out.push_back(q);
  }
  return out;
}

ToyQuery query_from_qa(const QaPair& qa) { return {qa.id, cues_from_text(qa.narrative.text), qa.answer}; }

policy::TokenSeq sequence_from_sample(const reasoner::ReasoningSample& sample) {
  if (!reasoner::is_usable(sample.status)) {
    throw DomainError(fmt::format("sample '{}' is {} and cannot be used for training",
                                  sample.qa.id, reasoner::to_string(sample.status)));
  }
  const auto predicted = oracle::extract_answer(sample.path);
  if (predicted == Answer::Unparseable) {
    throw DomainError(fmt::format("sample '{}' has no final answer", sample.qa.id));
  }
  const Label label = predicted == Answer::MDD ? Label::MDD : Label::HC;
  return make_example(cues_from_text(sample.qa.narrative.text), label);
}

std::vector<policy::TokenSeq> sequences(std::span<const ToyQuery> queries) {
  std::vector<policy::TokenSeq> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(make_example(q.cues, q.truth));
  return out;
}

policy::PolicyParams base_policy(std::span<const ToyQuery> queries, std::uint64_t seed,
                                 const policy::PolicyShape& shape) {
  if (queries.empty()) throw DomainError("base_policy: no queries");
  std::vector<policy::TokenSeq> corpus;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Label coin =
        unit_interval(derive_seed(derive_seed(seed, "coin"), i)) < 0.5 ? Label::MDD : Label::HC;
    corpus.push_back(make_example(queries[i].cues, coin));
  }
  policy::SftConfig config;
  config.epochs = 10;
  config.lr = 0.05;
  config.batch_size = 32;
  config.seed = derive_seed(seed, "shuffle");
  config.optimizer = policy::OptimizerKind::Adam;
  return policy::train_sft(policy::PolicyParams::uniform(shape, derive_seed(seed, "init")), corpus,
                           config)
      .params;
}

Evaluation evaluate(const policy::PolicyParams& params, std::span<const ToyQuery> queries) {
  Evaluation ev;
  std::size_t correct = 0;
  std::size_t formatted = 0;
  for (const auto& q : queries) {
    const auto prompt = encode_prompt(q.cues);
    const auto out = policy::sample(params, prompt, kMaxNewTokens, 0.0, 0, kEos);
    const std::span<const int> cont(out.seq.tokens.data() + out.seq.split, out.seq.target_count());
    const Answer a = extract_answer(cont);
    ev.predicted.push_back(a);
    correct += matches(a, q.truth);
    formatted += well_formed(cont);
    const double lm = policy::log_prob(params, make_example(q.cues, Label::MDD));
    const double lh = policy::log_prob(params, make_example(q.cues, Label::HC));
    ev.score.push_back(1.0 / (1.0 + std::exp(lh - lm)));
    ev.truth.push_back(q.truth == Label::MDD ? 1 : 0);
  }
  if (!queries.empty()) {
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(queries.size());
    ev.format_rate = static_cast<double>(formatted) / static_cast<double>(queries.size());
  }
  return ev;
}

}  // namespace mddt::toy
