#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mddt/common.hpp"
#include "mddt/narrative.hpp"
#include "mddt/policy.hpp"
#include "mddt/reasoner.hpp"

// Toy diagnosis task: a closed word-level vocabulary in which the prompt is
// one token per clinical cue and the target is a short think-then-answer
// scaffold:
//   <bos> c1 .. c8 | <think> risk_high|risk_low </think> <answer> MDD|HC </answer> <eos>
namespace mddt::toy {

enum Token : int {
  kBos = 0,
  kEos,
  kThink,
  kThinkEnd,
  kAnswer,
  kAnswerEnd,
  kMdd,
  kHc,
  kRiskHigh,
  kRiskLow,
  kFirstCue,  // cue k present: kFirstCue + 2k, absent: kFirstCue + 2k + 1
};

inline constexpr int kVocabSize = kFirstCue + 2 * static_cast<int>(kCueCount);
inline constexpr int kPromptLength = 1 + static_cast<int>(kCueCount);
inline constexpr int kTargetLength = 7;
inline constexpr int kMaxNewTokens = 10;

const std::vector<std::string>& vocabulary();
int token_id(std::string_view word);
std::string detokenize(std::span<const int> tokens);

policy::PolicyShape default_shape(int dim = 16);

std::vector<int> encode_prompt(const CueVector& cues);
std::vector<int> target_tokens(Label label);
policy::TokenSeq make_example(const CueVector& cues, Label label);

/// Continuation grammar: <think> x+ </think> <answer> MDD|HC </answer> <eos>,
/// where x are tokens other than the scaffold and answer tokens.
bool well_formed(std::span<const int> continuation);
/// Last <answer> X </answer> with X a label; Unparseable otherwise.
Answer extract_answer(std::span<const int> continuation);

struct ToyQuery {
  std::string id;
  CueVector cues{};
  Label truth = Label::HC;
};

struct LinearRule {
  std::array<int, kCueCount> weights;
  int threshold;
  Label operator()(const CueVector& cues) const;
};

/// Weights of the default mock persona: sleeplessness 2, self-harm 3,
/// suicidal thoughts 3, unhappiness 2, the rest 1; MDD when the score >= 4.
LinearRule default_rule();

/// Random cue vectors labelled by the rule. Each cue is present with
/// probability 0.3.
std::vector<ToyQuery> linear_rule_task(std::size_t n, std::uint64_t seed,
                                       const LinearRule& rule = default_rule());

/// Cues read back from the narrative text; truth is the pair's label.
ToyQuery query_from_qa(const QaPair& qa);

/// Training sequence for a usable reasoning sample: prompt from the narrative
/// cues, think token from the oracle's final answer.
policy::TokenSeq sequence_from_sample(const reasoner::ReasoningSample& sample);

std::vector<policy::TokenSeq> sequences(std::span<const ToyQuery> queries);

/// Format-only warm start: SFT on the task prompts with labels drawn at
/// random, so the result follows the scaffold but ignores the cues.
policy::PolicyParams base_policy(std::span<const ToyQuery> queries, std::uint64_t seed,
                                 const policy::PolicyShape& shape = default_shape());

struct Evaluation {
  std::vector<Answer> predicted;
  std::vector<double> score;  // P(MDD completion) / (P(MDD) + P(HC) completions)
  std::vector<int> truth;     // 1 = MDD
  double accuracy = 0.0;
  double format_rate = 0.0;
};

/// Greedy decoding on every query.
Evaluation evaluate(const policy::PolicyParams& params, std::span<const ToyQuery> queries);

}  // namespace mddt::toy
