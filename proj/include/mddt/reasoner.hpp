#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mddt/narrative.hpp"
#include "mddt/oracle.hpp"

namespace mddt::reasoner {

struct PipelineConfig {
  int T = 4;  // generation attempts
  int N = 3;  // regenerations under the refined prompt
  PromptTier tier = PromptTier::ComplexCot;
  double generation_temperature = 0.7;
  double refine_temperature = 0.0;
  int max_tokens = 1024;
  std::uint64_t seed = 0;
  int workers = 4;

  void validate() const;
};

enum class SampleStatus { ValidGenerated, ValidRefined, FallbackOriginal, Discarded, Deferred };

std::string_view to_string(SampleStatus status);
SampleStatus parse_status(std::string_view text);
inline bool is_valid(SampleStatus s) {
  return s == SampleStatus::ValidGenerated || s == SampleStatus::ValidRefined;
}
/// Samples usable for training: valid ones plus refinement fallbacks.
inline bool is_usable(SampleStatus s) { return is_valid(s) || s == SampleStatus::FallbackOriginal; }

struct Attempts {
  int gen = 0;
  int refine = 0;
  bool operator==(const Attempts&) const = default;
};

struct ReasoningSample {
  QaPair qa;
  std::string path;  // oracle response: rationale and final answer tag
  Answer predicted = Answer::Unparseable;
  SampleStatus status = SampleStatus::Discarded;
  Attempts attempts;
  std::optional<std::string> refined_prompt;
  std::string note;  // audit trail, e.g. skipped refinement or transport error

  /// Prompt the path was produced under.
  std::string effective_prompt() const;
};

/// Up to T attempts at (P, q); the first whose extracted answer equals the
/// label is accepted. Transport failures mark the sample deferred.
ReasoningSample generate_path(const QaPair& qa, oracle::OracleClient& client,
                              const PipelineConfig& config);

/// Derives P* from (P, q, r) once, then regenerates under (P*, q) up to N
/// times. Requires status valid_generated; anything else throws DomainError.
ReasoningSample refine_path(ReasoningSample sample, oracle::OracleClient& client,
                            const PipelineConfig& config);

struct SynthesisReport {
  std::size_t total = 0;
  std::map<std::string, std::size_t> status_counts;
  std::vector<std::size_t> gen_attempt_histogram;     // index k: accepted on attempt k (0 unused)
  std::vector<std::size_t> refine_attempt_histogram;  // index k: refine attempts used
  std::size_t requeued = 0;
  double discard_rate = 0.0;  // discarded / (total - deferred)

  nlohmann::json to_json() const;
};

struct Corpus {
  std::vector<ReasoningSample> samples;  // same order as the input
  SynthesisReport report;
};

/// generate_path then refine_path for every pair, on config.workers threads.
/// Deferred samples get one more pass after the first sweep.
Corpus run_corpus(const std::vector<QaPair>& pairs, oracle::OracleClient& client,
                  const PipelineConfig& config);

SynthesisReport make_report(const std::vector<ReasoningSample>& samples, const PipelineConfig& config,
                            std::size_t requeued);

nlohmann::json to_json(const ReasoningSample& sample);
ReasoningSample sample_from_json(const nlohmann::json& j);
std::string to_jsonl(const std::vector<ReasoningSample>& samples);
std::vector<ReasoningSample> samples_from_jsonl(std::string_view text);

}  // namespace mddt::reasoner
