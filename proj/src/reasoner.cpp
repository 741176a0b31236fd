#include "mddt/reasoner.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

namespace mddt::reasoner {

using nlohmann::json;

void PipelineConfig::validate() const {
  if (T < 1) throw DomainError("pipeline: T must be >= 1");
  if (N < 0) throw DomainError("pipeline: N must be >= 0");
  if (workers < 1) throw DomainError("pipeline: workers must be >= 1");
  if (generation_temperature < 0.0 || refine_temperature < 0.0) {
    throw DomainError("pipeline: temperatures must be >= 0");
  }
}

std::string_view to_string(SampleStatus status) {
  switch (status) {
    case SampleStatus::ValidGenerated: return "valid_generated";
    case SampleStatus::ValidRefined: return "valid_refined";
    case SampleStatus::FallbackOriginal: return "fallback_original";
    case SampleStatus::Discarded: return "discarded";
    case SampleStatus::Deferred: return "deferred";
  }
  return "discarded";
}

SampleStatus parse_status(std::string_view text) {
  for (auto s : {SampleStatus::ValidGenerated, SampleStatus::ValidRefined,
                 SampleStatus::FallbackOriginal, SampleStatus::Discarded, SampleStatus::Deferred}) {
    if (to_string(s) == text) return s;
  }
  throw DomainError(fmt::format("unknown sample status '{}'", text));
}

std::string ReasoningSample::effective_prompt() const {
  if (status == SampleStatus::ValidRefined && refined_prompt) return *refined_prompt;
  return qa.prompt.render();
}

namespace {

oracle::CompletionOptions options(const PipelineConfig& config, double temperature,
                                  const std::string& id, std::string_view stage, int k) {
  return {temperature, config.max_tokens,
          derive_seed(config.seed, fmt::format("{}/{}/{}", id, stage, k))};
}

}  // namespace

ReasoningSample generate_path(const QaPair& qa, oracle::OracleClient& client,
                              const PipelineConfig& config) {
  config.validate();
  ReasoningSample sample;
  sample.qa = qa;
  const auto messages = oracle::diagnosis_messages(qa.prompt.render(), qa.question);
  for (int k = 1; k <= config.T; ++k) {
    oracle::ChatExchange exchange;
    try {
      exchange = client.complete(messages,
                                 options(config, config.generation_temperature, qa.id, "gen", k));
    } catch (const std::runtime_error& e) {
      // transport and protocol failures are infrastructure problems
      sample.status = SampleStatus::Deferred;
      sample.note = e.what();
      return sample;
    }
    sample.attempts.gen = k;
    sample.path = exchange.response;
    sample.predicted = oracle::extract_answer(exchange.response);
    if (matches(sample.predicted, qa.answer)) {
      sample.status = SampleStatus::ValidGenerated;
      return sample;
    }
  }
  sample.status = SampleStatus::Discarded;
  return sample;
}

ReasoningSample refine_path(ReasoningSample sample, oracle::OracleClient& client,
                            const PipelineConfig& config) {
  config.validate();
  if (sample.status != SampleStatus::ValidGenerated) {
    throw DomainError(fmt::format("refine_path: sample '{}' is {}", sample.qa.id,
                                  to_string(sample.status)));
  }
  if (config.N == 0) {
    sample.note = "refinement skipped (N=0)";
    return sample;
  }
  const std::string prompt = sample.qa.prompt.render();
  const ReasoningSample original = sample;
  std::string refined;
  try {
    refined = client
                  .complete(oracle::refinement_messages(prompt, sample.qa.question, sample.path),
                            options(config, config.refine_temperature, sample.qa.id, "derive", 0))
                  .response;
  } catch (const std::runtime_error& e) {
    sample.status = SampleStatus::Deferred;
    sample.note = e.what();
    return sample;
  }
  const auto messages = oracle::diagnosis_messages(refined, sample.qa.question);
  for (int k = 1; k <= config.N; ++k) {
    oracle::ChatExchange exchange;
    try {
      exchange = client.complete(
          messages, options(config, config.generation_temperature, sample.qa.id, "refine", k));
    } catch (const std::runtime_error& e) {
      ReasoningSample deferred = original;
      deferred.status = SampleStatus::Deferred;
      deferred.note = e.what();
      return deferred;
    }
    const Answer answer = oracle::extract_answer(exchange.response);
    if (matches(answer, sample.qa.answer)) {
      sample.status = SampleStatus::ValidRefined;
      sample.path = exchange.response;
      sample.predicted = answer;
      sample.refined_prompt = refined;
      sample.attempts.refine = k;
      return sample;
    }
  }
  ReasoningSample fallback = original;
  fallback.status = SampleStatus::FallbackOriginal;
  fallback.attempts.refine = config.N;
  return fallback;
}

namespace {

ReasoningSample process(const QaPair& qa, oracle::OracleClient& client,
                        const PipelineConfig& config) {
  auto sample = generate_path(qa, client, config);
  if (sample.status != SampleStatus::ValidGenerated) return sample;
  return refine_path(std::move(sample), client, config);
}

void sweep(const std::vector<QaPair>& pairs, const std::vector<std::size_t>& indices,
           std::vector<ReasoningSample>& out, oracle::OracleClient& client,
           const PipelineConfig& config) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next++;
      if (j >= indices.size()) return;
      const std::size_t i = indices[j];
      out[i] = process(pairs[i], client, config);
    }
  };
  const int n = std::min<int>(config.workers, static_cast<int>(std::max<std::size_t>(1, indices.size())));
  std::vector<std::jthread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
}

}  // namespace

Corpus run_corpus(const std::vector<QaPair>& pairs, oracle::OracleClient& client,
                  const PipelineConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.samples.resize(pairs.size());
  std::vector<std::size_t> all(pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  sweep(pairs, all, corpus.samples, client, config);

  std::vector<std::size_t> deferred;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (corpus.samples[i].status == SampleStatus::Deferred) deferred.push_back(i);
  }
  if (!deferred.empty()) sweep(pairs, deferred, corpus.samples, client, config);
  corpus.report = make_report(corpus.samples, config, deferred.size());
  return corpus;
}

SynthesisReport make_report(const std::vector<ReasoningSample>& samples,
                            const PipelineConfig& config, std::size_t requeued) {
  SynthesisReport r;
  r.total = samples.size();
  r.requeued = requeued;
  r.gen_attempt_histogram.assign(static_cast<std::size_t>(config.T) + 1, 0);
  r.refine_attempt_histogram.assign(static_cast<std::size_t>(config.N) + 1, 0);
  for (auto s : {SampleStatus::ValidGenerated, SampleStatus::ValidRefined,
                 SampleStatus::FallbackOriginal, SampleStatus::Discarded, SampleStatus::Deferred}) {
    r.status_counts[std::string(to_string(s))] = 0;
  }
  for (const auto& s : samples) {
    ++r.status_counts[std::string(to_string(s.status))];
    if (is_usable(s.status)) {
      ++r.gen_attempt_histogram.at(static_cast<std::size_t>(s.attempts.gen));
      ++r.refine_attempt_histogram.at(static_cast<std::size_t>(s.attempts.refine));
    }
  }
  const std::size_t decided = r.total - r.status_counts["deferred"];
  r.discard_rate = decided == 0 ? 0.0
                                : static_cast<double>(r.status_counts["discarded"]) /
                                      static_cast<double>(decided);
  return r;
}

json SynthesisReport::to_json() const {
  return {{"total", total},
          {"status_counts", status_counts},
          {"gen_attempt_histogram", gen_attempt_histogram},
          {"refine_attempt_histogram", refine_attempt_histogram},
          {"requeued", requeued},
          {"discard_rate", discard_rate}};
}

json to_json(const ReasoningSample& s) {
  json j = mddt::to_json(s.qa);
  if (s.refined_prompt) j["refined_prompt"] = *s.refined_prompt;
  j["path"] = s.path;
  j["predicted"] = to_string(s.predicted);
  j["status"] = to_string(s.status);
  j["attempts"] = {{"gen", s.attempts.gen}, {"refine", s.attempts.refine}};
  if (!s.note.empty()) j["note"] = s.note;
  return j;
}

ReasoningSample sample_from_json(const json& j) {
  ReasoningSample s;
  try {
    s.qa = qa_from_json(j);
    if (j.contains("refined_prompt")) s.refined_prompt = j["refined_prompt"].get<std::string>();
    s.path = j.at("path").get<std::string>();
    const auto predicted = j.at("predicted").get<std::string>();
    s.predicted = predicted == "MDD" ? Answer::MDD
                  : predicted == "HC" ? Answer::HC
                                      : Answer::Unparseable;
    s.status = parse_status(j.at("status").get<std::string>());
    s.attempts.gen = j.at("attempts").at("gen").get<int>();
    s.attempts.refine = j.at("attempts").at("refine").get<int>();
    s.note = j.value("note", "");
  } catch (const json::exception& e) {
    throw DomainError(std::string("reasoning sample: ") + e.what());
  }
  return s;
}

std::string to_jsonl(const std::vector<ReasoningSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

std::vector<ReasoningSample> samples_from_jsonl(std::string_view text) {
  std::vector<ReasoningSample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DomainError(fmt::format("corpus line {}: {}", line_no, e.what()));
    } catch (const DomainError& e) {
      throw DomainError(fmt::format("corpus line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace mddt::reasoner
