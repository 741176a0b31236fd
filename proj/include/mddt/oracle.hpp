#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mddt/common.hpp"
#include "mddt/narrative.hpp"

namespace mddt::oracle {

struct ChatMessage {
  std::string role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

nlohmann::json to_json(const ChatRequest& request);
/// Throws ProtocolError for bodies that are not chat-completion requests.
ChatRequest request_from_json(const nlohmann::json& body);

struct TokenCounts {
  int prompt = 0;
  int completion = 0;
};

struct ChatExchange {
  std::vector<ChatMessage> request;
  std::string response;
  std::chrono::milliseconds latency{0};
  TokenCounts tokens;
  int attempts = 0;
};

class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, int attempts)
      : std::runtime_error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OracleEndpoint {
  std::string id;
  std::string base_url;
  std::string model_name;
  std::string auth_token;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  double requests_per_second = 0.0;  // 0 disables rate limiting
  double burst = 1.0;
  int max_in_flight = 4;

  /// Throws DomainError when timeout <= 0 or max_retries < 0.
  void validate() const;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Carries one POST to an endpoint. Throws TransportError on connection
/// failures and timeouts.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const OracleEndpoint& endpoint, std::string_view path,
                            const std::string& body) = 0;
};

/// HTTP(S) transport backed by cpp-httplib; sends a bearer token when set.
class HttpTransport : public Transport {
 public:
  HttpResponse post(const OracleEndpoint& endpoint, std::string_view path,
                    const std::string& body) override;
};

class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double burst);
  void acquire();

 private:
  double rate_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct CompletionOptions {
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

class OracleClient {
 public:
  OracleClient(OracleEndpoint endpoint, std::shared_ptr<Transport> transport,
               Sleeper sleeper = {});

  /// POST {base_url}/chat/completions. Retries connection failures, 408, 429
  /// and 5xx up to max_retries times with exponential backoff. Throws
  /// TransportError when retries are exhausted or on other non-2xx statuses,
  /// ProtocolError for malformed response bodies.
  ChatExchange complete(const std::vector<ChatMessage>& messages,
                        const CompletionOptions& options = {});

  const OracleEndpoint& endpoint() const { return endpoint_; }
  std::chrono::milliseconds backoff_delay(int retry) const;

 private:
  OracleEndpoint endpoint_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  std::unique_ptr<TokenBucket> bucket_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

/// Final-answer extraction: the last <answer>MDD|HC</answer> tag wins; without
/// a tag, the last non-empty line must mention exactly one of the labels as a
/// word. Total: never throws.
Answer extract_answer(std::string_view text);

struct OracleVerdict {
  std::string endpoint_id;
  Answer extracted_answer = Answer::Unparseable;
  ChatExchange raw;
};

enum class ConsensusDecision { Retain, Exclude, Deferred };
std::string_view to_string(ConsensusDecision decision);

struct ConsensusResult {
  ConsensusDecision decision = ConsensusDecision::Exclude;
  std::vector<OracleVerdict> verdicts;
  std::string error;  // transport failure detail when deferred
};

/// Pure decision rule: retain iff every verdict equals the truth.
ConsensusDecision consensus_decision(std::span<const Answer> verdicts, Label truth);

/// Queries each of exactly three oracles with (P, q) at temperature 0.
ConsensusResult consensus_filter(const QaPair& qa, std::span<OracleClient> clients);

/// Chat messages for a question under a prompt: system = prompt, user = question.
std::vector<ChatMessage> diagnosis_messages(const std::string& prompt,
                                            const std::string& question);

/// Messages asking an oracle to rewrite prompt P given (P, q, r). The reply
/// is the refined prompt P*.
std::vector<ChatMessage> refinement_messages(const std::string& prompt,
                                             const std::string& question,
                                             const std::string& path);

// ---- mock oracles ----------------------------------------------------------

/// Server-side behaviour of a mock endpoint speaking the chat-completion
/// wire format. Thread-safe.
class MockOracle {
 public:
  virtual ~MockOracle() = default;
  /// Handles one POST body, returning the HTTP response.
  HttpResponse handle(const std::string& body);
  int requests_served() const { return served_.load(); }

 protected:
  struct Reply {
    int status = 200;
    std::string content;
  };
  virtual Reply respond(const ChatRequest& request) = 0;

 private:
  std::atomic<int> served_{0};
};

/// Mock driven by a callback; nullopt from the callback answers HTTP 503.
/// Calls are serialized.
class FunctionOracle : public MockOracle {
 public:
  using Script = std::function<std::optional<std::string>(const ChatRequest&)>;
  explicit FunctionOracle(Script script) : script_(std::move(script)) {}

 protected:
  Reply respond(const ChatRequest& request) override;

 private:
  Script script_;
  std::mutex mutex_;
};

struct FixtureRule {
  std::string match_substring;
  std::string scripted_response;
  int fail_times = 0;
};

/// Mock driven by a JSONL fixture of {match_substring, scripted_response,
/// fail_times}. The first rule whose substring occurs in any message answers;
/// its first `fail_times` matches return HTTP 503. Unmatched requests get 400.
class ScriptedOracle : public MockOracle {
 public:
  explicit ScriptedOracle(std::vector<FixtureRule> rules);
  static std::shared_ptr<ScriptedOracle> from_jsonl(std::string_view text);
  static std::vector<FixtureRule> parse_fixture(std::string_view text);

 protected:
  Reply respond(const ChatRequest& request) override;

 private:
  std::vector<FixtureRule> rules_;
  std::vector<int> failures_left_;
  std::mutex mutex_;
};

/// Deterministic heuristic clinician: reads the clinical cues from the
/// narrative, scores them with persona-specific weights chosen by the model
/// name, and writes a tier-shaped response. At temperature > 0 the verdict is
/// flipped with a probability proportional to the temperature, seeded by the
/// request seed and content.
class ClinicalRuleOracle : public MockOracle {
 public:
  struct Persona {
    std::array<int, kCueCount> weights;
    int threshold;
    double noise_per_temperature;
  };
  static Persona persona_for(std::string_view model);
  static Answer rule_answer(const Persona& persona, const CueVector& cues);

 protected:
  Reply respond(const ChatRequest& request) override;
};

/// Extra guidance appended by ClinicalRuleOracle when asked to refine a prompt.
extern const std::string_view kRefinementGuidance;

/// In-process transport that hands request bodies straight to a mock.
class MockTransport : public Transport {
 public:
  explicit MockTransport(std::shared_ptr<MockOracle> oracle) : oracle_(std::move(oracle)) {}
  HttpResponse post(const OracleEndpoint& endpoint, std::string_view path,
                    const std::string& body) override;

 private:
  std::shared_ptr<MockOracle> oracle_;
};

/// Serves a mock oracle over real HTTP on 127.0.0.1 at an ephemeral port.
class MockServer {
 public:
  explicit MockServer(std::shared_ptr<MockOracle> oracle);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  int port() const { return port_; }
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace mddt::oracle
