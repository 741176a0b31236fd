#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "mddt/oracle.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include "httplib.h"

namespace mddt::oracle {

using nlohmann::json;

namespace {

int word_count(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw DomainError("base_url lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  parts.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) parts.prefix = url.substr(path_start);
  while (!parts.prefix.empty() && parts.prefix.back() == '/') parts.prefix.pop_back();
  return parts;
}

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

// ---- wire format -----------------------------------------------------------

json to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  json body = {{"model", request.model},
               {"messages", messages},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ChatRequest request_from_json(const json& body) {
  try {
    ChatRequest r;
    r.model = body.at("model").get<std::string>();
    for (const auto& m : body.at("messages")) {
      r.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    r.temperature = body.value("temperature", 0.0);
    r.max_tokens = body.value("max_tokens", 1024);
    if (body.contains("seed")) r.seed = body["seed"].get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed chat request: ") + e.what());
  }
}

void OracleEndpoint::validate() const {
  if (timeout.count() <= 0) throw DomainError("endpoint " + id + ": timeout must be positive");
  if (max_retries < 0) throw DomainError("endpoint " + id + ": max_retries must be >= 0");
  if (max_in_flight < 1) throw DomainError("endpoint " + id + ": max_in_flight must be >= 1");
  if (requests_per_second < 0.0) throw DomainError("endpoint " + id + ": negative rate");
}

// ---- transports ------------------------------------------------------------

HttpResponse HttpTransport::post(const OracleEndpoint& endpoint, std::string_view path,
                                 const std::string& body) {
  const auto url = split_url(endpoint.base_url);
  httplib::Client client(url.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!endpoint.auth_token.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.auth_token);
  }
  auto result = client.Post(url.prefix + std::string(path), headers, body, "application/json");
  if (!result) {
    throw TransportError(
        fmt::format("{}: {}", endpoint.base_url, httplib::to_string(result.error())), 1);
  }
  return {result->status, result->body};
}

HttpResponse MockTransport::post(const OracleEndpoint&, std::string_view, const std::string& body) {
  return oracle_->handle(body);
}

TokenBucket::TokenBucket(double rate_per_second, double burst)
    : rate_(rate_per_second),
      capacity_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(capacity_,
                       tokens_ + rate_ * std::chrono::duration<double>(now - last_).count());
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    std::this_thread::sleep_for(std::chrono::duration<double>((1.0 - tokens_) / rate_));
  }
}

// ---- client ----------------------------------------------------------------

OracleClient::OracleClient(OracleEndpoint endpoint, std::shared_ptr<Transport> transport,
                           Sleeper sleeper)
    : endpoint_(std::move(endpoint)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  endpoint_.validate();
  if (!transport_) throw DomainError("endpoint " + endpoint_.id + ": no transport");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  bucket_ = std::make_unique<TokenBucket>(endpoint_.requests_per_second, endpoint_.burst);
  in_flight_ = std::make_unique<std::counting_semaphore<>>(endpoint_.max_in_flight);
}

std::chrono::milliseconds OracleClient::backoff_delay(int retry) const {
  // 250 ms, 500 ms, 1 s, ... capped at 8 s
  const int shift = std::clamp(retry - 1, 0, 5);
  return std::chrono::milliseconds(std::min(250 << shift, 8000));
}

ChatExchange OracleClient::complete(const std::vector<ChatMessage>& messages,
                                    const CompletionOptions& options) {
  if (messages.empty()) throw DomainError("complete: no messages");
  ChatRequest request{endpoint_.model_name, messages, options.temperature, options.max_tokens,
                      options.seed};
  const std::string body = to_json(request).dump();

  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{in_flight_.get()};

  const auto start = std::chrono::steady_clock::now();
  std::string last_error;
  const int max_attempts = endpoint_.max_retries + 1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) sleeper_(backoff_delay(attempt - 1));
    bucket_->acquire();
    HttpResponse response;
    try {
      response = transport_->post(endpoint_, "/chat/completions", body);
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    if (response.status < 200 || response.status >= 300) {
      last_error = fmt::format("{} returned HTTP {}", endpoint_.id, response.status);
      if (retryable(response.status)) continue;
      throw TransportError(last_error, attempt);
    }
    ChatExchange exchange;
    exchange.request = messages;
    exchange.attempts = attempt;
    try {
      const auto j = json::parse(response.body);
      exchange.response = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage")) {
        exchange.tokens.prompt = j["usage"].value("prompt_tokens", 0);
        exchange.tokens.completion = j["usage"].value("completion_tokens", 0);
      }
    } catch (const json::exception& e) {
      throw ProtocolError(fmt::format("{}: malformed completion: {}", endpoint_.id, e.what()));
    }
    if (exchange.response.empty()) throw ProtocolError(endpoint_.id + ": empty completion");
    if (exchange.tokens.prompt < 0 || exchange.tokens.completion < 0) {
      throw ProtocolError(endpoint_.id + ": negative token counts");
    }
    exchange.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return exchange;
  }
  throw TransportError(fmt::format("{} after {} attempts", last_error, max_attempts), max_attempts);
}

// ---- answers and consensus ---------------------------------------------------

Answer extract_answer(std::string_view text) {
  static const std::regex tag(R"(<answer>\s*(MDD|HC)\s*</answer>)", std::regex::icase);
  Answer found = Answer::Unparseable;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), tag); it != std::sregex_iterator(); ++it) {
    std::string v = (*it)[1].str();
    found = (v[0] == 'M' || v[0] == 'm') ? Answer::MDD : Answer::HC;
  }
  if (found != Answer::Unparseable) return found;
  if (s.find("<answer>") != std::string::npos) return Answer::Unparseable;

  std::string_view last;
  std::size_t end = s.size();
  while (end > 0) {
    const auto nl = s.rfind('\n', end - 1);
    const std::size_t begin = nl == std::string::npos ? 0 : nl + 1;
    std::string_view line(s.data() + begin, end - begin);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      last = line;
      break;
    }
    if (nl == std::string::npos) break;
    end = nl;
  }
  static const std::regex mdd(R"(\bMDD\b)");
  static const std::regex hc(R"(\bHC\b)");
  const std::string line(last);
  const bool has_mdd = std::regex_search(line, mdd);
  const bool has_hc = std::regex_search(line, hc);
  if (has_mdd == has_hc) return Answer::Unparseable;
  return has_mdd ? Answer::MDD : Answer::HC;
}

std::string_view to_string(ConsensusDecision decision) {
  switch (decision) {
    case ConsensusDecision::Retain: return "retain";
    case ConsensusDecision::Exclude: return "exclude";
    case ConsensusDecision::Deferred: return "deferred";
  }
  return "exclude";
}

ConsensusDecision consensus_decision(std::span<const Answer> verdicts, Label truth) {
  if (verdicts.size() != 3) throw DomainError("consensus needs exactly three verdicts");
  const bool all = std::all_of(verdicts.begin(), verdicts.end(),
                               [&](Answer a) { return matches(a, truth); });
  return all ? ConsensusDecision::Retain : ConsensusDecision::Exclude;
}

std::vector<ChatMessage> diagnosis_messages(const std::string& prompt,
                                            const std::string& question) {
  return {{"system", prompt}, {"user", question}};
}

std::vector<ChatMessage> refinement_messages(const std::string& prompt,
                                             const std::string& question,
                                             const std::string& path) {
  const auto& t = TemplateSet::builtin_prompts();
  return {{"system", t.at("refine.instruction")},
          {"user", fmt::format("Prompt:\n{}\n\nQuestion:\n{}\n\nReasoning path:\n{}", prompt,
                               question, path)}};
}

ConsensusResult consensus_filter(const QaPair& qa, std::span<OracleClient> clients) {
  if (clients.size() != 3) throw DomainError("consensus_filter needs exactly three endpoints");
  ConsensusResult result;
  const auto messages = diagnosis_messages(qa.prompt.render(), qa.question);
  std::vector<Answer> answers;
  for (auto& client : clients) {
    OracleVerdict verdict;
    verdict.endpoint_id = client.endpoint().id;
    try {
      verdict.raw = client.complete(messages, {0.0, 1024, std::nullopt});
    } catch (const TransportError& e) {
      result.decision = ConsensusDecision::Deferred;
      result.error = e.what();
      return result;
    }
    verdict.extracted_answer = extract_answer(verdict.raw.response);
    answers.push_back(verdict.extracted_answer);
    result.verdicts.push_back(std::move(verdict));
  }
  result.decision = consensus_decision(answers, qa.answer);
  return result;
}

// ---- mocks -------------------------------------------------------------------

HttpResponse MockOracle::handle(const std::string& body) {
  ++served_;
  ChatRequest request;
  try {
    request = request_from_json(json::parse(body));
  } catch (const std::exception& e) {
    return {400, json{{"error", {{"message", e.what()}}}}.dump()};
  }
  const Reply reply = respond(request);
  if (reply.status != 200) {
    return {reply.status, json{{"error", {{"message", "mock failure"}}}}.dump()};
  }
  int prompt_tokens = 0;
  for (const auto& m : request.messages) prompt_tokens += word_count(m.content);
  const int completion_tokens = word_count(reply.content);
  const json out = {
      {"id", "mock-completion"},
      {"object", "chat.completion"},
      {"model", request.model},
      {"choices",
       json::array({{{"index", 0},
                     {"message", {{"role", "assistant"}, {"content", reply.content}}},
                     {"finish_reason", "stop"}}})},
      {"usage",
       {{"prompt_tokens", prompt_tokens},
        {"completion_tokens", completion_tokens},
        {"total_tokens", prompt_tokens + completion_tokens}}}};
  return {200, out.dump()};
}

MockOracle::Reply FunctionOracle::respond(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  auto content = script_(request);
  if (!content) return {503, {}};
  return {200, std::move(*content)};
}

ScriptedOracle::ScriptedOracle(std::vector<FixtureRule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    if (r.fail_times < 0) throw DomainError("fixture fail_times must be >= 0");
    failures_left_.push_back(r.fail_times);
  }
}

std::vector<FixtureRule> ScriptedOracle::parse_fixture(std::string_view text) {
  std::vector<FixtureRule> rules;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      rules.push_back({j.at("match_substring").get<std::string>(),
                       j.at("scripted_response").get<std::string>(), j.value("fail_times", 0)});
    } catch (const json::exception& e) {
      throw DomainError(fmt::format("fixture line {}: {}", line_no, e.what()));
    }
  }
  return rules;
}

std::shared_ptr<ScriptedOracle> ScriptedOracle::from_jsonl(std::string_view text) {
  return std::make_shared<ScriptedOracle>(parse_fixture(text));
}

MockOracle::Reply ScriptedOracle::respond(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const bool hit = std::any_of(request.messages.begin(), request.messages.end(),
                                 [&](const ChatMessage& m) {
                                   return m.content.find(rules_[i].match_substring) !=
                                          std::string::npos;
                                 });
    if (!hit) continue;
    if (failures_left_[i] > 0) {
      --failures_left_[i];
      return {503, {}};
    }
    return {200, rules_[i].scripted_response};
  }
  return {400, {}};
}

// ---- rule-based clinician ----------------------------------------------------

const std::string_view kRefinementGuidance =
    "Before concluding, name every risk factor for depression that the description "
    "contains, name every protective factor, and state explicitly which side carries more "
    "weight and why.";

namespace {

std::optional<PromptTier> tier_of_prompt(std::string_view system) {
  for (auto tier : kAllTiers) {
    const auto instruction = prompt_template(tier).instruction_text;
    if (system.substr(0, instruction.size()) == instruction) return tier;
  }
  return std::nullopt;
}

// Narrative sentences, split on ". " boundaries.
std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find(". ", start);
    if (end == std::string_view::npos) end = text.size();
    else ++end;
    out.emplace_back(text.substr(start, end - start));
    start = end;
    while (start < text.size() && text[start] == ' ') ++start;
  }
  return out;
}

const std::array<std::string_view, kCueCount>& cue_phrases() {
  static const std::array<std::string_view, kCueCount> phrases = {
      "frequent sleeplessness", "a history of self-harm", "thoughts that life was not worth living",
      "low general happiness", "dissatisfaction with health", "younger age",
      "a long-standing illness", "not being in employment"};
  return phrases;
}

std::string join_cues(const CueVector& cues, bool present) {
  std::vector<std::string> items;
  for (std::size_t k = 0; k < kCueCount; ++k) {
    if (cues[k] == present) items.emplace_back(cue_phrases()[k]);
  }
  if (items.empty()) return "none identified";
  return fmt::format("{}", fmt::join(items, ", "));
}

std::string compose(PromptTier tier, bool refined, std::string_view narrative,
                    const CueVector& cues, Answer answer) {
  const std::string tag = fmt::format("<answer>{}</answer>", to_string(answer));
  if (tier == PromptTier::Direct && !refined) return tag;
  const std::string risks = join_cues(cues, true);
  const std::string absent = join_cues(cues, false);
  const std::string lean = answer == Answer::MDD
                               ? "The risk factors outweigh the protective factors, which "
                                 "points to major depressive disorder."
                               : "The protective factors outweigh the risk factors, which "
                                 "points to a healthy control.";
  if (tier != PromptTier::ComplexCot) {
    std::string think = fmt::format("Risk factors: {}.\nAbsent risk factors: {}.\n", risks, absent);
    if (refined) think += "Weighing each factor explicitly before concluding.\n";
    return fmt::format("<think>\n{}{}\n</think>\n{}", think, lean, tag);
  }
  const auto s = sentences(narrative);
  auto pick = [&](std::size_t i) { return i < s.size() ? s[i] : std::string("Not described."); };
  std::string extra;
  for (std::size_t i = 6; i < s.size(); ++i) extra += " " + s[i];
  if (extra.empty()) extra = " No psychosocial ratings were reported.";
  std::string think = fmt::format(
      "Step 1: Demographic and socioeconomic context. {} {} {}\n"
      "Step 2: Sleep, alcohol use and lifestyle. {} {}\n"
      "Step 3: Psychosocial indicators.{}\n"
      "Step 4: Clinical history and lipid profile. {}\n"
      "Step 5: Weighing the evidence. Risk factors present: {}. Risk factors absent: {}.\n"
      "Step 6: Conclusion. {}",
      pick(0), pick(3), pick(4), pick(1), pick(2), extra, pick(5), risks, absent, lean);
  if (refined) think += " Each factor above was weighed explicitly before this conclusion.";
  return fmt::format("<think>\n{}\n</think>\n{}", think, tag);
}

}  // namespace

ClinicalRuleOracle::Persona ClinicalRuleOracle::persona_for(std::string_view model) {
  if (model.find("gemini") != std::string_view::npos) return {{2, 3, 3, 2, 1, 1, 1, 0}, 4, 0.3};
  if (model.find("deepseek") != std::string_view::npos) return {{2, 3, 2, 2, 1, 1, 1, 1}, 4, 0.3};
  return {{2, 3, 3, 2, 1, 1, 1, 1}, 4, 0.3};
}

Answer ClinicalRuleOracle::rule_answer(const Persona& persona, const CueVector& cues) {
  int score = 0;
  for (std::size_t k = 0; k < kCueCount; ++k) score += cues[k] ? persona.weights[k] : 0;
  return score >= persona.threshold ? Answer::MDD : Answer::HC;
}

MockOracle::Reply ClinicalRuleOracle::respond(const ChatRequest& request) {
  if (request.messages.size() < 2) return {400, {}};
  const std::string& system = request.messages.front().content;
  const std::string& user = request.messages.back().content;
  const auto& prompts = TemplateSet::builtin_prompts();

  if (system == prompts.at("refine.instruction")) {
    const std::string open = "Prompt:\n";
    const std::string close = "\n\nQuestion:\n";
    const auto end = user.find(close);
    if (user.rfind(open, 0) != 0 || end == std::string::npos) return {400, {}};
    std::string prompt = user.substr(open.size(), end - open.size());
    if (prompt.find(kRefinementGuidance) == std::string::npos) {
      prompt += "\n" + std::string(kRefinementGuidance);
    }
    return {200, prompt};
  }

  std::string_view narrative = user;
  if (const auto cut = user.find("\n\n" + task_instruction()); cut != std::string::npos) {
    narrative = narrative.substr(0, cut);
  }
  const auto persona = persona_for(request.model);
  const auto cues = cues_from_text(narrative);
  Answer answer = rule_answer(persona, cues);
  if (request.temperature > 0.0) {
    std::uint64_t h = fnv1a(request.model);
    for (const auto& m : request.messages) h = fnv1a(m.content, h);
    const double u = unit_interval(derive_seed(request.seed.value_or(0), h));
    const double p = std::min(0.5, request.temperature * persona.noise_per_temperature);
    if (u < p) answer = answer == Answer::MDD ? Answer::HC : Answer::MDD;
  }
  const bool refined = system.find(kRefinementGuidance) != std::string::npos;
  const auto tier = tier_of_prompt(system).value_or(PromptTier::ComplexCot);
  return {200, compose(tier, refined, narrative, cues, answer)};
}

// ---- localhost server ------------------------------------------------------

struct MockServer::Impl {
  httplib::Server server;
  std::thread thread;
};

MockServer::MockServer(std::shared_ptr<MockOracle> oracle) : impl_(std::make_unique<Impl>()) {
  impl_->server.Post(R"(.*/chat/completions)",
                     [oracle](const httplib::Request& req, httplib::Response& res) {
                       const auto out = oracle->handle(req.body);
                       res.status = out.status;
                       res.set_content(out.body, "application/json");
                     });
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("mock server could not bind");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockServer::~MockServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockServer::base_url() const { return fmt::format("http://127.0.0.1:{}/v1", port_); }

}  // namespace mddt::oracle
