#include <gtest/gtest.h>

#include <random>

#include "mddt/oracle.hpp"
#include "unit/fixtures.hpp"

namespace mddt::oracle {
namespace {

void no_sleep(std::chrono::milliseconds) {}

OracleEndpoint endpoint(std::string id, int max_retries = 3) {
  OracleEndpoint e;
  e.id = id;
  e.base_url = "mock://" + id;
  e.model_name = id;
  e.max_retries = max_retries;
  return e;
}

OracleClient mock_client(std::shared_ptr<MockOracle> oracle, const std::string& id,
                         int max_retries = 3) {
  return OracleClient(endpoint(id, max_retries), std::make_shared<MockTransport>(oracle),
                      no_sleep);
}

std::shared_ptr<MockOracle> constant(std::string reply) {
  return std::make_shared<FunctionOracle>(
      [reply](const ChatRequest&) -> std::optional<std::string> { return reply; });
}

TEST(Complete, EchoMock) {
  auto client = mock_client(constant("MDD"), "echo");
  const auto exchange = client.complete({{"user", "hello there"}});
  EXPECT_EQ(exchange.response, "MDD");
  EXPECT_EQ(exchange.attempts, 1);
  EXPECT_EQ(exchange.tokens.prompt, 2);
  EXPECT_EQ(exchange.tokens.completion, 1);
  ASSERT_EQ(exchange.request.size(), 1u);
  EXPECT_EQ(exchange.request[0].content, "hello there");
}

TEST(Complete, FailTwiceThenSucceed) {
  auto oracle = ScriptedOracle::from_jsonl(
      R"({"match_substring": "hello", "scripted_response": "HC", "fail_times": 2})");
  std::vector<std::chrono::milliseconds> sleeps;
  OracleClient client(endpoint("flaky", 3), std::make_shared<MockTransport>(oracle),
                      [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto exchange = client.complete({{"user", "hello"}});
  EXPECT_EQ(exchange.response, "HC");
  EXPECT_EQ(exchange.attempts, 3);
  EXPECT_EQ(oracle->requests_served(), 3);
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_LT(sleeps[0], sleeps[1]);
}

TEST(Complete, AlwaysFailingGivesTransportErrorAfterBoundedAttempts) {
  auto oracle = std::make_shared<FunctionOracle>(
      [](const ChatRequest&) -> std::optional<std::string> { return std::nullopt; });
  auto client = mock_client(oracle, "down", 2);
  try {
    client.complete({{"user", "x"}});
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(oracle->requests_served(), 3);
}

TEST(Complete, ClientErrorsAreNotRetried) {
  auto oracle = ScriptedOracle::from_jsonl(R"({"match_substring": "zzz", "scripted_response": "HC"})");
  auto client = mock_client(oracle, "strict", 3);
  EXPECT_THROW(client.complete({{"user", "no match"}}), TransportError);
  EXPECT_EQ(oracle->requests_served(), 1);
}

class GarbageTransport : public Transport {
 public:
  HttpResponse post(const OracleEndpoint&, std::string_view, const std::string&) override {
    return {200, R"({"choices": []})"};
  }
};

TEST(Complete, MalformedBodyIsProtocolError) {
  OracleClient client(endpoint("bad"), std::make_shared<GarbageTransport>(), no_sleep);
  EXPECT_THROW(client.complete({{"user", "x"}}), ProtocolError);
}

TEST(Endpoint, InvariantsAreChecked) {
  auto e = endpoint("e");
  e.timeout = std::chrono::milliseconds(0);
  EXPECT_THROW(e.validate(), DomainError);
  e = endpoint("e", -1);
  EXPECT_THROW(e.validate(), DomainError);
  EXPECT_NO_THROW(endpoint("e", 0).validate());
}

TEST(Complete, RequestBodyFollowsChatCompletionShape) {
  ChatRequest seen;
  auto oracle = std::make_shared<FunctionOracle>([&](const ChatRequest& r) {
    seen = r;
    return std::optional<std::string>("ok");
  });
  auto client = mock_client(oracle, "shape");
  client.complete({{"system", "s"}, {"user", "u"}}, {0.7, 64, 9});
  EXPECT_EQ(seen.model, "shape");
  EXPECT_DOUBLE_EQ(seen.temperature, 0.7);
  EXPECT_EQ(seen.max_tokens, 64);
  EXPECT_EQ(seen.seed, 9u);
  ASSERT_EQ(seen.messages.size(), 2u);
  EXPECT_EQ(seen.messages[0].role, "system");
  const auto j = to_json(seen);
  EXPECT_EQ(j["messages"][1]["content"], "u");
}

TEST(Http, RoundTripOverLocalhost) {
  std::string auth;
  auto oracle = constant("<think>fine</think><answer>HC</answer>");
  MockServer server(oracle);
  auto e = endpoint("http", 1);
  e.base_url = server.base_url();
  e.auth_token = "secret";
  e.timeout = std::chrono::milliseconds(5000);
  OracleClient client(e, std::make_shared<HttpTransport>(), no_sleep);
  const auto exchange = client.complete({{"user", "a b c"}});
  EXPECT_EQ(extract_answer(exchange.response), Answer::HC);
  EXPECT_EQ(exchange.tokens.prompt, 3);
  EXPECT_EQ(oracle->requests_served(), 1);
}

TEST(Http, UnreachableEndpointIsTransportError) {
  int port = 0;
  {
    MockServer server(constant("x"));
    port = server.port();
  }
  auto e = endpoint("gone", 1);
  e.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  e.timeout = std::chrono::milliseconds(500);
  OracleClient client(e, std::make_shared<HttpTransport>(), no_sleep);
  try {
    client.complete({{"user", "x"}});
    FAIL();
  } catch (const TransportError& err) {
    EXPECT_EQ(err.attempts(), 2);
  }
}

TEST(ExtractAnswer, Grammar) {
  EXPECT_EQ(extract_answer("<answer>MDD</answer>"), Answer::MDD);
  EXPECT_EQ(extract_answer("<answer>HC</answer> then <answer> MDD </answer>"), Answer::MDD);
  EXPECT_EQ(extract_answer("reasoning\nFinal answer: HC\n\n"), Answer::HC);
  EXPECT_EQ(extract_answer("MDD"), Answer::MDD);
  EXPECT_EQ(extract_answer("MDD or HC"), Answer::Unparseable);
  EXPECT_EQ(extract_answer("<answer>maybe</answer>\nMDD"), Answer::Unparseable);
  EXPECT_EQ(extract_answer("HCMDD"), Answer::Unparseable);
  EXPECT_EQ(extract_answer(""), Answer::Unparseable);
  EXPECT_EQ(extract_answer("MDD\nI am not sure"), Answer::Unparseable);
}

TEST(ExtractAnswer, IsTotalOverRandomStrings) {
  std::mt19937_64 rng(17);
  const std::string alphabet = "<>/answeMDHC \n\t\x01\xff";
  for (int i = 0; i < 20000; ++i) {
    std::string s(rng() % 40, ' ');
    for (auto& c : s) c = alphabet[rng() % alphabet.size()];
    EXPECT_NO_THROW(extract_answer(s));
  }
}

TEST(Consensus, ExhaustiveTruthTable) {
  const std::array<Answer, 3> values = {Answer::MDD, Answer::HC, Answer::Unparseable};
  for (auto truth : {Label::MDD, Label::HC}) {
    for (auto a : values) {
      for (auto b : values) {
        for (auto c : values) {
          const std::array<Answer, 3> v = {a, b, c};
          const bool expect =
              matches(a, truth) && matches(b, truth) && matches(c, truth);
          EXPECT_EQ(consensus_decision(v, truth) == ConsensusDecision::Retain, expect);
        }
      }
    }
  }
  const std::array<Answer, 3> mixed = {Answer::MDD, Answer::HC, Answer::MDD};
  EXPECT_EQ(consensus_decision(mixed, Label::MDD), ConsensusDecision::Exclude);
  const std::array<Answer, 3> unparsed = {Answer::MDD, Answer::MDD, Answer::Unparseable};
  EXPECT_EQ(consensus_decision(unparsed, Label::MDD), ConsensusDecision::Exclude);
}

TEST(Consensus, IsMonotone) {
  const std::array<Answer, 3> values = {Answer::MDD, Answer::HC, Answer::Unparseable};
  for (auto truth : {Label::MDD, Label::HC}) {
    for (int code = 0; code < 27; ++code) {
      std::array<Answer, 3> v = {values[code % 3], values[code / 3 % 3], values[code / 9]};
      const auto before = consensus_decision(v, truth);
      for (std::size_t i = 0; i < 3; ++i) {
        if (matches(v[i], truth)) continue;
        auto fixed = v;
        fixed[i] = to_answer(truth);
        if (before == ConsensusDecision::Retain) {
          EXPECT_EQ(consensus_decision(fixed, truth), ConsensusDecision::Retain);
        }
      }
    }
  }
}

TEST(Consensus, FilterQueriesAllThreeAndDefersOnTransportFailure) {
  const auto qa = make_qa(testing::worked_example_record(), PromptTier::Direct);
  std::vector<OracleClient> clients;
  clients.push_back(mock_client(constant("<answer>HC</answer>"), "a"));
  clients.push_back(mock_client(constant("<answer>HC</answer>"), "b"));
  clients.push_back(mock_client(constant("<answer>HC</answer>"), "c"));
  auto result = consensus_filter(qa, clients);
  EXPECT_EQ(result.decision, ConsensusDecision::Retain);
  ASSERT_EQ(result.verdicts.size(), 3u);
  EXPECT_EQ(result.verdicts[2].endpoint_id, "c");

  clients[1] = mock_client(constant("<answer>MDD</answer>"), "b");
  EXPECT_EQ(consensus_filter(qa, clients).decision, ConsensusDecision::Exclude);

  auto down = std::make_shared<FunctionOracle>(
      [](const ChatRequest&) -> std::optional<std::string> { return std::nullopt; });
  clients[1] = mock_client(down, "b", 0);
  result = consensus_filter(qa, clients);
  EXPECT_EQ(result.decision, ConsensusDecision::Deferred);
  EXPECT_FALSE(result.error.empty());

  std::vector<OracleClient> two;
  two.push_back(mock_client(constant("x"), "a"));
  two.push_back(mock_client(constant("x"), "b"));
  EXPECT_THROW(consensus_filter(qa, two), DomainError);
}

TEST(ClinicalRuleOracle, AnswersFollowCuesAndTiersShapeLength) {
  auto oracle = std::make_shared<ClinicalRuleOracle>();
  auto client = mock_client(oracle, "mock-gpt");
  auto record = testing::worked_example_record();
  std::array<std::size_t, 3> lengths{};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto qa = make_qa(record, kAllTiers[i]);
    const auto response =
        client.complete(diagnosis_messages(qa.prompt.render(), qa.question)).response;
    EXPECT_EQ(extract_answer(response), Answer::HC);
    lengths[i] = response.size();
  }
  EXPECT_LT(lengths[0], lengths[1]);
  EXPECT_LT(lengths[1], lengths[2]);

  record.set("sleeplessness", std::string("usually"));
  record.set("self_harm", std::string("yes"));
  const auto qa = make_qa(record, PromptTier::ComplexCot);
  const auto response =
      client.complete(diagnosis_messages(qa.prompt.render(), qa.question)).response;
  EXPECT_EQ(extract_answer(response), Answer::MDD);
  EXPECT_NE(response.find("Step 6"), std::string::npos);
}

TEST(ClinicalRuleOracle, TemperatureNoiseIsSeededAndBounded) {
  auto oracle = std::make_shared<ClinicalRuleOracle>();
  auto client = mock_client(oracle, "mock-gpt");
  const auto qa = make_qa(testing::worked_example_record(), PromptTier::Direct);
  const auto messages = diagnosis_messages(qa.prompt.render(), qa.question);
  int flips = 0;
  const int trials = 2000;
  for (int s = 0; s < trials; ++s) {
    const auto a = extract_answer(client.complete(messages, {0.7, 64, std::uint64_t(s)}).response);
    const auto b = extract_answer(client.complete(messages, {0.7, 64, std::uint64_t(s)}).response);
    EXPECT_EQ(a, b);
    flips += a == Answer::MDD;
  }
  // flip probability 0.7 * 0.3 = 0.21
  EXPECT_NEAR(flips / double(trials), 0.21, 0.03);
}

TEST(ClinicalRuleOracle, RefinementAppendsGuidance) {
  auto oracle = std::make_shared<ClinicalRuleOracle>();
  auto client = mock_client(oracle, "mock-gpt");
  const auto qa = make_qa(testing::worked_example_record(), PromptTier::SimpleCot);
  const std::string prompt = qa.prompt.render();
  const auto refined =
      client.complete(refinement_messages(prompt, qa.question, "<think>x</think>")).response;
  EXPECT_EQ(refined.rfind(prompt, 0), 0u);
  EXPECT_NE(refined.find(kRefinementGuidance), std::string::npos);
  // idempotent
  EXPECT_EQ(client.complete(refinement_messages(refined, qa.question, "r")).response, refined);
}

TEST(ScriptedOracle, FixtureParsing) {
  const auto rules = ScriptedOracle::parse_fixture(
      "{\"match_substring\": \"a\", \"scripted_response\": \"MDD\"}\n\n"
      "{\"match_substring\": \"b\", \"scripted_response\": \"HC\", \"fail_times\": 1}\n");
  ASSERT_EQ(rules.size(), 2u);
  EXPECT_EQ(rules[1].fail_times, 1);
  EXPECT_THROW(ScriptedOracle::parse_fixture("{\"match_substring\": 1}\n"), DomainError);
}

TEST(TokenBucket, LimitsRate) {
  TokenBucket bucket(100.0, 1.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 11; ++i) bucket.acquire();
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_GE(elapsed, std::chrono::milliseconds(90));
}

}  // namespace
}  // namespace mddt::oracle
