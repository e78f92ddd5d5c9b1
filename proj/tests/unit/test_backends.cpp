#include <cmath>
#include <set>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "dictex/backends.hpp"
#include "dictex/http_backends.hpp"
#include "dictex/mock_backends.hpp"
#include "dictex/retry.hpp"

using namespace dictex;
using namespace dictex::backends;
using nlohmann::json;

namespace {

MaskQuery query_for(ScriptedMlmBackend& mlm, const std::string& text, std::vector<std::size_t> positions) {
  auto tok = mlm.tokenize(text, false);
  MaskQuery q;
  q.token_ids = tok->token_ids;
  for (auto p : positions) {
    q.target_ids.push_back(q.token_ids[p]);
    q.token_ids[p] = mlm.mask_token_id();
  }
  q.mask_positions = std::move(positions);
  return q;
}

}  // namespace

TEST(ScriptedChat, EchoesCannedReply) {
  ScriptedChatBackend chat({ScriptStep{"X", std::nullopt}});
  auto r = chat.complete("hello", {});
  ASSERT_TRUE(r);
  EXPECT_EQ(r.value(), "X");
  EXPECT_EQ(chat.call_count(), 1u);
}

TEST(ScriptedChat, FailsTwiceThenSucceeds) {
  auto chat = ScriptedChatBackend::from_json(json::parse(R"({"steps":[{"error":"rate_limited","retry_after_ms":3},
                                                                     {"error":"rate_limited"},{"text":"ok"}]})"));
  auto a = chat->complete("p", {});
  auto b = chat->complete("p", {});
  auto c = chat->complete("p", {});
  ASSERT_FALSE(a);
  EXPECT_EQ(a.error().kind, BackendErrorKind::kRateLimited);
  EXPECT_EQ(a.error().retry_after, std::chrono::milliseconds(3));
  ASSERT_FALSE(b);
  EXPECT_EQ(b.error().kind, BackendErrorKind::kRateLimited);
  ASSERT_TRUE(c);
  EXPECT_EQ(c.value(), "ok");
  EXPECT_EQ(chat->complete("p", {}).value(), "ok");
}

TEST(ScriptedChat, EmptyPromptIsRejectedWithoutACall) {
  ScriptedChatBackend chat({ScriptStep{"X", std::nullopt}});
  auto r = chat.complete("", {});
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, BackendErrorKind::kInvalidRequest);
  EXPECT_EQ(chat.call_count(), 0u);
}

TEST(ScriptedChat, DeterministicAtTemperatureZero) {
  auto judge = make_constant_judge("Output (a)");
  GenParams p{.temperature = 0.0};
  EXPECT_EQ(judge->complete("q", p).value(), judge->complete("q", p).value());
}

TEST(TaggedGenerator, EmitsRequestedCountAndWord) {
  auto gen = make_tagged_generator(0.0, 1);
  auto r = gen->complete("Human:\nconstruct 3 sentences that illustrates the definition of the word \"ache\" within", {});
  ASSERT_TRUE(r);
  std::size_t tags = 0;
  for (auto at = r.value().find("<sentence>"); at != std::string::npos; at = r.value().find("<sentence>", at + 1)) ++tags;
  EXPECT_EQ(tags, 3u);
  EXPECT_NE(r.value().find("ache"), std::string::npos);
  auto refusing = make_tagged_generator(0.0, 1, {"ache"});
  auto refused = refusing->complete("the word \"ache\" within", {});
  ASSERT_FALSE(refused);
  EXPECT_EQ(refused.error().kind, BackendErrorKind::kRefusal);
}

TEST(ScriptedMlm, WhitespaceTokenizationOffsets) {
  ScriptedMlmBackend mlm(MlmScript{});
  auto t = mlm.tokenize("dull ache", false);
  ASSERT_TRUE(t);
  ASSERT_EQ(t->token_ids.size(), 2u);
  EXPECT_EQ(t->offsets[0], (std::pair<std::size_t, std::size_t>{0, 4}));
  EXPECT_EQ(t->offsets[1], (std::pair<std::size_t, std::size_t>{5, 9}));
  EXPECT_TRUE(mlm.tokenize("", false)->token_ids.empty());
}

TEST(ScriptedMlm, LeadingSpaceChangesFirstToken) {
  ScriptedMlmBackend mlm(MlmScript{});
  EXPECT_NE(mlm.tokenize("dull", false)->token_ids[0], mlm.tokenize("dull", true)->token_ids[0]);
  EXPECT_EQ(mlm.tokenize("dull", true)->token_ids[0], mlm.tokenize("a dull", false)->token_ids[1]);
}

TEST(ScriptedMlm, PiecesSplitWords) {
  MlmScript s;
  s.pieces["dull"] = {"d", "ull"};
  ScriptedMlmBackend mlm(s);
  auto t = mlm.tokenize("a dull day", false);
  ASSERT_EQ(t->token_ids.size(), 4u);
  EXPECT_EQ(t->offsets[1], (std::pair<std::size_t, std::size_t>{2, 3}));
  EXPECT_EQ(t->offsets[2], (std::pair<std::size_t, std::size_t>{3, 6}));
  MlmScript bad;
  bad.pieces["dull"] = {"d", "al"};
  EXPECT_ANY_THROW(ScriptedMlmBackend{bad});
}

TEST(ScriptedMlm, DistinctTokensNeverShareAnId) {
  MlmScript script;
  script.vocab_size = 64;
  script.vocab["reserved"] = 10;
  ScriptedMlmBackend mlm(script);
  std::set<std::int64_t> ids{mlm.token_id("reserved")};
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(ids.insert(mlm.token_id("tok" + std::to_string(i))).second) << i;
  EXPECT_EQ(mlm.token_id("tok7"), mlm.token_id("tok7"));
  for (auto id : ids) EXPECT_LT(id, mlm.mask_token_id());
}

TEST(ScriptedMlm, CertaintyGivesZeroLogprobs) {
  ScriptedMlmBackend mlm(MlmScript{});
  auto r = mlm.mask_score(query_for(mlm, "a b c", {0, 2}));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->logprobs, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(mlm.forward_passes(), 1u);
}

TEST(ScriptedMlm, FixedDistribution) {
  MlmScript s;
  s.default_prob = 0.5;
  ScriptedMlmBackend mlm(s);
  auto r = mlm.mask_score(query_for(mlm, "dull dull", {0, 1}));
  ASSERT_TRUE(r);
  ASSERT_EQ(r->logprobs.size(), 2u);
  EXPECT_DOUBLE_EQ(r->logprobs[0], std::log(0.5));
  EXPECT_DOUBLE_EQ(r->logprobs[1], std::log(0.5));
  EXPECT_EQ(mlm.mask_score(query_for(mlm, "dull dull", {0, 1}))->logprobs, r->logprobs);
}

TEST(ScriptedMlm, TargetOutOfVocabulary) {
  ScriptedMlmBackend mlm(MlmScript{});
  auto q = query_for(mlm, "a b", {1});
  q.target_ids[0] = 50000;
  auto r = mlm.mask_score(q);
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, BackendErrorKind::kVocabularyMismatch);
}

TEST(ValidateQuery, Invariants) {
  const std::int64_t mask = 99;
  EXPECT_FALSE(validate_query({{1, 99, 3}, {1}, {2}}, mask));
  EXPECT_TRUE(validate_query({{1, 2, 3}, {}, {}}, mask));           // no mask
  EXPECT_TRUE(validate_query({{1, 99, 3}, {1}, {2, 3}}, mask));     // size mismatch
  EXPECT_TRUE(validate_query({{1, 99, 3}, {5}, {2}}, mask));        // out of range
  EXPECT_TRUE(validate_query({{99, 99}, {1, 0}, {2, 2}}, mask));    // not increasing
  EXPECT_TRUE(validate_query({{1, 2, 3}, {1}, {2}}, mask));         // position not masked
}

TEST(Backoff, ExponentialDelays) {
  BackoffPolicy p;
  EXPECT_EQ(p.delay(0), std::chrono::milliseconds(1000));
  EXPECT_EQ(p.delay(1), std::chrono::milliseconds(2000));
  EXPECT_EQ(p.delay(4), std::chrono::milliseconds(16000));
}

TEST(Backoff, RetriesTransientErrorsAndHonoursRetryAfter) {
  auto chat = ScriptedChatBackend::from_json(json::parse(R"({"steps":[{"error":"rate_limited","retry_after_ms":5000},
                                                                     {"error":"timeout"},{"text":"ok"}]})"));
  std::vector<std::chrono::milliseconds> waits;
  std::size_t retries = 0;
  auto r = with_backoff([&] { return chat->complete("p", {}); }, BackoffPolicy{}, [&](auto d) { waits.push_back(d); },
                        retries);
  ASSERT_TRUE(r);
  EXPECT_EQ(retries, 2u);
  EXPECT_EQ(waits, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(5000), std::chrono::milliseconds(2000)}));
}

TEST(Backoff, GivesUpAfterBudget) {
  ScriptedChatBackend chat({ScriptStep{std::nullopt, BackendError{BackendErrorKind::kTransport, "down", {}, 0}}});
  std::size_t retries = 0;
  auto r = with_backoff([&] { return chat.complete("p", {}); }, BackoffPolicy{}, [](auto) {}, retries);
  ASSERT_FALSE(r);
  EXPECT_EQ(retries, 5u);
  EXPECT_EQ(chat.call_count(), 6u);
}

TEST(Backoff, RefusalIsNotRetried) {
  ScriptedChatBackend chat({ScriptStep{std::nullopt, BackendError{BackendErrorKind::kRefusal, "no", {}, 0}}});
  std::size_t retries = 0;
  auto r = with_backoff([&] { return chat.complete("p", {}); }, BackoffPolicy{}, [](auto) {}, retries);
  EXPECT_FALSE(r);
  EXPECT_EQ(chat.call_count(), 1u);
}

TEST(GenParams, Validation) {
  EXPECT_NO_THROW(GenParams{}.validate());
  EXPECT_ANY_THROW((GenParams{.temperature = -1.0}).validate());
  EXPECT_ANY_THROW((GenParams{.top_p = 0.0}).validate());
  EXPECT_ANY_THROW((GenParams{.max_tokens = 0}).validate());
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(error_from_status(400, "", "").kind, BackendErrorKind::kInvalidRequest);
  EXPECT_EQ(error_from_status(408, "", "").kind, BackendErrorKind::kTimeout);
  EXPECT_EQ(error_from_status(504, "", "").kind, BackendErrorKind::kTimeout);
  EXPECT_EQ(error_from_status(422, "", "").kind, BackendErrorKind::kVocabularyMismatch);
  EXPECT_EQ(error_from_status(451, "", "").kind, BackendErrorKind::kRefusal);
  EXPECT_EQ(error_from_status(503, "", "").kind, BackendErrorKind::kTransport);
  auto rl = error_from_status(429, "", "2.5");
  EXPECT_EQ(rl.kind, BackendErrorKind::kRateLimited);
  EXPECT_EQ(rl.retry_after, std::chrono::milliseconds(2500));
  EXPECT_EQ(error_from_status(500, R"({"error":{"kind":"refusal","message":"policy"}})", "").kind,
            BackendErrorKind::kRefusal);
}

class FakeModelServer : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      last_auth_ = req.get_header_value("Authorization");
      if (++complete_calls_ == 1 && body["prompt"] == "flaky") {
        res.status = 429;
        res.set_header("Retry-After", "0");
        return;
      }
      res.set_content(json{{"text", "echo:" + body["prompt"].get<std::string>()}}.dump(), "application/json");
    });
    server_.Post("/v1/tokenize", [](const httplib::Request& req, httplib::Response& res) {
      const auto text = json::parse(req.body)["text"].get<std::string>();
      json ids = json::array();
      json offsets = json::array();
      for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == ' ') continue;
        auto j = text.find(' ', i);
        if (j == std::string::npos) j = text.size();
        ids.push_back(static_cast<int>(j - i));
        offsets.push_back({i, j});
        i = j;
      }
      res.set_content(json{{"token_ids", ids}, {"offsets", offsets}}.dump(), "application/json");
    });
    server_.Post("/v1/mask_score", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      json lp = json::array();
      for (std::size_t k = 0; k < body["mask_positions"].size(); ++k) lp.push_back(std::log(0.5));
      res.set_content(json{{"logprobs", lp}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  HttpConfig config() const {
    HttpConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_);
    c.timeout = std::chrono::seconds(5);
    return c;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> complete_calls_{0};
  std::string last_auth_;
};

TEST_F(FakeModelServer, ChatRoundTrip) {
  ::setenv("DICTEX_TEST_TOKEN", "s3cret", 1);
  auto c = config();
  c.token_env = "DICTEX_TEST_TOKEN";
  HttpChatBackend chat(c);
  auto r = chat.complete("hi", {});
  ASSERT_TRUE(r) << r.error().message;
  EXPECT_EQ(r.value(), "echo:hi");
  EXPECT_EQ(last_auth_, "Bearer s3cret");
  EXPECT_EQ(chat.stats().requests, 1u);
  EXPECT_FALSE(chat.complete("", {}));
  EXPECT_EQ(chat.stats().requests, 1u);
}

TEST_F(FakeModelServer, RateLimitSurfacesAsValue) {
  HttpChatBackend chat(config());
  auto r = chat.complete("flaky", {});
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, BackendErrorKind::kRateLimited);
  EXPECT_EQ(r.error().http_status, 429);
  std::size_t retries = 0;
  auto ok = with_backoff([&] { return chat.complete("flaky", {}); }, BackoffPolicy{}, [](auto) {}, retries);
  EXPECT_TRUE(ok);
  EXPECT_EQ(retries, 0u);
}

TEST_F(FakeModelServer, MlmRoundTrip) {
  HttpMlmBackend mlm(config(), MlmModelInfo{.mask_token_id = 99, .vocab_size = 100, .max_length = 16});
  auto t = mlm.tokenize("a dull ache", false);
  ASSERT_TRUE(t) << t.error().message;
  EXPECT_EQ(t->token_ids, (std::vector<std::int64_t>{1, 4, 4}));
  EXPECT_EQ(t->offsets[1], (std::pair<std::size_t, std::size_t>{2, 6}));
  auto s = mlm.mask_score(MaskQuery{{1, 99, 4}, {1}, {4}});
  ASSERT_TRUE(s) << s.error().message;
  EXPECT_DOUBLE_EQ(s->logprobs[0], std::log(0.5));
  auto oov = mlm.mask_score(MaskQuery{{1, 99, 4}, {1}, {100}});
  ASSERT_FALSE(oov);
  EXPECT_EQ(oov.error().kind, BackendErrorKind::kVocabularyMismatch);
}

TEST(HttpTransport, ConnectionFailureIsTransport) {
  HttpConfig c;
  c.endpoint = "http://127.0.0.1:1";
  c.timeout = std::chrono::seconds(2);
  HttpChatBackend chat(c);
  auto r = chat.complete("hi", {});
  ASSERT_FALSE(r);
  EXPECT_TRUE(r.error().transient());
}
