#include <gtest/gtest.h>

#include <atomic>
#include <deque>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "dialplan/llm.hpp"
#include "dialplan/llm_oracle.hpp"
#include "test_support.hpp"

using namespace dialplan;
using namespace dialplan::llm;

namespace {

nlohmann::json choices_body(const std::vector<std::string>& texts, bool reversed = false) {
    nlohmann::json choices = nlohmann::json::array();
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::size_t k = reversed ? texts.size() - 1 - i : i;
        choices.push_back({{"index", k}, {"message", {{"role", "assistant"}, {"content", texts[k]}}}});
    }
    return {{"choices", choices}, {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 2}}}};
}

/// Local chat-completion server. Scripted failures are served first; after
/// that every request succeeds with "reply-<k>" for k in [0, n).
class StubServer {
public:
    StubServer() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int now = ++in_flight_;
            {
                std::lock_guard lock(mu_);
                max_in_flight_ = std::max(max_in_flight_, now);
                bodies_.push_back(nlohmann::json::parse(req.body));
                auth_.push_back(req.get_header_value("Authorization"));
            }
            if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
            std::pair<int, std::string> scripted{0, ""};
            {
                std::lock_guard lock(mu_);
                if (!script_.empty()) {
                    scripted = script_.front();
                    script_.pop_front();
                }
            }
            if (scripted.first != 0) {
                res.status = scripted.first;
                res.set_content(scripted.second, "application/json");
            } else {
                const int n = nlohmann::json::parse(req.body).at("n").get<int>();
                std::vector<std::string> texts;
                for (int k = 0; k < n; ++k) texts.push_back(reply_prefix_ + std::to_string(k));
                res.set_content(choices_body(texts, true).dump(), "application/json");
            }
            --in_flight_;
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    void push(int status, std::string body = "{}") {
        std::lock_guard lock(mu_);
        script_.emplace_back(status, std::move(body));
    }
    int requests() {
        std::lock_guard lock(mu_);
        return static_cast<int>(bodies_.size());
    }
    nlohmann::json body(std::size_t i) {
        std::lock_guard lock(mu_);
        return bodies_.at(i);
    }
    std::string auth(std::size_t i) {
        std::lock_guard lock(mu_);
        return auth_.at(i);
    }
    int max_in_flight() {
        std::lock_guard lock(mu_);
        return max_in_flight_;
    }
    void set_delay(int ms) { delay_ms_ = ms; }
    void set_reply_prefix(std::string p) { reply_prefix_ = std::move(p); }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mu_;
    std::deque<std::pair<int, std::string>> script_;
    std::vector<nlohmann::json> bodies_;
    std::vector<std::string> auth_;
    std::atomic<int> in_flight_{0};
    int max_in_flight_ = 0;
    std::atomic<int> delay_ms_{0};
    std::string reply_prefix_ = "reply-";
};

ChatRequest request(int n = 1) {
    return {"test-model", {{"system", "be brief"}, {"user", "hello"}}, 0.7, n, 32};
}

ClientConfig config_for(const StubServer& s, std::optional<std::filesystem::path> cache = std::nullopt) {
    ClientConfig c;
    c.endpoint = s.endpoint();
    c.model = "test-model";
    c.api_key = "sk-test";
    c.timeout_seconds = 5;
    c.max_retries = 2;
    c.cache_dir = std::move(cache);
    return c;
}

}  // namespace

TEST(LlmRequest, ValidationRejectsBadFields) {
    auto r = request();
    EXPECT_NO_THROW(r.validate());
    r.messages = {};
    EXPECT_THROW(r.validate(), std::invalid_argument);
    r = request();
    r.messages[0].role = "tool";
    EXPECT_THROW(r.validate(), std::invalid_argument);
    r = request(0);
    EXPECT_THROW(r.validate(), std::invalid_argument);
}

TEST(LlmCacheKey, Sha256KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(LlmCacheKey, StableUnderReserializationAndIgnoresSampleCount) {
    const auto a = request(1);
    auto b = request(4);
    // Rebuild the messages from their JSON form.
    b.messages.clear();
    for (const auto& m : nlohmann::json::parse(messages_json(a.messages).dump()))
        b.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    EXPECT_EQ(request_hash(a), request_hash(b));
    auto c = request();
    c.temperature = 0.8;
    EXPECT_NE(request_hash(a), request_hash(c));
}

TEST(LlmCache, WriteThenReadIsByteIdentical) {
    ResponseCache cache(testsupport::scratch_dir("cache_roundtrip"));
    const std::string payload = std::string("line1\nline2\r\n\0tail \xE2\x9C\x93", 24);
    const CacheKey key{sha256_hex("k"), 3};
    EXPECT_FALSE(cache.get(key).has_value());
    cache.put(key, payload);
    EXPECT_EQ(cache.get(key), payload);
    EXPECT_FALSE(cache.get({key.request_hash, 4}).has_value());
}

TEST(LlmClient, ReturnsSampleCountCompletionsInOrdinalOrder) {
    StubServer server;
    ChatClient client(config_for(server));
    const auto out = client.chat_complete(request(3));
    EXPECT_EQ(out, (std::vector<std::string>{"reply-0", "reply-1", "reply-2"}));
    const auto body = server.body(0);
    EXPECT_EQ(body.at("n"), 3);
    EXPECT_EQ(body.at("model"), "test-model");
    EXPECT_EQ(body.at("max_tokens"), 32);
    EXPECT_EQ(body.at("messages")[1].at("content"), "hello");
    EXPECT_EQ(server.auth(0), "Bearer sk-test");
    EXPECT_EQ(client.usage().prompt_tokens, 10);
}

TEST(LlmClient, SecondIdenticalCallHitsCacheOnly) {
    StubServer server;
    const auto dir = testsupport::scratch_dir("cache_hit");
    ChatClient client(config_for(server, dir));
    const auto first = client.chat_complete(request(2));
    EXPECT_EQ(server.requests(), 1);
    ChatClient again(config_for(server, dir));
    EXPECT_EQ(again.chat_complete(request(2)), first);
    EXPECT_EQ(server.requests(), 1);
    EXPECT_EQ(again.usage().requests, 0);
    EXPECT_EQ(again.usage().cache_hits, 2);
}

TEST(LlmClient, OnlyMissingOrdinalsAreFetched) {
    StubServer server;
    ChatClient client(config_for(server, testsupport::scratch_dir("cache_partial")));
    client.chat_complete(request(2), 0);
    server.set_reply_prefix("late-");
    const auto out = client.chat_complete(request(3), 1);
    EXPECT_EQ(server.requests(), 2);
    EXPECT_EQ(server.body(1).at("n"), 2);
    EXPECT_EQ(out, (std::vector<std::string>{"reply-1", "late-0", "late-1"}));
}

TEST(LlmClient, RetriesRateLimitWithOneBackoff) {
    StubServer server;
    server.push(429);
    ChatClient client(config_for(server));
    std::vector<std::chrono::milliseconds> sleeps;
    client.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    EXPECT_EQ(client.chat_complete(request()).front(), "reply-0");
    ASSERT_EQ(sleeps.size(), 1u);
    EXPECT_GE(sleeps[0].count(), 500);
    EXPECT_LE(sleeps[0].count(), 1500);
    EXPECT_EQ(server.requests(), 2);
    EXPECT_EQ(client.usage().requests, server.requests());
    EXPECT_EQ(client.usage().retries, 1);
}

TEST(LlmClient, BackoffDoublesWithoutJitter) {
    StubServer server;
    for (int i = 0; i < 3; ++i) server.push(503);
    auto cfg = config_for(server);
    cfg.backoff_jitter = false;
    cfg.max_retries = 2;
    ChatClient client(cfg);
    std::vector<long> sleeps;
    client.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(static_cast<long>(d.count())); });
    try {
        client.chat_complete(request());
        FAIL() << "expected RetryBudgetExhausted";
    } catch (const RetryBudgetExhausted& e) {
        EXPECT_TRUE(e.retryable());
    }
    EXPECT_EQ(sleeps, (std::vector<long>{1000, 2000}));
    EXPECT_EQ(server.requests(), 3);
    EXPECT_EQ(client.usage().requests, 3);
}

TEST(LlmClient, AuthFailureIsNotRetried) {
    StubServer server;
    server.push(401, R"({"error":"bad key"})");
    ChatClient client(config_for(server));
    int sleeps = 0;
    client.set_sleeper([&](std::chrono::milliseconds) { ++sleeps; });
    try {
        client.chat_complete(request());
        FAIL() << "expected AuthError";
    } catch (const AuthError& e) {
        EXPECT_FALSE(e.retryable());
    }
    EXPECT_EQ(sleeps, 0);
    EXPECT_EQ(server.requests(), 1);
}

TEST(LlmClient, MalformedBodyIsReported) {
    StubServer server;
    server.push(200, R"({"choices":[{"message":{}}]})");
    ChatClient client(config_for(server));
    EXPECT_THROW(client.chat_complete(request()), MalformedResponse);
    server.push(200, "not json");
    EXPECT_THROW(client.chat_complete(request()), MalformedResponse);
}

TEST(LlmClient, ConnectionFailuresAreRetriedThenSurfaced) {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    ClientConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    cfg.max_retries = 1;
    cfg.timeout_seconds = 1;
    ChatClient client(cfg);
    int sleeps = 0;
    client.set_sleeper([&](std::chrono::milliseconds) { ++sleeps; });
    EXPECT_THROW(client.chat_complete(request()), RetryBudgetExhausted);
    EXPECT_EQ(sleeps, 1);
    EXPECT_EQ(client.usage().requests, 2);
}

TEST(LlmClient, LimiterBoundsInFlightRequests) {
    StubServer server;
    server.set_delay(30);
    auto cfg = config_for(server, testsupport::scratch_dir("cache_limiter"));
    cfg.max_in_flight = 1;
    ChatClient client(cfg);
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i)
        threads.emplace_back([&, i] {
            auto r = request();
            r.messages[1].content = "hello " + std::to_string(i);
            client.chat_complete(r);
        });
    for (auto& t : threads) t.join();
    EXPECT_EQ(server.requests(), 4);
    EXPECT_EQ(server.max_in_flight(), 1);
    EXPECT_EQ(client.usage().requests, 4);
}

// ─── LLM oracle over an in-process transport ───────────────────

namespace {

/// Serves completions from a queue, one per requested sample.
class QueueTransport : public HttpTransport {
public:
    std::deque<std::string> replies;
    std::vector<nlohmann::json> bodies;

    HttpResponse post_json(const std::string&, const std::string& body,
                           const std::vector<std::pair<std::string, std::string>>&) override {
        bodies.push_back(nlohmann::json::parse(body));
        const int n = bodies.back().at("n").get<int>();
        std::vector<std::string> out;
        for (int i = 0; i < n; ++i) {
            out.push_back(replies.empty() ? "???" : replies.front());
            if (!replies.empty()) replies.pop_front();
        }
        return {200, choices_body(out).dump(), {}};
    }
};

struct OracleFixture {
    std::shared_ptr<QueueTransport> transport = std::make_shared<QueueTransport>();
    std::shared_ptr<ChatClient> client;
    std::unique_ptr<LlmOracle> oracle;
    Rng rng{0};

    explicit OracleFixture(std::optional<std::filesystem::path> cache = std::nullopt) {
        ClientConfig cfg;
        cfg.cache_dir = std::move(cache);
        client = std::make_shared<ChatClient>(cfg, transport);
        oracle = std::make_unique<LlmOracle>(p4g::builtin_task(), client);
    }
};

}  // namespace

TEST(LlmOracle, UserTurnParsesLabelAndStripsIt) {
    OracleFixture f;
    f.transport->replies = {"Persuadee: [positive reaction] That sounds really good!"};
    const auto r = f.oracle->generate_user_turn(testsupport::five_turn_history(), 1.0, f.rng);
    EXPECT_EQ(r.label, ReactionLabel::PositiveReaction);
    EXPECT_EQ(r.text, "That sounds really good!");
}

TEST(LlmOracle, UnparseableUserTurnFallsBackToNeutralAfterRetries) {
    OracleFixture f;
    f.transport->replies = {"nope", "still nope", "no", "Persuadee: Sure, tell me more."};
    const auto r = f.oracle->generate_user_turn(testsupport::five_turn_history(), 1.0, f.rng);
    EXPECT_EQ(r.label, ReactionLabel::Neutral);
    EXPECT_EQ(r.text, "Sure, tell me more.");
    EXPECT_EQ(f.transport->bodies.size(), 4u);
}

TEST(LlmOracle, ValueLabelsResampleFailuresThenSubstituteNeutral) {
    OracleFixture f;
    f.transport->replies = {"[donate] yes", "garbage", "[neutral] hm", "bad"};
    const auto labels = f.oracle->sample_value_labels(testsupport::six_turn_history(), 3, 1.1, f.rng);
    // Round 1: donate, fail, neutral. Rounds 2-4 each fail once more.
    ASSERT_EQ(labels.size(), 3u);
    EXPECT_EQ(labels[0], ReactionLabel::Donate);
    EXPECT_EQ(labels[1], ReactionLabel::Neutral);
    EXPECT_EQ(labels[2], ReactionLabel::Neutral);
    ASSERT_EQ(f.transport->bodies.size(), 4u);
    EXPECT_EQ(f.transport->bodies[0].at("n"), 3);
    EXPECT_EQ(f.transport->bodies[1].at("n"), 1);
    EXPECT_DOUBLE_EQ(f.transport->bodies[0].at("temperature").get<double>(), 1.1);
}

TEST(LlmOracle, PriorDropsUnparseableSamples) {
    OracleFixture f;
    f.transport->replies = {"[emotion appeal] a", "[logical appeal] b", "[dance] c", "oops", "x", "y", "z",
                            "w", "v"};
    const auto acts = f.oracle->sample_prior_acts(testsupport::four_turn_history(), 4, 1.0, f.rng);
    EXPECT_EQ(acts, (std::vector<ActId>{p4g::act::kEmotionAppeal, p4g::act::kLogicalAppeal}));
}

TEST(LlmOracle, SystemUtteranceIsCleaned) {
    OracleFixture f;
    f.transport->replies = {"Persuader: [credibility appeal] They work in 100 countries."};
    const auto task = p4g::builtin_task();
    EXPECT_EQ(f.oracle->generate_system_utterance(testsupport::four_turn_history(),
                                                  task.acts[p4g::act::kCredibilityAppeal], 0.7, f.rng),
              "They work in 100 countries.");
    const auto& msgs = f.transport->bodies[0].at("messages");
    EXPECT_TRUE(msgs.back().at("content").get<std::string>().ends_with(
        "The Persuader establishes credibility of Save the Children by citing its impact."));
}

TEST(LlmOracle, RepeatedRequestsGetFreshOrdinalsAndReplayFromCache) {
    const auto dir = testsupport::scratch_dir("oracle_replay");
    std::vector<std::string> first;
    {
        OracleFixture f(dir);
        f.transport->replies = {"[neutral] a", "[donate] b"};
        const auto h = testsupport::five_turn_history();
        first.push_back(f.oracle->generate_user_turn(h, 1.0, f.rng).text);
        first.push_back(f.oracle->generate_user_turn(h, 1.0, f.rng).text);
        EXPECT_EQ(first, (std::vector<std::string>{"a", "b"}));
    }
    OracleFixture replay(dir);
    const auto h = testsupport::five_turn_history();
    EXPECT_EQ(replay.oracle->generate_user_turn(h, 1.0, replay.rng).text, "a");
    EXPECT_EQ(replay.oracle->generate_user_turn(h, 1.0, replay.rng).text, "b");
    EXPECT_TRUE(replay.transport->bodies.empty());
}
