#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <httplib.h>
#include <json.hpp>

#include "dialplan/chat.hpp"
#include "dialplan/log.hpp"
#include "dialplan/oracle.hpp"

namespace dialplan::llm {

// ─── Errors ────────────────────────────────────────────────────

/// Base of all transport errors; surfaces to the planner as an OracleError.
class LlmError : public OracleError {
public:
    using OracleError::OracleError;
};

class AuthError : public LlmError {
public:
    explicit AuthError(const std::string& w) : LlmError(w, false) {}
};

class RetryBudgetExhausted : public LlmError {
public:
    explicit RetryBudgetExhausted(const std::string& w) : LlmError(w, true) {}
};

class MalformedResponse : public LlmError {
public:
    explicit MalformedResponse(const std::string& w) : LlmError(w, false) {}
};

class RequestRejected : public LlmError {
public:
    explicit RequestRejected(const std::string& w) : LlmError(w, false) {}
};

// ─── Request / cache key ───────────────────────────────────────

struct ChatRequest {
    std::string model;
    MessageList messages;
    double temperature = 1.0;
    int sample_count = 1;
    int max_tokens = 256;

    void validate() const {
        if (messages.empty()) throw std::invalid_argument("ChatRequest: no messages");
        for (const auto& m : messages)
            if (!is_valid_role(m.role)) throw std::invalid_argument("ChatRequest: bad role '" + m.role + "'");
        if (temperature < 0.0) throw std::invalid_argument("ChatRequest: negative temperature");
        if (sample_count < 1) throw std::invalid_argument("ChatRequest: sample_count must be positive");
        if (max_tokens < 1) throw std::invalid_argument("ChatRequest: max_tokens must be positive");
    }
};

inline nlohmann::json messages_json(const MessageList& messages) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
    return arr;
}

/// Canonical serialisation of the sampling-relevant fields (keys sorted, compact).
inline std::string canonical_request(const ChatRequest& req) {
    nlohmann::json j = {{"model", req.model},
                        {"messages", messages_json(req.messages)},
                        {"temperature", req.temperature},
                        {"max_tokens", req.max_tokens}};
    return j.dump();
}

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

struct CacheKey {
    std::string request_hash;
    int ordinal = 0;

    std::string file_name() const { return request_hash + "." + std::to_string(ordinal) + ".txt"; }
    friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

inline std::string request_hash(const ChatRequest& req) { return sha256_hex(canonical_request(req)); }

// ─── Disk cache ────────────────────────────────────────────────

/// Content-addressed completion cache: one file per (request hash, ordinal).
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }

    std::filesystem::path path_for(const CacheKey& key) const {
        return dir_ / key.request_hash.substr(0, 2) / key.file_name();
    }

    std::optional<std::string> get(const CacheKey& key) const {
        std::ifstream in(path_for(key), std::ios::binary);
        if (!in) return std::nullopt;
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    /// Write-then-rename, so readers never observe a partial file.
    void put(const CacheKey& key, const std::string& completion) const {
        const auto target = path_for(key);
        std::filesystem::create_directories(target.parent_path());
        static std::atomic<std::uint64_t> counter{0};
        const auto tmp = target.parent_path() /
                         (key.file_name() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
                          "." + std::to_string(counter.fetch_add(1)));
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("response cache: cannot write " + tmp.string());
            out << completion;
        }
        std::filesystem::rename(tmp, target);
    }

private:
    std::filesystem::path dir_;
};

// ─── Transport ─────────────────────────────────────────────────

struct HttpResponse {
    int status = 0;          // 0 when the request never completed
    std::string body;
    std::string error;       // transport-level failure description
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post_json(const std::string& path, const std::string& body,
                                   const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

/// cpp-httplib transport for "scheme://host[:port][/prefix]" endpoints.
class HttplibTransport final : public HttpTransport {
public:
    HttplibTransport(const std::string& endpoint, std::chrono::seconds timeout) : timeout_(timeout) {
        const auto scheme_end = endpoint.find("://");
        const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
        const auto path_start = endpoint.find('/', host_start);
        origin_ = endpoint.substr(0, path_start);
        prefix_ = path_start == std::string::npos ? "" : endpoint.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }

    HttpResponse post_json(const std::string& path, const std::string& body,
                           const std::vector<std::pair<std::string, std::string>>& headers) override {
        httplib::Client cli(origin_);
        cli.set_connection_timeout(timeout_);
        cli.set_read_timeout(timeout_);
        cli.set_write_timeout(timeout_);
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = cli.Post(prefix_ + path, h, body, "application/json");
        if (!res) return {0, {}, httplib::to_string(res.error())};
        return {res->status, res->body, {}};
    }

private:
    std::string origin_;
    std::string prefix_;
    std::chrono::seconds timeout_;
};

// ─── Client ────────────────────────────────────────────────────

struct ClientConfig {
    std::string endpoint = "https://api.openai.com/v1";
    std::string model = "gpt-3.5-turbo";
    std::string api_key;
    int timeout_seconds = 60;
    int max_retries = 5;
    int backoff_initial_ms = 1000;
    bool backoff_jitter = true;
    int max_in_flight = 0;  // 0 = unlimited
    std::optional<std::filesystem::path> cache_dir;
};

struct UsageSnapshot {
    std::int64_t requests = 0;          // HTTP requests attempted
    std::int64_t retries = 0;
    std::int64_t cache_hits = 0;        // completions served from disk
    std::int64_t completions_fetched = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

/// Chat-completion client for the OpenAI-compatible wire protocol.
///
/// Completions are cached per (request, ordinal). Callers asking for the same
/// request again pass a later `first_ordinal` to obtain fresh samples.
class ChatClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    ChatClient(ClientConfig cfg, std::shared_ptr<HttpTransport> transport = nullptr)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {
        if (!transport_)
            transport_ = std::make_shared<HttplibTransport>(cfg_.endpoint, std::chrono::seconds(cfg_.timeout_seconds));
        if (cfg_.cache_dir) cache_.emplace(*cfg_.cache_dir);
        sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }

    const ClientConfig& config() const { return cfg_; }
    void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

    UsageSnapshot usage() const {
        return {requests_.load(), retries_.load(), cache_hits_.load(), fetched_.load(), prompt_tokens_.load(),
                completion_tokens_.load()};
    }

    /// `req.sample_count` completions for ordinals first_ordinal, first_ordinal+1, ...
    std::vector<std::string> chat_complete(const ChatRequest& req, int first_ordinal = 0) {
        req.validate();
        const std::string hash = request_hash(req);
        std::vector<std::optional<std::string>> slots(static_cast<std::size_t>(req.sample_count));
        std::vector<std::size_t> missing;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (cache_) slots[i] = cache_->get({hash, first_ordinal + static_cast<int>(i)});
            if (slots[i]) ++cache_hits_;
            else missing.push_back(i);
        }

        if (!missing.empty()) {
            auto fetched = fetch(req, static_cast<int>(missing.size()));
            for (std::size_t j = 0; j < missing.size(); ++j) {
                slots[missing[j]] = fetched[j];
                if (cache_) cache_->put({hash, first_ordinal + static_cast<int>(missing[j])}, fetched[j]);
            }
        }

        std::vector<std::string> out;
        out.reserve(slots.size());
        for (auto& s : slots) out.push_back(std::move(*s));
        return out;
    }

private:
    class Slot {
    public:
        explicit Slot(ChatClient& c) : c_(c) {
            if (c_.cfg_.max_in_flight <= 0) return;
            std::unique_lock lock(c_.mu_);
            c_.cv_.wait(lock, [&] { return c_.in_flight_ < c_.cfg_.max_in_flight; });
            ++c_.in_flight_;
        }
        ~Slot() {
            if (c_.cfg_.max_in_flight <= 0) return;
            {
                std::lock_guard lock(c_.mu_);
                --c_.in_flight_;
            }
            c_.cv_.notify_one();
        }

    private:
        ChatClient& c_;
    };

    static bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

    std::chrono::milliseconds backoff(int attempt) {
        double ms = cfg_.backoff_initial_ms * std::pow(2.0, attempt);
        if (cfg_.backoff_jitter) {
            std::lock_guard lock(mu_);
            ms *= std::uniform_real_distribution<double>(0.5, 1.5)(jitter_);
        }
        return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
    }

    std::vector<std::string> fetch(const ChatRequest& req, int n) {
        nlohmann::json body = {{"model", req.model},
                               {"messages", messages_json(req.messages)},
                               {"temperature", req.temperature},
                               {"n", n},
                               {"max_tokens", req.max_tokens}};
        const std::string payload = body.dump();
        std::vector<std::pair<std::string, std::string>> headers;
        if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);

        std::string last_error;
        for (int attempt = 0;; ++attempt) {
            HttpResponse res;
            {
                Slot slot(*this);
                ++requests_;
                res = transport_->post_json("/chat/completions", payload, headers);
            }
            if (res.status == 200) return parse(res.body, n);
            if (res.status == 401 || res.status == 403)
                throw AuthError("chat completion: authentication failed (HTTP " + std::to_string(res.status) + ")");
            if (res.status != 0 && !retryable_status(res.status))
                throw RequestRejected("chat completion: HTTP " + std::to_string(res.status) + ": " + res.body);

            last_error = res.status == 0 ? res.error : "HTTP " + std::to_string(res.status);
            if (attempt >= cfg_.max_retries)
                throw RetryBudgetExhausted("chat completion: retry budget exhausted (" + last_error + ")");
            ++retries_;
            log::info("chat completion: " + last_error + ", retrying");
            sleeper_(backoff(attempt));
        }
    }

    std::vector<std::string> parse(const std::string& body, int n) {
        try {
            const auto j = nlohmann::json::parse(body);
            const auto& choices = j.at("choices");
            if (!choices.is_array() || static_cast<int>(choices.size()) < n)
                throw MalformedResponse("chat completion: expected " + std::to_string(n) + " choices");
            // Servers may reorder choices; "index" restores request order when present.
            std::vector<std::optional<std::string>> out(static_cast<std::size_t>(n));
            int next = 0;
            for (const auto& c : choices) {
                int idx = c.contains("index") ? c.at("index").get<int>() : next;
                ++next;
                if (idx < 0 || idx >= n) continue;
                out[static_cast<std::size_t>(idx)] = c.at("message").at("content").get<std::string>();
            }
            if (j.contains("usage")) {
                prompt_tokens_ += j["usage"].value("prompt_tokens", 0);
                completion_tokens_ += j["usage"].value("completion_tokens", 0);
            }
            std::vector<std::string> result;
            for (auto& s : out) {
                if (!s) throw MalformedResponse("chat completion: missing choice");
                result.push_back(std::move(*s));
            }
            fetched_ += n;
            return result;
        } catch (const nlohmann::json::exception& e) {
            throw MalformedResponse(std::string("chat completion: malformed body: ") + e.what());
        }
    }

    ClientConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    std::optional<ResponseCache> cache_;
    Sleeper sleeper_;

    std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    std::mt19937_64 jitter_{0x0badc0deULL};

    std::atomic<std::int64_t> requests_{0}, retries_{0}, cache_hits_{0}, fetched_{0}, prompt_tokens_{0},
        completion_tokens_{0};
};

}  // namespace dialplan::llm
