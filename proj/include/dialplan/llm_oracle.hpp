#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dialplan/llm.hpp"
#include "dialplan/log.hpp"
#include "dialplan/oracle.hpp"
#include "dialplan/p4g.hpp"

namespace dialplan {

struct LlmOracleConfig {
    std::string model = "gpt-3.5-turbo";
    int max_tokens = 256;
    int parse_retry_rounds = 3;  // extra sampling rounds for unparseable completions
};

/// Oracle backed by a chat-completion model prompted with the task templates.
///
/// Sampling randomness comes from the model; the `Rng` arguments are unused.
/// Every request text gets its own ordinal counter so repeating a prompt
/// yields new samples, and replaying a run against a warm cache is exact.
class LlmOracle : public OracleInterface {
public:
    LlmOracle(p4g::Task task, std::shared_ptr<llm::ChatClient> client, LlmOracleConfig cfg = {})
        : task_(std::move(task)), client_(std::move(client)), cfg_(std::move(cfg)) {
        if (!client_) throw std::invalid_argument("LlmOracle: no client");
    }

    const p4g::Task& task() const { return task_; }
    const ActionSpace& action_space() const override { return task_.acts; }

    /// Raw completions for an arbitrary prompt.
    std::vector<std::string> complete(const MessageList& messages, int count, double temperature) {
        llm::ChatRequest req{cfg_.model, messages, temperature, count, cfg_.max_tokens};
        int first = 0;
        {
            std::lock_guard lock(mu_);
            int& next = ordinals_[llm::request_hash(req)];
            first = next;
            next += count;
        }
        return client_->chat_complete(req, first);
    }

    std::string generate_system_utterance(const DialogueHistory& h, const DialogueAct& act, double temp,
                                          Rng&) override {
        const auto prompt = p4g::render_system_prompt(task_, h, act);
        std::string text;
        for (int round = 0; round <= cfg_.parse_retry_rounds; ++round) {
            text = p4g::clean_system_utterance(complete(prompt, 1, temp).front());
            if (!text.empty()) return text;
        }
        throw OracleError("LlmOracle: empty system utterance after retries", true);
    }

    UserReply generate_user_turn(const DialogueHistory& h, double temp, Rng&) override {
        const auto prompt = p4g::render_user_sim_prompt(task_, h);
        std::string last;
        for (int round = 0; round <= cfg_.parse_retry_rounds; ++round) {
            last = complete(prompt, 1, temp).front();
            if (auto r = p4g::parse_user_reply(last)) return {r->first, r->second};
        }
        log::warn("LlmOracle: unparseable user reaction, using neutral");
        return {ReactionLabel::Neutral, strip_speaker(last)};
    }

    std::vector<ActId> sample_prior_acts(const DialogueHistory& h, int m, double temp, Rng&) override {
        if (m < 1) throw std::invalid_argument("sample_prior_acts: m must be positive");
        const auto prompt = p4g::render_prior_prompt(task_, h);
        std::vector<ActId> out;
        int missing = m;
        for (int round = 0; round <= cfg_.parse_retry_rounds && missing > 0; ++round) {
            for (const auto& s : complete(prompt, missing, temp))
                if (auto a = p4g::parse_act(task_, s)) out.push_back(*a);
            missing = m - static_cast<int>(out.size());
        }
        if (missing > 0) log::warn("LlmOracle: dropped " + std::to_string(missing) + " unparseable prior samples");
        return out;
    }

    std::vector<ReactionLabel> sample_value_labels(const DialogueHistory& h, int l, double temp, Rng&) override {
        if (l < 1) throw std::invalid_argument("sample_value_labels: l must be positive");
        const auto prompt = p4g::render_value_prompt(task_, h);
        std::vector<ReactionLabel> out;
        int missing = l;
        for (int round = 0; round <= cfg_.parse_retry_rounds && missing > 0; ++round) {
            for (const auto& s : complete(prompt, missing, temp))
                if (auto r = p4g::parse_user_reply(s)) out.push_back(r->first);
            missing = l - static_cast<int>(out.size());
        }
        if (missing > 0) {
            log::warn("LlmOracle: " + std::to_string(missing) + " unparseable value samples counted as neutral");
            out.insert(out.end(), static_cast<std::size_t>(missing), ReactionLabel::Neutral);
        }
        return out;
    }

private:
    std::string strip_speaker(std::string_view text) const {
        std::string s = trim(text);
        const std::string prefix = task_.user_speaker + ":";
        if (std::string_view(s).starts_with(prefix)) s = trim(std::string_view(s).substr(prefix.size()));
        return s;
    }

    p4g::Task task_;
    std::shared_ptr<llm::ChatClient> client_;
    LlmOracleConfig cfg_;
    std::mutex mu_;
    std::map<std::string, int> ordinals_;
};

}  // namespace dialplan
