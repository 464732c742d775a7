#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dialplan/core.hpp"
#include "dialplan/oracle.hpp"
#include "dialplan/rng.hpp"

namespace dialplan {

/// Probabilities of inclination deltas {-1, 0, +1}, in that order.
using DeltaDistribution = std::array<double, 3>;

inline constexpr int kMinInclination = -2;
inline constexpr int kMaxInclination = 2;
inline constexpr int kInclinationStates = kMaxInclination - kMinInclination + 1;

inline constexpr int clamp_inclination(int s) { return std::clamp(s, kMinInclination, kMaxInclination); }

/// Threshold mapping from hidden inclination to the emitted reaction label.
inline constexpr ReactionLabel label_for_inclination(int state) {
    if (state <= -2) return ReactionLabel::NoDonation;
    if (state == -1) return ReactionLabel::NegativeReaction;
    if (state == 0) return ReactionLabel::Neutral;
    if (state == 1) return ReactionLabel::PositiveReaction;
    return ReactionLabel::Donate;
}

/// Value of a terminal inclination; equals the score of its threshold label.
inline constexpr double inclination_value(int state) { return clamp_inclination(state) / 2.0; }

/// Small stochastic persuasion model with a hidden inclination in [-2, 2].
class SyntheticTask {
public:
    SyntheticTask() : SyntheticTask(1) {}

    /// All transitions default to "no change"; the prior stub defaults to uniform.
    explicit SyntheticTask(std::size_t act_count, int start_state = 0)
        : act_count_(act_count),
          start_state_(start_state),
          table_(act_count * kInclinationStates, DeltaDistribution{0.0, 1.0, 0.0}),
          prior_weights_(act_count, 1.0) {
        if (act_count == 0) throw std::invalid_argument("SyntheticTask: act_count must be positive");
        if (start_state < kMinInclination || start_state > kMaxInclination)
            throw std::invalid_argument("SyntheticTask: start_state outside [-2, 2]");
    }

    std::size_t act_count() const { return act_count_; }
    int start_state() const { return start_state_; }
    const std::vector<double>& prior_weights() const { return prior_weights_; }

    const DeltaDistribution& distribution(int state, ActId act) const {
        return table_.at(slot(state, act));
    }

    void set_distribution(int state, ActId act, DeltaDistribution d) {
        check_distribution(d);
        table_.at(slot(state, act)) = d;
    }

    /// Same distribution for `act` from every inclination state.
    void set_distribution(ActId act, DeltaDistribution d) {
        for (int s = kMinInclination; s <= kMaxInclination; ++s) set_distribution(s, act, d);
    }

    void set_prior_weights(std::vector<double> w) {
        if (w.size() != act_count_) throw std::invalid_argument("SyntheticTask: prior weight count mismatch");
        double total = 0.0;
        for (double x : w) {
            if (!(x >= 0.0)) throw std::invalid_argument("SyntheticTask: negative prior weight");
            total += x;
        }
        if (!(total > 0.0)) throw std::invalid_argument("SyntheticTask: prior weights have no mass");
        prior_weights_ = std::move(w);
    }

    ActionSpace action_space() const {
        std::vector<DialogueAct> acts;
        for (ActId a = 0; a < act_count_; ++a)
            acts.push_back({a, "act" + std::to_string(a), "The Persuader performs synthetic act " + std::to_string(a) + "."});
        return ActionSpace(std::move(acts));
    }

    /// Random task: every (state, act) cell gets an independent random distribution.
    static SyntheticTask random(Rng& rng, std::size_t act_count, int start_state = 0) {
        SyntheticTask task(act_count, start_state);
        for (int s = kMinInclination; s <= kMaxInclination; ++s)
            for (ActId a = 0; a < act_count; ++a) {
                DeltaDistribution d{};
                double total = 0.0;
                for (double& x : d) {
                    x = -std::log(1.0 - rng.uniform());  // Dirichlet(1,1,1) via exponentials
                    total += x;
                }
                for (double& x : d) x /= total;
                task.table_[task.slot(s, a)] = d;
            }
        return task;
    }

    friend bool operator==(const SyntheticTask&, const SyntheticTask&) = default;

private:
    std::size_t slot(int state, ActId act) const {
        if (state < kMinInclination || state > kMaxInclination)
            throw std::out_of_range("SyntheticTask: state outside [-2, 2]");
        if (act >= act_count_) throw std::out_of_range("SyntheticTask: act id out of range");
        return static_cast<std::size_t>(state - kMinInclination) * act_count_ + act;
    }

    static void check_distribution(const DeltaDistribution& d) {
        double total = 0.0;
        for (double p : d) {
            if (!(p >= 0.0)) throw std::invalid_argument("SyntheticTask: negative probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("SyntheticTask: distribution must sum to 1");
    }

    std::size_t act_count_;
    int start_state_;
    std::vector<DeltaDistribution> table_;
    std::vector<double> prior_weights_;
};

namespace synthetic_text {

inline std::string system_utterance(ActId act, std::size_t turn_index) {
    return "sys|" + std::to_string(act) + "|" + std::to_string(turn_index);
}

inline std::string user_utterance(std::size_t turn_index, int delta_index) {
    return "usr|" + std::to_string(turn_index) + "|" + std::to_string(delta_index);
}

/// Delta index encoded in a synthetic user utterance, if it is one.
inline std::optional<int> delta_index(std::string_view text) {
    if (!text.starts_with("usr|")) return std::nullopt;
    const auto bar = text.rfind('|');
    if (bar == std::string_view::npos || bar < 4) return std::nullopt;
    int d = -1;
    const auto tail = text.substr(bar + 1);
    auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), d);
    if (ec != std::errc{} || p != tail.data() + tail.size() || d < 0 || d > 2) return std::nullopt;
    return d;
}

}  // namespace synthetic_text

/// Deterministic oracle over a SyntheticTask.
///
/// The hidden inclination is never stored: it is replayed from the history,
/// which keeps the oracle reentrant.
class SyntheticOracle : public OracleInterface {
public:
    explicit SyntheticOracle(SyntheticTask task) : task_(std::move(task)), space_(task_.action_space()) {}

    const SyntheticTask& task() const { return task_; }
    const ActionSpace& action_space() const override { return space_; }

    /// Inclination after replaying every user turn in `h` from the start state.
    int hidden_state(const DialogueHistory& h) const {
        int state = task_.start_state();
        for (const Turn& t : h.turns) {
            if (t.speaker != Speaker::User) continue;
            if (auto d = synthetic_text::delta_index(t.text)) {
                state = clamp_inclination(state + (*d - 1));
            } else if (t.reaction) {
                state = static_cast<int>(*t.reaction) - 2;
            }
        }
        return state;
    }

    std::string generate_system_utterance(const DialogueHistory& h, const DialogueAct& act, double,
                                          Rng&) override {
        if (act.id >= task_.act_count()) throw std::invalid_argument("SyntheticOracle: act outside task");
        return synthetic_text::system_utterance(act.id, h.exchange_count());
    }

    UserReply generate_user_turn(const DialogueHistory& h, double, Rng& rng) override {
        if (!h.ends_with_system() || !h.back().act)
            throw std::invalid_argument("SyntheticOracle: history must end with a System turn");
        DialogueHistory before{{h.turns.begin(), h.turns.end() - 1}};
        const int state = hidden_state(before);
        const auto& dist = task_.distribution(state, *h.back().act);
        const int delta_index = static_cast<int>(rng.categorical(dist));
        const int next = clamp_inclination(state + delta_index - 1);
        return {label_for_inclination(next), synthetic_text::user_utterance(h.exchange_count(), delta_index)};
    }

    std::vector<ActId> sample_prior_acts(const DialogueHistory&, int m, double temp, Rng& rng) override {
        if (m < 1) throw std::invalid_argument("sample_prior_acts: m must be positive");
        const auto& w = task_.prior_weights();
        std::vector<double> tempered(w.size());
        if (temp <= 0.0) {
            tempered[argmax_lowest(std::span<const double>(w))] = 1.0;
        } else {
            for (std::size_t i = 0; i < w.size(); ++i) tempered[i] = std::pow(w[i], 1.0 / temp);
        }
        std::vector<ActId> out;
        out.reserve(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) out.push_back(rng.categorical(tempered));
        return out;
    }

    std::vector<ReactionLabel> sample_value_labels(const DialogueHistory& h, int l, double, Rng&) override {
        if (l < 1) throw std::invalid_argument("sample_value_labels: l must be positive");
        return std::vector<ReactionLabel>(static_cast<std::size_t>(l), label_for_inclination(hidden_state(h)));
    }

private:
    SyntheticTask task_;
    ActionSpace space_;
};

}  // namespace dialplan
