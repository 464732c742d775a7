#pragma once

#include <concepts>
#include <stdexcept>
#include <string>
#include <vector>

#include "dialplan/core.hpp"
#include "dialplan/rng.hpp"

namespace dialplan {

/// Failure inside a generative oracle (transport, exhausted budgets, ...).
class OracleError : public std::runtime_error {
public:
    explicit OracleError(const std::string& what, bool retryable = true)
        : std::runtime_error(what), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

/// A simulated user response: its reaction label plus label-stripped text.
struct UserReply {
    ReactionLabel label = ReactionLabel::Neutral;
    std::string text;
};

/// Everything the planner needs from a generative model.
///
/// `temp` is the sampling temperature; oracles without a notion of temperature
/// may ignore it. All randomness must come from `rng` so that a deterministic
/// oracle reproduces its outputs from the same stream.
template <class O>
concept GenerativeOracle = requires(O& o, const DialogueHistory& h, const DialogueAct& act, int count,
                                    double temp, Rng& rng) {
    { o.action_space() } -> std::convertible_to<const ActionSpace&>;
    { o.generate_system_utterance(h, act, temp, rng) } -> std::convertible_to<std::string>;
    { o.generate_user_turn(h, temp, rng) } -> std::convertible_to<UserReply>;
    { o.sample_prior_acts(h, count, temp, rng) } -> std::convertible_to<std::vector<ActId>>;
    { o.sample_value_labels(h, count, temp, rng) } -> std::convertible_to<std::vector<ReactionLabel>>;
};

/// Runtime-polymorphic oracle, for callers that pick the backend from configuration.
class OracleInterface {
public:
    virtual ~OracleInterface() = default;

    virtual const ActionSpace& action_space() const = 0;

    /// Utterance for `act` continuing `h` (which must await a System turn).
    virtual std::string generate_system_utterance(const DialogueHistory& h, const DialogueAct& act,
                                                  double temp, Rng& rng) = 0;

    /// Simulated user reply to the trailing System turn of `h`.
    virtual UserReply generate_user_turn(const DialogueHistory& h, double temp, Rng& rng) = 0;

    /// Up to `m` sampled next acts; unparseable samples are dropped.
    virtual std::vector<ActId> sample_prior_acts(const DialogueHistory& h, int m, double temp, Rng& rng) = 0;

    /// Exactly `l` reaction labels to the task's donation probe appended after `h`.
    virtual std::vector<ReactionLabel> sample_value_labels(const DialogueHistory& h, int l, double temp,
                                                           Rng& rng) = 0;
};

static_assert(GenerativeOracle<OracleInterface>);

}  // namespace dialplan
