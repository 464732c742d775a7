#pragma once

#include <optional>
#include <string>

#include "dialplan/engine.hpp"
#include "dialplan/oracle.hpp"

namespace dialplan {

/// A System turn proposed by a planner.
struct PlannedTurn {
    ActId act = 0;
    std::string utterance;
    std::optional<PlanResult> plan;  // set by search-based planners
};

/// Produces the next System turn for a history awaiting one.
/// `reference` is the recorded turn when planning against a corpus.
class Planner {
public:
    virtual ~Planner() = default;
    virtual std::string name() const = 0;
    virtual PlannedTurn next_turn(const DialogueHistory& h, const std::optional<Turn>& reference = std::nullopt) = 0;
};

/// One open-loop search per turn. Each call derives its seed from the base
/// seed and a call counter, so a planner instance replays identically.
class MctsPlanner final : public Planner {
public:
    MctsPlanner(OracleInterface& oracle, SearchConfig cfg, std::string name = "mcts")
        : oracle_(oracle), cfg_(std::move(cfg)), name_(std::move(name)) {
        cfg_.validate();
    }

    std::string name() const override { return name_; }
    const SearchConfig& config() const { return cfg_; }

    PlannedTurn next_turn(const DialogueHistory& h, const std::optional<Turn>& = std::nullopt) override {
        SearchConfig c = cfg_;
        c.rng_seed = Rng::mix(cfg_.rng_seed, calls_++);
        PlanResult r = plan_next_act(oracle_, c, h);
        return {r.chosen_act, r.chosen_utterance, std::move(r)};
    }

private:
    OracleInterface& oracle_;
    SearchConfig cfg_;
    std::string name_;
    std::uint64_t calls_ = 0;
};

/// Direct prompting without search: the most frequent act among m prior samples
/// (lowest id on ties), then one generated utterance.
class PromptingPlanner final : public Planner {
public:
    PromptingPlanner(OracleInterface& oracle, SearchConfig cfg, std::string name = "prompting")
        : oracle_(oracle), cfg_(std::move(cfg)), name_(std::move(name)) {
        cfg_.validate();
    }

    std::string name() const override { return name_; }

    PlannedTurn next_turn(const DialogueHistory& h, const std::optional<Turn>& = std::nullopt) override {
        Rng rng(Rng::mix(cfg_.rng_seed, calls_++));
        const auto samples = oracle_.sample_prior_acts(h, cfg_.prior_samples, cfg_.temp_prior, rng);
        std::vector<int> counts(oracle_.action_space().size(), 0);
        for (ActId a : samples)
            if (a < counts.size()) ++counts[a];
        const ActId act = argmax_lowest(std::span<const int>(counts));
        std::string text = oracle_.generate_system_utterance(h, oracle_.action_space()[act], cfg_.temp_gen, rng);
        return {act, std::move(text), std::nullopt};
    }

private:
    OracleInterface& oracle_;
    SearchConfig cfg_;
    std::string name_;
    std::uint64_t calls_ = 0;
};

/// Replays the recorded corpus turn.
class GroundTruthPlanner final : public Planner {
public:
    std::string name() const override { return "ground-truth"; }

    PlannedTurn next_turn(const DialogueHistory&, const std::optional<Turn>& reference = std::nullopt) override {
        if (!reference || reference->speaker != Speaker::System || !reference->act)
            throw std::invalid_argument("ground-truth planner: no recorded System turn");
        return {*reference->act, reference->text, std::nullopt};
    }
};

}  // namespace dialplan
