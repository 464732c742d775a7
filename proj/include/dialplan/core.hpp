#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dialplan {

/// Dense index into an ActionSpace.
using ActId = std::size_t;

// ─── Text helpers ──────────────────────────────────────────────

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
inline std::string normalize_name(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

// ─── Action space ──────────────────────────────────────────────

struct DialogueAct {
    ActId id = 0;
    std::string name;
    std::string nl_form;

    friend bool operator==(const DialogueAct&, const DialogueAct&) = default;
};

/// Ordered, non-empty set of dialogue acts with dense ids 0..size-1.
class ActionSpace {
public:
    ActionSpace() = default;

    explicit ActionSpace(std::vector<DialogueAct> acts) : acts_(std::move(acts)) {
        if (acts_.empty()) throw std::invalid_argument("ActionSpace: no acts");
        for (std::size_t i = 0; i < acts_.size(); ++i) {
            if (acts_[i].id != i)
                throw std::invalid_argument("ActionSpace: ids must be dense and ordered");
            if (acts_[i].nl_form.empty())
                throw std::invalid_argument("ActionSpace: empty nl_form for '" + acts_[i].name + "'");
            for (std::size_t j = 0; j < i; ++j)
                if (normalize_name(acts_[j].name) == normalize_name(acts_[i].name))
                    throw std::invalid_argument("ActionSpace: duplicate act name '" + acts_[i].name + "'");
        }
    }

    /// Builds acts from names only; nl_form is a generic sentence.
    static ActionSpace from_names(const std::vector<std::string>& names) {
        std::vector<DialogueAct> acts;
        for (std::size_t i = 0; i < names.size(); ++i)
            acts.push_back({i, names[i], "The system performs " + names[i] + "."});
        return ActionSpace(std::move(acts));
    }

    std::size_t size() const { return acts_.size(); }
    bool empty() const { return acts_.empty(); }
    const DialogueAct& operator[](ActId id) const { return acts_.at(id); }
    const std::vector<DialogueAct>& acts() const { return acts_; }
    auto begin() const { return acts_.begin(); }
    auto end() const { return acts_.end(); }

    bool contains(ActId id) const { return id < acts_.size(); }

    /// Case- and whitespace-insensitive lookup by name.
    std::optional<ActId> find(std::string_view name) const {
        const std::string key = normalize_name(name);
        for (const auto& a : acts_)
            if (normalize_name(a.name) == key) return a.id;
        return std::nullopt;
    }

    friend bool operator==(const ActionSpace&, const ActionSpace&) = default;

private:
    std::vector<DialogueAct> acts_;
};

// ─── User reactions ────────────────────────────────────────────

enum class ReactionLabel { NoDonation, NegativeReaction, Neutral, PositiveReaction, Donate };

inline constexpr std::array<ReactionLabel, 5> kAllReactionLabels = {
    ReactionLabel::NoDonation, ReactionLabel::NegativeReaction, ReactionLabel::Neutral,
    ReactionLabel::PositiveReaction, ReactionLabel::Donate};

inline constexpr double reaction_score(ReactionLabel label) {
    switch (label) {
        case ReactionLabel::NoDonation: return -1.0;
        case ReactionLabel::NegativeReaction: return -0.5;
        case ReactionLabel::Neutral: return 0.0;
        case ReactionLabel::PositiveReaction: return 0.5;
        case ReactionLabel::Donate: return 1.0;
    }
    return 0.0;
}

inline constexpr std::string_view reaction_name(ReactionLabel label) {
    switch (label) {
        case ReactionLabel::NoDonation: return "no donation";
        case ReactionLabel::NegativeReaction: return "negative reaction";
        case ReactionLabel::Neutral: return "neutral";
        case ReactionLabel::PositiveReaction: return "positive reaction";
        case ReactionLabel::Donate: return "donate";
    }
    return "neutral";
}

/// Accepts the bracket names in any case/spacing; "donation" is an alias of "donate".
inline std::optional<ReactionLabel> parse_reaction_label(std::string_view text) {
    const std::string key = normalize_name(text);
    if (key == "donation") return ReactionLabel::Donate;
    for (ReactionLabel l : kAllReactionLabels)
        if (key == reaction_name(l)) return l;
    return std::nullopt;
}

// ─── Dialogue history ──────────────────────────────────────────

enum class Speaker { System, User };

struct Turn {
    Speaker speaker = Speaker::System;
    std::optional<ActId> act;                 // System turns only
    std::optional<ReactionLabel> reaction;    // User turns only
    std::string text;

    static Turn system(ActId act, std::string text) {
        return Turn{Speaker::System, act, std::nullopt, std::move(text)};
    }
    static Turn user(std::string text, std::optional<ReactionLabel> reaction = std::nullopt) {
        return Turn{Speaker::User, std::nullopt, reaction, std::move(text)};
    }

    /// Structural equality: speaker, act and text. Reaction labels are annotations.
    friend bool operator==(const Turn& a, const Turn& b) {
        return a.speaker == b.speaker && a.act == b.act && a.text == b.text;
    }
};

struct DialogueHistory {
    std::vector<Turn> turns;

    std::size_t size() const { return turns.size(); }
    bool empty() const { return turns.empty(); }
    const Turn& back() const { return turns.back(); }

    bool ends_with_user() const { return !turns.empty() && turns.back().speaker == Speaker::User; }
    bool ends_with_system() const { return !turns.empty() && turns.back().speaker == Speaker::System; }

    /// True when the next turn to be produced is a System turn.
    bool awaiting_system() const { return turns.empty() || ends_with_user(); }

    /// Number of completed System/User exchanges.
    std::size_t exchange_count() const { return turns.size() / 2; }

    DialogueHistory with(Turn t) const {
        DialogueHistory out = *this;
        out.turns.push_back(std::move(t));
        return out;
    }

    friend bool operator==(const DialogueHistory&, const DialogueHistory&) = default;
};

/// Returns the first violated history invariant, or nullopt when the history is valid.
inline std::optional<std::string> validate_history(const DialogueHistory& h) {
    for (std::size_t i = 0; i < h.turns.size(); ++i) {
        const Turn& t = h.turns[i];
        const Speaker expected = (i % 2 == 0) ? Speaker::System : Speaker::User;
        if (t.speaker != expected) {
            if (i == 0) return std::string("must start with System");
            return "non-alternating speakers at turn " + std::to_string(i);
        }
        if (t.speaker == Speaker::System) {
            if (!t.act) return "System turn " + std::to_string(i) + " has no dialogue act";
            if (t.reaction) return "System turn " + std::to_string(i) + " carries a reaction label";
        } else if (t.act) {
            return "User turn " + std::to_string(i) + " carries a dialogue act";
        }
    }
    return std::nullopt;
}

/// Same check, additionally rejecting act ids outside `space`.
inline std::optional<std::string> validate_history(const DialogueHistory& h, const ActionSpace& space) {
    if (auto v = validate_history(h)) return v;
    for (std::size_t i = 0; i < h.turns.size(); ++i)
        if (h.turns[i].act && !space.contains(*h.turns[i].act))
            return "turn " + std::to_string(i) + " has act id outside the action space";
    return std::nullopt;
}

// ─── Search statistics ─────────────────────────────────────────

/// A concrete simulated transcript with its running value estimate.
struct CachedHistory {
    DialogueHistory history;
    double value_mean = 0.0;
    int visits = 0;

    void record(double v) {
        value_mean = (value_mean * visits + v) / (visits + 1);
        ++visits;
    }
};

struct ActionStats {
    int visits = 0;
    double q = 0.0;
    double prior = 0.0;

    /// Visit increment first, then Q moves by (v - Q) / N using the new N.
    void record(double v) {
        ++visits;
        q += (v - q) / visits;
    }
};

/// Distribution over act ids.
struct PriorDistribution {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }
    double operator[](ActId a) const { return probs.at(a); }

    static PriorDistribution uniform(std::size_t act_count) {
        return {std::vector<double>(act_count, 1.0 / static_cast<double>(act_count))};
    }

    /// Add-one smoothing: p_a = (count_a + 1) / (sum + |A|).
    static PriorDistribution smoothed(std::span<const int> counts) {
        if (counts.empty()) throw std::invalid_argument("PriorDistribution: no acts");
        double total = 0.0;
        for (int c : counts) {
            if (c < 0) throw std::invalid_argument("PriorDistribution: negative count");
            total += c;
        }
        const double denom = total + static_cast<double>(counts.size());
        PriorDistribution p;
        p.probs.reserve(counts.size());
        for (int c : counts) p.probs.push_back((c + 1.0) / denom);
        return p;
    }

    static PriorDistribution from_samples(std::span<const ActId> samples, std::size_t act_count) {
        std::vector<int> counts(act_count, 0);
        for (ActId a : samples) counts.at(a) += 1;
        return smoothed(counts);
    }

    friend bool operator==(const PriorDistribution&, const PriorDistribution&) = default;
};

/// Open-loop node: identified by the action sequence from the root, never by a concrete state.
struct TreeNode {
    std::vector<ActId> action_sequence;
    std::vector<ActionStats> per_action;   // indexed by act id once expanded
    std::map<ActId, std::unique_ptr<TreeNode>> children;
    std::vector<CachedHistory> cache;
    bool expanded = false;

    std::size_t depth() const { return action_sequence.size(); }
    bool is_leaf() const { return !expanded; }

    int visit_sum() const {
        int s = 0;
        for (const auto& st : per_action) s += st.visits;
        return s;
    }

    TreeNode* child(ActId a) const {
        auto it = children.find(a);
        return it == children.end() ? nullptr : it->second.get();
    }

    TreeNode& child_or_create(ActId a) {
        auto& slot = children[a];
        if (!slot) {
            slot = std::make_unique<TreeNode>();
            slot->action_sequence = action_sequence;
            slot->action_sequence.push_back(a);
        }
        return *slot;
    }
};

// ─── Configuration & results ───────────────────────────────────

struct SearchConfig {
    int n_simulations = 10;
    int cache_size = 3;
    double c_p = 1.0;
    double q0 = 0.0;
    int prior_samples = 15;
    int value_samples = 10;
    double temp_prior = 1.0;
    double temp_value = 1.1;
    double temp_gen = 0.7;
    int max_depth = 3;
    bool open_loop = true;
    bool response_selection = true;
    bool prior_weighted_puct = true;
    double gamma = 0.9;  // carried for the MDP definition; not applied by the search
    std::uint64_t rng_seed = 0;

    /// Cache bound actually used: the closed-loop ablation pins it to one.
    int effective_cache_size() const { return open_loop ? cache_size : 1; }

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("SearchConfig: " + m); };
        if (n_simulations < 1) fail("n_simulations must be positive");
        if (cache_size < 1) fail("cache_size must be positive");
        if (c_p < 0.0) fail("c_p must be non-negative");
        if (prior_samples < 1) fail("prior_samples must be positive");
        if (value_samples < 1) fail("value_samples must be positive");
        if (temp_prior < 0.0 || temp_value < 0.0 || temp_gen < 0.0) fail("temperatures must be non-negative");
        if (max_depth < 1) fail("max_depth must be at least 1");
        if (gamma < 0.0 || gamma >= 1.0) fail("gamma must lie in [0, 1)");
    }

    friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

/// Oracle invocations made during one search, by kind.
struct OracleCallCounts {
    int system_utterances = 0;
    int user_turns = 0;
    int prior_samples = 0;
    int value_samples = 0;

    int total() const { return system_utterances + user_turns + prior_samples + value_samples; }

    friend bool operator==(const OracleCallCounts&, const OracleCallCounts&) = default;
};

struct PlanResult {
    ActId chosen_act = 0;
    std::string chosen_utterance;
    std::vector<int> per_act_visits;
    std::vector<double> per_act_q;
    PriorDistribution root_prior;
    int simulations_run = 0;
    int simulations_aborted = 0;
    int oracle_call_count = 0;
    OracleCallCounts oracle_calls;
    bool response_from_cache = false;

    friend bool operator==(const PlanResult&, const PlanResult&) = default;
};

/// Highest value wins; ties go to the lowest index.
template <class T>
std::size_t argmax_lowest(std::span<const T> values) {
    if (values.empty()) throw std::invalid_argument("argmax over empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace dialplan
