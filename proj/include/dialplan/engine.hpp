#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dialplan/core.hpp"
#include "dialplan/log.hpp"
#include "dialplan/oracle.hpp"
#include "dialplan/rng.hpp"

namespace dialplan {

/// Raised when too many simulations abort on oracle failures.
class SearchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ─── Selection / backup primitives ─────────────────────────────

/// Q + c_p * w * sqrt(sum_N) / (1 + N), with w = prior when prior-weighted, else 1.
inline double puct_score(const ActionStats& stats, int sibling_visit_sum, double c_p, bool prior_weighted) {
    const double w = prior_weighted ? stats.prior : 1.0;
    return stats.q + c_p * w * std::sqrt(static_cast<double>(sibling_visit_sum)) / (1.0 + stats.visits);
}

/// Act with the highest PUCT score; ties go to the lowest id.
inline ActId select_action(const TreeNode& node, const SearchConfig& cfg) {
    if (!node.expanded || node.per_action.empty())
        throw std::logic_error("select_action: node is not expanded");
    const int total = node.visit_sum();
    ActId best = 0;
    double best_score = puct_score(node.per_action[0], total, cfg.c_p, cfg.prior_weighted_puct);
    for (ActId a = 1; a < node.per_action.size(); ++a) {
        const double s = puct_score(node.per_action[a], total, cfg.c_p, cfg.prior_weighted_puct);
        if (s > best_score) {
            best = a;
            best_score = s;
        }
    }
    return best;
}

/// One edge of a selection trajectory: `parent --act--> node`, using `node->cache[cache_index]`.
struct SearchStep {
    TreeNode* parent = nullptr;
    ActId act = 0;
    TreeNode* node = nullptr;
    std::size_t cache_index = 0;

    CachedHistory& history() const { return node->cache.at(cache_index); }
};

using SearchPath = std::vector<SearchStep>;

/// Leaf-to-root update: the cached history's running mean first, then N and Q of the edge.
inline void backpropagate(const SearchPath& path, double v) {
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
        it->history().record(v);
        it->parent->per_action.at(it->act).record(v);
    }
}

inline double mean_reaction_score(std::span<const ReactionLabel> labels) {
    if (labels.empty()) throw std::invalid_argument("mean_reaction_score: no labels");
    double sum = 0.0;
    for (ReactionLabel l : labels) sum += reaction_score(l);
    return sum / static_cast<double>(labels.size());
}

/// Index of the cached history with the highest value; ties go to the lowest index.
inline std::optional<std::size_t> best_cached_history(const TreeNode& node) {
    if (node.cache.empty()) return std::nullopt;
    std::size_t best = 0;
    for (std::size_t i = 1; i < node.cache.size(); ++i)
        if (node.cache[i].value_mean > node.cache[best].value_mean) best = i;
    return best;
}

/// System utterance for `a_star` from the best-valued history cached under the root's child.
/// Empty when that child has no cached history.
inline std::optional<std::string> select_response(const TreeNode& root, ActId a_star) {
    const TreeNode* child = root.child(a_star);
    if (!child || root.cache.empty()) return std::nullopt;
    const auto best = best_cached_history(*child);
    if (!best) return std::nullopt;
    const std::size_t turn = root.cache.front().history.size();
    return child->cache[*best].history.turns.at(turn).text;
}

// ─── Search ────────────────────────────────────────────────────

/// Open-loop Monte Carlo tree search over dialogue-act sequences.
///
/// Nodes are keyed by the act sequence from the root. Concrete transcripts
/// are regenerated through the oracle while a node's cache holds fewer than
/// k entries and are resampled from the cache afterwards.
template <GenerativeOracle Oracle>
class OpenLoopSearch {
public:
    using BackupObserver = std::function<void(const SearchPath&, double)>;

    OpenLoopSearch(Oracle& oracle, SearchConfig cfg) : oracle_(oracle), cfg_(std::move(cfg)) { cfg_.validate(); }

    const SearchConfig& config() const { return cfg_; }
    const TreeNode& root() const { return root_; }
    TreeNode& root() { return root_; }
    const OracleCallCounts& oracle_calls() const { return calls_; }

    /// Called after every completed backup with the path and the leaf value.
    void set_backup_observer(BackupObserver fn) { observer_ = std::move(fn); }

    PlanResult search(const DialogueHistory& root_history) {
        if (auto v = validate_history(root_history, oracle_.action_space()))
            throw std::invalid_argument("search: invalid root history: " + *v);
        if (!root_history.awaiting_system())
            throw std::invalid_argument("search: root history must be empty or end with a User turn");

        reset(root_history);
        Rng rng(cfg_.rng_seed);
        int completed = 0, aborted = 0;
        while (completed < cfg_.n_simulations) {
            if (simulate(rng)) {
                ++completed;
            } else if (2 * ++aborted > cfg_.n_simulations) {
                throw SearchError("search: " + std::to_string(aborted) + " of " +
                                  std::to_string(cfg_.n_simulations) + " simulations aborted on oracle errors");
            }
        }

        PlanResult out;
        out.simulations_run = completed;
        out.simulations_aborted = aborted;
        out.root_prior.probs.reserve(root_.per_action.size());
        for (const auto& st : root_.per_action) {
            out.per_act_visits.push_back(st.visits);
            out.per_act_q.push_back(st.q);
            out.root_prior.probs.push_back(st.prior);
        }
        out.chosen_act = argmax_lowest(std::span<const int>(out.per_act_visits));

        std::optional<std::string> selected;
        if (cfg_.response_selection) {
            selected = select_response(root_, out.chosen_act);
            if (!selected) log::warn("response selection: empty cache for chosen act, generating afresh");
        }
        if (selected) {
            out.chosen_utterance = std::move(*selected);
            out.response_from_cache = true;
        } else {
            Rng gen = rng.fork(0x5e1ec7ULL);
            out.chosen_utterance = call_system(root_history, out.chosen_act, cfg_.temp_gen, gen);
        }
        out.oracle_calls = calls_;
        out.oracle_call_count = calls_.total();
        return out;
    }

    /// Selects an act at `node` and returns the child plus the cache slot of the
    /// history continuing `h` through that act (generated or resampled).
    std::pair<TreeNode*, std::size_t> descend(TreeNode& node, const DialogueHistory& h, Rng& rng) {
        const ActId a = select_action(node, cfg_);
        TreeNode& child = node.child_or_create(a);
        const auto k = static_cast<std::size_t>(cfg_.effective_cache_size());
        if (child.cache.size() >= k) return {&child, rng.index(child.cache.size())};

        CachedHistory fresh;
        if (cfg_.open_loop) {
            fresh.history = simulate_turn(h, a, cfg_.temp_gen, rng);
        } else {
            // Closed loop: one transcript per node, generated greedily from a node-keyed stream.
            Rng fixed(node_seed(child));
            fresh.history = simulate_turn(h, a, 0.0, fixed);
        }
        child.cache.push_back(std::move(fresh));
        undo_.caches.push_back(&child);
        return {&child, child.cache.size() - 1};
    }

    /// Samples the prior at `node`, seeds its per-act statistics and marks it expanded.
    PriorDistribution expand(TreeNode& node, const DialogueHistory& h, Rng& rng) {
        if (node.expanded) throw std::logic_error("expand: node already expanded");
        const std::size_t n_acts = oracle_.action_space().size();
        ++calls_.prior_samples;
        std::vector<ActId> samples = oracle_.sample_prior_acts(h, cfg_.prior_samples, cfg_.temp_prior, rng);
        std::erase_if(samples, [&](ActId a) { return a >= n_acts; });

        PriorDistribution prior;
        if (samples.empty()) {
            log::warn("expand: no parseable prior samples, using a uniform prior");
            prior = PriorDistribution::uniform(n_acts);
        } else {
            prior = PriorDistribution::from_samples(samples, n_acts);
        }
        node.per_action.assign(n_acts, ActionStats{0, cfg_.q0, 0.0});
        for (ActId a = 0; a < n_acts; ++a) node.per_action[a].prior = prior[a];
        node.expanded = true;
        undo_.expanded.push_back(&node);
        return prior;
    }

    /// Mean reaction score of l sampled answers to the donation probe after `h`.
    double estimate_value(const DialogueHistory& h, Rng& rng) {
        ++calls_.value_samples;
        const auto labels = oracle_.sample_value_labels(h, cfg_.value_samples, cfg_.temp_value, rng);
        return mean_reaction_score(labels);
    }

private:
    struct UndoLog {
        std::vector<TreeNode*> caches;    // one entry per appended history
        std::vector<TreeNode*> expanded;
        void clear() {
            caches.clear();
            expanded.clear();
        }
    };

    void reset(const DialogueHistory& root_history) {
        root_ = TreeNode{};
        root_.cache.push_back(CachedHistory{root_history, 0.0, 0});
        calls_ = {};
    }

    // Returns false when the simulation was aborted by an oracle failure.
    bool simulate(Rng& rng) {
        undo_.clear();
        try {
            if (!root_.expanded) expand(root_, root_.cache.front().history, rng);

            SearchPath path;
            TreeNode* node = &root_;
            std::size_t slot = 0;
            while (node->expanded && static_cast<int>(node->depth()) < cfg_.max_depth) {
                TreeNode* parent = node;
                const DialogueHistory& h = parent->cache.at(slot).history;
                auto [child, idx] = descend(*parent, h, rng);
                path.push_back({parent, child->action_sequence.back(), child, idx});
                node = child;
                slot = idx;
            }

            const DialogueHistory& leaf = node->cache.at(slot).history;
            if (!node->expanded && static_cast<int>(node->depth()) < cfg_.max_depth) expand(*node, leaf, rng);
            const double v = estimate_value(leaf, rng);

            backpropagate(path, v);
            if (observer_) observer_(path, v);
            return true;
        } catch (const OracleError& e) {
            log::warn(std::string("simulation aborted: ") + e.what());
            rollback();
            return false;
        }
    }

    void rollback() {
        for (auto it = undo_.caches.rbegin(); it != undo_.caches.rend(); ++it) (*it)->cache.pop_back();
        for (TreeNode* n : undo_.expanded) {
            n->expanded = false;
            n->per_action.clear();
        }
        undo_.clear();
    }

    DialogueHistory simulate_turn(const DialogueHistory& h, ActId a, double temp, Rng& rng) {
        std::string utterance = call_system(h, a, temp, rng);
        DialogueHistory next = h.with(Turn::system(a, std::move(utterance)));
        ++calls_.user_turns;
        UserReply reply = oracle_.generate_user_turn(next, temp, rng);
        next.turns.push_back(Turn::user(std::move(reply.text), reply.label));
        return next;
    }

    std::string call_system(const DialogueHistory& h, ActId a, double temp, Rng& rng) {
        ++calls_.system_utterances;
        return oracle_.generate_system_utterance(h, oracle_.action_space()[a], temp, rng);
    }

    std::uint64_t node_seed(const TreeNode& node) const {
        std::uint64_t s = Rng::mix(cfg_.rng_seed, 0xC105EDULL);
        for (ActId a : node.action_sequence) s = Rng::mix(s, a + 1);
        return s;
    }

    Oracle& oracle_;
    SearchConfig cfg_;
    TreeNode root_;
    OracleCallCounts calls_;
    UndoLog undo_;
    BackupObserver observer_;
};

/// Convenience wrapper: one search over `root_history`.
template <GenerativeOracle Oracle>
PlanResult plan_next_act(Oracle& oracle, const SearchConfig& cfg, const DialogueHistory& root_history) {
    OpenLoopSearch<Oracle> search(oracle, cfg);
    return search.search(root_history);
}

}  // namespace dialplan
