#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialplan/core.hpp"
#include "dialplan/synthetic.hpp"

namespace dialplan {

using nlohmann::json;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known, std::string_view what) {
    if (!j.is_object()) throw FormatError(std::string(what) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || key == k;
        if (!ok) throw FormatError(std::string(what) + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// ─── Dialogue history ──────────────────────────────────────────
//
// Turns are {"speaker": "system"|"user", "act": string|null, "text": string}.
// System turns carry the act name; user turns carry their reaction label
// name in the same field, or null when unlabelled.

inline json turn_to_json(const Turn& t, const ActionSpace& space) {
    json j;
    j["speaker"] = t.speaker == Speaker::System ? "system" : "user";
    if (t.speaker == Speaker::System && t.act) j["act"] = space[*t.act].name;
    else if (t.speaker == Speaker::User && t.reaction) j["act"] = std::string(reaction_name(*t.reaction));
    else j["act"] = nullptr;
    j["text"] = t.text;
    return j;
}

inline json history_to_json(const DialogueHistory& h, const ActionSpace& space) {
    json arr = json::array();
    for (const auto& t : h.turns) arr.push_back(turn_to_json(t, space));
    return arr;
}

/// `fallback_act` replaces missing or unknown System acts; without it they are errors.
inline Turn turn_from_json(const json& j, const ActionSpace& space, std::optional<ActId> fallback_act = std::nullopt) {
    detail::reject_unknown_keys(j, {"speaker", "act", "text"}, "turn");
    Turn t;
    const auto speaker = j.at("speaker").get<std::string>();
    t.text = j.at("text").get<std::string>();
    const json act = j.value("act", json());
    if (speaker == "system") {
        t.speaker = Speaker::System;
        if (act.is_string()) t.act = space.find(act.get<std::string>());
        if (!t.act) {
            if (!fallback_act)
                throw FormatError("turn: system turn with " +
                                  (act.is_string() ? "unknown act '" + act.get<std::string>() + "'" : std::string("no act")));
            t.act = fallback_act;
        }
    } else if (speaker == "user") {
        t.speaker = Speaker::User;
        if (act.is_string()) {
            t.reaction = parse_reaction_label(act.get<std::string>());
            if (!t.reaction) throw FormatError("turn: unknown reaction label '" + act.get<std::string>() + "'");
        } else if (!act.is_null()) {
            throw FormatError("turn: act must be a string or null");
        }
    } else {
        throw FormatError("turn: speaker must be \"system\" or \"user\"");
    }
    return t;
}

inline DialogueHistory history_from_json(const json& j, const ActionSpace& space,
                                         std::optional<ActId> fallback_act = std::nullopt) {
    if (!j.is_array()) throw FormatError("history: expected an array of turns");
    DialogueHistory h;
    for (const auto& t : j) h.turns.push_back(turn_from_json(t, space, fallback_act));
    if (auto v = validate_history(h, space)) throw FormatError("history: " + *v);
    return h;
}

// ─── SearchConfig ──────────────────────────────────────────────

inline json to_json(const SearchConfig& c) {
    return {{"n_simulations", c.n_simulations},
            {"cache_size", c.cache_size},
            {"c_p", c.c_p},
            {"q0", c.q0},
            {"prior_samples", c.prior_samples},
            {"value_samples", c.value_samples},
            {"temp_prior", c.temp_prior},
            {"temp_value", c.temp_value},
            {"temp_gen", c.temp_gen},
            {"max_depth", c.max_depth},
            {"open_loop", c.open_loop},
            {"response_selection", c.response_selection},
            {"prior_weighted_puct", c.prior_weighted_puct},
            {"gamma", c.gamma},
            {"rng_seed", c.rng_seed}};
}

/// Fields present in `j` override `base`; unknown keys are rejected.
inline SearchConfig search_config_from_json(const json& j, SearchConfig base = {}) {
    detail::reject_unknown_keys(j,
                                {"n_simulations", "cache_size", "c_p", "q0", "prior_samples", "value_samples",
                                 "temp_prior", "temp_value", "temp_gen", "max_depth", "open_loop",
                                 "response_selection", "prior_weighted_puct", "gamma", "rng_seed"},
                                "search config");
    try {
        detail::read_if(j, "n_simulations", base.n_simulations);
        detail::read_if(j, "cache_size", base.cache_size);
        detail::read_if(j, "c_p", base.c_p);
        detail::read_if(j, "q0", base.q0);
        detail::read_if(j, "prior_samples", base.prior_samples);
        detail::read_if(j, "value_samples", base.value_samples);
        detail::read_if(j, "temp_prior", base.temp_prior);
        detail::read_if(j, "temp_value", base.temp_value);
        detail::read_if(j, "temp_gen", base.temp_gen);
        detail::read_if(j, "max_depth", base.max_depth);
        detail::read_if(j, "open_loop", base.open_loop);
        detail::read_if(j, "response_selection", base.response_selection);
        detail::read_if(j, "prior_weighted_puct", base.prior_weighted_puct);
        detail::read_if(j, "gamma", base.gamma);
        detail::read_if(j, "rng_seed", base.rng_seed);
    } catch (const json::exception& e) {
        throw FormatError(std::string("search config: ") + e.what());
    }
    base.validate();
    return base;
}

// ─── PlanResult ────────────────────────────────────────────────

inline json to_json(const PlanResult& r, const ActionSpace& space) {
    return {{"chosen_act", space[r.chosen_act].name},
            {"chosen_utterance", r.chosen_utterance},
            {"per_act_visits", r.per_act_visits},
            {"per_act_q", r.per_act_q},
            {"root_prior", r.root_prior.probs},
            {"simulations_run", r.simulations_run},
            {"simulations_aborted", r.simulations_aborted},
            {"oracle_call_count", r.oracle_call_count},
            {"oracle_calls",
             {{"system_utterances", r.oracle_calls.system_utterances},
              {"user_turns", r.oracle_calls.user_turns},
              {"prior_samples", r.oracle_calls.prior_samples},
              {"value_samples", r.oracle_calls.value_samples}}},
            {"response_from_cache", r.response_from_cache}};
}

inline PlanResult plan_result_from_json(const json& j, const ActionSpace& space) {
    PlanResult r;
    const auto act = space.find(j.at("chosen_act").get<std::string>());
    if (!act) throw FormatError("plan result: unknown act");
    r.chosen_act = *act;
    r.chosen_utterance = j.at("chosen_utterance").get<std::string>();
    r.per_act_visits = j.at("per_act_visits").get<std::vector<int>>();
    r.per_act_q = j.at("per_act_q").get<std::vector<double>>();
    r.root_prior.probs = j.at("root_prior").get<std::vector<double>>();
    r.simulations_run = j.at("simulations_run").get<int>();
    r.simulations_aborted = j.at("simulations_aborted").get<int>();
    r.oracle_call_count = j.at("oracle_call_count").get<int>();
    const auto& c = j.at("oracle_calls");
    r.oracle_calls = {c.at("system_utterances").get<int>(), c.at("user_turns").get<int>(),
                      c.at("prior_samples").get<int>(), c.at("value_samples").get<int>()};
    r.response_from_cache = j.at("response_from_cache").get<bool>();
    return r;
}

// ─── SyntheticTask ─────────────────────────────────────────────
//
// {"act_count": 2, "start_state": 0, "prior_weights": [1, 1],
//  "transitions": [[[p-, p0, p+] per act] per state -2..2]}

inline json to_json(const SyntheticTask& t) {
    json rows = json::array();
    for (int s = kMinInclination; s <= kMaxInclination; ++s) {
        json row = json::array();
        for (ActId a = 0; a < t.act_count(); ++a) {
            const auto& d = t.distribution(s, a);
            row.push_back({d[0], d[1], d[2]});
        }
        rows.push_back(std::move(row));
    }
    return {{"act_count", t.act_count()},
            {"start_state", t.start_state()},
            {"prior_weights", t.prior_weights()},
            {"transitions", std::move(rows)}};
}

/// "transitions" may also be a single per-act list applied to every state.
inline SyntheticTask synthetic_task_from_json(const json& j) {
    detail::reject_unknown_keys(j, {"act_count", "start_state", "prior_weights", "transitions"}, "synthetic task");
    try {
        const auto n = j.at("act_count").get<std::size_t>();
        SyntheticTask t(n, j.value("start_state", 0));
        if (j.contains("prior_weights")) t.set_prior_weights(j.at("prior_weights").get<std::vector<double>>());
        if (j.contains("transitions")) {
            const auto& tr = j.at("transitions");
            const bool per_state = tr.size() == static_cast<std::size_t>(kInclinationStates) && !tr.empty() &&
                                   tr[0].is_array() && !tr[0].empty() && tr[0][0].is_array();
            auto read_row = [&](const json& row, auto&& set) {
                if (row.size() != n) throw FormatError("synthetic task: transition row needs one entry per act");
                for (ActId a = 0; a < n; ++a) set(a, row[a].get<DeltaDistribution>());
            };
            if (per_state) {
                for (int s = kMinInclination; s <= kMaxInclination; ++s)
                    read_row(tr[static_cast<std::size_t>(s - kMinInclination)],
                             [&](ActId a, DeltaDistribution d) { t.set_distribution(s, a, d); });
            } else {
                read_row(tr, [&](ActId a, DeltaDistribution d) { t.set_distribution(a, d); });
            }
        }
        return t;
    } catch (const json::exception& e) {
        throw FormatError(std::string("synthetic task: ") + e.what());
    }
}

// ─── Corpus and transcripts (JSON Lines) ───────────────────────

struct DialogueRecord {
    std::string dialog_id;
    DialogueHistory history;
};

/// Planned act for one System turn; `plan` is present when a search produced it.
struct TurnPlan {
    std::size_t turn_index = 0;
    ActId act = 0;
    std::optional<PlanResult> plan;
};

struct Transcript {
    std::string dialog_id;
    DialogueHistory history;
    std::string planner;
    SearchConfig config;
    std::vector<TurnPlan> per_turn_plan;
};

inline json to_json(const Transcript& t, const ActionSpace& space) {
    json plans = json::array();
    for (const auto& p : t.per_turn_plan) {
        json e = {{"turn_index", p.turn_index}, {"act", space[p.act].name}};
        e["plan"] = p.plan ? to_json(*p.plan, space) : json();
        plans.push_back(std::move(e));
    }
    return {{"dialog_id", t.dialog_id},
            {"turns", history_to_json(t.history, space)},
            {"planner", t.planner},
            {"config", to_json(t.config)},
            {"per_turn_plan", std::move(plans)}};
}

inline Transcript transcript_from_json(const json& j, const ActionSpace& space) {
    Transcript t;
    t.dialog_id = j.at("dialog_id").get<std::string>();
    t.history = history_from_json(j.at("turns"), space);
    t.planner = j.value("planner", std::string());
    if (j.contains("config")) t.config = search_config_from_json(j.at("config"));
    for (const auto& e : j.value("per_turn_plan", json::array())) {
        TurnPlan p;
        p.turn_index = e.at("turn_index").get<std::size_t>();
        const auto act = space.find(e.at("act").get<std::string>());
        if (!act) throw FormatError("transcript: unknown planned act");
        p.act = *act;
        if (e.contains("plan") && !e.at("plan").is_null()) p.plan = plan_result_from_json(e.at("plan"), space);
        t.per_turn_plan.push_back(std::move(p));
    }
    return t;
}

namespace detail {

template <class F>
void for_each_jsonl(std::istream& in, F&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

}  // namespace detail

/// One {dialog_id, turns} record per line. Unknown or missing System acts map to `fallback_act` when given.
inline std::vector<DialogueRecord> read_corpus(std::istream& in, const ActionSpace& space,
                                               std::optional<ActId> fallback_act = std::nullopt) {
    std::vector<DialogueRecord> out;
    std::set<std::string> seen;
    detail::for_each_jsonl(in, [&](const json& j) {
        detail::reject_unknown_keys(j, {"dialog_id", "turns"}, "corpus record");
        DialogueRecord r{j.at("dialog_id").get<std::string>(), history_from_json(j.at("turns"), space, fallback_act)};
        if (!seen.insert(r.dialog_id).second) throw FormatError("corpus: duplicate dialog_id '" + r.dialog_id + "'");
        out.push_back(std::move(r));
    });
    return out;
}

inline void write_corpus(std::ostream& out, const std::vector<DialogueRecord>& records, const ActionSpace& space) {
    for (const auto& r : records)
        out << json{{"dialog_id", r.dialog_id}, {"turns", history_to_json(r.history, space)}}.dump() << '\n';
}

inline std::vector<Transcript> read_transcripts(std::istream& in, const ActionSpace& space) {
    std::vector<Transcript> out;
    detail::for_each_jsonl(in, [&](const json& j) { out.push_back(transcript_from_json(j, space)); });
    return out;
}

inline void write_transcript(std::ostream& out, const Transcript& t, const ActionSpace& space) {
    out << to_json(t, space).dump() << '\n';
}

}  // namespace dialplan
