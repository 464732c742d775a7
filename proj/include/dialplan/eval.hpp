#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialplan/log.hpp"
#include "dialplan/p4g.hpp"
#include "dialplan/planner.hpp"
#include "dialplan/rng.hpp"
#include "dialplan/serialize.hpp"

namespace dialplan::eval {

// ─── Judge ─────────────────────────────────────────────────────

enum class Verdict { A, B, CantTell };

inline std::string_view verdict_name(Verdict v) {
    switch (v) {
        case Verdict::A: return "A";
        case Verdict::B: return "B";
        case Verdict::CantTell: return "C";
    }
    return "C";
}

struct JudgeVerdict {
    Verdict verdict = Verdict::CantTell;
    std::map<Verdict, int> vote_counts;  // in the caller's frame: A means resp_a
    bool swapped = false;
};

/// Source of raw judge completions.
class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    virtual std::vector<std::string> judge(const MessageList& prompt, int samples, Rng& rng) = 0;
};

/// Leading option letter of a judge answer; "C" means can't tell.
inline std::optional<Verdict> parse_vote(std::string_view text) {
    std::string s = trim(text);
    std::size_t i = 0;
    while (i < s.size() && (s[i] == '(' || s[i] == '*' || s[i] == '"' || s[i] == '\'')) ++i;
    if (i >= s.size()) return std::nullopt;
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[i])));
    if (i + 1 < s.size() && std::isalnum(static_cast<unsigned char>(s[i + 1]))) return std::nullopt;
    if (c == 'A') return Verdict::A;
    if (c == 'B') return Verdict::B;
    if (c == 'C') return Verdict::CantTell;
    return std::nullopt;
}

inline Verdict mirror(Verdict v) {
    if (v == Verdict::A) return Verdict::B;
    if (v == Verdict::B) return Verdict::A;
    return v;
}

/// Majority over presented-frame votes, then mapped back to the caller's frame.
/// A tie for the top count yields CantTell.
inline JudgeVerdict tally_votes(const std::vector<Verdict>& presented, bool swapped) {
    JudgeVerdict out;
    out.swapped = swapped;
    out.vote_counts = {{Verdict::A, 0}, {Verdict::B, 0}, {Verdict::CantTell, 0}};
    for (Verdict v : presented) ++out.vote_counts[swapped ? mirror(v) : v];
    int best = -1;
    bool tie = false;
    for (const auto& [v, n] : out.vote_counts) {
        if (n > best) {
            best = n;
            out.verdict = v;
            tie = false;
        } else if (n == best) {
            tie = true;
        }
    }
    if (tie) out.verdict = Verdict::CantTell;
    return out;
}

inline MessageList render_judge_prompt(const p4g::Task& task, const DialogueHistory& context,
                                       const std::string& resp_a, const std::string& resp_b) {
    if (resp_a.empty() || resp_b.empty()) throw std::invalid_argument("render_judge_prompt: empty response");
    p4g::TemplateVars vars = p4g::base_vars(task);
    vars.context = p4g::render_context(task, context);
    vars.response_a = resp_a;
    vars.response_b = resp_b;
    return {{"user", p4g::substitute(task.judge, vars)}};
}

inline JudgeVerdict judge_pair(const p4g::Task& task, const DialogueHistory& context, const std::string& resp_a,
                               const std::string& resp_b, JudgeBackend& judge, Rng& rng, int samples = 5) {
    if (samples < 1) throw std::invalid_argument("judge_pair: samples must be positive");
    const bool swapped = rng.coin();
    const auto prompt = swapped ? render_judge_prompt(task, context, resp_b, resp_a)
                                : render_judge_prompt(task, context, resp_a, resp_b);
    const auto answers = judge.judge(prompt, samples, rng);
    if (static_cast<int>(answers.size()) != samples) throw OracleError("judge_pair: wrong number of judge samples");
    std::vector<Verdict> votes;
    for (const auto& a : answers) votes.push_back(parse_vote(a).value_or(Verdict::CantTell));
    return tally_votes(votes, swapped);
}

// ─── Sentence truncation ───────────────────────────────────────

/// First `n` sentences. A sentence ends at a run of '.', '!' or '?' that is
/// followed by whitespace or the end of the text.
inline std::string truncate_sentences(std::string_view text, int n) {
    if (n < 1) throw std::invalid_argument("truncate_sentences: n must be positive");
    int seen = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '.' || text[i] == '!' || text[i] == '?') {
            std::size_t j = i;
            while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
            if (j == text.size() || std::isspace(static_cast<unsigned char>(text[j]))) {
                if (++seen == n) return trim(text.substr(0, j));
            }
            i = j;
        } else {
            ++i;
        }
    }
    return trim(text);
}

// ─── Static evaluation ─────────────────────────────────────────

struct StaticEvalConfig {
    int runs = 1;
    std::optional<int> truncate_sentences;
    int judge_samples = 5;
    bool ties_in_denominator = true;
    std::uint64_t seed = 0;
};

struct RunTally {
    int wins = 0;
    int losses = 0;
    int ties = 0;
    int skipped = 0;
    double win_rate = 0.0;
};

struct WinRateReport {
    std::string planner_a;
    std::string planner_b;
    int wins = 0;  // totals over all runs
    int losses = 0;
    int ties = 0;
    int skipped = 0;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation over runs
    bool ties_in_denominator = true;
    std::vector<RunTally> runs;
};

inline double win_rate(const RunTally& t, bool ties_in_denominator) {
    const int denom = t.wins + t.losses + (ties_in_denominator ? t.ties : 0);
    return denom == 0 ? 0.0 : static_cast<double>(t.wins) / denom;
}

/// Every System turn of every corpus dialogue, with the preceding turns as context.
struct EvalTurn {
    const DialogueRecord* dialogue;
    std::size_t index;

    DialogueHistory context() const {
        return {{dialogue->history.turns.begin(), dialogue->history.turns.begin() + static_cast<std::ptrdiff_t>(index)}};
    }
    const Turn& reference() const { return dialogue->history.turns[index]; }
};

inline std::vector<EvalTurn> eligible_turns(const std::vector<DialogueRecord>& corpus) {
    std::vector<EvalTurn> out;
    for (const auto& d : corpus)
        for (std::size_t i = 0; i < d.history.size(); ++i)
            if (d.history.turns[i].speaker == Speaker::System) out.push_back({&d, i});
    return out;
}

inline WinRateReport run_static_eval(const p4g::Task& task, const std::vector<DialogueRecord>& corpus,
                                     Planner& planner_a, Planner& planner_b, JudgeBackend& judge,
                                     const StaticEvalConfig& cfg) {
    if (cfg.runs < 1) throw std::invalid_argument("run_static_eval: runs must be positive");
    if (cfg.truncate_sentences && *cfg.truncate_sentences < 1)
        throw std::invalid_argument("run_static_eval: truncate_sentences must be positive");

    WinRateReport report;
    report.planner_a = planner_a.name();
    report.planner_b = planner_b.name();
    report.ties_in_denominator = cfg.ties_in_denominator;
    const auto turns = eligible_turns(corpus);

    for (int run = 0; run < cfg.runs; ++run) {
        Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(run));
        RunTally tally;
        for (const auto& turn : turns) {
            try {
                const auto context = turn.context();
                std::string a = planner_a.next_turn(context, turn.reference()).utterance;
                std::string b = planner_b.next_turn(context, turn.reference()).utterance;
                if (cfg.truncate_sentences) {
                    a = truncate_sentences(a, *cfg.truncate_sentences);
                    b = truncate_sentences(b, *cfg.truncate_sentences);
                }
                const auto v = judge_pair(task, context, a, b, judge, rng, cfg.judge_samples);
                if (v.verdict == Verdict::A) ++tally.wins;
                else if (v.verdict == Verdict::B) ++tally.losses;
                else ++tally.ties;
            } catch (const std::exception& e) {
                log::warn("static eval: skipped " + turn.dialogue->dialog_id + " turn " + std::to_string(turn.index) +
                          ": " + e.what());
                ++tally.skipped;
            }
        }
        tally.win_rate = win_rate(tally, cfg.ties_in_denominator);
        report.wins += tally.wins;
        report.losses += tally.losses;
        report.ties += tally.ties;
        report.skipped += tally.skipped;
        report.runs.push_back(tally);
    }

    for (const auto& r : report.runs) report.mean += r.win_rate;
    report.mean /= static_cast<double>(report.runs.size());
    for (const auto& r : report.runs) report.std += (r.win_rate - report.mean) * (r.win_rate - report.mean);
    report.std = std::sqrt(report.std / static_cast<double>(report.runs.size()));
    return report;
}

inline nlohmann::json to_json(const WinRateReport& r) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& t : r.runs)
        runs.push_back({{"wins", t.wins}, {"losses", t.losses}, {"ties", t.ties}, {"skipped", t.skipped},
                        {"win_rate", t.win_rate}});
    return {{"planner_a", r.planner_a}, {"planner_b", r.planner_b}, {"wins", r.wins},     {"losses", r.losses},
            {"ties", r.ties},           {"skipped", r.skipped},     {"mean", r.mean},     {"std", r.std},
            {"ties_in_denominator", r.ties_in_denominator},          {"runs", std::move(runs)}};
}

inline std::string format_report(const WinRateReport& r) {
    char buf[160];
    std::string out = r.planner_a + " vs " + r.planner_b + "\n";
    out += "run   wins  losses  ties  skipped  win rate\n";
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
        const auto& t = r.runs[i];
        std::snprintf(buf, sizeof buf, "%-5zu %-5d %-7d %-5d %-8d %6.2f%%\n", i + 1, t.wins, t.losses, t.ties,
                      t.skipped, 100.0 * t.win_rate);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "win rate %.2f%% +- %.2f%% over %zu run(s)%s\n", 100.0 * r.mean, 100.0 * r.std,
                  r.runs.size(), r.ties_in_denominator ? "" : " (ties excluded)");
    out += buf;
    return out;
}

// ─── Dialogue-act distribution ─────────────────────────────────

struct Bucket {
    std::string label;
    int first_turn;  // 1-based, inclusive; 0 for the overall bucket
    int last_turn;
    std::vector<int> counts;
    std::vector<double> freqs;
};

struct DaHistogram {
    std::vector<Bucket> buckets;  // "1-2", "3-5", "6-10", "overall"
};

/// Relative frequency of each act per System-turn bucket. Turns past 10
/// only count toward the overall bucket.
inline DaHistogram da_distribution(const std::vector<std::vector<ActId>>& sequences, std::size_t act_count) {
    DaHistogram h;
    h.buckets = {{"1-2", 1, 2, {}, {}}, {"3-5", 3, 5, {}, {}}, {"6-10", 6, 10, {}, {}}, {"overall", 0, 0, {}, {}}};
    for (auto& b : h.buckets) {
        b.counts.assign(act_count, 0);
        b.freqs.assign(act_count, 0.0);
    }
    for (const auto& seq : sequences) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const int turn = static_cast<int>(i) + 1;
            if (seq[i] >= act_count) throw std::out_of_range("da_distribution: act id out of range");
            for (auto& b : h.buckets)
                if (b.first_turn == 0 || (turn >= b.first_turn && turn <= b.last_turn)) ++b.counts[seq[i]];
        }
    }
    for (auto& b : h.buckets) {
        int total = 0;
        for (int c : b.counts) total += c;
        if (total > 0)
            for (std::size_t a = 0; a < act_count; ++a) b.freqs[a] = static_cast<double>(b.counts[a]) / total;
    }
    return h;
}

/// Planned acts of each transcript, in turn order.
inline std::vector<std::vector<ActId>> planned_acts(const std::vector<Transcript>& transcripts) {
    std::vector<std::vector<ActId>> out;
    for (const auto& t : transcripts) {
        std::vector<ActId> seq;
        for (const auto& p : t.per_turn_plan) seq.push_back(p.act);
        out.push_back(std::move(seq));
    }
    return out;
}

inline nlohmann::json to_json(const DaHistogram& h, const ActionSpace& space) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : h.buckets) {
        nlohmann::json counts = nlohmann::json::object(), freqs = nlohmann::json::object();
        for (ActId a = 0; a < b.counts.size(); ++a) {
            counts[space[a].name] = b.counts[a];
            freqs[space[a].name] = b.freqs[a];
        }
        buckets.push_back({{"bucket", b.label}, {"counts", counts}, {"frequencies", freqs}});
    }
    return {{"buckets", buckets}};
}

}  // namespace dialplan::eval
