#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialplan/engine.hpp"
#include "dialplan/eval.hpp"
#include "dialplan/llm.hpp"
#include "dialplan/llm_oracle.hpp"
#include "dialplan/p4g.hpp"
#include "dialplan/planner.hpp"
#include "dialplan/serialize.hpp"
#include "dialplan/synthetic.hpp"

namespace dialplan::app {

namespace fs = std::filesystem;

/// Error reported to the user as "error: ..." with a nonzero exit status.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ─── Configuration ─────────────────────────────────────────────

struct LlmSettings {
    llm::ClientConfig client;
    LlmOracleConfig oracle;
    std::string api_key_env = "OPENAI_API_KEY";
    double judge_temperature = 0.7;
};

struct SelfplaySettings {
    int episodes = 1;
    int turn_cap = 10;
};

struct EvalSettings {
    int runs = 1;
    std::optional<int> truncate_sentences;
    bool ties_in_denominator = true;
    int judge_samples = 5;
    std::string judge = "llm";  // "llm" or "stub-a" (always answers the presented option A)
    std::string planner_a = "mcts";
    std::string planner_b = "prompting";
};

struct AppConfig {
    SearchConfig search;
    std::string oracle = "synthetic";  // "synthetic" or "llm"
    std::optional<SyntheticTask> synthetic_task;
    LlmSettings llm;
    std::optional<fs::path> task_dir;
    std::optional<fs::path> cache_dir;
    std::optional<fs::path> corpus;
    std::optional<fs::path> output;
    std::string log_level = "warn";
    SelfplaySettings selfplay;
    EvalSettings eval;
};

/// Task used by the synthetic oracle when the config names none.
inline SyntheticTask default_synthetic_task() {
    Rng rng(0x5eed);
    return SyntheticTask::random(rng, 3);
}

namespace detail {

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json_file(const fs::path& p) {
    try {
        return nlohmann::json::parse(read_file(p));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

/// Parses a config object. Relative paths resolve against `base_dir`.
inline AppConfig app_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
    using dialplan::detail::reject_unknown_keys;
    AppConfig c;
    try {
        reject_unknown_keys(j,
                            {"search", "oracle", "synthetic_task", "llm", "task_dir", "cache_dir", "corpus", "output",
                             "log_level", "selfplay", "eval"},
                            "config");
        if (j.contains("search")) c.search = search_config_from_json(j.at("search"));
        c.oracle = j.value("oracle", c.oracle);
        if (j.contains("synthetic_task")) {
            const auto& t = j.at("synthetic_task");
            c.synthetic_task = t.is_string()
                                   ? synthetic_task_from_json(detail::read_json_file(detail::resolve(base_dir, t.get<std::string>())))
                                   : synthetic_task_from_json(t);
        }
        if (j.contains("llm")) {
            const auto& l = j.at("llm");
            reject_unknown_keys(l,
                                {"endpoint", "model", "api_key_env", "timeout_seconds", "max_retries",
                                 "backoff_initial_ms", "max_in_flight", "max_tokens", "parse_retry_rounds",
                                 "judge_temperature"},
                                "llm config");
            auto& s = c.llm;
            s.client.endpoint = l.value("endpoint", s.client.endpoint);
            s.client.model = l.value("model", s.client.model);
            s.oracle.model = s.client.model;
            s.api_key_env = l.value("api_key_env", s.api_key_env);
            s.client.timeout_seconds = l.value("timeout_seconds", s.client.timeout_seconds);
            s.client.max_retries = l.value("max_retries", s.client.max_retries);
            s.client.backoff_initial_ms = l.value("backoff_initial_ms", s.client.backoff_initial_ms);
            s.client.max_in_flight = l.value("max_in_flight", s.client.max_in_flight);
            s.oracle.max_tokens = l.value("max_tokens", s.oracle.max_tokens);
            s.oracle.parse_retry_rounds = l.value("parse_retry_rounds", s.oracle.parse_retry_rounds);
            s.judge_temperature = l.value("judge_temperature", s.judge_temperature);
        }
        auto path_field = [&](const char* key, std::optional<fs::path>& out) {
            if (j.contains(key) && !j.at(key).is_null()) out = detail::resolve(base_dir, j.at(key).get<std::string>());
        };
        path_field("task_dir", c.task_dir);
        path_field("cache_dir", c.cache_dir);
        path_field("corpus", c.corpus);
        path_field("output", c.output);
        c.log_level = j.value("log_level", c.log_level);
        if (j.contains("selfplay")) {
            const auto& s = j.at("selfplay");
            reject_unknown_keys(s, {"episodes", "turn_cap"}, "selfplay config");
            c.selfplay.episodes = s.value("episodes", c.selfplay.episodes);
            c.selfplay.turn_cap = s.value("turn_cap", c.selfplay.turn_cap);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            reject_unknown_keys(e,
                                {"runs", "truncate_sentences", "ties_in_denominator", "judge_samples", "judge",
                                 "planner_a", "planner_b"},
                                "eval config");
            c.eval.runs = e.value("runs", c.eval.runs);
            if (e.contains("truncate_sentences") && !e.at("truncate_sentences").is_null())
                c.eval.truncate_sentences = e.at("truncate_sentences").get<int>();
            c.eval.ties_in_denominator = e.value("ties_in_denominator", c.eval.ties_in_denominator);
            c.eval.judge_samples = e.value("judge_samples", c.eval.judge_samples);
            c.eval.judge = e.value("judge", c.eval.judge);
            c.eval.planner_a = e.value("planner_a", c.eval.planner_a);
            c.eval.planner_b = e.value("planner_b", c.eval.planner_b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline AppConfig load_app_config(const fs::path& file) {
    return app_config_from_json(detail::read_json_file(file), file.parent_path());
}

/// Checks cross-field constraints and that input paths exist.
inline void validate(const AppConfig& c) {
    try {
        c.search.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.oracle != "synthetic" && c.oracle != "llm") throw ConfigError("oracle must be \"synthetic\" or \"llm\"");
    log::parse_level(c.log_level);
    if (c.task_dir && !fs::is_directory(*c.task_dir)) throw ConfigError("task_dir not found: " + c.task_dir->string());
    if (c.corpus && !fs::is_regular_file(*c.corpus)) throw ConfigError("corpus not found: " + c.corpus->string());
    if (c.selfplay.episodes < 1) throw ConfigError("selfplay episodes must be positive");
    if (c.selfplay.turn_cap < 1) throw ConfigError("selfplay turn cap must be positive");
    if (c.eval.runs < 1) throw ConfigError("eval runs must be positive");
    if (c.eval.judge_samples < 1) throw ConfigError("eval judge_samples must be positive");
    if (c.eval.truncate_sentences && *c.eval.truncate_sentences < 1)
        throw ConfigError("eval truncate_sentences must be positive");
    if (c.eval.judge != "llm" && c.eval.judge != "stub-a") throw ConfigError("eval judge must be \"llm\" or \"stub-a\"");
}

// ─── Runtime ───────────────────────────────────────────────────

/// Judge that always answers the option presented first.
class StubJudgeA final : public eval::JudgeBackend {
public:
    std::vector<std::string> judge(const MessageList&, int samples, Rng&) override {
        return std::vector<std::string>(static_cast<std::size_t>(samples), "A");
    }
};

class LlmJudge final : public eval::JudgeBackend {
public:
    LlmJudge(LlmOracle& oracle, double temperature) : oracle_(oracle), temperature_(temperature) {}
    std::vector<std::string> judge(const MessageList& prompt, int samples, Rng&) override {
        return oracle_.complete(prompt, samples, temperature_);
    }

private:
    LlmOracle& oracle_;
    double temperature_;
};

/// Objects built from an AppConfig: task text, oracle and (for the LLM oracle) its client.
struct Runtime {
    AppConfig config;
    p4g::Task task;
    std::shared_ptr<llm::ChatClient> client;
    std::unique_ptr<OracleInterface> oracle;
    LlmOracle* llm_oracle = nullptr;

    const ActionSpace& space() const { return oracle->action_space(); }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

inline std::unique_ptr<Runtime> make_runtime(const AppConfig& cfg, const EnvLookup& env = process_env,
                                             std::shared_ptr<llm::HttpTransport> transport = nullptr) {
    validate(cfg);
    log::set_level(log::parse_level(cfg.log_level));
    auto rt = std::make_unique<Runtime>();
    rt->config = cfg;
    rt->task = cfg.task_dir ? p4g::load_task(*cfg.task_dir) : p4g::builtin_task();
    if (cfg.oracle == "synthetic") {
        rt->oracle = std::make_unique<SyntheticOracle>(cfg.synthetic_task.value_or(default_synthetic_task()));
    } else {
        llm::ClientConfig cc = cfg.llm.client;
        if (auto key = env(cfg.llm.api_key_env)) cc.api_key = *key;
        else log::warn("no API key in $" + cfg.llm.api_key_env + "; only cached completions will be available");
        cc.cache_dir = cfg.cache_dir;
        rt->client = std::make_shared<llm::ChatClient>(cc, std::move(transport));
        auto oracle = std::make_unique<LlmOracle>(rt->task, rt->client, cfg.llm.oracle);
        rt->llm_oracle = oracle.get();
        rt->oracle = std::move(oracle);
    }
    return rt;
}

/// Planner by name: mcts, mcts-closed-loop, mcts-no-response-selection, prompting, ground-truth.
inline std::unique_ptr<Planner> make_planner(Runtime& rt, const std::string& name) {
    SearchConfig c = rt.config.search;
    if (name == "mcts") return std::make_unique<MctsPlanner>(*rt.oracle, c, name);
    if (name == "mcts-closed-loop") {
        c.open_loop = false;
        return std::make_unique<MctsPlanner>(*rt.oracle, c, name);
    }
    if (name == "mcts-no-response-selection") {
        c.response_selection = false;
        return std::make_unique<MctsPlanner>(*rt.oracle, c, name);
    }
    if (name == "prompting") return std::make_unique<PromptingPlanner>(*rt.oracle, c, name);
    if (name == "ground-truth") return std::make_unique<GroundTruthPlanner>();
    throw ConfigError("unknown planner '" + name + "'");
}

// ─── Output helpers ────────────────────────────────────────────

inline std::string format_plan(const PlanResult& r, const ActionSpace& space) {
    std::ostringstream out;
    out << "chosen act: " << space[r.chosen_act].name << '\n';
    out << "utterance: " << r.chosen_utterance << '\n';
    std::size_t width = 3;
    for (ActId a = 0; a < space.size(); ++a) width = std::max(width, space[a].name.size());
    out << std::left << std::setw(static_cast<int>(width) + 2) << "act" << std::right << std::setw(6) << "N"
        << std::setw(10) << "Q" << std::setw(9) << "prior" << '\n';
    out << std::fixed;
    for (ActId a = 0; a < r.per_act_visits.size(); ++a) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << space[a].name << std::right << std::setw(6)
            << r.per_act_visits[a] << std::setw(10) << std::setprecision(4) << r.per_act_q[a] << std::setw(9)
            << std::setprecision(4) << r.root_prior.probs[a] << '\n';
    }
    out << "simulations: " << r.simulations_run << " (aborted " << r.simulations_aborted
        << "), oracle calls: " << r.oracle_call_count << '\n';
    return out.str();
}

inline void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    ensure_parent(path);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + path.string());
        out << content;
    }
    fs::rename(tmp, path);
}

inline DialogueHistory read_history_file(const fs::path& p, const ActionSpace& space) {
    const auto j = detail::read_json_file(p);
    try {
        const auto& turns = j.is_object() ? j.at("turns") : j;
        return history_from_json(turns, space);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

template <class F>
int guarded(std::ostream& err, F&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

// ─── Commands ──────────────────────────────────────────────────

/// One search from the history in `history_file`. Prints the plan, and when an
/// output path is configured persists it as a one-line transcript record.
inline int cmd_plan(const AppConfig& cfg, const fs::path& history_file, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto rt = make_runtime(cfg);
        const DialogueHistory h = read_history_file(history_file, rt->space());
        if (!h.awaiting_system()) throw ConfigError("history must be empty or end with a user turn");
        const PlanResult r = plan_next_act(*rt->oracle, cfg.search, h);

        Transcript t{history_file.stem().string(), h.with(Turn::system(r.chosen_act, r.chosen_utterance)), "mcts",
                     cfg.search, {{h.size(), r.chosen_act, r}}};
        std::ostringstream record;
        write_transcript(record, t, rt->space());
        if (cfg.output) write_file_atomic(*cfg.output, record.str());
        out << format_plan(r, rt->space());
        return 0;
    });
}

/// Interactive session: the planner speaks as the Persuader, stdin supplies the
/// Persuadee. "/quit" or end of input ends it; "/stats" shows the last plan.
inline int cmd_chat(const AppConfig& cfg, std::istream& in, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto rt = make_runtime(cfg);
        const fs::path path = cfg.output.value_or("dialplan_chat.jsonl");
        MctsPlanner planner(*rt->oracle, cfg.search);
        Transcript t{"chat", {}, planner.name(), cfg.search, {}};
        std::optional<PlanResult> last;
        int status = 0;

        auto save = [&] {
            // A Persuader turn the user never answered is not part of the dialogue.
            if (t.history.ends_with_system()) {
                t.history.turns.pop_back();
                t.per_turn_plan.pop_back();
            }
            std::ostringstream record;
            write_transcript(record, t, rt->space());
            write_file_atomic(path, record.str());
            out << "transcript saved to " << path.string() << '\n';
        };

        for (;;) {
            std::optional<PlannedTurn> turn;
            for (int attempt = 0; attempt < 2 && !turn; ++attempt) {
                try {
                    turn = planner.next_turn(t.history);
                } catch (const std::exception& e) {
                    log::warn(std::string("chat: planning failed: ") + e.what());
                    out << "Sorry, something went wrong on my side." << (attempt == 0 ? " Let me try again." : "")
                        << '\n';
                }
            }
            if (!turn) {
                status = 2;
                break;
            }
            last = turn->plan;
            t.per_turn_plan.push_back({t.history.size(), turn->act, turn->plan});
            t.history.turns.push_back(Turn::system(turn->act, turn->utterance));
            out << rt->task.system_speaker << ": " << turn->utterance << '\n';

            std::optional<std::string> reply;
            std::string line;
            while (!reply) {
                out << rt->task.user_speaker << ": " << std::flush;
                if (!std::getline(in, line)) break;
                const std::string text = trim(line);
                if (text == "/quit") break;
                if (text == "/stats") {
                    if (last) out << format_plan(*last, rt->space());
                    else out << "no plan yet\n";
                    continue;
                }
                if (text.empty()) continue;
                reply = text;
            }
            if (!reply) {
                out << '\n';
                break;
            }
            t.history.turns.push_back(Turn::user(*reply));
        }
        save();
        return status;
    });
}

/// Planner against the oracle's own user simulator, `episodes` dialogues of at most `turn_cap` System turns.
inline int cmd_selfplay(const AppConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (cfg.selfplay.turn_cap < 1) throw ConfigError("turn cap must be positive");
        auto rt = make_runtime(cfg);
        std::ostringstream records;
        int failed = 0;
        for (int e = 0; e < cfg.selfplay.episodes; ++e) {
            SearchConfig sc = cfg.search;
            sc.rng_seed = Rng::mix(cfg.search.rng_seed, static_cast<std::uint64_t>(e));
            MctsPlanner planner(*rt->oracle, sc);
            Rng user_rng = Rng(sc.rng_seed).fork(0x05e4);
            Transcript t{"selfplay-" + std::to_string(e), {}, planner.name(), sc, {}};
            try {
                for (int turn = 0; turn < cfg.selfplay.turn_cap; ++turn) {
                    PlannedTurn p = planner.next_turn(t.history);
                    t.per_turn_plan.push_back({t.history.size(), p.act, p.plan});
                    t.history.turns.push_back(Turn::system(p.act, p.utterance));
                    UserReply r = rt->oracle->generate_user_turn(t.history, sc.temp_gen, user_rng);
                    t.history.turns.push_back(Turn::user(r.text, r.label));
                }
            } catch (const std::exception& ex) {
                log::error("selfplay episode " + std::to_string(e) + " failed: " + ex.what());
                ++failed;
                continue;
            }
            write_transcript(records, t, rt->space());
        }
        if (cfg.output) {
            write_file_atomic(*cfg.output, records.str());
            out << (cfg.selfplay.episodes - failed) << " transcript(s) written to " << cfg.output->string() << '\n';
        } else {
            out << records.str();
        }
        return failed == cfg.selfplay.episodes ? 1 : 0;
    });
}

inline int cmd_eval_static(const AppConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (!cfg.corpus) throw ConfigError("eval-static needs a corpus");
        auto rt = make_runtime(cfg);
        std::ifstream in(*cfg.corpus);
        if (!in) throw ConfigError("cannot read " + cfg.corpus->string());
        const auto corpus = read_corpus(in, rt->space(), rt->space().find("other"));

        std::unique_ptr<eval::JudgeBackend> judge;
        if (cfg.eval.judge == "stub-a") {
            judge = std::make_unique<StubJudgeA>();
        } else {
            if (!rt->llm_oracle) throw ConfigError("the llm judge needs the llm oracle");
            judge = std::make_unique<LlmJudge>(*rt->llm_oracle, cfg.llm.judge_temperature);
        }
        auto a = make_planner(*rt, cfg.eval.planner_a);
        auto b = make_planner(*rt, cfg.eval.planner_b);
        eval::StaticEvalConfig ec{cfg.eval.runs, cfg.eval.truncate_sentences, cfg.eval.judge_samples,
                                  cfg.eval.ties_in_denominator, cfg.search.rng_seed};
        const auto report = eval::run_static_eval(rt->task, corpus, *a, *b, *judge, ec);
        if (cfg.output) write_file_atomic(*cfg.output, eval::to_json(report).dump(2) + "\n");
        out << eval::format_report(report);
        return 0;
    });
}

inline std::string format_histogram(const eval::DaHistogram& h, const ActionSpace& space) {
    std::ostringstream out;
    std::size_t width = 3;
    for (ActId a = 0; a < space.size(); ++a) width = std::max(width, space[a].name.size());
    out << std::left << std::setw(static_cast<int>(width) + 2) << "act";
    for (const auto& b : h.buckets) out << std::right << std::setw(9) << b.label;
    out << '\n' << std::fixed << std::setprecision(3);
    for (ActId a = 0; a < space.size(); ++a) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << space[a].name;
        for (const auto& b : h.buckets) out << std::right << std::setw(9) << b.freqs[a];
        out << '\n';
    }
    return out.str();
}

/// Dialogue-act distribution over transcript files.
inline int cmd_analyze(const AppConfig& cfg, const std::vector<fs::path>& inputs, std::ostream& out,
                       std::ostream& err) {
    return guarded(err, [&] {
        if (inputs.empty()) throw ConfigError("analyze needs at least one transcript file");
        auto rt = make_runtime(cfg);
        std::vector<Transcript> all;
        for (const auto& p : inputs) {
            std::ifstream in(p);
            if (!in) throw ConfigError("cannot read " + p.string());
            auto ts = read_transcripts(in, rt->space());
            all.insert(all.end(), std::make_move_iterator(ts.begin()), std::make_move_iterator(ts.end()));
        }
        const auto hist = eval::da_distribution(eval::planned_acts(all), rt->space().size());
        if (cfg.output) write_file_atomic(*cfg.output, eval::to_json(hist, rt->space()).dump(2) + "\n");
        out << format_histogram(hist, rt->space());
        return 0;
    });
}

}  // namespace dialplan::app
