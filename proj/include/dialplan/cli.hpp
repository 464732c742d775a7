#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dialplan/app.hpp"

namespace dialplan::app {

/// Flag values that override the loaded config when given.
struct Overrides {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> oracle;
    std::optional<std::string> cache_dir;
    std::optional<std::string> output;
    std::optional<std::string> log_level;
    std::optional<int> n, k, m, l, max_depth;
    std::optional<double> c_p, q0, temp_prior, temp_value, temp_gen, gamma;
    bool closed_loop = false;
    bool no_response_selection = false;
    bool unweighted_puct = false;
};

inline AppConfig resolve_config(const Overrides& o) {
    AppConfig c = o.config ? load_app_config(*o.config) : AppConfig{};
    SearchConfig& s = c.search;
    if (o.seed) s.rng_seed = *o.seed;
    if (o.oracle) c.oracle = *o.oracle;
    if (o.cache_dir) c.cache_dir = *o.cache_dir;
    if (o.output) c.output = *o.output;
    if (o.log_level) c.log_level = *o.log_level;
    if (o.n) s.n_simulations = *o.n;
    if (o.k) s.cache_size = *o.k;
    if (o.m) s.prior_samples = *o.m;
    if (o.l) s.value_samples = *o.l;
    if (o.max_depth) s.max_depth = *o.max_depth;
    if (o.c_p) s.c_p = *o.c_p;
    if (o.q0) s.q0 = *o.q0;
    if (o.temp_prior) s.temp_prior = *o.temp_prior;
    if (o.temp_value) s.temp_value = *o.temp_value;
    if (o.temp_gen) s.temp_gen = *o.temp_gen;
    if (o.gamma) s.gamma = *o.gamma;
    if (o.closed_loop) s.open_loop = false;
    if (o.no_response_selection) s.response_selection = false;
    if (o.unweighted_puct) s.prior_weighted_puct = false;
    return c;
}

/// Entry point shared by the executable and the tests.
inline int run_main(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App cli{"Open-loop MCTS dialogue planner"};
    cli.require_subcommand(1);
    Overrides o;
    cli.add_option("--config", o.config, "JSON config file");
    cli.add_option("--seed", o.seed, "Search random seed");
    cli.add_option("--oracle", o.oracle, "synthetic or llm")->check(CLI::IsMember({"synthetic", "llm"}));
    cli.add_option("--cache-dir", o.cache_dir, "Completion cache directory");
    cli.add_option("--output", o.output, "Output file");
    cli.add_option("--log-level", o.log_level, "debug, info, warn, error or off");
    cli.add_option("-n,--simulations", o.n, "Simulations per search");
    cli.add_option("-k,--cache-size", o.k, "Histories cached per node");
    cli.add_option("--c-p", o.c_p, "PUCT exploration constant");
    cli.add_option("--q0", o.q0, "Initial Q of unvisited acts");
    cli.add_option("-m,--prior-samples", o.m, "Prior samples per expansion");
    cli.add_option("-l,--value-samples", o.l, "Value samples per evaluation");
    cli.add_option("--temp-prior", o.temp_prior, "Prior sampling temperature");
    cli.add_option("--temp-value", o.temp_value, "Value sampling temperature");
    cli.add_option("--temp-gen", o.temp_gen, "Utterance generation temperature");
    cli.add_option("--max-depth", o.max_depth, "Search depth cap in System turns");
    cli.add_option("--gamma", o.gamma, "Discount factor (recorded, not applied)");
    cli.add_flag("--closed-loop", o.closed_loop, "One fixed history per node");
    cli.add_flag("--no-response-selection", o.no_response_selection, "Generate the reply afresh");
    cli.add_flag("--unweighted-puct", o.unweighted_puct, "Drop the prior from the exploration term");

    std::string history_file;
    auto* plan = cli.add_subcommand("plan", "Plan the next System turn for a history file");
    plan->add_option("history", history_file, "JSON history file")->required();

    auto* chat = cli.add_subcommand("chat", "Chat with the planner as the Persuadee");

    std::optional<int> episodes, turn_cap;
    auto* selfplay = cli.add_subcommand("selfplay", "Planner against the simulated user");
    selfplay->add_option("--episodes", episodes, "Number of dialogues");
    selfplay->add_option("--turn-cap", turn_cap, "System turns per dialogue");

    std::optional<std::string> corpus, planner_a, planner_b, judge;
    std::optional<int> runs, truncate;
    bool ties_excluded = false;
    auto* eval_static = cli.add_subcommand("eval-static", "Pairwise judged comparison over a corpus");
    eval_static->add_option("--corpus", corpus, "Corpus JSONL file");
    eval_static->add_option("--runs", runs, "Repeated runs");
    eval_static->add_option("--truncate-sentences", truncate, "Keep the first N sentences of each response");
    eval_static->add_option("--planner-a", planner_a, "Planner under test");
    eval_static->add_option("--planner-b", planner_b, "Baseline planner");
    eval_static->add_option("--judge", judge, "llm or stub-a")->check(CLI::IsMember({"llm", "stub-a"}));
    eval_static->add_flag("--ties-excluded", ties_excluded, "Leave ties out of the win-rate denominator");

    std::vector<std::string> inputs;
    auto* analyze = cli.add_subcommand("analyze", "Dialogue-act distribution of transcripts");
    analyze->add_option("transcripts", inputs, "Transcript JSONL files")->required();

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return cli.exit(e, out, err);
    }

    AppConfig cfg;
    try {
        cfg = resolve_config(o);
        if (episodes) cfg.selfplay.episodes = *episodes;
        if (turn_cap) {
            if (*turn_cap < 1) throw ConfigError("turn cap must be positive");
            cfg.selfplay.turn_cap = *turn_cap;
        }
        if (corpus) cfg.corpus = *corpus;
        if (runs) cfg.eval.runs = *runs;
        if (truncate) cfg.eval.truncate_sentences = *truncate;
        if (planner_a) cfg.eval.planner_a = *planner_a;
        if (planner_b) cfg.eval.planner_b = *planner_b;
        if (judge) cfg.eval.judge = *judge;
        if (ties_excluded) cfg.eval.ties_in_denominator = false;
        validate(cfg);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }

    if (*plan) return cmd_plan(cfg, history_file, out, err);
    if (*chat) return cmd_chat(cfg, in, out, err);
    if (*selfplay) return cmd_selfplay(cfg, out, err);
    if (*eval_static) return cmd_eval_static(cfg, out, err);
    std::vector<fs::path> paths(inputs.begin(), inputs.end());
    return cmd_analyze(cfg, paths, out, err);
}

}  // namespace dialplan::app
