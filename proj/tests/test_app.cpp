#include <gtest/gtest.h>

#include <sstream>

#include "dialplan/cli.hpp"
#include "test_support.hpp"

using namespace dialplan;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int status;
    std::string out, err;
};

RunResult run(std::vector<std::string> args, const std::string& input = "") {
    args.insert(args.begin(), "dialplan");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::istringstream in(input);
    std::ostringstream out, err;
    const int status = app::run_main(static_cast<int>(argv.size()), argv.data(), in, out, err);
    return {status, out.str(), err.str()};
}

std::string fixture(const char* name) { return (testsupport::kTestDir / "fixtures" / name).string(); }

std::vector<Transcript> load_transcripts(const fs::path& p, std::size_t acts = 3) {
    std::ifstream in(p);
    return read_transcripts(in, SyntheticOracle(SyntheticTask(acts)).action_space());
}

const std::vector<std::string> kSmall{"--config", fixture("config_small.json")};

std::vector<std::string> with_small(std::vector<std::string> rest) {
    std::vector<std::string> args = kSmall;
    args.insert(args.end(), rest.begin(), rest.end());
    return args;
}

}  // namespace

TEST(CliPlan, SameSeedGivesByteIdenticalOutput) {
    const auto dir = testsupport::scratch_dir("cli_plan");
    const auto a = run(with_small({"--seed", "7", "--output", (dir / "a.jsonl").string(), "plan", fixture("history_synthetic.json")}));
    const auto b = run(with_small({"--seed", "7", "--output", (dir / "b.jsonl").string(), "plan", fixture("history_synthetic.json")}));
    ASSERT_EQ(a.status, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(testsupport::read_file(dir / "a.jsonl"), testsupport::read_file(dir / "b.jsonl"));
    EXPECT_NE(a.out.find("chosen act: act"), std::string::npos);

    const auto ts = load_transcripts(dir / "a.jsonl");
    ASSERT_EQ(ts.size(), 1u);
    EXPECT_EQ(ts[0].history.size(), 5u);
    ASSERT_TRUE(ts[0].per_turn_plan[0].plan.has_value());
    EXPECT_EQ(ts[0].per_turn_plan[0].turn_index, 4u);
    EXPECT_EQ(ts[0].config.n_simulations, 12);
}

TEST(CliPlan, SingleSimulation) {
    const auto dir = testsupport::scratch_dir("cli_plan_n1");
    const auto r = run(with_small({"-n", "1", "--output", (dir / "p.jsonl").string(), "plan", fixture("history_synthetic.json")}));
    ASSERT_EQ(r.status, 0) << r.err;
    const auto plan = *load_transcripts(dir / "p.jsonl")[0].per_turn_plan[0].plan;
    int sum = 0;
    for (int v : plan.per_act_visits) sum += v;
    EXPECT_EQ(sum, 1);
}

TEST(CliPlan, MalformedHistoryFailsWithoutOutput) {
    const auto r = run(with_small({"plan", fixture("history_bad.json")}));
    EXPECT_NE(r.status, 0);
    EXPECT_TRUE(r.out.empty());
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u);

    const auto missing = run(with_small({"plan", fixture("no_such_file.json")}));
    EXPECT_NE(missing.status, 0);
    EXPECT_TRUE(missing.out.empty());
}

TEST(CliPlan, InvalidSearchParametersAreRejected) {
    EXPECT_NE(run(with_small({"-n", "0", "plan", fixture("history_synthetic.json")})).status, 0);
    EXPECT_NE(run(with_small({"--c-p", "-1", "plan", fixture("history_synthetic.json")})).status, 0);
    EXPECT_NE(run({"plan"}).status, 0);
    EXPECT_NE(run({}).status, 0);
}

TEST(CliChat, ScriptedSessionProducesFullExchanges) {
    const auto dir = testsupport::scratch_dir("cli_chat");
    const auto path = dir / "chat.jsonl";
    const auto r = run(with_small({"--output", path.string(), "chat"}), "Hello.\n\n[neutral] hi\nOkay then.\n");
    ASSERT_EQ(r.status, 0) << r.err;
    const auto ts = load_transcripts(path);
    ASSERT_EQ(ts.size(), 1u);
    const auto& h = ts[0].history;
    ASSERT_EQ(h.size(), 6u);
    EXPECT_EQ(ts[0].per_turn_plan.size(), 3u);
    EXPECT_EQ(h.turns[3].text, "[neutral] hi");
    EXPECT_FALSE(h.turns[3].reaction.has_value());
    EXPECT_TRUE(h.back().speaker == Speaker::User);
    EXPECT_NE(r.out.find("transcript saved to"), std::string::npos);
}

TEST(CliChat, ImmediateQuitSavesEmptyTranscript) {
    const auto dir = testsupport::scratch_dir("cli_chat_quit");
    const auto r = run(with_small({"--output", (dir / "c.jsonl").string(), "chat"}), "/quit\nignored\n");
    ASSERT_EQ(r.status, 0) << r.err;
    const auto ts = load_transcripts(dir / "c.jsonl");
    EXPECT_TRUE(ts[0].history.turns.empty());
    EXPECT_TRUE(ts[0].per_turn_plan.empty());
}

TEST(CliChat, StatsPrintsLastPlan) {
    const auto dir = testsupport::scratch_dir("cli_chat_stats");
    const auto r = run(with_small({"--output", (dir / "c.jsonl").string(), "chat"}), "/stats\n/quit\n");
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.out.find("simulations: 12"), std::string::npos);
}

TEST(CliChat, OracleFailureApologisesAndSaves) {
    const auto dir = testsupport::scratch_dir("cli_chat_fail");
    testsupport::write_file(dir / "llm.json", R"({
        "oracle": "llm", "log_level": "off",
        "search": {"n_simulations": 2, "prior_samples": 1, "value_samples": 1},
        "llm": {"endpoint": "http://127.0.0.1:1/v1", "max_retries": 0, "timeout_seconds": 1}
    })");
    const auto r = run({"--config", (dir / "llm.json").string(), "--output", (dir / "c.jsonl").string(), "chat"},
                       "hello\n");
    EXPECT_EQ(r.status, 2) << r.err;
    EXPECT_NE(r.out.find("Sorry, something went wrong on my side. Let me try again."), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "c.jsonl"));
}

TEST(CliSelfplay, EpisodesRespectTurnCapAndSeed) {
    const auto dir = testsupport::scratch_dir("cli_selfplay");
    const auto r = run(with_small({"--output", (dir / "a.jsonl").string(), "selfplay", "--episodes", "2", "--turn-cap", "4"}));
    ASSERT_EQ(r.status, 0) << r.err;
    const auto ts = load_transcripts(dir / "a.jsonl");
    ASSERT_EQ(ts.size(), 2u);
    for (const auto& t : ts) {
        int system_turns = 0;
        for (const auto& turn : t.history.turns) system_turns += turn.speaker == Speaker::System;
        EXPECT_LE(system_turns, 4);
        EXPECT_EQ(t.per_turn_plan.size(), static_cast<std::size_t>(system_turns));
        for (const auto& turn : t.history.turns)
            if (turn.speaker == Speaker::User) {
                EXPECT_TRUE(turn.reaction.has_value());
            }
    }
    EXPECT_NE(ts[0].config.rng_seed, ts[1].config.rng_seed);

    run(with_small({"--output", (dir / "b.jsonl").string(), "selfplay", "--episodes", "2", "--turn-cap", "4"}));
    EXPECT_EQ(testsupport::read_file(dir / "a.jsonl"), testsupport::read_file(dir / "b.jsonl"));
}

TEST(CliSelfplay, ZeroTurnCapIsRejected) {
    const auto r = run(with_small({"selfplay", "--turn-cap", "0"}));
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.err.find("turn cap"), std::string::npos);
}

TEST(CliEvalStatic, StubJudgeCountsEveryTurn) {
    const auto r = run(with_small({"eval-static", "--corpus", fixture("corpus_synthetic.jsonl"), "--judge", "stub-a"}));
    ASSERT_EQ(r.status, 0) << r.err;
    const auto dir = testsupport::scratch_dir("cli_eval");
    const auto out = dir / "report.json";
    const auto r2 = run(with_small({"--output", out.string(), "eval-static", "--corpus", fixture("corpus_synthetic.jsonl"),
                                    "--judge", "stub-a", "--runs", "3"}));
    ASSERT_EQ(r2.status, 0) << r2.err;
    const auto j = nlohmann::json::parse(testsupport::read_file(out));
    EXPECT_EQ(j.at("wins").get<int>() + j.at("losses").get<int>() + j.at("ties").get<int>(), 30);
    EXPECT_TRUE(j.contains("mean"));
    EXPECT_TRUE(j.contains("std"));
    EXPECT_EQ(j.at("runs").size(), 3u);
}

TEST(CliEvalStatic, MissingCorpusOrLlmJudgeWithoutLlmFails) {
    EXPECT_NE(run(with_small({"eval-static", "--judge", "stub-a"})).status, 0);
    EXPECT_NE(run(with_small({"eval-static", "--corpus", fixture("missing.jsonl")})).status, 0);
    EXPECT_NE(run(with_small({"eval-static", "--corpus", fixture("corpus_synthetic.jsonl"), "--judge", "llm"})).status, 0);
    EXPECT_NE(run(with_small({"eval-static", "--corpus", fixture("corpus_synthetic.jsonl"), "--judge", "stub-a",
                              "--planner-a", "nope"}))
                  .status,
              0);
}

TEST(CliAnalyze, HistogramOfSelfplayTranscripts) {
    const auto dir = testsupport::scratch_dir("cli_analyze");
    ASSERT_EQ(run(with_small({"--output", (dir / "t.jsonl").string(), "selfplay"})).status, 0);
    const auto r = run(with_small({"--output", (dir / "h.json").string(), "analyze", (dir / "t.jsonl").string()}));
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.out.find("overall"), std::string::npos);
    const auto j = nlohmann::json::parse(testsupport::read_file(dir / "h.json"));
    EXPECT_FALSE(j.empty());
    EXPECT_NE(run(with_small({"analyze", fixture("history_bad.json")})).status, 0);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
    EXPECT_THROW(app::app_config_from_json(nlohmann::json{{"serach", {}}}), app::ConfigError);
    EXPECT_THROW(app::app_config_from_json(nlohmann::json{{"search", {{"n_simulation", 3}}}}), app::ConfigError);
    EXPECT_THROW(app::app_config_from_json(nlohmann::json{{"llm", {{"modle", "x"}}}}), app::ConfigError);
    auto c = app::app_config_from_json(nlohmann::json{{"oracle", "telepathy"}});
    EXPECT_THROW(app::validate(c), app::ConfigError);
}

TEST(Config, FileLoadsAndFlagsOverride) {
    const auto c = app::load_app_config(fixture("config_small.json"));
    EXPECT_EQ(c.search.n_simulations, 12);
    EXPECT_EQ(c.search.cache_size, 2);
    ASSERT_TRUE(c.synthetic_task.has_value());
    EXPECT_EQ(c.synthetic_task->distribution(1, 2)[0], 0.6);
    EXPECT_EQ(c.selfplay.turn_cap, 3);

    app::Overrides o;
    o.config = fixture("config_small.json");
    o.n = 30;
    o.closed_loop = true;
    const auto r = app::resolve_config(o);
    EXPECT_EQ(r.search.n_simulations, 30);
    EXPECT_FALSE(r.search.open_loop);
    EXPECT_EQ(r.search.prior_samples, 4);
}

TEST(Config, MissingApiKeyOnlyWarns) {
    app::AppConfig c;
    c.oracle = "llm";
    c.log_level = "off";
    const auto rt = app::make_runtime(c, [](const std::string&) { return std::optional<std::string>(); });
    ASSERT_NE(rt->llm_oracle, nullptr);
    EXPECT_EQ(rt->space().size(), 7u);
}

TEST(Config, PlannerNamesResolve) {
    app::AppConfig c;
    c.log_level = "off";
    auto rt = app::make_runtime(c);
    for (const char* n : {"mcts", "mcts-closed-loop", "mcts-no-response-selection", "prompting", "ground-truth"})
        EXPECT_EQ(app::make_planner(*rt, n)->name(), n);
    EXPECT_THROW(app::make_planner(*rt, "oracle"), app::ConfigError);
}

TEST(Samples, ConfigsLoadAndHistoriesParse) {
    const auto dir = testsupport::kTestDir.parent_path() / "samples";
    for (const char* name : {"synthetic.json", "llm.json"}) {
        const auto c = app::load_app_config(dir / name);
        EXPECT_NO_THROW(app::validate(c)) << name;
    }
    const auto c = app::load_app_config(dir / "synthetic.json");
    const auto space = c.synthetic_task->action_space();
    EXPECT_EQ(app::read_history_file(dir / "history.json", space).size(), 2u);
    EXPECT_EQ(app::read_history_file(dir / "persuasion_history.json", p4g::build_action_space()).size(), 2u);
    std::ifstream in(dir / "persuasion_corpus.jsonl");
    EXPECT_EQ(read_corpus(in, p4g::build_action_space()).size(), 1u);
}
