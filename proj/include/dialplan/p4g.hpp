#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dialplan/chat.hpp"
#include "dialplan/core.hpp"

// Persuasion-for-charity task: action space, one-shot exemplar and the prompt
// renderings used for response generation, user simulation, value probing,
// prior sampling and judging.
namespace dialplan::p4g {

/// Probe appended by the value prompt.
inline constexpr std::string_view kValueProbe = "Would you be interested in donating to Save the Children?";
/// Shorter probe wording, kept for alternative task assets.
inline constexpr std::string_view kValueProbeShort = "Would you like to make a donation?";

enum class TemplateKind { SystemResponse, UserSimulation, ValueProbe, PriorPolicy, Judge };

struct ExemplarTurn {
    Speaker speaker = Speaker::User;
    std::optional<ActId> act;
    std::optional<ReactionLabel> label;
    std::string text;

    friend bool operator==(const ExemplarTurn&, const ExemplarTurn&) = default;
};

/// Everything task-specific that the prompts need. Template strings may hold
/// `{{background}}`, `{{label_menu}}`, `{{act_menu}}`, `{{context}}`,
/// `{{response_a}}` and `{{response_b}}` markers.
struct Task {
    ActionSpace acts;
    std::vector<ActId> act_menu_order;
    std::string system_speaker = "Persuader";
    std::string user_speaker = "Persuadee";
    std::string background;
    std::string value_probe;
    std::string system_preamble;
    std::string system_new_conversation;
    std::string user_preamble;
    std::string user_new_conversation;
    std::string prior_preamble;
    std::string prior_new_conversation;
    std::string judge;
    std::vector<ExemplarTurn> exemplar;

    friend bool operator==(const Task&, const Task&) = default;
};

// ─── Action space ──────────────────────────────────────────────

inline ActionSpace build_action_space() {
    return ActionSpace({
        {0, "logical appeal", "The Persuader use of reasoning and evidence to convince the Persuadee."},
        {1, "emotion appeal", "The Persuader uses an emotion appeal to convince the Persuadee."},
        {2, "credibility appeal", "The Persuader establishes credibility of Save the Children by citing its impact."},
        {3, "task related inquiry",
         "The Persuader asks about the Persuadee's knowledge or opinion related to Save the Children."},
        {4, "proposition of donation", "The Persuader asks if the Persuadee would like to make a small donation."},
        {5, "greeting", "The Persuader greets the Persuadee."},
        {6, "other", "The Persuader responds to the Persuadee without using any persuasive strategy."},
    });
}

namespace act {
inline constexpr ActId kLogicalAppeal = 0;
inline constexpr ActId kEmotionAppeal = 1;
inline constexpr ActId kCredibilityAppeal = 2;
inline constexpr ActId kTaskRelatedInquiry = 3;
inline constexpr ActId kPropositionOfDonation = 4;
inline constexpr ActId kGreeting = 5;
inline constexpr ActId kOther = 6;
}  // namespace act

// ─── Built-in task ─────────────────────────────────────────────

inline Task builtin_task() {
    using enum ReactionLabel;
    Task t;
    t.acts = build_action_space();
    t.act_menu_order = {act::kCredibilityAppeal, act::kEmotionAppeal,      act::kPropositionOfDonation,
                        act::kLogicalAppeal,     act::kTaskRelatedInquiry, act::kGreeting,
                        act::kOther};
    t.background =
        "Save the Children is head-quartered in London, and they work to help fight poverty around the world. "
        "Children need help in developing countries and war zones. Small donations like $1 or $2 go a long way "
        "to help.";
    t.value_probe = std::string(kValueProbe);
    t.system_preamble =
        "{{background}}\n"
        "You are Persuader who is trying to persuade the Persuadee to donate to a charity called Save the "
        "Children.\n"
        "The following is an example conversation between a Persuader and a Persuadee.";
    t.system_new_conversation = "The following is a new conversation between Persuader (you) and a Persuadee.";
    t.user_preamble =
        "You are a Persuadee. A Persuader is trying to persuade you to donate to a charity called Save the "
        "Children.\n"
        "You can choose amongst the following actions during a conversation to respond to the Persuader:\n"
        "{{label_menu}}.\n"
        "The following is an example conversation between a Persuader and some Persuadee.";
    t.user_new_conversation =
        "The following is a new conversation between a Persuader and a Persuadee (you). You may or may not want "
        "to donate to Save the Children.";
    t.prior_preamble =
        "{{background}}\n"
        "You are Persuader who is trying to persuade the Persuadee to donate to a charity called Save the "
        "Children. You can choose amongst the following actions during a conversation:\n"
        "{{act_menu}}.\n"
        "The following is an example conversation between a Persuader and a Persuadee.";
    t.prior_new_conversation = t.system_new_conversation;
    t.judge =
        "The following is background information about Save the Children.\n"
        "{{background}}\n"
        "The following is a conversation between a Persuader and a Persuadee about a charity called Save the "
        "Children. The Persuader is trying to persuade the Persuadee to donate to Save the Children\n"
        "{{context}}\n"
        "Which of the following responses can better help the Persuader convince the Persuadee to donate to "
        "Save the Children? Why?\n"
        "A. Persuader: {{response_a}}\n"
        "B. Persuader: {{response_b}}\n"
        "C. Can't tell.\n"
        "Your can choose from either A, B, or C.\n"
        "Your choice:";

    auto user = [](ReactionLabel l, const char* text) { return ExemplarTurn{Speaker::User, std::nullopt, l, text}; };
    auto sys = [](ActId a, const char* text) { return ExemplarTurn{Speaker::System, a, std::nullopt, text}; };
    t.exemplar = {
        user(Neutral, "Hello. How are you?"),
        sys(act::kTaskRelatedInquiry,
            "Very well. I'm just up organizing info for my charity called Save the Children. Have you heard of "
            "this charity before?"),
        user(Neutral, "No, I have not. Can you tell me more?"),
        sys(act::kCredibilityAppeal,
            "Save the Children is an organization that helps children in developing countries, by promoting "
            "children's rights and providing relief. It is an amazing charity that helps kids who are in "
            "desperate need. They can help with safety, education and more."),
        user(NegativeReaction,
             "That sounds great. I believe in this charity, but still wonder how much of the money I donate "
             "actually helps. I am always worried if I donate it will just go to some higher up that is living "
             "the high life."),
        sys(act::kEmotionAppeal,
            "Every little bit makes a difference. When you have people who are so poor, it's amazing what a tiny "
            "amount can do. I usually donate in hopes I can at least feel like I did my part. If I donated and "
            "some corrupt person took it, that's the worst karma and even worst scandal imaginable"),
        user(PositiveReaction,
             "With that all said I do feel like any organization that aims to help the children I am more "
             "inclined to donate to them than most. I think helping children is an important thing as they are "
             "our future!"),
        sys(act::kPropositionOfDonation,
            "I think donating to this cause would def be a step in the right direction to hopefully helping "
            "across the world the children that are in despair. I don't want you to donate any more than you "
            "want, so if you want to donate how much do you to do?"),
        user(Donate, "I would donate 1 dollar to this charity and feel good about it I think."),
    };
    return t;
}

// ─── Placeholder substitution ──────────────────────────────────

struct TemplateVars {
    std::string background;
    std::string label_menu;
    std::string act_menu;
    std::string context;
    std::string response_a;
    std::string response_b;
};

/// Replaces every `{{name}}` marker. Unknown or unterminated markers are errors.
inline std::string substitute(std::string_view tmpl, const TemplateVars& vars) {
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) throw std::invalid_argument("template: unterminated '{{'");
        const auto name = tmpl.substr(open + 2, close - open - 2);
        if (name == "background") out += vars.background;
        else if (name == "label_menu") out += vars.label_menu;
        else if (name == "act_menu") out += vars.act_menu;
        else if (name == "context") out += vars.context;
        else if (name == "response_a") out += vars.response_a;
        else if (name == "response_b") out += vars.response_b;
        else throw std::invalid_argument("template: unknown placeholder '" + std::string(name) + "'");
        pos = close + 2;
    }
    return out;
}

inline std::string label_menu() {
    std::string out;
    for (ReactionLabel l : kAllReactionLabels) {
        if (!out.empty()) out += ' ';
        out += '[';
        out += reaction_name(l);
        out += ']';
    }
    return out;
}

inline std::string act_menu(const Task& task) {
    std::string out;
    for (ActId a : task.act_menu_order) {
        if (!out.empty()) out += ' ';
        out += "[" + task.acts[a].name + "]";
    }
    return out;
}

inline TemplateVars base_vars(const Task& task) {
    return {task.background, label_menu(), act_menu(task), {}, {}, {}};
}

// ─── Prompt rendering ──────────────────────────────────────────

namespace detail {

// Generic view of exemplar and real turns so both render through the same rules.
struct RenderTurn {
    Speaker speaker;
    std::optional<ActId> act;
    std::optional<ReactionLabel> label;
    const std::string* text;
};

inline std::vector<RenderTurn> view(const std::vector<ExemplarTurn>& turns) {
    std::vector<RenderTurn> out;
    for (const auto& t : turns) out.push_back({t.speaker, t.act, t.label, &t.text});
    return out;
}

inline std::vector<RenderTurn> view(const DialogueHistory& h) {
    std::vector<RenderTurn> out;
    for (const auto& t : h.turns) out.push_back({t.speaker, t.act, t.reaction, &t.text});
    return out;
}

inline std::string with_bracket(const std::string& tag, const std::string& text) {
    return "[" + tag + "] " + text;
}

inline void append_line(MessageList& msgs, const std::string& line) {
    msgs.back().content += '\n';
    msgs.back().content += line;
}

// Persuader-side rendering: system turns are "assistant". When `control_lines`
// is set, the act's natural-language form is appended to the message before
// each system turn; otherwise the act name is bracketed in front of the text.
inline void render_persuader_side(const Task& task, MessageList& msgs, const std::vector<RenderTurn>& turns,
                                  bool control_lines) {
    for (const auto& t : turns) {
        if (t.speaker == Speaker::System) {
            if (control_lines && t.act) append_line(msgs, task.acts[*t.act].nl_form);
            std::string body = (!control_lines && t.act) ? with_bracket(task.acts[*t.act].name, *t.text) : *t.text;
            msgs.push_back({"assistant", task.system_speaker + ": " + body});
        } else {
            msgs.push_back({"user", task.user_speaker + ": " + *t.text});
        }
    }
}

// Persuadee-side rendering: roles reversed, user turns carry their bracketed label.
inline void render_persuadee_side(const Task& task, MessageList& msgs, const std::vector<RenderTurn>& turns) {
    for (const auto& t : turns) {
        if (t.speaker == Speaker::System) {
            msgs.push_back({"user", task.system_speaker + ": " + *t.text});
        } else {
            std::string body = t.label ? with_bracket(std::string(reaction_name(*t.label)), *t.text) : *t.text;
            msgs.push_back({"assistant", task.user_speaker + ": " + body});
        }
    }
}

inline void require_valid(const Task& task, const DialogueHistory& h) {
    if (auto v = validate_history(h, task.acts)) throw std::invalid_argument("prompt: invalid history: " + *v);
}

inline MessageList user_side_messages(const Task& task, const DialogueHistory& h) {
    MessageList msgs{{"system", substitute(task.user_preamble, base_vars(task))}};
    render_persuadee_side(task, msgs, view(task.exemplar));
    msgs.push_back({"system", substitute(task.user_new_conversation, base_vars(task))});
    render_persuadee_side(task, msgs, view(h));
    return msgs;
}

}  // namespace detail

/// Prompt asking for the next Persuader utterance realising `a`.
inline MessageList render_system_prompt(const Task& task, const DialogueHistory& h, const DialogueAct& a) {
    detail::require_valid(task, h);
    if (!h.awaiting_system()) throw std::invalid_argument("render_system_prompt: history must end with a User turn");
    MessageList msgs{{"system", substitute(task.system_preamble, base_vars(task))}};
    detail::render_persuader_side(task, msgs, detail::view(task.exemplar), true);
    msgs.push_back({"system", substitute(task.system_new_conversation, base_vars(task))});
    detail::render_persuader_side(task, msgs, detail::view(h), true);
    detail::append_line(msgs, task.acts[a.id].nl_form);
    return msgs;
}

/// Prompt asking the simulated Persuadee to answer the trailing System turn.
inline MessageList render_user_sim_prompt(const Task& task, const DialogueHistory& h) {
    detail::require_valid(task, h);
    if (!h.ends_with_system()) throw std::invalid_argument("render_user_sim_prompt: history must end with a System turn");
    return detail::user_side_messages(task, h);
}

/// User-simulation prompt with the donation probe appended as a final Persuader turn.
inline MessageList render_value_prompt(const Task& task, const DialogueHistory& h) {
    detail::require_valid(task, h);
    if (!h.ends_with_user()) throw std::invalid_argument("render_value_prompt: history must end with a User turn");
    MessageList msgs = detail::user_side_messages(task, h);
    msgs.push_back({"user", task.system_speaker + ": " + task.value_probe});
    return msgs;
}

/// Persuader-side prompt whose completions start with a bracketed act name.
inline MessageList render_prior_prompt(const Task& task, const DialogueHistory& h) {
    detail::require_valid(task, h);
    if (!h.awaiting_system()) throw std::invalid_argument("render_prior_prompt: history must end with a User turn");
    MessageList msgs{{"system", substitute(task.prior_preamble, base_vars(task))}};
    detail::render_persuader_side(task, msgs, detail::view(task.exemplar), false);
    msgs.push_back({"system", substitute(task.prior_new_conversation, base_vars(task))});
    detail::render_persuader_side(task, msgs, detail::view(h), false);
    return msgs;
}

/// "Persuader: ..." / "Persuadee: ..." lines, one per turn.
inline std::string render_context(const Task& task, const DialogueHistory& h) {
    std::string out;
    for (const auto& t : h.turns) {
        if (!out.empty()) out += '\n';
        out += (t.speaker == Speaker::System ? task.system_speaker : task.user_speaker) + ": " + t.text;
    }
    return out;
}

// ─── Parsing ───────────────────────────────────────────────────

struct BracketParse {
    std::string label;
    std::string remainder;

    friend bool operator==(const BracketParse&, const BracketParse&) = default;
};

/// Leading "[label]" group after an optional speaker prefix; remainder is trimmed.
inline std::optional<BracketParse> parse_bracketed_label(std::string_view text) {
    std::string s = trim(text);
    for (std::string_view prefix : {"Persuadee:", "Persuader:"}) {
        if (std::string_view(s).starts_with(prefix)) {
            s = trim(std::string_view(s).substr(prefix.size()));
            break;
        }
    }
    if (s.empty() || s.front() != '[') return std::nullopt;
    const auto close = s.find(']');
    if (close == std::string::npos) return std::nullopt;
    std::string label = trim(std::string_view(s).substr(1, close - 1));
    if (label.empty()) return std::nullopt;
    return BracketParse{std::move(label), trim(std::string_view(s).substr(close + 1))};
}

inline std::optional<ActId> parse_act(const Task& task, std::string_view text) {
    auto p = parse_bracketed_label(text);
    if (!p) return std::nullopt;
    return task.acts.find(p->label);
}

inline std::optional<std::pair<ReactionLabel, std::string>> parse_user_reply(std::string_view text) {
    auto p = parse_bracketed_label(text);
    if (!p) return std::nullopt;
    auto label = parse_reaction_label(p->label);
    if (!label) return std::nullopt;
    return std::pair{*label, std::move(p->remainder)};
}

/// Strips a leading speaker prefix and any bracketed act echo from a generated Persuader utterance.
inline std::string clean_system_utterance(std::string_view text) {
    if (auto p = parse_bracketed_label(text)) return p->remainder;
    std::string s = trim(text);
    for (std::string_view prefix : {"Persuader:"})
        if (std::string_view(s).starts_with(prefix)) s = trim(std::string_view(s).substr(prefix.size()));
    return s;
}

// ─── Asset directory ───────────────────────────────────────────

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("task assets: cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    if (!s.empty() && s.back() == '\n') s.pop_back();
    return s;
}

}  // namespace detail

/// Loads a task from `dir`: `task.json` (acts, menu order, speakers, exemplar)
/// plus one text file per template.
inline Task load_task(const std::filesystem::path& dir) {
    using nlohmann::json;
    const json j = json::parse(detail::read_text(dir / "task.json"));
    Task t;
    std::vector<DialogueAct> acts;
    for (const auto& a : j.at("acts"))
        acts.push_back({acts.size(), a.at("name").get<std::string>(), a.at("nl_form").get<std::string>()});
    t.acts = ActionSpace(std::move(acts));
    auto act_id = [&](const std::string& name) {
        auto id = t.acts.find(name);
        if (!id) throw std::runtime_error("task assets: unknown act '" + name + "'");
        return *id;
    };
    for (const auto& name : j.at("act_menu_order")) t.act_menu_order.push_back(act_id(name.get<std::string>()));
    t.system_speaker = j.value("system_speaker", std::string("Persuader"));
    t.user_speaker = j.value("user_speaker", std::string("Persuadee"));
    for (const auto& e : j.at("exemplar")) {
        ExemplarTurn turn;
        const auto speaker = e.at("speaker").get<std::string>();
        turn.text = e.at("text").get<std::string>();
        if (speaker == "system") {
            turn.speaker = Speaker::System;
            turn.act = act_id(e.at("act").get<std::string>());
        } else if (speaker == "user") {
            turn.speaker = Speaker::User;
            if (e.contains("label") && !e.at("label").is_null()) {
                turn.label = parse_reaction_label(e.at("label").get<std::string>());
                if (!turn.label) throw std::runtime_error("task assets: unknown label in exemplar");
            }
        } else {
            throw std::runtime_error("task assets: bad exemplar speaker '" + speaker + "'");
        }
        t.exemplar.push_back(std::move(turn));
    }
    t.background = detail::read_text(dir / "background.txt");
    t.value_probe = detail::read_text(dir / "probe.txt");
    t.system_preamble = detail::read_text(dir / "system_preamble.txt");
    t.system_new_conversation = detail::read_text(dir / "system_new_conversation.txt");
    t.user_preamble = detail::read_text(dir / "user_preamble.txt");
    t.user_new_conversation = detail::read_text(dir / "user_new_conversation.txt");
    t.prior_preamble = detail::read_text(dir / "prior_preamble.txt");
    t.prior_new_conversation = detail::read_text(dir / "prior_new_conversation.txt");
    t.judge = detail::read_text(dir / "judge.txt");
    return t;
}

}  // namespace dialplan::p4g
