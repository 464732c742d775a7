#pragma once

#include <string>
#include <vector>

namespace dialplan {

/// One chat-completion message. Roles are "system", "user" or "assistant".
struct ChatMessage {
    std::string role;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

using MessageList = std::vector<ChatMessage>;

inline bool is_valid_role(const std::string& role) {
    return role == "system" || role == "user" || role == "assistant";
}

/// Plain-text rendering used for golden files and logs: "### role" then the content.
inline std::string format_messages(const MessageList& messages) {
    std::string out;
    for (const auto& m : messages) {
        out += "### ";
        out += m.role;
        out += '\n';
        out += m.content;
        out += '\n';
    }
    return out;
}

}  // namespace dialplan
