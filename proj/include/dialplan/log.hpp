#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dialplan::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline std::atomic<Level>& threshold() {
    static std::atomic<Level> level{Level::Warn};
    return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline Level parse_level(std::string_view s) {
    if (s == "debug") return Level::Debug;
    if (s == "info") return Level::Info;
    if (s == "warn" || s == "warning") return Level::Warn;
    if (s == "error") return Level::Error;
    if (s == "off") return Level::Off;
    throw std::invalid_argument("unknown log level: " + std::string(s));
}

inline void write(Level level, std::string_view msg) {
    if (level < threshold().load()) return;
    static std::mutex mu;
    static constexpr const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard lock(mu);
    std::clog << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::Debug, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void warn(std::string_view msg) { write(Level::Warn, msg); }
inline void error(std::string_view msg) { write(Level::Error, msg); }

}  // namespace dialplan::log
