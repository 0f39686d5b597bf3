#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace hfselect::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level level_from_string(std::string_view s) {
    if (s == "error") return Level::error;
    if (s == "info") return Level::info;
    if (s == "debug") return Level::debug;
    return Level::warn;
}

// Read once from HFSELECT_LOG; defaults to warn.
inline Level& threshold() {
    static Level lvl = [] {
        const char* env = std::getenv("HFSELECT_LOG");
        return env ? level_from_string(env) : Level::warn;
    }();
    return lvl;
}

inline void write(Level lvl, std::string_view msg) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    static std::mutex mu;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard lock(mu);
    std::cerr << "[hfselect " << names[static_cast<int>(lvl)] << "] " << msg << '\n';
}

inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

} // namespace hfselect::log
