#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace dept {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Level comes from DEPT_LOG={error,info,debug}; default info.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("DEPT_LOG");
        if (env == nullptr) return LogLevel::info;
        std::string v(env);
        if (v == "error") return LogLevel::error;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    if (lvl > log_level()) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
    std::cerr << "[dept " << tag << "] " << msg << "\n";
}

inline void log_error(const std::string& msg) { log_msg(LogLevel::error, msg); }
inline void log_info(const std::string& msg) { log_msg(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::debug, msg); }

}  // namespace dept
