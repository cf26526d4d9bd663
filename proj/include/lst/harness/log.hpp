#pragma once

// Minimal leveled logger for the command-line harness. Verbosity comes from
// the LST_LOG environment variable (error|warn|info|debug, default warn).
// Structured records are emitted as one JSON object per line on stderr.

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lst/stabilization.hpp"

namespace lst::harness {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel parse_log_level(std::string_view s) {
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::warn;
}

inline LogLevel& log_level_ref() {
  static LogLevel level = [] {
    const char* env = std::getenv("LST_LOG");
    return env ? parse_log_level(env) : LogLevel::warn;
  }();
  return level;
}

inline bool log_enabled(LogLevel level) { return static_cast<int>(level) <= static_cast<int>(log_level_ref()); }

inline void log_json(LogLevel level, const nlohmann::json& record) {
  if (!log_enabled(level)) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << record.dump() << '\n';
}

inline void log_message(LogLevel level, std::string_view msg) {
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  log_json(level, {{"level", names[static_cast<int>(level)]}, {"msg", msg}});
}

/// Sink that forwards stabilization events to the structured log at info level.
inline StabilizationSink stabilization_log_sink(std::string run) {
  return [run = std::move(run)](const StabilizationEvent& ev) {
    log_json(LogLevel::info, {{"event", "stabilization"},
                              {"run", run},
                              {"kind", to_string(ev.kind)},
                              {"step", ev.step},
                              {"which", ev.which},
                              {"sigma_before", ev.sigma_before},
                              {"sigma_after", ev.sigma_after}});
  };
}

}  // namespace lst::harness
