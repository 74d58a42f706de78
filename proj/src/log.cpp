#include "sqac/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace sqac::log {
namespace {

Level initial_level() {
  const char* env = std::getenv("SQAC_LOG");
  if (env == nullptr) return Level::kInfo;
  const std::string_view v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "warn") return Level::kWarn;
  if (v == "error") return Level::kError;
  return Level::kInfo;
}

struct State {
  std::mutex mu;
  Level threshold = initial_level();
  Sink sink;
};

State& state() {
  static State s;
  return s;
}

const char* tag(Level l) {
  switch (l) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warning";
    case Level::kError: return "error";
  }
  return "info";
}

}  // namespace

void set_level(Level level) {
  std::lock_guard lock(state().mu);
  state().threshold = level;
}

Level level() {
  std::lock_guard lock(state().mu);
  return state().threshold;
}

void set_sink(Sink sink) {
  std::lock_guard lock(state().mu);
  state().sink = std::move(sink);
}

void write(Level level, const std::string& message) {
  std::lock_guard lock(state().mu);
  if (level < state().threshold) return;
  if (state().sink) {
    state().sink(level, message);
    return;
  }
  std::cerr << "sqac " << tag(level) << ": " << message << '\n';
}

}  // namespace sqac::log
