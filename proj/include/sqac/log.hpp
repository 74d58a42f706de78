#pragma once

#include <functional>
#include <string>

namespace sqac::log {

enum class Level { kDebug, kInfo, kWarn, kError };

// Messages below the threshold are dropped. Default kInfo; SQAC_LOG=debug|warn|error overrides.
void set_level(Level level);
Level level();

// Replaces the stderr sink; pass an empty function to restore it.
using Sink = std::function<void(Level, const std::string&)>;
void set_sink(Sink sink);

void write(Level level, const std::string& message);
inline void debug(const std::string& m) { write(Level::kDebug, m); }
inline void info(const std::string& m) { write(Level::kInfo, m); }
inline void warn(const std::string& m) { write(Level::kWarn, m); }
inline void error(const std::string& m) { write(Level::kError, m); }

}  // namespace sqac::log
