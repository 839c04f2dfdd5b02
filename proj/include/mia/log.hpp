#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace mia::log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

// Replaces the process-wide sink (stderr by default). Passing an empty
// function restores the default.
void set_sink(Sink sink);
void set_quiet(bool quiet);

void warn(std::string_view message);
void info(std::string_view message);

}  // namespace mia::log
