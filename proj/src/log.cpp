#include "mia/log.hpp"

#include <iostream>
#include <mutex>

namespace mia::log {

namespace {

std::mutex& mu() {
    static std::mutex m;
    return m;
}

Sink& sink() {
    static Sink s;
    return s;
}

bool& quiet() {
    static bool q = false;
    return q;
}

void emit(std::string_view level, std::string_view message) {
    std::lock_guard lock(mu());
    if (sink()) {
        sink()(level, message);
    } else if (!quiet()) {
        std::cerr << "[" << level << "] " << message << '\n';
    }
}

}  // namespace

void set_sink(Sink s) {
    std::lock_guard lock(mu());
    sink() = std::move(s);
}

void set_quiet(bool q) {
    std::lock_guard lock(mu());
    quiet() = q;
}

void warn(std::string_view message) { emit("warn", message); }
void info(std::string_view message) { emit("info", message); }

}  // namespace mia::log
