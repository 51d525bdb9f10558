#include "lidarsplat/log.hpp"

#include <iostream>
#include <mutex>

namespace lsplat {

namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

LogSink& sink() {
    static LogSink s;
    return s;
}

} // namespace

void set_log_sink(LogSink s) {
    std::lock_guard<std::mutex> lock(sink_mutex());
    sink() = std::move(s);
}

void log_message(LogLevel level, const std::string& message) {
    std::lock_guard<std::mutex> lock(sink_mutex());
    if (sink()) {
        sink()(level, message);
        return;
    }
    if (level >= LogLevel::Warning) {
        std::cerr << (level == LogLevel::Warning ? "warning: " : "error: ") << message << "\n";
    }
}

} // namespace lsplat
