#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>

namespace btm {

// Error taxonomy: shape_error for tensor dimension mismatches, contract_error
// for violated operation preconditions, config_error for bad configuration,
// data_error for malformed or missing input data.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : error {
    using error::error;
};
struct contract_error : error {
    using error::error;
};
struct config_error : error {
    using error::error;
};
struct data_error : error {
    using error::error;
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void cat_into(std::ostringstream& os, const T& t, const Rest&... rest) {
    os << t;
    cat_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string strcat_(const Args&... args) {
    std::ostringstream os;
    detail::cat_into(os, args...);
    return os.str();
}

// Log level comes from BTM_LOG in {error, info, debug}; default info.
enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("BTM_LOG");
        if (!env) return LogLevel::Info;
        std::string s(env);
        if (s == "error") return LogLevel::Error;
        if (s == "debug") return LogLevel::Debug;
        if (s == "info") return LogLevel::Info;
        std::fprintf(stderr, "warning: unknown BTM_LOG value '%s', using info\n", env);
        return LogLevel::Info;
    }();
    return lvl;
}

inline void logf(LogLevel lvl, const char* fmt, ...) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    va_list ap;
    va_start(ap, fmt);
    std::vfprintf(stderr, fmt, ap);
    va_end(ap);
    std::fputc('\n', stderr);
}

#define BTM_LOGI(...) ::btm::logf(::btm::LogLevel::Info, __VA_ARGS__)
#define BTM_LOGD(...) ::btm::logf(::btm::LogLevel::Debug, __VA_ARGS__)
#define BTM_LOGE(...) ::btm::logf(::btm::LogLevel::Error, __VA_ARGS__)

}  // namespace btm
