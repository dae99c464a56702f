#pragma once

#include <stdexcept>
#include <string>

namespace texedit {

/// Failure categories. The numeric values double as process exit codes for the CLI.
enum class ErrorKind : int {
    internal = 1,
    config = 2,
    asset = 3,
    backend = 4,
    diverged = 5,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return "config";
        case ErrorKind::asset: return "asset";
        case ErrorKind::backend: return "backend";
        case ErrorKind::diverged: return "diverged";
        default: return "internal";
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct AssetError : Error {
    explicit AssetError(const std::string& w) : Error(ErrorKind::asset, w) {}
};
struct BackendError : Error {
    explicit BackendError(const std::string& w) : Error(ErrorKind::backend, w) {}
};
struct DivergedError : Error {
    explicit DivergedError(const std::string& w) : Error(ErrorKind::diverged, w) {}
};

/// Raised when precomputed lighting tables no longer match their source environment.
struct StaleTablesError : Error {
    explicit StaleTablesError(const std::string& w) : Error(ErrorKind::internal, w) {}
};

}  // namespace texedit
