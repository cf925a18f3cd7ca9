#pragma once

#include <stdexcept>
#include <string>

namespace desmoke {

/// Error categories double as CLI exit codes.
enum class ErrorCategory : int {
    Config = 2,
    Data = 3,
    Version = 4,
    Numeric = 5,
    Io = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    ErrorCategory category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorCategory::Data, what) {}
};

struct VersionError : Error {
    explicit VersionError(const std::string& what) : Error(ErrorCategory::Version, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

}  // namespace desmoke
