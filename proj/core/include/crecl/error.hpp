#pragma once

#include <stdexcept>
#include <string>

namespace crecl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data (corpus files, memory files, checkpoints, streams).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid or incomplete experiment configuration. `key()` names the
/// offending dotted config path when one applies.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace crecl
