#pragma once

#include <stdexcept>
#include <string>

namespace roleattn {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A softmax row whose every entry is -inf. Masks must be passed through
// apply_fallback before they reach attention.
struct DegenerateRowError : std::domain_error {
    using std::domain_error::domain_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg), line(line) {}
    std::size_t line;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when training produces a non-finite loss.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace roleattn
