#pragma once

#include <stdexcept>
#include <string>

namespace sohnet {

enum class ErrorKind {
    Parse,        // malformed input text
    Schema,       // well-formed text that violates the file contract
    Reference,    // missing or invalid reference capacity (Q_3)
    Input,        // invalid in-memory input (empty cycle, duplicate timestamps, ...)
    Split,        // too few cycles to split
    Shape,        // tensor shape mismatch
    Index,        // out-of-range index
    Aggregation,  // empty segment set
    Numeric,      // non-finite value where a finite one is required
    Divergence,   // solver produced a non-finite intermediate
    Loss,         // empty batch or non-finite loss
    Version,      // incompatible checkpoint
    Io,           // file system failure
    Config,       // invalid configuration value
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace sohnet
