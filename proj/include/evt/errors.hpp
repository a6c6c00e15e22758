#pragma once

#include <stdexcept>
#include <string>

namespace evt {

// Shape or dimension mismatch between tensors / indices.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed external data (event files, manifests, checkpoints).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration (unknown keys, bad values, inconsistent settings).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values detected while debug verification mode is active,
// or training divergence.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace evt
