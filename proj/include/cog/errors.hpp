#pragma once

#include <stdexcept>
#include <string>

namespace cog {

/// Bad user input: malformed config, missing file, out-of-range request.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where the contract forbids them (diverged training,
/// NaN gradients, degenerate probe reference).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cog
