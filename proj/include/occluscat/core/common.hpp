#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace occluscat {

// Precondition / shape-contract violations. Callers that trip one have a bug.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// User-facing configuration problems (bad flag values, non-occluding specs, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or corrupt on-disk artifacts. Maps to exit code 3 in the CLI.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace occluscat
