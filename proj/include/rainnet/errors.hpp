#pragma once

#include <stdexcept>
#include <string>

namespace rainnet {

// Violation of an operation's preconditions (shape mismatch, bad factor, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable file content (image, checkpoint, manifest).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad run configuration (unknown key, wrong type, inconsistent values).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rainnet
