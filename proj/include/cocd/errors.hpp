#pragma once

#include <stdexcept>
#include <string>

namespace cocd {

// Invalid configuration or constraint violation (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite objective value or arithmetic failure during a run (CLI exit code 3).
class EvaluationError : public std::runtime_error {
public:
    explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cocd
