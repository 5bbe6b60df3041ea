#pragma once

#include <stdexcept>
#include <string>

namespace cdiff {

// Error taxonomy used across the pipeline. Each maps to one failure contract:
// bad configuration, bad call arguments, tensor shape mismatch, degenerate
// numeric input, non-finite arithmetic, a diverged sampling trajectory,
// an impossible stratification, a missing pipeline dependency, or file I/O.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct DegenerateError : std::runtime_error {
    explicit DegenerateError(const std::string& msg) : std::runtime_error("degenerate input: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, int step)
        : std::runtime_error("divergence at step " + std::to_string(step) + ": " + msg), step(step) {}
    int step;
};

struct StratificationError : std::runtime_error {
    explicit StratificationError(const std::string& msg) : std::runtime_error("stratification error: " + msg) {}
};

struct DependencyError : std::runtime_error {
    explicit DependencyError(const std::string& msg) : std::runtime_error("dependency error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace cdiff
