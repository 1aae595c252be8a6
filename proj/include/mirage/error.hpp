#ifndef MIRAGE_ERROR_HPP
#define MIRAGE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mirage {

// Invalid configuration, spec file, or CLI usage. Maps to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data file contents.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scene synthesis gave up (e.g. rejection sampling exhausted its retries).
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training-loop failures: divergence, non-finite gradients, degenerate batches.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mirage

#endif  // MIRAGE_ERROR_HPP
