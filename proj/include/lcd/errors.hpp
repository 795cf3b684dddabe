#pragma once

#include <stdexcept>
#include <string>

namespace lcd {

// Invalid configuration (bad hyperparameters, malformed config files, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid data at runtime (out-of-range ids, malformed datasets, ...).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged or produced non-finite values.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lcd
