#pragma once

#include <stdexcept>
#include <string>

namespace editlab {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PreconditionError : std::runtime_error {
  explicit PreconditionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DecompositionError : std::runtime_error {
  explicit DecompositionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UndefinedMetricError : std::runtime_error {
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DependencyError : std::runtime_error {
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace editlab
