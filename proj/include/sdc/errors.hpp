#pragma once

#include <stdexcept>
#include <string>

namespace sdc {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/grid dimensions do not line up.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Byte stream is not the file we expect (wrong magic, bit depth, channels, ...).
struct DecodeError : Error {
    explicit DecodeError(const std::string& msg) : Error(msg) {}
};

// A value falls outside the representable/legal range.
struct RangeError : Error {
    explicit RangeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (pattern spec, train config, hyperparameter).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Input violates a mathematical precondition (non-binary mask, zero prediction, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Network graph construction or execution failure.
struct GraphError : Error {
    explicit GraphError(const std::string& msg) : Error(msg) {}
};

// Operation called in the wrong order (e.g. backward before forward).
struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// A loss/metric was requested on an empty pixel set; callers skip the sample.
struct EmptyEvalSet : Error {
    explicit EmptyEvalSet(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Training hit a NaN; carries enough context to locate the blow-up.
struct TrainingDiverged : Error {
    TrainingDiverged(const std::string& msg, long step) : Error(msg), step(step) {}
    long step;
};

}  // namespace sdc
