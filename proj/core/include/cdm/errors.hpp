#pragma once

#include <stdexcept>
#include <string>

namespace cdm {

// Common base so callers can catch any library failure in one handler.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform (messages name the operation and both shapes).
struct ShapeError : Error {
    using Error::Error;
};

// A scalar was required (e.g. backward on a non-scalar loss).
struct RankError : Error {
    using Error::Error;
};

// Tape misuse: second backward pass, recording on a consumed tape, or a loss
// that was not produced on the tape being differentiated.
struct TapeError : Error {
    using Error::Error;
};

// NaN or Inf where finite values are required; message identifies the source.
struct NonFiniteError : Error {
    using Error::Error;
};

// Invalid configuration value or unparsable config file.
struct ConfigError : Error {
    using Error::Error;
};

// Argument outside its valid domain (e.g. timestep out of [1, T]).
struct DomainError : Error {
    using Error::Error;
};

// Operation not available in the current mode (e.g. training an identity autoencoder).
struct ModeError : Error {
    using Error::Error;
};

// A class id was expected in a stats bank but is absent (or the bank is empty).
struct MissingClassError : Error {
    using Error::Error;
};

// Fewer samples than the estimator needs (variance wants n >= 2, fits want >= 2, ...).
struct InsufficientSamplesError : Error {
    using Error::Error;
};

// A support set with zero elements.
struct EmptySupportError : Error {
    using Error::Error;
};

// A pipeline stage is missing an upstream artifact; message names the stage to run.
struct DependencyError : Error {
    using Error::Error;
};

}  // namespace cdm
