#pragma once

#include <stdexcept>
#include <string>

namespace forensic {

// Root of every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or infeasible configuration, detected before any work or network call.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A caller violated an operation's precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Input data that cannot be interpreted (bad JSONL line, positive logprob, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// A prompt template could not be rendered (unbound placeholder, missing image).
class RenderError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace forensic
