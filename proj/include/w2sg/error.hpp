#pragma once

#include <stdexcept>
#include <string>

namespace w2sg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InvalidWeightsError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite values; `index` names the offending entry when known (-1 otherwise).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what, long index = -1)
        : Error(index >= 0 ? what + " (index " + std::to_string(index) + ")" : what), index_(index) {}
    long index() const noexcept { return index_; }

private:
    long index_;
};

class MissingRoleError : public Error {
public:
    using Error::Error;
};

class StepSizeError : public Error {
public:
    using Error::Error;
};

class UnsupportedModeError : public Error {
public:
    using Error::Error;
};

class TimeLimitError : public Error {
public:
    using Error::Error;
};

}  // namespace w2sg
