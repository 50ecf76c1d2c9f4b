#pragma once

#include <stdexcept>
#include <string>

namespace pieeg {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (config 1, source 2, format 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

// Malformed frames, bad recording headers, unparseable script files.
class FormatError : public Error {
public:
    using Error::Error;
};

class SourceError : public Error {
public:
    using Error::Error;
};

// Non-monotone timestamps on a path that requires ordering.
class StreamIntegrityError : public Error {
public:
    using Error::Error;
};

class EmptyBandError : public Error {
public:
    using Error::Error;
};

class RoutingError : public Error {
public:
    using Error::Error;
};

class SequencingError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    CalibrationError(const std::string& what, double noise_p99, double blink_median)
        : Error(what), noise_p99_(noise_p99), blink_median_(blink_median) {}

    double noise_p99() const { return noise_p99_; }
    double blink_median() const { return blink_median_; }

private:
    double noise_p99_;
    double blink_median_;
};

} // namespace pieeg
