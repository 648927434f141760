#pragma once

#include <stdexcept>
#include <string>

namespace safd {

// Exit-code classes used by the CLI: data errors map to 2, numerical
// failures to 3. Everything here derives from std::runtime_error.

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidLength : public DataError {
public:
    using DataError::DataError;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class MissingChannel : public DataError {
public:
    explicit MissingChannel(const std::string& channel)
        : DataError("missing channel: " + channel), channel_(channel) {}
    const std::string& channel() const noexcept { return channel_; }

private:
    std::string channel_;
};

class UpsamplingUnsupported : public DataError {
public:
    using DataError::DataError;
};

class InsufficientBeats : public DataError {
public:
    using DataError::DataError;
};

class ScheduleError : public DataError {
public:
    using DataError::DataError;
};

class CorruptCheckpoint : public DataError {
public:
    using DataError::DataError;
};

class UndefinedMetric : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class FitError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class EvaluationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class Unsupported : public DataError {
public:
    using DataError::DataError;
};

}  // namespace safd
