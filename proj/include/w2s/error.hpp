#pragma once

#include <stdexcept>
#include <string>

namespace w2s {

enum class ErrorKind {
    configuration,
    data,
    training,
    evaluation,
    shape,
    checkpoint,
    usage,
    numeric,
    io,
};

// Base exception for everything the library throws on purpose. The kind
// decides the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::configuration, m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& m) : Error(ErrorKind::training, m) {}
};
struct EvaluationError : Error {
    explicit EvaluationError(const std::string& m) : Error(ErrorKind::evaluation, m) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};
struct CheckpointError : Error {
    explicit CheckpointError(const std::string& m) : Error(ErrorKind::checkpoint, m) {}
};
struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

// 0 success, 2 configuration, 3 data, 4 training, 5 evaluation.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::configuration:
        case ErrorKind::shape:
        case ErrorKind::usage:
            return 2;
        case ErrorKind::data:
        case ErrorKind::checkpoint:
        case ErrorKind::io:
            return 3;
        case ErrorKind::training:
        case ErrorKind::numeric:
            return 4;
        case ErrorKind::evaluation:
            return 5;
    }
    return 1;
}

}  // namespace w2s
