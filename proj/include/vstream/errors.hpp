#pragma once

#include <stdexcept>
#include <string>

namespace vstream {

// Error families map one-to-one onto CLI exit codes.
enum class ErrorKind { shape = 1, config = 2, data = 3, checkpoint = 4, numeric = 5, state = 6 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string &what) : Error(ErrorKind::shape, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string &what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string &what) : Error(ErrorKind::data, what) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string &what) : Error(ErrorKind::checkpoint, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string &what) : Error(ErrorKind::numeric, what) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string &what) : Error(ErrorKind::state, what) {}
};

const char *error_kind_name(ErrorKind kind);

} // namespace vstream
