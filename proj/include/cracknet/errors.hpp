#pragma once

#include <stdexcept>
#include <string>

namespace cracknet {

// Base of every error the engine raises. kind() is a short stable token used
// by the CLI for its one-line machine-parseable error output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class DegenerateOutputError : public Error {
public:
    explicit DegenerateOutputError(const std::string& what) : Error("degenerate-output", what) {}
};

// Invalid user-facing configuration (bad flag values, impossible settings).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

class StaleTapeError : public Error {
public:
    explicit StaleTapeError(const std::string& what) : Error("stale-tape", what) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& what) : Error("checkpoint", what) {}
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& what) : Error("divergence", what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error("data", what) {}
};

}  // namespace cracknet
