#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace x2ct {

// Precondition violated by a caller-supplied value or shape.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// On-disk artifact is malformed or inconsistent with its sidecar.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem location cannot be created or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedOperation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A loss became NaN/Inf during optimization.
class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// Config validation failure; carries every offending key.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> keys);
    const std::vector<std::string>& keys() const { return keys_; }

private:
    std::vector<std::string> keys_;
};

}  // namespace x2ct
