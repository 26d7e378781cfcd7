#pragma once

#include <stdexcept>
#include <string>

namespace cpl {

/// Invalid configuration: a violated invariant of a config struct or a
/// mismatch between a model and the inputs handed to it.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Task label outside {1..K}.
class TaskLabelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Frame-directory ingestion failure; the message names the sequence.
class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite value in a loss term; the message names the term.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace cpl
