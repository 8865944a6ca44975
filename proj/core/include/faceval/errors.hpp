#pragma once

#include <stdexcept>
#include <string>

namespace faceval {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown aspect, missing file, malformed rule table, strict-mode miss.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a schema or domain invariant. Carries file/line when known.
class SchemaError : public Error {
public:
    SchemaError(const std::string& what, std::string location = {})
        : Error(location.empty() ? what : location + ": " + what), location_(std::move(location)) {}

    const std::string& location() const noexcept { return location_; }

private:
    std::string location_;
};

/// A backend call failed. Transport failures are retriable and report how many attempts were made.
class BackendError : public Error {
public:
    BackendError(const std::string& what, int attempts, bool retriable)
        : Error(what), attempts_(attempts), retriable_(retriable) {}

    int attempts() const noexcept { return attempts_; }
    bool retriable() const noexcept { return retriable_; }

private:
    int attempts_;
    bool retriable_;
};

/// The decomposer could not obtain a parseable particle list.
class DecompositionError : public Error {
public:
    DecompositionError(const std::string& what, std::string raw, int turn_index = -1)
        : Error(what), raw_(std::move(raw)), turn_index_(turn_index) {}

    const std::string& raw_output() const noexcept { return raw_; }
    int turn_index() const noexcept { return turn_index_; }

private:
    std::string raw_;
    int turn_index_;
};

/// No parseable score could be drawn for a particle/instruction pair, or a unit has no particles.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// An instruction rewrite produced no parseable instruction after retries.
class OptimizationError : public Error {
public:
    using Error::Error;
};

/// A statistic is undefined for its input (constant vector, too few points, no pairable values).
class UndefinedStatistic : public Error {
public:
    using Error::Error;
};

/// Precondition violated by the caller.
class PreconditionError : public Error {
public:
    using Error::Error;
};

}  // namespace faceval
