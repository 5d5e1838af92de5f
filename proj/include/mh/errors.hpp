#pragma once

#include <stdexcept>
#include <string>

namespace mh {

/// Base of every error thrown by the harness.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's documented precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Numeric operation outside its domain (zero vector, empty matrix, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Undecodable or malformed bytes (images, wire payloads, files).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Dataset or predictions that do not line up with each other.
class DataIntegrityError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

/// A backend could not be reached after all retries, or answered with an error.
class BackendError : public Error {
public:
    BackendError(std::string message, bool retryable)
        : Error(std::move(message)), retryable_(retryable) {}

    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

class BackendUnavailable : public BackendError {
public:
    explicit BackendUnavailable(std::string message) : BackendError(std::move(message), false) {}
};

}  // namespace mh
