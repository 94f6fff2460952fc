#pragma once

#include <stdexcept>
#include <string>

namespace formu {

/// Root of every error thrown by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Physics / numerics
class DomainError : public Error { using Error::Error; };
class SingularityError : public Error { using Error::Error; };
class SaturationError : public Error { using Error::Error; };
class IntegrationError : public Error { using Error::Error; };

// Inputs, configuration and contracts
class ValidationError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };

// Response parsing
class ParseError : public Error { using Error::Error; };
class EmptyProfileError : public ParseError { using ParseError::ParseError; };
class DuplicateTimeError : public ParseError { using ParseError::ParseError; };
class MockParseError : public ParseError { using ParseError::ParseError; };

// Record store
class ConflictError : public Error { using Error::Error; };
class EmptyStoreError : public Error { using Error::Error; };

// LLM transport
class TransportError : public Error { using Error::Error; };
class RequestError : public Error {
public:
    RequestError(int status, const std::string& what) : Error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

// Evaluation
class AlignmentError : public Error { using Error::Error; };
class DegenerateReferenceError : public Error { using Error::Error; };

} // namespace formu
