#pragma once

#include <stdexcept>
#include <string>

namespace fedcpc {

// Base of every error raised by the library. The CLI maps subclasses onto
// process exit codes (see app/exit_codes.hpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
public:
    using Error::Error;
};

// A caller broke a documented precondition (non-scalar loss, missing grad, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class InsufficientAudio : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

// Raised when a round cannot be aggregated because some clients never reported.
class StragglerError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

enum class DecodeFailure { bad_magic, unsupported_version, truncated, trailing_bytes, checksum_mismatch, malformed };

class DecodeError : public ProtocolError {
public:
    DecodeError(DecodeFailure kind, const std::string& what) : ProtocolError(what), kind_(kind) {}
    DecodeFailure kind() const noexcept { return kind_; }

private:
    DecodeFailure kind_;
};

} // namespace fedcpc
