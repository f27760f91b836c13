#pragma once

#include <stdexcept>
#include <string>

namespace trustchain {

// Process exit codes shared by the CLI and the error hierarchy below.
// 0 ok, 1 verification/security failure, 2 usage/validation,
// 3 I/O, 4 missing prerequisite.
enum class ExitCode : int {
    Ok = 0,
    Verification = 1,
    Usage = 2,
    Io = 3,
    Prerequisite = 4,
};

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual ExitCode exit_code() const { return ExitCode::Verification; }
};

// Rejected inputs: violated preconditions, malformed values, bad flags.
struct ValidationError : Error {
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::Usage; }
};

// Failed signature, policy or integrity checks.
struct VerificationError : Error {
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::Verification; }
};

// Filesystem and socket failures.
struct IoError : Error {
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::Io; }
};

// A required prior artifact (key file, signed image, TPM state) is absent.
struct PrerequisiteError : Error {
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::Prerequisite; }
};

// Malformed serialized structure (bad magic, truncated payload).
struct ParseError : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace trustchain
