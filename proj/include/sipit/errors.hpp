#pragma once

#include <stdexcept>
#include <string>

namespace sipit {

// All failures surface as exceptions; the CLI maps them to exit codes
// (input/config/format -> 2, invariant violations -> 3). Recovery failures
// are result-encoded, not thrown, so partial output can still be written.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand dimensions disagree with the operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Values outside an operation's domain (nonpositive row sum, bad target
// distribution, step size outside (0,1), ...).
struct DomainError : Error {
    using Error::Error;
};

// Token id outside [0, vocab_size).
struct VocabError : DomainError {
    using DomainError::DomainError;
};

// Sequence longer than the context window, or empty where one is required.
struct ContextError : DomainError {
    using DomainError::DomainError;
};

// Position index outside [1, context].
struct PositionError : DomainError {
    using DomainError::DomainError;
};

// Invalid model/experiment configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed user input (prompt files, flags); carries enough context to act on.
struct InputError : Error {
    using Error::Error;
};

// Malformed binary artifact (bad magic, truncated file, version mismatch).
struct FormatError : Error {
    using Error::Error;
};

// Non-finite value produced while checked mode is active.
struct NumericError : Error {
    using Error::Error;
};

// A candidate policy was asked for a proposal after visiting every token.
struct ExhaustionError : Error {
    using Error::Error;
};

// More than one token verified after epsilon backoff; the caller must not
// silently pick one, so this fails loudly instead.
struct AmbiguityError : Error {
    using Error::Error;
};

}  // namespace sipit
