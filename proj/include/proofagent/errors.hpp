// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace proofagent {

/// Base for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MalformedSubgoal : public Error {
public:
    using Error::Error;
};

/// Raised by a prover session when its own contract is violated
/// (undo past the bottom of the stack, execute with nothing left to prove).
class SessionError : public Error {
public:
    using Error::Error;
};

class NoRemainingGoals : public SessionError {
public:
    NoRemainingGoals() : SessionError("no remaining goals") {}
};

/// The session did not accept an undo the validator relies on; the run for
/// the current theorem must be aborted.
class SessionDesync : public Error {
public:
    using Error::Error;
};

class ProviderError : public Error {
public:
    ProviderError(std::string what, bool transient)
        : Error(std::move(what)), transient_(transient) {}
    bool transient() const noexcept { return transient_; }

private:
    bool transient_;
};

/// A replay script had no entry for the request it received.
class ReplayMismatch : public ProviderError {
public:
    explicit ReplayMismatch(std::string what) : ProviderError(std::move(what), false) {}
};

/// The per-theorem invocation budget does not allow another call.
class BudgetExhausted : public Error {
public:
    BudgetExhausted() : Error("llm invocation budget exhausted") {}
};

class UnparseableResponse : public Error {
public:
    using Error::Error;
};

class NoProofFound : public Error {
public:
    NoProofFound() : Error("no parseable proof") {}
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class ZeroVector : public Error {
public:
    ZeroVector() : Error("zero vector has no direction") {}
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

/// Corpus, fixture or suite file could not be read.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace proofagent
