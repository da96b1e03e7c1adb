#pragma once

#include <stdexcept>
#include <string>

namespace mfg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class PreconditionViolated : public Error {
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

class SolverError : public Error {
public:
    using Error::Error;
};

class NonConvergence : public SolverError {
public:
    using SolverError::SolverError;
};

class IndefiniteJacobian : public SolverError {
public:
    using SolverError::SolverError;
};

class SingularSystem : public SolverError {
public:
    using SolverError::SolverError;
};

class FixedPointDivergence : public SolverError {
public:
    using SolverError::SolverError;
};

class MissingLowerOrder : public SolverError {
public:
    using SolverError::SolverError;
};

class OverflowRisk : public SolverError {
public:
    using SolverError::SolverError;
};

class ZeroDirection : public PreconditionViolated {
public:
    using PreconditionViolated::PreconditionViolated;
};

class InsufficientData : public SolverError {
public:
    using SolverError::SolverError;
};

class InsufficientExcitation : public SolverError {
public:
    using SolverError::SolverError;
};

class IllConditioned : public SolverError {
public:
    using SolverError::SolverError;
};

class DegenerateEverywhere : public SolverError {
public:
    using SolverError::SolverError;
};

}  // namespace mfg
