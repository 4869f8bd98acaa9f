#pragma once

#include <stdexcept>
#include <string>

namespace gssm {

/// Base of every error thrown by the library. `category()` is a short
/// machine-parsable tag that the CLI prints on failure.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

// A pole of the transfer function sits on (or numerically at) a grid point.
class SingularGridError : public Error {
public:
    explicit SingularGridError(const std::string& what) : Error("singular_grid", what) {}
};

class DesignError : public Error {
public:
    explicit DesignError(const std::string& what) : Error("ill_conditioned_design", what) {}
};

class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& what) : Error("generation", what) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

/// Raised when a loss or gradient stops being finite. `block()` names the
/// first parameter block found with a non-finite value or gradient.
class NonFiniteError : public Error {
public:
    NonFiniteError(std::string block, const std::string& what)
        : Error("non_finite", what), block_(std::move(block)) {}
    const std::string& block() const noexcept { return block_; }

private:
    std::string block_;
};

}  // namespace gssm
