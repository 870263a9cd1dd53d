#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hnll {

// Bad user input or configuration. The CLI maps this to exit code 1.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Grid/vector shapes that do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Failure while computing (non-finite values, IO, divergence). Exit code 2.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public std::domain_error {
public:
    explicit NotPositiveDefinite(std::size_t pivot)
        : std::domain_error("matrix is not positive definite: pivot <= 0 at index " + std::to_string(pivot)),
          pivot_(pivot) {}

    // 1-based index of the failing pivot.
    std::size_t pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_;
};

class NonFiniteError : public RuntimeError {
public:
    NonFiniteError(const std::string& what, std::size_t index) : RuntimeError(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class WavError : public RuntimeError {
public:
    WavError(const std::string& chunk, const std::string& what)
        : RuntimeError("wav: chunk '" + chunk + "': " + what), chunk_(chunk) {}
    const std::string& chunk() const noexcept { return chunk_; }

private:
    std::string chunk_;
};

class InvalidCorpusItem : public ConfigError {
public:
    using ConfigError::ConfigError;
};

}  // namespace hnll
