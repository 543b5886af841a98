#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace basil {

/// Caller supplied something outside an operation's domain (shape, class id,
/// index, configuration value).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A serialized image or data file could not be decoded.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or parameter. The trainer state is
/// left as it was before the failing step.
class NumericFault : public std::runtime_error {
public:
    NumericFault(std::uint64_t step, const std::string& what)
        : std::runtime_error(what), step_(step) {}

    std::uint64_t step() const noexcept { return step_; }

private:
    std::uint64_t step_;
};

} // namespace basil
