#pragma once

#include <stdexcept>
#include <string>

namespace regscope {

/// Bad input: malformed files, invariant violations, inconsistent flags.
/// The CLI maps this to exit code 1.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A computation whose preconditions fail on otherwise valid input
/// (empty scope, degenerate vectors, infeasible sampling). Exit code 2.
class ComputeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace regscope
