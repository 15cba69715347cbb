#pragma once

#include <stdexcept>
#include <string>

namespace wavegrid {

/// Raised when an operation is called on an object in the wrong state
/// (e.g. corrupting a block that is not clean, reading an unfilled grid cell).
class invalid_state_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when a linear solve or quadrature cannot reach the requested
/// accuracy (ill-conditioned covariance, rank-deficient design, ...).
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by correlation statistics on degenerate (zero-variance) inputs.
class undefined_correlation_error : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Raised when an internal consistency check fails. Never expected in a
/// correct run; mapped to exit code 3 by the CLI.
class invariant_violation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised on malformed or inconsistent experiment configuration; mapped to
/// exit code 2 by the CLI.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace wavegrid
