#pragma once

#include <stdexcept>
#include <string>

namespace dynspike {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on the arguments was violated (bad sizes, ranges, dims).
class InvalidArgument : public Error
{
public:
    using Error::Error;
};

/// A point, trajectory or pixel left the admissible region.
class DomainError : public Error
{
public:
    using Error::Error;
};

/// Interpolation nodes too close for the kernel system to be solvable.
class SeparationViolation : public Error
{
public:
    using Error::Error;
};

/// Non-finite input or a numerical routine that failed to produce a result.
class NumericalFailure : public Error
{
public:
    using Error::Error;
};

} // namespace dynspike
