#pragma once

#include <stdexcept>
#include <string>

namespace radwave {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument or configuration field was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// The radial quadrature does not resolve the requested mode count.
class QuadratureError : public Error {
public:
    using Error::Error;
};

/// Importance weights collapsed onto too few samples.
class DegenerateEnsemble : public Error {
public:
    using Error::Error;
};

/// Successive Picard iterates moved apart instead of contracting.
class NonContraction : public Error {
public:
    using Error::Error;
};

/// A coefficient left the admissible amplitude range during time stepping.
class BlowUp : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond)
        throw InvalidArgument(what);
}

} // namespace radwave
