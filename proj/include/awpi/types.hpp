#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace awpi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Vec vec(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) {
        v(i++) = x;
    }
    return v;
}

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative inner solver exhausted its iteration budget.
class NonConvergence : public Error {
public:
    using Error::Error;
};

/// Active normals at a boundary point could not be resolved, even by the
/// least-squares cone projection.
class DegenerateNormalCone : public Error {
public:
    using Error::Error;
};

/// A set definition is empty, has empty interior, is unbounded, or is
/// otherwise malformed.
class ConstructionFailure : public Error {
public:
    using Error::Error;
};

/// Newton iteration on the steady-state equation did not converge.
class NoConvergence : public Error {
public:
    using Error::Error;
};

class RankDeficient : public Error {
public:
    using Error::Error;
};

class InfeasibleReference : public Error {
public:
    using Error::Error;
};

class InfeasibleInput : public Error {
public:
    using Error::Error;
};

class NonPositiveFieldCurrent : public Error {
public:
    using Error::Error;
};

/// A file could not be read or written.
class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace awpi
