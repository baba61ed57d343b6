#pragma once

#include "awpi/types.hpp"

#include <cmath>

namespace awpi {

/// One classical fourth-order Runge-Kutta step of x' = f(x).
template <class Rhs>
Vec rk4_step(const Rhs& f, const Vec& x, double h) {
    const Vec k1 = f(x);
    const Vec k2 = f(x + 0.5 * h * k1);
    const Vec k3 = f(x + 0.5 * h * k2);
    const Vec k4 = f(x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Number of steps of size at most h covering `span`; the last one may be short.
inline long step_count(double span, double h) {
    const double ratio = span / h;
    const long n = static_cast<long>(std::ceil(ratio - 1e-9));
    return n < 1 ? 1 : n;
}

}  // namespace awpi
