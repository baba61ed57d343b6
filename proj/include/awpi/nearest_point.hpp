#pragma once

#include "awpi/types.hpp"

#include <vector>

namespace awpi {

struct NearestPointResult {
    Vec point;
    /// One multiplier per row of the constraint matrix; zero for inactive rows.
    Vec multipliers;
    std::vector<int> active;
    int iterations = 0;
};

/// Thrown when the constraint rows admit no feasible point.
class InfeasibleConstraints : public Error {
public:
    using Error::Error;
};

/// Euclidean projection of `target` onto {x : rows * x <= offsets}.
///
/// Dual active-set method (Goldfarb-Idnani with identity Hessian). Starts
/// from the unconstrained minimizer and adds the most violated row at each
/// major iteration, so no feasible starting point is needed and an empty
/// polyhedron is detected. Intended for small dense problems.
///
/// Throws InfeasibleConstraints or NonConvergence.
NearestPointResult nearest_point_polyhedron(const Mat& rows, const Vec& offsets,
                                            const Vec& target, int max_iterations = 500);

}  // namespace awpi
