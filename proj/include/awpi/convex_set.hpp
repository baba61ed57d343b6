#pragma once

#include "awpi/types.hpp"

#include <random>
#include <utility>
#include <variant>
#include <vector>

namespace awpi::sets {

/// Rows <a_i, x> <= b_i. Normals are rescaled to unit length on construction.
struct HPolyhedron {
    Mat normals;
    Vec offsets;
};

struct Ball {
    Vec center;
    double radius = 1.0;
};

struct Box {
    Vec lower;
    Vec upper;
};

class ConvexSet;

struct Intersection {
    std::vector<ConvexSet> members;
};

enum class Location { Interior, Boundary, Exterior };

/// Result of the tangent-cone projection Pi_X(z, v).
///
/// For a boundary point the projected vector is v + beta * n*, where n* is the
/// inward unit direction of the correction; beta is therefore the length of
/// the removed outward component.
struct TangentDecomposition {
    Vec projected;
    std::vector<Vec> active_normals;  // outward unit normals active at z
    double beta = 0.0;
    Location location = Location::Interior;
};

struct SetOptions {
    /// Relative width of the boundary band: a point is on the boundary when
    /// its distance to the boundary is below active_rel * (1 + |z|).
    double active_rel = 1e-9;
    int qp_iterations = 500;
    int dykstra_iterations = 20000;
    double dykstra_tol = 1e-13;
};

/// A compact convex set with nonempty interior.
///
/// Immutable after construction; every query is a pure function of the
/// arguments and can be called from any thread.
class ConvexSet {
public:
    using Shape = std::variant<HPolyhedron, Ball, Box, Intersection>;

    static ConvexSet polyhedron(Mat normals, Vec offsets, SetOptions opts = {});
    static ConvexSet ball(Vec center, double radius, SetOptions opts = {});
    static ConvexSet box(Vec lower, Vec upper, SetOptions opts = {});
    static ConvexSet intersection(std::vector<ConvexSet> members, SetOptions opts = {});

    [[nodiscard]] int dimension() const { return dim_; }
    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] const SetOptions& options() const { return opts_; }

    /// P_X(v): the closest point of the set to v.
    [[nodiscard]] Vec project(const Vec& v) const;

    /// Pi_X(z, v), extended to exterior z by the unit vector towards P_X(z).
    [[nodiscard]] TangentDecomposition tangent_project(const Vec& z, const Vec& v) const;

    /// Distance from an interior point to the boundary; for exterior points
    /// the negated distance to the set.
    [[nodiscard]] double distance_to_boundary(const Vec& z) const;

    [[nodiscard]] double distance_to_set(const Vec& z) const;
    [[nodiscard]] bool contains(const Vec& z, double tol = 0.0) const;

    /// Width of the boundary band at z.
    [[nodiscard]] double active_tolerance(const Vec& z) const;

    /// Exact for balls, boxes and polyhedra (via vertices); an upper bound
    /// for intersections that include a ball.
    [[nodiscard]] double diameter() const { return diameter_; }
    [[nodiscard]] const Vec& bbox_lower() const { return bbox_lo_; }
    [[nodiscard]] const Vec& bbox_upper() const { return bbox_hi_; }

    /// A point strictly inside the set, found at construction.
    [[nodiscard]] const Vec& interior_point() const { return interior_; }

    /// Vertices of a polytope (polyhedron, box, polyhedral intersection).
    [[nodiscard]] const std::vector<Vec>& vertices() const { return vertices_; }

    /// Deterministic boundary points: vertices for polytopes, evenly spread
    /// surface points for balls.
    [[nodiscard]] std::vector<Vec> boundary_samples(int count = 64) const;

    /// Uniform sample by rejection from the bounding box.
    [[nodiscard]] Vec sample(std::mt19937_64& rng) const;

    [[nodiscard]] ConvexSet translated(const Vec& offset) const;

private:
    ConvexSet() = default;

    /// min over constraints of their slack: exact boundary distance inside,
    /// minus the largest violation outside.
    [[nodiscard]] double slack(const Vec& z) const;
    void finalize();

    Shape shape_;
    SetOptions opts_;
    int dim_ = 0;
    Vec interior_;
    double diameter_ = 0.0;
    Vec bbox_lo_;
    Vec bbox_hi_;
    std::vector<Vec> vertices_;
    bool polyhedral_ = false;
    Mat flat_rows_;  // all-polyhedral intersections collapse to one row block
    Vec flat_offsets_;
};

/// (P_X(z + delta v) - z) / delta. Test oracle for tangent_project.
[[nodiscard]] Vec finite_difference_pi(const ConvexSet& set, const Vec& z, const Vec& v,
                                       double delta);

[[nodiscard]] inline Vec project(const ConvexSet& set, const Vec& v) { return set.project(v); }

[[nodiscard]] inline TangentDecomposition tangent_project(const ConvexSet& set, const Vec& z,
                                                         const Vec& v) {
    return set.tangent_project(z, v);
}

[[nodiscard]] inline double distance_to_boundary(const ConvexSet& set, const Vec& z) {
    return set.distance_to_boundary(z);
}

}  // namespace awpi::sets
