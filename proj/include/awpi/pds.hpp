#pragma once

#include "awpi/convex_set.hpp"
#include "awpi/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace awpi::pds {

/// F in z' = Pi_X(z, -F(z)).
struct VectorField {
    int dimension = 0;
    std::function<Vec(const Vec&)> evaluate;
    std::function<Mat(const Vec&)> jacobian;  // optional
};

enum class PdsTermination { ReachedHorizon, EquilibriumDetected, StepFailure };

struct PdsTrajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    PdsTermination termination = PdsTermination::ReachedHorizon;
    /// Largest distance from X of any state recorded after the trajectory
    /// entered X.
    double max_violation = 0.0;
    /// Index and time at which an exterior start reached P_X(z0); 0 otherwise.
    std::size_t entry_index = 0;
    double entry_time = 0.0;
    std::string message;
};

struct PdsOptions {
    /// Equilibrium when |Pi_X(z, -F(z))| < eq_rel * field_scale for
    /// eq_consecutive consecutive steps. field_scale = 1 + |F(P_X(z0))|.
    double eq_rel = 1e-8;
    int eq_consecutive = 5;
    bool detect_equilibrium = true;
};

struct ExistenceEstimate {
    double growth_B = 0.0;
    double one_sided_B = 0.0;
    int sample_count = 0;
};

/// P_X(z - h F(z)).
[[nodiscard]] Vec step_projected_euler(const sets::ConvexSet& set, const VectorField& field, const Vec& z,
                                       double h);

/// Projected explicit Euler with fixed step h. Exterior starts first travel
/// at unit speed straight to P_X(z0), the last step shortened to land on it.
[[nodiscard]] PdsTrajectory simulate_pds(const sets::ConvexSet& set, const VectorField& field, const Vec& z0,
                                         double horizon, double h, const PdsOptions& opts = {});

[[nodiscard]] bool is_equilibrium(const sets::ConvexSet& set, const VectorField& field, const Vec& z,
                                  double tol);

/// Sampled sup of |F(z)|/(1+|z|) and of <-F(x)+F(y), x-y>/|x-y|^2. The
/// first sample is always P_X(0); the remaining ones are uniform in X.
[[nodiscard]] ExistenceEstimate estimate_existence_constants(const sets::ConvexSet& set,
                                                             const VectorField& field, int samples,
                                                             std::uint64_t seed);

/// Header `t,z_1,...,z_q`, 17 significant digits.
void write_trajectory_csv(const PdsTrajectory& traj, const std::string& path);

}  // namespace awpi::pds
