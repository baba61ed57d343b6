#pragma once

#include "awpi/convex_set.hpp"
#include "awpi/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace awpi::control {

/// The admissible-input region (script V) of a plant.
struct InputDomain {
    std::function<bool(const Vec&)> contains;
    /// Signed, roughly distance-like margin to the region boundary; positive
    /// inside. Empty means the region has no boundary.
    std::function<double(const Vec&)> margin;
    /// Sampling box.
    Vec lower;
    Vec upper;
};

/// x' = f0(x, v), y = g(x).
struct PlantModel {
    std::string name;
    int n = 0;
    int m = 0;
    int p = 0;
    std::function<Vec(const Vec& x, const Vec& v)> f0;
    std::function<Vec(const Vec& x)> g;
    InputDomain input_domain;

    // Optional pieces.
    std::function<Vec(const Vec& v)> xi;                         // analytic steady state
    std::function<Mat(const Vec& x, const Vec& v)> jacobian_x;   // df0/dx
    std::function<void(Vec& x)> canonicalize;                    // e.g. wrap angles
    std::function<Vec(const Vec& a, const Vec& b)> difference;   // a - b respecting wrapping
    std::function<Vec(const Vec& v)> state_guess;                // Newton starting point

    [[nodiscard]] Vec state_difference(const Vec& a, const Vec& b) const {
        return difference ? difference(a, b) : Vec(a - b);
    }
};

/// The static map script N from integrator space to plant inputs, with its
/// domain script U.
struct StaticMap {
    std::string name;
    int in_dim = 0;
    int out_dim = 0;
    std::function<Vec(const Vec&)> eval;
    std::function<Mat(const Vec&)> jacobian;               // optional
    std::function<bool(const Vec&)> domain;                // optional: whole space when empty
    std::function<double(const Vec&)> boundary_distance;   // optional: d(u, boundary of script U)
};

[[nodiscard]] StaticMap identity_map(int dim);
[[nodiscard]] StaticMap matrix_map(const Mat& gain, std::string name = "static-matrix");

enum class IntegratorMode { Saturating, Classical, SoftProjection };

struct AwPiController {
    sets::ConvexSet U;
    StaticMap nmap;
    double k = 1.0;
    double tau_p = 0.0;
    IntegratorMode mode = IntegratorMode::Saturating;
    double soft_K = 0.0;  // only for SoftProjection
};

/// Throws std::invalid_argument when k, tau_p, soft_K or dimensions are invalid.
void check_controller(const PlantModel& plant, const AwPiController& ctrl);

/// Diagnostics for U not contained in script U (sampled boundary points of U
/// must pass the domain test and map into the plant input region).
[[nodiscard]] std::vector<std::string> check_u_inside_domain(const PlantModel& plant, const AwPiController& ctrl);

enum class Termination { Horizon, Converged, StateBlowup, BoundaryApproach, LeftRegionOfInterest };

[[nodiscard]] std::string to_string(Termination t);
[[nodiscard]] std::string to_string(IntegratorMode m);
[[nodiscard]] inline bool is_error(Termination t) {
    return t != Termination::Horizon && t != Termination::Converged;
}

/// Thrown by closed_loop_rhs when u leaves script U.
class LeftRegionOfInterest : public Error {
public:
    using Error::Error;
};

struct ClosedLoopDerivative {
    Vec dx;
    Vec du_I;
};

/// Right-hand side of the closed loop at (x, u_I) for the controller mode.
[[nodiscard]] ClosedLoopDerivative closed_loop_rhs(const PlantModel& plant, const AwPiController& ctrl, const Vec& r,
                                                   const Vec& x, const Vec& u_I);

/// u = u_I + tau_p k (r - g(x)); in SoftProjection mode the plant sees P_U(u_I).
[[nodiscard]] Vec controller_output(const PlantModel& plant, const AwPiController& ctrl, const Vec& r, const Vec& x,
                                    const Vec& u_I);

[[nodiscard]] bool in_region_of_interest(const PlantModel& plant, const AwPiController& ctrl, const Vec& u);

/// d(u, boundary of script U); +inf when script U is the whole space.
[[nodiscard]] double region_boundary_distance(const PlantModel& plant, const AwPiController& ctrl, const Vec& u);

struct LoopSample {
    double t = 0.0;
    Vec x;
    Vec u_I;
    Vec u;  // p-dimensional controller output
    Vec v;  // m-dimensional plant input N(u)
    Vec y;
    Vec e;
};

struct SegmentSummary {
    Vec r;
    double t_start = 0.0;
    double t_end = 0.0;
    Termination termination = Termination::Horizon;
    double final_error = 0.0;
    Vec final_x;
    Vec final_u_I;
    Vec final_y;
};

struct ClosedLoopRun {
    std::vector<LoopSample> samples;
    std::vector<SegmentSummary> segments;
    Termination termination = Termination::Horizon;
    int failed_segment = -1;
    double final_error = 0.0;
    /// Minimum over every step (recorded or not) of d(u(t), boundary of script U).
    double min_boundary_distance = 0.0;
    /// Largest distance of u_I from U over every step.
    double max_integrator_violation = 0.0;
    Vec final_x;
    Vec final_u_I;
    double final_time = 0.0;
    long steps = 0;
};

struct LoopOptions {
    /// StateBlowup when |x| > blowup_factor * (1 + |x0|).
    double blowup_factor = 1e6;
    /// BoundaryApproach when d(u, boundary of script U) < boundary_margin_rel * diam(U).
    double boundary_margin_rel = 1e-6;
    /// Keep every record_stride-th step (the final state is always kept).
    int record_stride = 1;
    /// Stop with Converged once |f0| and |u_I'| fall below this (0 disables).
    double converge_tol = 0.0;
};

/// Operator-split fixed-step integration: RK4 on x with u_I frozen over the
/// step, projected Euler on u_I (explicit Euler in Classical mode,
/// an error step followed by the proximal map of the penalty in
/// SoftProjection mode).
[[nodiscard]] ClosedLoopRun simulate_closed_loop(const PlantModel& plant, const AwPiController& ctrl, const Vec& r,
                                                 const Vec& x0, const Vec& u0, double horizon, double h,
                                                 const LoopOptions& opts = {});

struct ReferenceStep {
    Vec r;
    double duration = 0.0;
};

/// Piecewise-constant references run back to back, carrying (x, u_I) across
/// switches. Stops at the first segment that ends in an error termination.
[[nodiscard]] ClosedLoopRun run_reference_schedule(const PlantModel& plant, const AwPiController& ctrl,
                                                   const std::vector<ReferenceStep>& schedule, const Vec& x0,
                                                   const Vec& u0, double h, const LoopOptions& opts = {});

struct SoftProjectionPoint {
    double K = 0.0;
    double sup_error = 0.0;
};

/// Sup over time of |(x, u_I)_soft - (x, u_I)_saturating| for each K. Needs
/// a Saturating controller with tau_p = 0.
[[nodiscard]] std::vector<SoftProjectionPoint> soft_projection_convergence_check(
    const PlantModel& plant, const AwPiController& ctrl_base, const Vec& r, const Vec& x0, const Vec& u0,
    double horizon, double h, const std::vector<double>& K_list);

/// True when a list of errors does not increase by more than `slack`
/// (relative) from one entry to the next.
[[nodiscard]] bool non_increasing_with_slack(const std::vector<double>& values, double slack = 0.1);

/// Equilibrium of the closed loop seen as a PDS on R^n x U:
/// |f0(x, N(u))| <= tol and |Pi_U(u_I, k e)| <= tol.
[[nodiscard]] bool closed_loop_is_equilibrium(const PlantModel& plant, const AwPiController& ctrl, const Vec& r,
                                              const Vec& x, const Vec& u_I, double tol);

/// CSV with columns t, x_1..x_n, uI_1..uI_p, u_1..u_m, y_1..y_p, e_1..e_p.
/// The u_j columns hold the plant input N(u).
void write_run_csv(const ClosedLoopRun& run, const std::string& path);

/// Sidecar key = value text: mode, k, tau_p, termination and segment table.
void write_run_metadata(const ClosedLoopRun& run, const AwPiController& ctrl, const std::string& path);

}  // namespace awpi::control
