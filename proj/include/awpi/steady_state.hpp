#pragma once

#include "awpi/control_loop.hpp"
#include "awpi/convex_set.hpp"
#include "awpi/types.hpp"

#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace awpi::steady {

using VecMap = std::function<Vec(const Vec&)>;

/// Damped Newton on x -> f0(x, v). Uses plant.jacobian_x when present,
/// central differences otherwise. Throws NoConvergence.
[[nodiscard]] Vec solve_steady_state(const control::PlantModel& plant, const Vec& v, const Vec& x_guess,
                                     int max_iterations = 100);

/// df0/dx at (x, v).
[[nodiscard]] Mat state_jacobian(const control::PlantModel& plant, const Vec& x, const Vec& v);

/// Central-difference Jacobian of a vector map, step 1e-6 (1 + |x_i|).
[[nodiscard]] Mat numeric_jacobian(const VecMap& f, const Vec& x);

struct StabilityCertificate {
    Vec equilibrium;
    Eigen::VectorXcd eigenvalues;
    double spectral_abscissa = 0.0;
    bool stable = false;
    // Decay envelope |x(t) - xe| <= rho exp(-lambda t) |x(0) - xe|, fitted
    // from simulated perturbations when the linearization is stable.
    bool has_envelope = false;
    double estimated_rho = 0.0;
    double estimated_lambda = 0.0;
    double estimated_eps0 = 0.0;
    bool holdout_within_factor2 = false;
};

struct CertificateOptions {
    double margin = 1e-9;
    bool fit_envelope = true;
    std::uint64_t holdout_seed = 7;
};

/// Linearization at Xi(v). Uses plant.xi if available, Newton from
/// plant.state_guess otherwise.
[[nodiscard]] StabilityCertificate linearization_certificate(const control::PlantModel& plant, const Vec& v,
                                                             const CertificateOptions& opts = {});

/// True when every sample of the perturbed trajectory started at xe + dx0
/// lies under the envelope scaled by `factor`.
[[nodiscard]] bool check_decay_envelope(const control::PlantModel& plant, const Vec& v,
                                        const StabilityCertificate& cert, const Vec& dx0, double factor = 1.0);

/// Smallest eigenvalue of the symmetric part of the Jacobian of `composed` at u.
[[nodiscard]] double min_sym_jacobian_eig(const VecMap& composed, const Vec& u);

struct MonotonicityResult {
    double mu_estimate = 0.0;     // min over pairs of <dG, du> / |du|^2
    double min_sym_eig = 0.0;     // min over points of lambda_min((J + J^T)/2)
    std::vector<Vec> violations;  // points where either test gives <= 0
    int pair_count = 0;
    int point_count = 0;
};

/// Pairwise quotient test and Jacobian test over `samples` seeded points of
/// the region. Points where composed is not finite are skipped.
[[nodiscard]] MonotonicityResult monotonicity_scan(const VecMap& composed, const sets::ConvexSet& region, int samples,
                                                   std::uint64_t seed);

struct MonotonicityNode {
    Vec u;
    double min_eig_sym_jac = 0.0;  // NaN where composed cannot be evaluated
};

/// Jacobian test on an nx-by-ny grid over [lower, upper] (2-D only).
[[nodiscard]] std::vector<MonotonicityNode> monotonicity_raster(const VecMap& composed, const Vec& lower,
                                                                const Vec& upper, int nx, int ny);

void write_monotonicity_csv(const std::vector<MonotonicityNode>& nodes, const std::string& path);

/// N = P^T (P P^T)^{-1}. Throws RankDeficient.
[[nodiscard]] Mat linear_right_inverse(const Mat& P0_dc);

/// -C A^{-1} B.
[[nodiscard]] Mat lti_dc_gain(const Mat& A, const Mat& B, const Mat& C);

struct SteadyStateMaps {
    VecMap xi;
    VecMap gmap;
    VecMap composed;
    std::function<StabilityCertificate(const Vec&)> stability;
    double mu_estimate = 0.0;
};

[[nodiscard]] SteadyStateMaps make_steady_state_maps(const control::PlantModel& plant, const control::StaticMap& nmap);

/// Xi(v): the analytic map when the plant has one, Newton otherwise.
[[nodiscard]] Vec equilibrium_state(const control::PlantModel& plant, const Vec& v);

/// Damped Newton on composed(u) = r from `guess`, residual tolerance
/// 1e-9 (1 + |r|). Throws NoConvergence.
[[nodiscard]] Vec solve_preimage(const VecMap& composed, const Vec& r, const Vec& guess, int max_iterations = 100);

/// Solves G(N(u)) = r by damped Newton started at P_U(r). Throws
/// InfeasibleReference when Newton fails or the root is outside U.
[[nodiscard]] Vec solve_reference_input(const control::PlantModel& plant, const control::AwPiController& ctrl,
                                        const Vec& r);

struct TwoTimeScale {
    Vec r;
    Vec u_r;
    Vec x_r;
    Vec G_ur;  // G(N(u_r)); equals r up to the Newton tolerance
    sets::ConvexSet U_tilde;
    VecMap G_tilde;  // u~ -> G(N(u~ + u_r))
    VecMap reduced_rhs;
    std::function<Vec(const Vec& u_tilde, const Vec& x_fast)> boundary_rhs;
};

[[nodiscard]] TwoTimeScale build_two_time_scale(const control::PlantModel& plant, const control::AwPiController& ctrl,
                                                const Vec& r);

struct SpPoint {
    double k = 0.0;
    double slow_error = 0.0;
    control::Termination termination = control::Termination::Horizon;
};

/// For each k runs the full loop over t in [0, slow_horizon / k] and the
/// reduced model over s in [0, slow_horizon]; slow_error is the sup over the
/// full-run samples of |u_I(t) - (u_r + u~(k t))|.
[[nodiscard]] std::vector<SpPoint> sp_consistency_check(const control::PlantModel& plant,
                                                        const control::AwPiController& ctrl, const Vec& r,
                                                        const Vec& x0, const Vec& u0, double slow_horizon, double h,
                                                        const std::vector<double>& k_list,
                                                        int reduced_steps = 20000);

struct GainProbe {
    Vec r;
    Vec x0;
    Vec u0;
    double tolerance = 1e-6;  // on the final |e|
};

struct GainTrial {
    double k = 0.0;
    bool converged = false;
    double worst_error = 0.0;
};

struct GainSearchResult {
    double kappa_empirical = 0.0;
    std::vector<GainTrial> tested_gains;
    bool monotone = true;  // no converged gain above a failed one
    std::string probe_description;
};

[[nodiscard]] GainSearchResult empirical_gain_bound(const control::PlantModel& plant,
                                                    const std::function<control::AwPiController(double)>& ctrl_factory,
                                                    const std::vector<GainProbe>& probes,
                                                    const std::vector<double>& k_grid, double horizon, double h);

}  // namespace awpi::steady
