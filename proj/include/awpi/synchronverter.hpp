#pragma once

#include "awpi/control_loop.hpp"
#include "awpi/convex_set.hpp"
#include "awpi/types.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace awpi::sv {

/// Grid-connected synchronverter. State x = (i_d, i_q, omega, delta), input
/// v = (T_m, i_f), output y = (P, Q). SI units throughout.
struct Params {
    double J = 0.2;
    double Dp = 3.0;
    double R = 1.875;
    double L = 56.75e-3;
    double m = 3.5;
    double V = 230.0 * std::numbers::sqrt3;
    double omega_n = 100.0 * std::numbers::pi;
    double omega_g = 100.0 * std::numbers::pi;

    void validate() const;
};

/// Wraps an angle to (-pi, pi].
[[nodiscard]] double wrap_angle(double a);

/// Throws NonPositiveFieldCurrent when i_f <= 0.
[[nodiscard]] Vec sv_rhs(const Params& p, const Vec& x, const Vec& v);
[[nodiscard]] Mat sv_jacobian(const Params& p, const Vec& x, const Vec& v);
[[nodiscard]] Vec sv_output(const Params& p, const Vec& x);
[[nodiscard]] double sv_lambda(const Params& p, const Vec& v);
/// Gradient of Lambda with respect to (T_m, i_f).
[[nodiscard]] Vec sv_lambda_gradient(const Params& p, const Vec& v);
/// i_f > 0 and |Lambda(v)| < 1.
[[nodiscard]] bool sv_in_V(const Params& p, const Vec& v);
/// Closed-form equilibrium. Throws InfeasibleInput when v is not in V.
[[nodiscard]] Vec sv_xi(const Params& p, const Vec& v);
/// Right inverse of the steady-state map G.
[[nodiscard]] Vec sv_right_inverse(const Params& p, const Vec& u);

/// Points C, M and vector Z of the right-inverse formula, plus the line
/// through C and M: n . u = offset with n the unit normal pointing into the
/// feasible side (the side containing the origin).
struct CmLine {
    Vec C;
    Vec Z;
    Vec M;
    Vec normal;
    double offset = 0.0;
};

[[nodiscard]] CmLine cm_line(const Params& p);
/// Signed distance to the C-M line, positive on the feasible side.
[[nodiscard]] double cm_signed_distance(const Params& p, const Vec& u);

/// Convex polygon inscribed in the disk of the given radius, bounded below by
/// the C-M line shifted inward by `margin`. Throws ConstructionFailure.
[[nodiscard]] sets::ConvexSet sv_build_U(const Params& p, double margin = 500.0, int vertices = 12,
                                         double radius = 15000.0);
/// Vertices of sv_build_U in counter-clockwise order.
[[nodiscard]] std::vector<Vec> sv_U_vertices(const Params& p, double margin = 500.0, int vertices = 12,
                                             double radius = 15000.0);

[[nodiscard]] Mat sv_static_gain_K();
[[nodiscard]] std::vector<control::ReferenceStep> sv_step_schedule();

[[nodiscard]] control::PlantModel make_plant(const Params& p);
/// N = G^{-1}_right with domain the open half-plane above the C-M line.
[[nodiscard]] control::StaticMap right_inverse_map(const Params& p);
/// N = K with domain {u : K u in V}.
[[nodiscard]] control::StaticMap static_gain_map(const Params& p, const Mat& K = sv_static_gain_K());

/// u with G(K u) = r, by Newton from K^{-1} G^{-1}_right(r).
[[nodiscard]] Vec static_gain_preimage(const Params& p, const Vec& r, const Mat& K = sv_static_gain_K());

struct RegionNode {
    Vec v;
    double lambda = 0.0;
    bool lambda_abs_lt_1 = false;
    bool in_V = false;                 // equilibrium exists and its linearization is stable
    double spectral_abscissa = 0.0;    // NaN where no equilibrium exists
};

/// nx-by-ny raster over [lower, upper] in the (T_m, i_f) plane, endpoints included.
[[nodiscard]] std::vector<RegionNode> region_raster(const Params& p, const Vec& lower, const Vec& upper, int nx,
                                                    int ny);
void write_region_csv(const std::vector<RegionNode>& nodes, const std::string& path);

struct RegionAgreement {
    int total_nodes = 0;
    int excluded_band = 0;
    int feasible_nodes = 0;   // |Lambda| < 1 - band
    int feasible_agree = 0;   // ... and reported stable
    int checked_nodes = 0;    // every node outside the band
    int checked_agree = 0;    // stable <=> |Lambda| < 1
};

[[nodiscard]] RegionAgreement region_agreement(const std::vector<RegionNode>& nodes, double band = 0.05);

}  // namespace awpi::sv
