#include "awpi/pds.hpp"

#include "awpi/csv.hpp"
#include "awpi/ode.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace awpi::pds {

Vec step_projected_euler(const sets::ConvexSet& set, const VectorField& field, const Vec& z, double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("step_projected_euler: h must be positive");
    }
    return set.project(z - h * field.evaluate(z));
}

PdsTrajectory simulate_pds(const sets::ConvexSet& set, const VectorField& field, const Vec& z0, double horizon,
                           double h, const PdsOptions& opts) {
    if (!(horizon > 0.0) || !(h > 0.0)) {
        throw std::invalid_argument("simulate_pds: horizon and h must be positive");
    }
    if (z0.size() != set.dimension() || field.dimension != set.dimension()) {
        throw std::invalid_argument("simulate_pds: dimension mismatch");
    }

    PdsTrajectory traj;
    double t = 0.0;
    Vec z = z0;
    traj.times.push_back(t);
    traj.states.push_back(z);

    // Exterior start: unit-speed straight segment to P_X(z0).
    const Vec landing = set.project(z0);
    const double gap = (landing - z0).norm();
    if (gap > set.active_tolerance(z0)) {
        const Vec dir = (landing - z0) / gap;
        const long n = step_count(gap, h);
        for (long i = 1; i <= n; ++i) {
            const double travelled = i == n ? gap : static_cast<double>(i) * h;
            if (travelled > horizon) {
                traj.times.push_back(horizon);
                traj.states.push_back(z0 + horizon * dir);
                traj.termination = PdsTermination::ReachedHorizon;
                traj.message = "horizon reached before entering the set";
                return traj;
            }
            t = travelled;
            z = i == n ? landing : Vec(z0 + travelled * dir);
            traj.times.push_back(t);
            traj.states.push_back(z);
        }
        traj.entry_index = traj.states.size() - 1;
        traj.entry_time = t;
    }

    const Vec f_start = field.evaluate(z);
    if (!f_start.allFinite()) {
        traj.termination = PdsTermination::StepFailure;
        traj.message = "non-finite field value at the initial state";
        return traj;
    }
    if (h * f_start.norm() > set.diameter()) {
        throw std::invalid_argument("simulate_pds: h * |F(z0)| exceeds the set diameter");
    }
    const double tol_eq = opts.eq_rel * (1.0 + f_start.norm());

    const double span = horizon - t;
    if (span <= 1e-12 * horizon) {
        return traj;
    }
    const double t_begin = t;
    const long n = step_count(span, h);
    int quiet = 0;
    for (long i = 1; i <= n; ++i) {
        const Vec f = field.evaluate(z);
        if (!f.allFinite()) {
            traj.termination = PdsTermination::StepFailure;
            traj.message = "non-finite field value at t=" + io::format_number(t);
            return traj;
        }
        if (opts.detect_equilibrium) {
            const double speed = set.tangent_project(z, -f).projected.norm();
            quiet = speed < tol_eq ? quiet + 1 : 0;
            if (quiet >= opts.eq_consecutive) {
                traj.termination = PdsTermination::EquilibriumDetected;
                return traj;
            }
        }
        const double t_next = i == n ? horizon : t_begin + static_cast<double>(i) * h;
        const double hs = t_next - t;
        if (hs * f.norm() > set.diameter()) {
            traj.termination = PdsTermination::StepFailure;
            traj.message = "step h*|F| exceeds the set diameter at t=" + io::format_number(t);
            return traj;
        }
        z = set.project(z - hs * f);
        t = t_next;
        traj.times.push_back(t);
        traj.states.push_back(z);
        traj.max_violation = std::max(traj.max_violation, set.distance_to_set(z));
    }
    traj.termination = PdsTermination::ReachedHorizon;
    return traj;
}

bool is_equilibrium(const sets::ConvexSet& set, const VectorField& field, const Vec& z, double tol) {
    return set.tangent_project(z, -field.evaluate(z)).projected.norm() <= tol;
}

ExistenceEstimate estimate_existence_constants(const sets::ConvexSet& set, const VectorField& field, int samples,
                                               std::uint64_t seed) {
    if (samples < 2) {
        throw std::invalid_argument("estimate_existence_constants: need at least two samples");
    }
    std::mt19937_64 rng(seed);
    std::vector<Vec> pts;
    std::vector<Vec> values;
    pts.reserve(static_cast<std::size_t>(samples));
    pts.push_back(set.project(Vec::Zero(set.dimension())));
    while (static_cast<int>(pts.size()) < samples) {
        pts.push_back(set.sample(rng));
    }
    ExistenceEstimate est;
    est.sample_count = samples;
    for (const auto& p : pts) {
        values.push_back(field.evaluate(p));
        est.growth_B = std::max(est.growth_B, values.back().norm() / (1.0 + p.norm()));
    }
    est.one_sided_B = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const Vec d = pts[i] - pts[j];
            const double dn2 = d.squaredNorm();
            if (dn2 <= 1e-16) {
                continue;
            }
            const double q = (values[j] - values[i]).dot(d) / dn2;
            est.one_sided_B = std::max(est.one_sided_B, q);
        }
    }
    if (!std::isfinite(est.one_sided_B)) {
        est.one_sided_B = 0.0;
    }
    return est;
}

void write_trajectory_csv(const PdsTrajectory& traj, const std::string& path) {
    const int q = traj.states.empty() ? 0 : static_cast<int>(traj.states.front().size());
    std::vector<std::string> header{"t"};
    for (const auto& c : io::indexed_columns("z", q)) {
        header.push_back(c);
    }
    io::CsvBuilder csv(header);
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        csv.value(traj.times[i]).values(traj.states[i]);
        csv.end_row();
    }
    csv.save(path);
}

}  // namespace awpi::pds
