#include "awpi/control_loop.hpp"

#include "awpi/csv.hpp"
#include "awpi/ode.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace awpi::control {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_vec(const Vec& v) {
    std::string s = "(";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) {
            s += ", ";
        }
        s += io::format_number(v(i));
    }
    return s + ")";
}

}  // namespace

StaticMap identity_map(int dim) {
    StaticMap map;
    map.name = "identity";
    map.in_dim = dim;
    map.out_dim = dim;
    map.eval = [](const Vec& u) { return u; };
    map.jacobian = [dim](const Vec&) { return Mat(Mat::Identity(dim, dim)); };
    return map;
}

StaticMap matrix_map(const Mat& gain, std::string name) {
    StaticMap map;
    map.name = std::move(name);
    map.in_dim = static_cast<int>(gain.cols());
    map.out_dim = static_cast<int>(gain.rows());
    map.eval = [gain](const Vec& u) { return Vec(gain * u); };
    map.jacobian = [gain](const Vec&) { return gain; };
    return map;
}

void check_controller(const PlantModel& plant, const AwPiController& ctrl) {
    if (!(ctrl.k > 0.0)) {
        throw std::invalid_argument("controller gain k must be positive");
    }
    if (!(ctrl.tau_p >= 0.0)) {
        throw std::invalid_argument("controller tau_p must be nonnegative");
    }
    if (ctrl.mode == IntegratorMode::SoftProjection && !(ctrl.soft_K > 0.0)) {
        throw std::invalid_argument("soft projection requires K > 0");
    }
    if (ctrl.U.dimension() != plant.p || ctrl.nmap.in_dim != plant.p || ctrl.nmap.out_dim != plant.m) {
        throw std::invalid_argument("controller dimensions do not match the plant (U, N: R^p -> R^m)");
    }
}

std::vector<std::string> check_u_inside_domain(const PlantModel& plant, const AwPiController& ctrl) {
    std::vector<std::string> out;
    auto points = ctrl.U.boundary_samples(64);
    points.push_back(ctrl.U.interior_point());
    for (const auto& u : points) {
        if (!in_region_of_interest(plant, ctrl, u)) {
            out.push_back("U point " + format_vec(u) + " lies outside the domain of N");
        }
    }
    return out;
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::Horizon: return "Horizon";
        case Termination::Converged: return "Converged";
        case Termination::StateBlowup: return "StateBlowup";
        case Termination::BoundaryApproach: return "BoundaryApproach";
        case Termination::LeftRegionOfInterest: return "LeftRegionOfInterest";
    }
    return "Unknown";
}

std::string to_string(IntegratorMode m) {
    switch (m) {
        case IntegratorMode::Saturating: return "saturating";
        case IntegratorMode::Classical: return "classical";
        case IntegratorMode::SoftProjection: return "soft-projection";
    }
    return "unknown";
}

Vec controller_output(const PlantModel& plant, const AwPiController& ctrl, const Vec& r, const Vec& x,
                      const Vec& u_I) {
    if (ctrl.mode == IntegratorMode::SoftProjection) {
        return ctrl.U.project(u_I);
    }
    if (ctrl.tau_p == 0.0) {
        return u_I;
    }
    return u_I + ctrl.tau_p * ctrl.k * (r - plant.g(x));
}

bool in_region_of_interest(const PlantModel& plant, const AwPiController& ctrl, const Vec& u) {
    if (!u.allFinite()) {
        return false;
    }
    if (ctrl.nmap.domain && !ctrl.nmap.domain(u)) {
        return false;
    }
    if (plant.input_domain.contains) {
        const Vec v = ctrl.nmap.eval(u);
        return v.allFinite() && plant.input_domain.contains(v);
    }
    return true;
}

double region_boundary_distance(const PlantModel& plant, const AwPiController& ctrl, const Vec& u) {
    if (ctrl.nmap.boundary_distance) {
        return ctrl.nmap.boundary_distance(u);
    }
    if (!plant.input_domain.margin) {
        return kInf;
    }
    // First-order distance phi / |grad phi| of the pulled-back margin.
    auto phi = [&](const Vec& w) { return plant.input_domain.margin(ctrl.nmap.eval(w)); };
    const double value = phi(u);
    if (!std::isfinite(value)) {
        return value;
    }
    Vec grad(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double step = 1e-6 * (1.0 + std::abs(u(i)));
        Vec up = u;
        Vec dn = u;
        up(i) += step;
        dn(i) -= step;
        grad(i) = (phi(up) - phi(dn)) / (2.0 * step);
    }
    const double gn = grad.norm();
    if (!(gn > 0.0) || !std::isfinite(gn)) {
        return kInf;
    }
    return value / gn;
}

ClosedLoopDerivative closed_loop_rhs(const PlantModel& plant, const AwPiController& ctrl, const Vec& r, const Vec& x,
                                     const Vec& u_I) {
    const Vec e = r - plant.g(x);
    const Vec u = controller_output(plant, ctrl, r, x, u_I);
    if (!in_region_of_interest(plant, ctrl, u)) {
        throw LeftRegionOfInterest("closed_loop_rhs: u = " + format_vec(u) + " is outside the region of interest");
    }
    ClosedLoopDerivative d;
    d.dx = plant.f0(x, ctrl.nmap.eval(u));
    switch (ctrl.mode) {
        case IntegratorMode::Saturating:
            d.du_I = ctrl.U.tangent_project(u_I, ctrl.k * e).projected;
            break;
        case IntegratorMode::Classical:
            d.du_I = ctrl.k * e;
            break;
        case IntegratorMode::SoftProjection:
            d.du_I = ctrl.k * e - (u_I - ctrl.U.project(u_I)) / ctrl.soft_K;
            break;
    }
    return d;
}

namespace {

LoopSample make_sample(const PlantModel& plant, const AwPiController& ctrl, const Vec& r, double t, const Vec& x,
                       const Vec& u_I) {
    LoopSample s;
    s.t = t;
    s.x = x;
    s.u_I = u_I;
    s.y = plant.g(x);
    s.e = r - s.y;
    s.u = controller_output(plant, ctrl, r, x, u_I);
    s.v = ctrl.nmap.eval(s.u);
    return s;
}

}  // namespace

ClosedLoopRun simulate_closed_loop(const PlantModel& plant, const AwPiController& ctrl, const Vec& r, const Vec& x0,
                                   const Vec& u0, double horizon, double h, const LoopOptions& opts) {
    check_controller(plant, ctrl);
    if (!(horizon > 0.0) || !(h > 0.0)) {
        throw std::invalid_argument("simulate_closed_loop: horizon and h must be positive");
    }
    if (x0.size() != plant.n || u0.size() != plant.p || r.size() != plant.p) {
        throw std::invalid_argument("simulate_closed_loop: dimension mismatch in r, x0 or u0");
    }
    if (ctrl.mode != IntegratorMode::Classical && !ctrl.U.contains(u0, ctrl.U.active_tolerance(u0))) {
        throw std::invalid_argument("simulate_closed_loop: u0 must lie in U");
    }
    const int stride = std::max(1, opts.record_stride);

    ClosedLoopRun run;
    Vec x = x0;
    Vec u_I = u0;
    double t = 0.0;
    run.samples.push_back(make_sample(plant, ctrl, r, t, x, u_I));
    run.min_boundary_distance = kInf;

    const double margin = opts.boundary_margin_rel * ctrl.U.diameter();
    const double blowup = opts.blowup_factor * (1.0 + x0.norm());
    const bool track_violation = ctrl.mode == IntegratorMode::Saturating;
    const long n = step_count(horizon, h);
    bool last_recorded = true;

    for (long i = 1; i <= n; ++i) {
        const Vec e = r - plant.g(x);
        const Vec u = controller_output(plant, ctrl, r, x, u_I);
        if (!in_region_of_interest(plant, ctrl, u)) {
            run.termination = Termination::LeftRegionOfInterest;
            break;
        }
        const double dist = region_boundary_distance(plant, ctrl, u);
        run.min_boundary_distance = std::min(run.min_boundary_distance, dist);
        if (dist < margin) {
            run.termination = Termination::BoundaryApproach;
            break;
        }

        const double hs = i == n ? horizon - static_cast<double>(n - 1) * h : h;
        Vec x_next;
        if (ctrl.mode == IntegratorMode::SoftProjection || ctrl.tau_p == 0.0) {
            const Vec v = ctrl.nmap.eval(u);
            x_next = rk4_step([&](const Vec& xx) { return plant.f0(xx, v); }, x, hs);
        } else {
            x_next = rk4_step(
                [&](const Vec& xx) {
                    const Vec uu = u_I + ctrl.tau_p * ctrl.k * (r - plant.g(xx));
                    return plant.f0(xx, ctrl.nmap.eval(uu));
                },
                x, hs);
        }

        Vec u_next;
        switch (ctrl.mode) {
            case IntegratorMode::Saturating:
                u_next = ctrl.U.project(u_I + hs * ctrl.k * e);
                break;
            case IntegratorMode::Classical:
                u_next = u_I + hs * ctrl.k * e;
                break;
            case IntegratorMode::SoftProjection: {
                // Explicit error step, then the exact prox of the penalty
                // (h / 2K) d(., U)^2, which is the identity on U.
                const double a = hs / ctrl.soft_K;
                const Vec w = u_I + hs * ctrl.k * e;
                u_next = (w + a * ctrl.U.project(w)) / (1.0 + a);
                break;
            }
        }
        if (plant.canonicalize) {
            plant.canonicalize(x_next);
        }

        const bool blown = !x_next.allFinite() || !u_next.allFinite() || x_next.norm() > blowup;
        const double rate_x = plant.state_difference(x_next, x).norm() / hs;
        const double rate_u = (u_next - u_I).norm() / hs;
        x = std::move(x_next);
        u_I = std::move(u_next);
        t = i == n ? horizon : static_cast<double>(i) * h;
        ++run.steps;
        if (track_violation) {
            run.max_integrator_violation = std::max(run.max_integrator_violation, ctrl.U.distance_to_set(u_I));
        }
        if (blown) {
            run.termination = Termination::StateBlowup;
            last_recorded = false;
            break;
        }
        last_recorded = i % stride == 0 || i == n;
        if (last_recorded) {
            run.samples.push_back(make_sample(plant, ctrl, r, t, x, u_I));
        }
        if (opts.converge_tol > 0.0 && rate_x <= opts.converge_tol * (1.0 + x.norm()) &&
            rate_u <= opts.converge_tol * (1.0 + u_I.norm())) {
            run.termination = Termination::Converged;
            break;
        }
    }
    if (!last_recorded && x.allFinite() && u_I.allFinite()) {
        run.samples.push_back(make_sample(plant, ctrl, r, t, x, u_I));
    }

    run.final_x = x;
    run.final_u_I = u_I;
    run.final_time = t;
    run.final_error = (r - plant.g(x)).norm();

    SegmentSummary seg;
    seg.r = r;
    seg.t_start = 0.0;
    seg.t_end = t;
    seg.termination = run.termination;
    seg.final_error = run.final_error;
    seg.final_x = x;
    seg.final_u_I = u_I;
    seg.final_y = plant.g(x);
    run.segments.push_back(std::move(seg));
    return run;
}

ClosedLoopRun run_reference_schedule(const PlantModel& plant, const AwPiController& ctrl,
                                     const std::vector<ReferenceStep>& schedule, const Vec& x0, const Vec& u0,
                                     double h, const LoopOptions& opts) {
    if (schedule.empty()) {
        throw std::invalid_argument("run_reference_schedule: empty schedule");
    }
    ClosedLoopRun total;
    total.min_boundary_distance = kInf;
    Vec x = x0;
    Vec u_I = u0;
    double offset = 0.0;
    for (std::size_t idx = 0; idx < schedule.size(); ++idx) {
        const auto& step = schedule[idx];
        if (!(step.duration > 0.0)) {
            throw std::invalid_argument("run_reference_schedule: segment " + std::to_string(idx) +
                                        " has a nonpositive duration");
        }
        ClosedLoopRun seg;
        try {
            seg = simulate_closed_loop(plant, ctrl, step.r, x, u_I, step.duration, h, opts);
        } catch (const std::exception& e) {
            throw std::runtime_error("segment " + std::to_string(idx) + ": " + e.what());
        }
        for (std::size_t j = idx == 0 ? 0 : 1; j < seg.samples.size(); ++j) {
            seg.samples[j].t += offset;
            total.samples.push_back(std::move(seg.samples[j]));
        }
        auto summary = seg.segments.front();
        summary.t_start = offset;
        summary.t_end = offset + seg.final_time;
        total.segments.push_back(std::move(summary));
        total.min_boundary_distance = std::min(total.min_boundary_distance, seg.min_boundary_distance);
        total.max_integrator_violation = std::max(total.max_integrator_violation, seg.max_integrator_violation);
        total.steps += seg.steps;
        total.termination = seg.termination;
        total.final_error = seg.final_error;
        x = seg.final_x;
        u_I = seg.final_u_I;
        offset += seg.final_time;
        if (is_error(seg.termination)) {
            total.failed_segment = static_cast<int>(idx);
            break;
        }
    }
    total.final_x = x;
    total.final_u_I = u_I;
    total.final_time = offset;
    return total;
}

std::vector<SoftProjectionPoint> soft_projection_convergence_check(const PlantModel& plant,
                                                                   const AwPiController& ctrl_base, const Vec& r,
                                                                   const Vec& x0, const Vec& u0, double horizon,
                                                                   double h, const std::vector<double>& K_list) {
    if (ctrl_base.mode != IntegratorMode::Saturating || ctrl_base.tau_p != 0.0) {
        throw std::invalid_argument("soft_projection_convergence_check: needs a saturating controller with tau_p = 0");
    }
    const auto reference = simulate_closed_loop(plant, ctrl_base, r, x0, u0, horizon, h);
    std::vector<SoftProjectionPoint> out;
    for (double K : K_list) {
        AwPiController soft = ctrl_base;
        soft.mode = IntegratorMode::SoftProjection;
        soft.soft_K = K;
        const auto run = simulate_closed_loop(plant, soft, r, x0, u0, horizon, h);
        const std::size_t count = std::min(run.samples.size(), reference.samples.size());
        double sup = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const double dx = plant.state_difference(run.samples[i].x, reference.samples[i].x).squaredNorm();
            const double du = (run.samples[i].u_I - reference.samples[i].u_I).squaredNorm();
            sup = std::max(sup, std::sqrt(dx + du));
        }
        out.push_back({K, sup});
    }
    return out;
}

bool non_increasing_with_slack(const std::vector<double>& values, double slack) {
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[i - 1] * (1.0 + slack) + 1e-12) {
            return false;
        }
    }
    return true;
}

bool closed_loop_is_equilibrium(const PlantModel& plant, const AwPiController& ctrl, const Vec& r, const Vec& x,
                                const Vec& u_I, double tol) {
    const auto d = closed_loop_rhs(plant, ctrl, r, x, u_I);
    return d.dx.norm() <= tol && d.du_I.norm() <= tol;
}

void write_run_csv(const ClosedLoopRun& run, const std::string& path) {
    if (run.samples.empty()) {
        throw std::invalid_argument("write_run_csv: empty run");
    }
    const auto& first = run.samples.front();
    std::vector<std::string> header{"t"};
    auto add = [&](const std::string& prefix, Eigen::Index n) {
        for (const auto& c : io::indexed_columns(prefix, static_cast<int>(n))) {
            header.push_back(c);
        }
    };
    add("x", first.x.size());
    add("uI", first.u_I.size());
    add("u", first.v.size());
    add("y", first.y.size());
    add("e", first.e.size());
    io::CsvBuilder csv(header);
    for (const auto& s : run.samples) {
        csv.value(s.t).values(s.x).values(s.u_I).values(s.v).values(s.y).values(s.e);
        csv.end_row();
    }
    csv.save(path);
}

void write_run_metadata(const ClosedLoopRun& run, const AwPiController& ctrl, const std::string& path) {
    std::ostringstream out;
    out << "mode = " << to_string(ctrl.mode) << '\n';
    out << "k = " << io::format_number(ctrl.k) << '\n';
    out << "tau_p = " << io::format_number(ctrl.tau_p) << '\n';
    if (ctrl.mode == IntegratorMode::SoftProjection) {
        out << "soft_K = " << io::format_number(ctrl.soft_K) << '\n';
    }
    out << "nmap = " << ctrl.nmap.name << '\n';
    out << "termination = " << to_string(run.termination) << '\n';
    out << "failed_segment = " << run.failed_segment << '\n';
    out << "final_error = " << io::format_number(run.final_error) << '\n';
    out << "min_boundary_distance = " << io::format_number(run.min_boundary_distance) << '\n';
    out << "max_integrator_violation = " << io::format_number(run.max_integrator_violation) << '\n';
    out << "steps = " << run.steps << '\n';
    for (std::size_t i = 0; i < run.segments.size(); ++i) {
        const auto& s = run.segments[i];
        out << "segment." << i << " = r=" << format_vec(s.r) << " t=[" << io::format_number(s.t_start) << ", "
            << io::format_number(s.t_end) << "] termination=" << to_string(s.termination)
            << " final_error=" << io::format_number(s.final_error) << '\n';
    }
    io::write_file_atomic(path, out.str());
}

}  // namespace awpi::control
