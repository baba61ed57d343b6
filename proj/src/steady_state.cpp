#include "awpi/steady_state.hpp"

#include "awpi/csv.hpp"
#include "awpi/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace awpi::steady {

using control::AwPiController;
using control::PlantModel;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double safe_norm(const Vec& v) {
    return v.allFinite() ? v.norm() : std::numeric_limits<double>::infinity();
}

// Damped Newton shared by the state and preimage solvers. `residual` may
// throw for points outside its domain; such trial points count as a failed
// step and trigger halving.
Vec damped_newton(const VecMap& residual, const std::function<Mat(const Vec&)>& jacobian,
                  const std::function<void(Vec&)>& canonicalize, Vec x, double tol, int max_iterations,
                  const char* what) {
    Vec fx = residual(x);
    double norm = safe_norm(fx);
    for (int it = 0; it < max_iterations; ++it) {
        if (norm <= tol) {
            return x;
        }
        const Mat J = jacobian(x);
        const Vec dx = J.fullPivLu().solve(-fx);
        if (!dx.allFinite()) {
            break;
        }
        double step = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
            Vec trial = x + step * dx;
            if (canonicalize) {
                canonicalize(trial);
            }
            Vec ft;
            try {
                ft = residual(trial);
            } catch (const Error&) {
                continue;
            }
            const double tn = safe_norm(ft);
            if (tn < norm || (halving == 0 && tn <= tol)) {
                x = std::move(trial);
                fx = std::move(ft);
                norm = tn;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            break;
        }
    }
    if (norm <= tol) {
        return x;
    }
    throw NoConvergence(std::string(what) + ": Newton did not converge (residual " + io::format_number(norm) + ")");
}

Vec default_guess(const PlantModel& plant, const Vec& v) {
    return plant.state_guess ? plant.state_guess(v) : Vec(Vec::Zero(plant.n));
}

struct DecaySamples {
    std::vector<double> t;
    std::vector<double> ratio;
    bool finite = true;
};

DecaySamples simulate_decay(const PlantModel& plant, const Vec& v, const Vec& xe, const Vec& dx0, double horizon,
                            double h) {
    DecaySamples out;
    const double n0 = dx0.norm();
    Vec x = xe + dx0;
    if (plant.canonicalize) {
        plant.canonicalize(x);
    }
    const long steps = step_count(horizon, h);
    const long stride = std::max(1L, steps / 2000);
    out.t.push_back(0.0);
    out.ratio.push_back(1.0);
    for (long i = 1; i <= steps; ++i) {
        x = rk4_step([&](const Vec& xx) { return plant.f0(xx, v); }, x, h);
        if (plant.canonicalize) {
            plant.canonicalize(x);
        }
        if (!x.allFinite()) {
            out.finite = false;
            return out;
        }
        if (i % stride == 0 || i == steps) {
            out.t.push_back(static_cast<double>(i) * h);
            out.ratio.push_back(plant.state_difference(x, xe).norm() / n0);
        }
    }
    return out;
}

struct DecayPlan {
    double horizon = 0.0;
    double h = 0.0;
};

DecayPlan decay_plan(const StabilityCertificate& cert) {
    const double decay_rate = -cert.spectral_abscissa;
    const double fastest = cert.eigenvalues.cwiseAbs().maxCoeff();
    DecayPlan plan;
    plan.horizon = std::log(1e3) / decay_rate;
    plan.h = std::min(0.05 / std::max(fastest, 1e-12), plan.horizon / 200.0);
    return plan;
}

// Real and imaginary parts of the eigenvectors, then the standard basis.
// Defective Jacobians have too few eigenvectors to show the transient
// growth, and |exp(At)| <= sqrt(n) max_i |exp(At) e_i| bounds the rest.
std::vector<Vec> fit_directions(const Eigen::ComplexEigenSolver<Mat>& es) {
    std::vector<Vec> dirs;
    const auto& vecs = es.eigenvectors();
    for (Eigen::Index i = 0; i < vecs.rows(); ++i) {
        dirs.push_back(Vec::Unit(vecs.rows(), i));
    }
    for (Eigen::Index j = 0; j < vecs.cols(); ++j) {
        for (const Vec& d : {Vec(vecs.col(j).real()), Vec(vecs.col(j).imag())}) {
            const double n = d.norm();
            if (n > 1e-8) {
                dirs.push_back(d / n);
            }
        }
    }
    return dirs;
}

}  // namespace

Mat numeric_jacobian(const VecMap& f, const Vec& x) {
    const Vec f0 = f(x);
    Mat J(f0.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double step = 1e-6 * (1.0 + std::abs(x(i)));
        Vec up = x;
        Vec dn = x;
        up(i) += step;
        dn(i) -= step;
        J.col(i) = (f(up) - f(dn)) / (2.0 * step);
    }
    return J;
}

Mat state_jacobian(const PlantModel& plant, const Vec& x, const Vec& v) {
    if (plant.jacobian_x) {
        return plant.jacobian_x(x, v);
    }
    return numeric_jacobian([&](const Vec& xx) { return plant.f0(xx, v); }, x);
}

Vec solve_steady_state(const PlantModel& plant, const Vec& v, const Vec& x_guess, int max_iterations) {
    if (x_guess.size() != plant.n || !x_guess.allFinite()) {
        throw std::invalid_argument("solve_steady_state: guess must be finite with dimension n");
    }
    const double tol = 1e-10 * (1.0 + safe_norm(plant.f0(x_guess, v)));
    return damped_newton([&](const Vec& x) { return plant.f0(x, v); },
                         [&](const Vec& x) { return state_jacobian(plant, x, v); }, plant.canonicalize, x_guess, tol,
                         max_iterations, "solve_steady_state");
}

Vec equilibrium_state(const PlantModel& plant, const Vec& v) {
    if (plant.xi) {
        return plant.xi(v);
    }
    return solve_steady_state(plant, v, default_guess(plant, v));
}

StabilityCertificate linearization_certificate(const PlantModel& plant, const Vec& v, const CertificateOptions& opts) {
    StabilityCertificate cert;
    cert.equilibrium = equilibrium_state(plant, v);
    const Mat A = state_jacobian(plant, cert.equilibrium, v);
    const Eigen::ComplexEigenSolver<Mat> es(A, true);
    cert.eigenvalues = es.eigenvalues();
    cert.spectral_abscissa = cert.eigenvalues.real().maxCoeff();
    cert.stable = cert.spectral_abscissa <= -opts.margin;
    if (!cert.stable || !opts.fit_envelope) {
        return cert;
    }

    const DecayPlan plan = decay_plan(cert);
    const auto dirs = fit_directions(es);
    const Vec& xe = cert.equilibrium;
    auto decays = [&](double eps) {
        for (const auto& d : dirs) {
            const auto s = simulate_decay(plant, v, xe, eps * d, plan.horizon, plan.h);
            if (!s.finite || s.ratio.back() > 0.5) {
                return false;
            }
        }
        return true;
    };

    // Largest perturbation (up to a factor 2 refinement) for which every
    // eigen-direction decays.
    double pass = 0.1 * (1.0 + xe.norm());
    double fail = -1.0;
    int halvings = 0;
    while (!decays(pass)) {
        fail = pass;
        pass *= 0.5;
        if (++halvings > 40) {
            return cert;
        }
    }
    if (fail > 0.0) {
        for (int i = 0; i < 8; ++i) {
            const double mid = 0.5 * (pass + fail);
            (decays(mid) ? pass : fail) = mid;
        }
    }
    cert.estimated_eps0 = pass;

    // log-ratio least squares for lambda, then the smallest rho that bounds
    // every sample.
    std::vector<std::pair<double, double>> samples;
    for (const auto& d : dirs) {
        const auto s = simulate_decay(plant, v, xe, pass * d, plan.horizon, plan.h);
        for (std::size_t i = 0; i < s.t.size(); ++i) {
            samples.emplace_back(s.t[i], s.ratio[i]);
        }
    }
    double st = 0.0, sl = 0.0, stt = 0.0, stl = 0.0;
    int count = 0;
    for (const auto& [t, ratio] : samples) {
        if (ratio > 1e-12) {
            const double l = std::log(ratio);
            st += t;
            sl += l;
            stt += t * t;
            stl += t * l;
            ++count;
        }
    }
    double lambda = -0.5 * cert.spectral_abscissa;
    const double denom = count * stt - st * st;
    if (count > 1 && denom > 0.0) {
        const double slope = (count * stl - st * sl) / denom;
        if (slope < 0.0) {
            lambda = -slope;
        }
    }
    double rho = 1.0;
    for (const auto& [t, ratio] : samples) {
        rho = std::max(rho, ratio * std::exp(lambda * t));
    }
    cert.estimated_lambda = lambda;
    cert.estimated_rho = rho;
    cert.has_envelope = true;

    std::mt19937_64 rng(opts.holdout_seed);
    std::normal_distribution<double> normal;
    Vec d(plant.n);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        d(i) = normal(rng);
    }
    cert.holdout_within_factor2 = check_decay_envelope(plant, v, cert, pass * d / d.norm(), 2.0);
    return cert;
}

bool check_decay_envelope(const PlantModel& plant, const Vec& v, const StabilityCertificate& cert, const Vec& dx0,
                          double factor) {
    if (!cert.has_envelope) {
        return false;
    }
    const DecayPlan plan = decay_plan(cert);
    const auto s = simulate_decay(plant, v, cert.equilibrium, dx0, plan.horizon, plan.h);
    if (!s.finite) {
        return false;
    }
    for (std::size_t i = 0; i < s.t.size(); ++i) {
        if (s.ratio[i] > factor * cert.estimated_rho * std::exp(-cert.estimated_lambda * s.t[i]) * (1.0 + 1e-12)) {
            return false;
        }
    }
    return true;
}

double min_sym_jacobian_eig(const VecMap& composed, const Vec& u) {
    const Mat J = numeric_jacobian(composed, u);
    const Mat S = 0.5 * (J + J.transpose());
    return Eigen::SelfAdjointEigenSolver<Mat>(S, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

MonotonicityResult monotonicity_scan(const VecMap& composed, const sets::ConvexSet& region, int samples,
                                     std::uint64_t seed) {
    if (samples < 2) {
        throw std::invalid_argument("monotonicity_scan: need at least two samples");
    }
    std::mt19937_64 rng(seed);
    MonotonicityResult res;
    res.mu_estimate = std::numeric_limits<double>::infinity();
    res.min_sym_eig = std::numeric_limits<double>::infinity();
    std::vector<std::pair<Vec, Vec>> points;
    for (int i = 0; i < samples; ++i) {
        Vec u = region.sample(rng);
        try {
            Vec gu = composed(u);
            if (gu.allFinite()) {
                points.emplace_back(std::move(u), std::move(gu));
            }
        } catch (const Error&) {
        }
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& [u, gu] = points[i];
        bool violated = false;
        try {
            const double eig = min_sym_jacobian_eig(composed, u);
            res.min_sym_eig = std::min(res.min_sym_eig, eig);
            ++res.point_count;
            violated = !(eig > 0.0);
        } catch (const Error&) {
        }
        if (i + 1 < points.size()) {
            const auto& [u2, gu2] = points[i + 1];
            const Vec du = u - u2;
            const double dd = du.squaredNorm();
            if (dd > 0.0) {
                const double q = (gu - gu2).dot(du) / dd;
                res.mu_estimate = std::min(res.mu_estimate, q);
                ++res.pair_count;
                violated = violated || !(q > 0.0);
            }
        }
        if (violated) {
            res.violations.push_back(u);
        }
    }
    return res;
}

std::vector<MonotonicityNode> monotonicity_raster(const VecMap& composed, const Vec& lower, const Vec& upper, int nx,
                                                  int ny) {
    if (lower.size() != 2 || upper.size() != 2 || nx < 2 || ny < 2) {
        throw std::invalid_argument("monotonicity_raster: needs a 2-D box and at least 2x2 nodes");
    }
    std::vector<MonotonicityNode> nodes;
    nodes.reserve(static_cast<std::size_t>(nx) * ny);
    for (int i = 0; i < nx; ++i) {
        const double a = lower(0) + (upper(0) - lower(0)) * i / (nx - 1);
        for (int j = 0; j < ny; ++j) {
            const double b = lower(1) + (upper(1) - lower(1)) * j / (ny - 1);
            MonotonicityNode node{vec({a, b}), kNaN};
            try {
                node.min_eig_sym_jac = min_sym_jacobian_eig(composed, node.u);
            } catch (const Error&) {
            }
            nodes.push_back(std::move(node));
        }
    }
    return nodes;
}

void write_monotonicity_csv(const std::vector<MonotonicityNode>& nodes, const std::string& path) {
    io::CsvBuilder csv({"u_1", "u_2", "min_eig_sym_jac"});
    for (const auto& n : nodes) {
        csv.value(n.u(0)).value(n.u(1)).value(n.min_eig_sym_jac);
        csv.end_row();
    }
    csv.save(path);
}

Mat linear_right_inverse(const Mat& P0_dc) {
    if (P0_dc.rows() == 0 || P0_dc.rows() > P0_dc.cols()) {
        throw RankDeficient("linear_right_inverse: need p <= m and p > 0");
    }
    const Eigen::JacobiSVD<Mat> svd(P0_dc);
    const auto& s = svd.singularValues();
    if (!(s.minCoeff() >= 1e-10 * s.maxCoeff()) || s.maxCoeff() == 0.0) {
        throw RankDeficient("linear_right_inverse: P(0) is rank deficient");
    }
    const Mat PPt = P0_dc * P0_dc.transpose();
    return P0_dc.transpose() * PPt.ldlt().solve(Mat::Identity(PPt.rows(), PPt.cols()));
}

Mat lti_dc_gain(const Mat& A, const Mat& B, const Mat& C) {
    return -C * A.fullPivLu().solve(B);
}

SteadyStateMaps make_steady_state_maps(const PlantModel& plant, const control::StaticMap& nmap) {
    SteadyStateMaps maps;
    maps.xi = [plant](const Vec& v) { return equilibrium_state(plant, v); };
    maps.gmap = [plant](const Vec& v) { return plant.g(equilibrium_state(plant, v)); };
    maps.composed = [plant, nmap](const Vec& u) { return plant.g(equilibrium_state(plant, nmap.eval(u))); };
    maps.stability = [plant](const Vec& v) { return linearization_certificate(plant, v); };
    maps.mu_estimate = kNaN;
    return maps;
}

Vec solve_preimage(const VecMap& composed, const Vec& r, const Vec& guess, int max_iterations) {
    const double tol = 1e-9 * (1.0 + r.norm());
    return damped_newton([&](const Vec& u) { return Vec(composed(u) - r); },
                         [&](const Vec& u) { return numeric_jacobian(composed, u); }, {}, guess, tol, max_iterations,
                         "solve_preimage");
}

Vec solve_reference_input(const PlantModel& plant, const AwPiController& ctrl, const Vec& r) {
    const auto maps = make_steady_state_maps(plant, ctrl.nmap);
    Vec u;
    try {
        u = solve_preimage(maps.composed, r, ctrl.U.project(r));
    } catch (const Error& e) {
        throw InfeasibleReference(std::string("reference is not attainable: ") + e.what());
    }
    if (!ctrl.U.contains(u, 1e-9 * (1.0 + ctrl.U.diameter()))) {
        throw InfeasibleReference("reference preimage lies outside U");
    }
    return u;
}

TwoTimeScale build_two_time_scale(const PlantModel& plant, const AwPiController& ctrl, const Vec& r) {
    control::check_controller(plant, ctrl);
    const auto maps = make_steady_state_maps(plant, ctrl.nmap);
    TwoTimeScale tts{r, {}, {}, {}, ctrl.U, {}, {}, {}};
    tts.u_r = solve_reference_input(plant, ctrl, r);
    tts.x_r = maps.xi(ctrl.nmap.eval(tts.u_r));
    tts.G_ur = maps.composed(tts.u_r);
    tts.U_tilde = ctrl.U.translated(-tts.u_r);

    const Vec u_r = tts.u_r;
    const Vec G_ur = tts.G_ur;
    const auto composed = maps.composed;
    tts.G_tilde = [composed, u_r](const Vec& ut) { return composed(ut + u_r); };
    const auto U_tilde = tts.U_tilde;
    const bool saturating = ctrl.mode == control::IntegratorMode::Saturating;
    tts.reduced_rhs = [composed, u_r, G_ur, U_tilde, saturating](const Vec& ut) {
        const Vec field = G_ur - composed(ut + u_r);
        return saturating ? U_tilde.tangent_project(ut, field).projected : field;
    };
    const auto nmap = ctrl.nmap;
    tts.boundary_rhs = [plant, nmap, u_r](const Vec& ut, const Vec& xf) {
        const Vec v = nmap.eval(ut + u_r);
        return plant.f0(xf + equilibrium_state(plant, v), v);
    };
    return tts;
}

std::vector<SpPoint> sp_consistency_check(const PlantModel& plant, const AwPiController& ctrl, const Vec& r,
                                          const Vec& x0, const Vec& u0, double slow_horizon, double h,
                                          const std::vector<double>& k_list, int reduced_steps) {
    if (!(slow_horizon > 0.0) || !(h > 0.0) || reduced_steps < 1) {
        throw std::invalid_argument("sp_consistency_check: horizon, h and reduced_steps must be positive");
    }
    const TwoTimeScale tts = build_two_time_scale(plant, ctrl, r);
    const bool saturating = ctrl.mode == control::IntegratorMode::Saturating;

    // Reduced model in slow time, projected Euler.
    const double ds = slow_horizon / reduced_steps;
    std::vector<Vec> slow;
    slow.reserve(static_cast<std::size_t>(reduced_steps) + 1);
    slow.push_back(u0 - tts.u_r);
    for (int i = 0; i < reduced_steps; ++i) {
        const Vec& ut = slow.back();
        const Vec next = ut + ds * (tts.G_ur - tts.G_tilde(ut));
        slow.push_back(saturating ? tts.U_tilde.project(next) : next);
    }
    auto reduced_at = [&](double s) {
        const double pos = std::clamp(s / ds, 0.0, static_cast<double>(reduced_steps));
        const auto i = std::min(static_cast<int>(pos), reduced_steps - 1);
        const double w = pos - i;
        return Vec((1.0 - w) * slow[i] + w * slow[i + 1]);
    };

    std::vector<SpPoint> out;
    for (double k : k_list) {
        if (!(k > 0.0)) {
            throw std::invalid_argument("sp_consistency_check: gains must be positive");
        }
        AwPiController ck = ctrl;
        ck.k = k;
        const auto run = control::simulate_closed_loop(plant, ck, r, x0, u0, slow_horizon / k, h);
        double sup = 0.0;
        for (const auto& s : run.samples) {
            sup = std::max(sup, (s.u_I - (tts.u_r + reduced_at(k * s.t))).norm());
        }
        out.push_back({k, sup, run.termination});
    }
    return out;
}

GainSearchResult empirical_gain_bound(const PlantModel& plant,
                                      const std::function<AwPiController(double)>& ctrl_factory,
                                      const std::vector<GainProbe>& probes, const std::vector<double>& k_grid,
                                      double horizon, double h) {
    GainSearchResult res;
    res.probe_description = std::to_string(probes.size()) + " probe(s), horizon " + io::format_number(horizon) +
                            " s, h " + io::format_number(h) + " s";
    std::vector<double> grid = k_grid;
    std::sort(grid.begin(), grid.end());
    bool failed_before = false;
    for (double k : grid) {
        GainTrial trial{k, true, 0.0};
        const AwPiController ctrl = ctrl_factory(k);
        control::LoopOptions lo;
        lo.record_stride = 1000000;
        for (const auto& probe : probes) {
            try {
                const auto run = control::simulate_closed_loop(plant, ctrl, probe.r, probe.x0, probe.u0, horizon, h, lo);
                trial.worst_error = std::max(trial.worst_error, run.final_error);
                if (control::is_error(run.termination) || !(run.final_error <= probe.tolerance)) {
                    trial.converged = false;
                }
            } catch (const std::exception&) {
                trial.converged = false;
                trial.worst_error = std::numeric_limits<double>::infinity();
            }
        }
        if (trial.converged) {
            if (failed_before) {
                res.monotone = false;
            } else {
                res.kappa_empirical = k;
            }
        } else {
            failed_before = true;
        }
        res.tested_gains.push_back(trial);
    }
    return res;
}

}  // namespace awpi::steady
