// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "awpi/control_loop.hpp"
#include "awpi/convex_set.hpp"
#include "awpi/experiment.hpp"
#include "awpi/pds.hpp"
#include "awpi/steady_state.hpp"
#include "awpi/synchronverter.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace awpi;
using namespace awpi::control;
using sets::ConvexSet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

PlantModel scalar_lag() {
    PlantModel p;
    p.name = "lti";
    p.n = p.m = p.p = 1;
    p.f0 = [](const Vec& x, const Vec& v) -> Vec { return v - x; };
    p.g = [](const Vec& x) -> Vec { return x; };
    p.xi = [](const Vec& v) -> Vec { return v; };
    p.jacobian_x = [](const Vec&, const Vec&) -> Mat { return -Mat::Identity(1, 1); };
    p.input_domain.lower = vec({-1e6});
    p.input_domain.upper = vec({1e6});
    return p;
}

AwPiController box_1d(double lo, double hi, double k) {
    return AwPiController{ConvexSet::box(vec({lo}), vec({hi})), identity_map(1), k, 0.0, IntegratorMode::Saturating,
                          0.0};
}

std::vector<ConvexSet> projection_sets() {
    Mat hex(6, 2);
    for (int i = 0; i < 6; ++i) {
        const double t = 2 * 3.14159265358979 * i / 6 + 0.2;
        hex.row(i) << std::cos(t), std::sin(t);
    }
    Mat simplex3(4, 3);
    simplex3 << -1, 0, 0, 0, -1, 0, 0, 0, -1, 1, 1, 1;
    return {ConvexSet::ball(vec({0.3, -0.2}), 1.0),
            ConvexSet::ball(vec({0, 0, 0}), 0.8),
            ConvexSet::box(vec({-1, 0}), vec({2, 0.5})),
            ConvexSet::box(vec({0, 0, 0}), vec({1, 2, 3})),
            ConvexSet::polyhedron(hex, Vec::Ones(6)),
            ConvexSet::polyhedron(simplex3, vec({0, 0, 0, 1.5}))};
}

// 1. Projection identities.
Outcome c1() {
    const auto family = projection_sets();
    std::mt19937_64 rng(20240601);
    std::normal_distribution<double> nd;
    const double delta = 1e-6;
    int cases = 0, bad = 0;
    double worst_fd = 0;
    const int per_set = 1700;
    for (const auto& X : family) {
        const int q = X.dimension();
        auto gauss = [&] {
            Vec v(q);
            for (int i = 0; i < q; ++i) v(i) = nd(rng);
            return v;
        };
        for (int i = 0; i < per_set; ++i) {
            ++cases;
            const Vec w = X.interior_point() + 2.0 * X.diameter() * gauss();
            // Alternate interior samples and boundary points.
            const Vec z = (i % 2 == 0) ? X.sample(rng) : X.project(w);
            Vec v1 = gauss();
            v1 /= v1.norm();
            const Vec v2 = gauss();
            const Vec pz = X.project(w);
            bool ok = true;
            ok &= (X.project(pz) - pz).norm() <= 1e-9 * (1 + pz.norm());
            const Vec w2 = w + gauss();
            ok &= (X.project(w) - X.project(w2)).norm() <= (w - w2).norm() * (1 + 1e-9);
            const Vec p1 = X.tangent_project(z, v1).projected;
            const double a = 0.1 + 5.0 * std::abs(nd(rng));
            ok &= (X.tangent_project(z, a * v1).projected - a * p1).norm() <= 1e-9 * (1 + a * p1.norm());
            ok &= (p1 - X.tangent_project(z, v2).projected).norm() <= (v1 - v2).norm() + 1e-9;
            const double fd = (p1 - sets::finite_difference_pi(X, z, v1, delta)).norm();
            worst_fd = std::max(worst_fd, fd);
            ok &= fd <= 10 * delta;
            if (!ok) ++bad;
        }
    }
    return {cases >= 10000 && bad == 0,
            std::to_string(cases) + " cases, " + std::to_string(bad) + " failures, worst FD gap " + fmt("%.3g", worst_fd)};
}

// 2. PDS invariance and arrival time.
Outcome c2() {
    const auto family = projection_sets();
    std::mt19937_64 rng(77);
    std::normal_distribution<double> nd;
    double worst_violation = 0, worst_arrival = 0;
    int runs = 0;
    bool ok = true;
    const double h = 1e-3;
    for (const auto& X : family) {
        const int q = X.dimension();
        for (int rep = 0; rep < 4; ++rep) {
            Mat M(q, q);
            for (int i = 0; i < q; ++i)
                for (int j = 0; j < q; ++j) M(i, j) = nd(rng);
            Vec c(q);
            for (int i = 0; i < q; ++i) c(i) = 3 * nd(rng);
            pds::VectorField F;
            F.dimension = q;
            F.evaluate = [M, c](const Vec& z) -> Vec { return M * (z - c); };
            pds::PdsOptions opts;
            opts.detect_equilibrium = false;
            const auto in = pds::simulate_pds(X, F, X.sample(rng), 4.0, h, opts);
            for (const auto& s : in.states) worst_violation = std::max(worst_violation, X.distance_to_set(s));
            Vec dir(q);
            for (int i = 0; i < q; ++i) dir(i) = nd(rng);
            const Vec z0 = X.interior_point() + (1.0 + X.diameter()) * dir / dir.norm() * 1.5;
            const auto out = pds::simulate_pds(X, F, z0, 8.0, h, opts);
            const double expect = (z0 - X.project(z0)).norm();
            worst_arrival = std::max(worst_arrival, std::abs(out.entry_time - expect));
            for (std::size_t i = out.entry_index; i < out.states.size(); ++i)
                worst_violation = std::max(worst_violation, X.distance_to_set(out.states[i]));
            runs += 2;
        }
    }
    ok = worst_violation <= 1e-9 && worst_arrival <= 2 * h;
    return {ok, std::to_string(runs) + " runs, max distance " + fmt("%.3g", worst_violation) + ", worst arrival error " +
                    fmt("%.3g", worst_arrival) + " s (h = 1e-3)"};
}

// 3. Scalar LTI oracle.
Outcome c3() {
    const auto plant = scalar_lag();
    const auto ctrl = box_1d(-2, 2, 0.1);
    LoopOptions opts;
    opts.record_stride = 1000;
    const auto a = simulate_closed_loop(plant, ctrl, vec({1}), vec({0}), vec({0}), 200.0, 1e-2, opts);
    const double ey = std::abs(plant.g(a.final_x)(0) - 1.0);
    const double eu = std::abs(a.final_u_I(0) - 1.0);
    const auto b = simulate_closed_loop(plant, ctrl, vec({3}), vec({0}), vec({0}), 200.0, 1e-2, opts);
    const bool at_bound = std::abs(b.final_u_I(0) - 2.0) <= 1e-9;
    const bool eq = closed_loop_is_equilibrium(plant, ctrl, vec({3}), vec({2}), b.final_u_I, 1e-12);
    const bool eq_run = closed_loop_is_equilibrium(plant, ctrl, vec({3}), b.final_x, b.final_u_I, 1e-4);
    return {ey <= 1e-4 && eu <= 1e-4 && at_bound && eq && eq_run,
            "|y-1| = " + fmt("%.3g", ey) + ", |uI-1| = " + fmt("%.3g", eu) + ", saturated uI = " +
                fmt("%.12g", b.final_u_I(0)) + (eq && eq_run ? ", equilibrium" : ", not an equilibrium")};
}

// 4. Synchronverter steady state and right inverse.
Outcome c4() {
    const sv::Params p;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> Tm(-60, 70), If(0.01, 1.2);
    int nv = 0;
    double worst_res = 0;
    while (nv < 1000) {
        const Vec v = vec({Tm(rng), If(rng)});
        if (!sv::sv_in_V(p, v)) continue;
        ++nv;
        const Vec x = sv::sv_xi(p, v);
        // Residual relative to the largest term in each row.
        const double scale = 1.0 + (p.V + std::abs(p.omega_g * p.L * x(1)) + std::abs(p.R * x(0)) +
                                    std::abs(p.m * v(1) * x(2))) / p.L;
        worst_res = std::max(worst_res, sv::sv_rhs(p, x, v).norm() / scale);
    }
    const auto U = sv::sv_build_U(p);
    double worst_inv = 0;
    for (int i = 0; i < 1000; ++i) {
        const Vec u = U.sample(rng);
        const Vec y = sv::sv_output(p, sv::sv_xi(p, sv::sv_right_inverse(p, u)));
        worst_inv = std::max(worst_inv, (y - u).norm() / (1 + u.norm()));
    }
    return {worst_res <= 1e-9 && worst_inv <= 1e-6,
            "max scaled residual " + fmt("%.3g", worst_res) + ", max right-inverse error " + fmt("%.3g", worst_inv)};
}

ClosedLoopRun sv_saturating_run(const sv::Params& p, AwPiController& ctrl_out) {
    const auto plant = sv::make_plant(p);
    ctrl_out = AwPiController{sv::sv_build_U(p), sv::right_inverse_map(p), 2.0, 0.0, IntegratorMode::Saturating, 0.0};
    const auto sched = sv::sv_step_schedule();
    const Vec u0 = ctrl_out.U.project(sched.front().r);
    const Vec x0 = plant.xi(ctrl_out.nmap.eval(u0));
    LoopOptions opts;
    opts.record_stride = 1000;
    return run_reference_schedule(plant, ctrl_out, sched, x0, u0, 1e-4, opts);
}

// 5. Saturating schedule on the synchronverter.
Outcome c5() {
    const sv::Params p;
    AwPiController ctrl{sv::sv_build_U(p), sv::right_inverse_map(p)};
    const auto run = sv_saturating_run(p, ctrl);
    const auto sched = sv::sv_step_schedule();
    if (run.segments.size() != sched.size() || run.failed_segment >= 0) {
        return {false, "run stopped early: " + to_string(run.termination)};
    }
    const double diam = ctrl.U.diameter();
    const auto maps = steady::make_steady_state_maps(sv::make_plant(p), ctrl.nmap);
    std::ostringstream d;
    bool ok = true;
    int feasible = 0, infeasible = 0;
    for (std::size_t i = 0; i < sched.size(); ++i) {
        const auto& seg = run.segments[i];
        const Vec& r = sched[i].r;
        if (ctrl.U.contains(r)) {
            ++feasible;
            const double tol = 0.01 * std::max(r.norm(), 1000.0);
            ok &= (seg.final_y - r).norm() <= tol;
        } else {
            ++infeasible;
            const double db = std::abs(ctrl.U.distance_to_boundary(seg.final_u_I));
            const Vec target = maps.composed(seg.final_u_I);
            const double rel = (seg.final_y - target).norm() / target.norm();
            ok &= db <= 1e-3 * diam && rel <= 0.01;
            d << " #" << (i + 1) << "(dB " << fmt("%.2g", db) << ", rel " << fmt("%.2g", rel) << ")";
        }
    }
    const double tol_feas = 1e-9 * (1 + diam);
    ok &= run.max_integrator_violation <= tol_feas;
    return {ok, std::to_string(feasible) + " tracked, " + std::to_string(infeasible) + " outside U:" + d.str() +
                    ", max uI violation " + fmt("%.3g", run.max_integrator_violation)};
}

// 6. Classical baseline with N = K fails at reference 9.
Outcome c6() {
    const sv::Params p;
    const auto plant = sv::make_plant(p);
    const AwPiController ctrl{sv::sv_build_U(p), sv::static_gain_map(p), 1.0, 0.0, IntegratorMode::Classical, 0.0};
    const auto sched = sv::sv_step_schedule();
    const Vec u0 = sv::static_gain_preimage(p, sched.front().r);
    const Vec x0 = plant.xi(ctrl.nmap.eval(u0));
    LoopOptions opts;
    opts.record_stride = 1000;
    const auto run = run_reference_schedule(plant, ctrl, sched, x0, u0, 1e-4, opts);
    const Vec r9 = sched[8].r;
    bool failed = false;
    std::string how;
    if (run.failed_segment == 8) {
        failed = true;
        how = to_string(run.termination);
    } else if (run.failed_segment < 0 && run.segments.size() > 8) {
        const double e = (run.segments[8].final_y - r9).norm();
        failed = e > 0.1 * r9.norm();
        how = "final |e| " + fmt("%.4g", e);
    } else {
        how = "stopped at segment " + std::to_string(run.failed_segment + 1);
    }
    const auto maps = steady::make_steady_state_maps(plant, ctrl.nmap);
    const Vec u9 = sv::static_gain_preimage(p, r9);
    const double eig = steady::min_sym_jacobian_eig(maps.composed, u9);
    return {failed && eig <= 0.0, "reference 9: " + how + "; min sym-Jacobian eigenvalue " + fmt("%.4g", eig)};
}

// 7. Singular-perturbation consistency.
Outcome c7() {
    std::vector<double> lti, svv;
    {
        const auto pts = steady::sp_consistency_check(scalar_lag(), box_1d(-2, 2, 0.5), vec({1}), vec({0}), vec({0}), 5.0,
                                                      1e-3, {0.5, 0.1, 0.02});
        for (const auto& s : pts) lti.push_back(s.slow_error);
    }
    {
        const sv::Params p;
        const auto plant = sv::make_plant(p);
        const AwPiController ctrl{sv::sv_build_U(p), sv::right_inverse_map(p), 2.0, 0.0, IntegratorMode::Saturating,
                                  0.0};
        const Vec u0 = vec({0, 0});
        const auto pts = steady::sp_consistency_check(plant, ctrl, sv::sv_step_schedule().front().r,
                                                      plant.xi(ctrl.nmap.eval(u0)), u0, 5.0, 1e-4, {2, 0.5, 0.1});
        for (const auto& s : pts) svv.push_back(s.slow_error);
    }
    auto list = [](const std::vector<double>& v) {
        std::string s;
        for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.3g", x);
        return s;
    };
    return {non_increasing_with_slack(lti, 0.1) && non_increasing_with_slack(svv, 0.1),
            "LTI [" + list(lti) + "], synchronverter [" + list(svv) + "]"};
}

// 8. Soft projection.
Outcome c8() {
    const auto pts = soft_projection_convergence_check(scalar_lag(), box_1d(-2, 2, 0.5), vec({3}), vec({0}), vec({0}),
                                                       30.0, 1e-3, {1e-1, 1e-2, 1e-3});
    std::vector<double> e;
    std::string s;
    for (const auto& pt : pts) {
        e.push_back(pt.sup_error);
        s += (s.empty() ? "" : " ") + fmt("%.3g", pt.sup_error);
    }
    return {non_increasing_with_slack(e, 0.1), "sup errors [" + s + "]"};
}

// 9. Region raster.
Outcome c9() {
    const sv::Params p;
    const auto nodes = sv::region_raster(p, vec({-60, 0.01}), vec({70, 1.2}), 140, 120);
    const auto a = sv::region_agreement(nodes, 0.05);
    const double f = a.feasible_nodes ? double(a.feasible_agree) / a.feasible_nodes : 0.0;
    const double c = a.checked_nodes ? double(a.checked_agree) / a.checked_nodes : 0.0;
    return {a.feasible_nodes > 0 && f >= 0.99 && c >= 0.99,
            std::to_string(a.feasible_agree) + "/" + std::to_string(a.feasible_nodes) + " feasible nodes agree, " +
                std::to_string(a.checked_agree) + "/" + std::to_string(a.checked_nodes) + " outside the band"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// 10. Determinism of every bundled config.
Outcome c10() {
    const char* env = std::getenv("AWPI_CONFIG_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path("configs");
    const fs::path base = fs::temp_directory_path() / "awpi_acceptance_det";
    fs::remove_all(base);
    std::vector<fs::path> configs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") configs.push_back(e.path());
    std::sort(configs.begin(), configs.end());
    int files = 0;
    std::string mismatch;
    for (const auto& cfg : configs) {
        const auto stem = cfg.stem().string();
        for (const char* pass : {"a", "b"}) {
            exp::RunOverrides ov;
            ov.out_dir = (base / pass / stem).string();
            (void)exp::run_experiment(cfg.string(), ov);
        }
        for (const auto& f : fs::directory_iterator(base / "a" / stem)) {
            if (f.path().extension() != ".csv") continue;
            ++files;
            const auto other = base / "b" / stem / f.path().filename();
            if (!fs::exists(other) || slurp(f.path()) != slurp(other)) mismatch += " " + stem + "/" + f.path().filename().string();
        }
    }
    fs::remove_all(base);
    return {files > 0 && mismatch.empty(), std::to_string(configs.size()) + " configs, " + std::to_string(files) +
                                                " CSV files compared" + (mismatch.empty() ? "" : ", differ:" + mismatch)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"projection identities", c1},     {"PDS invariance and arrival", c2}, {"LTI tracking oracle", c3},
        {"synchronverter steady state", c4}, {"saturating schedule", c5},      {"classical baseline", c6},
        {"SP consistency", c7},            {"soft projection", c8},          {"region raster", c9},
        {"determinism", c10}};
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
                  << "): " << o.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
