#include "awpi/control_loop.hpp"
#include "awpi/pds.hpp"
#include "test_plants.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace awpi;
using namespace awpi::control;
using sets::ConvexSet;

namespace {

AwPiController saturating_1d(double lo, double hi, double k) {
    return AwPiController{ConvexSet::box(vec({lo}), vec({hi})), identity_map(1), k, 0.0, IntegratorMode::Saturating,
                          0.0};
}

std::string first_line(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string s;
    std::getline(in, s);
    return s;
}

}  // namespace

TEST_CASE("closed-loop right-hand side") {
    const auto plant = testing_plants::scalar_lag();
    SECTION("interior integrator state follows the error") {
        const auto ctrl = saturating_1d(-2, 2, 0.7);
        const auto d = closed_loop_rhs(plant, ctrl, vec({1.5}), vec({0.25}), vec({0.5}));
        CHECK(std::abs(d.du_I(0) - 0.7 * 1.25) <= 1e-15);
        CHECK(std::abs(d.dx(0) - (-0.25 + 0.5)) <= 1e-15);
    }
    SECTION("zero error gives zero integrator derivative in every mode") {
        for (auto mode : {IntegratorMode::Saturating, IntegratorMode::Classical, IntegratorMode::SoftProjection}) {
            auto ctrl = saturating_1d(-2, 2, 1.0);
            ctrl.mode = mode;
            ctrl.soft_K = 0.1;
            ctrl.tau_p = 0.3;
            const auto d = closed_loop_rhs(plant, ctrl, vec({0.4}), vec({0.4}), vec({0.1}));
            CHECK(d.du_I.norm() == 0.0);
            CHECK(std::abs(controller_output(plant, ctrl, vec({0.4}), vec({0.4}), vec({0.1}))(0) - 0.1) <= 1e-15);
        }
    }
    SECTION("upper boundary absorbs a positive error") {
        const auto ctrl = saturating_1d(-1, 1, 1.0);
        const auto d = closed_loop_rhs(plant, ctrl, vec({2}), vec({0}), vec({1}));
        CHECK(d.du_I(0) == 0.0);
        const Vec oracle = sets::finite_difference_pi(ctrl.U, vec({1}), vec({2}), 1e-7);
        CHECK(std::abs(oracle(0)) <= 1e-12);
    }
    SECTION("classical and soft-projection modes") {
        auto ctrl = saturating_1d(-1, 1, 1.0);
        ctrl.mode = IntegratorMode::Classical;
        CHECK(std::abs(closed_loop_rhs(plant, ctrl, vec({2}), vec({0}), vec({1})).du_I(0) - 2.0) <= 1e-15);
        ctrl.mode = IntegratorMode::SoftProjection;
        ctrl.soft_K = 0.5;
        const auto d = closed_loop_rhs(plant, ctrl, vec({2}), vec({0}), vec({1.5}));
        CHECK(std::abs(d.du_I(0) - (2.0 - 0.5 / 0.5)) <= 1e-15);
        CHECK(std::abs(d.dx(0) - 1.0) <= 1e-15);  // plant sees P_U(u_I) = 1
    }
    SECTION("proportional path enters the plant input") {
        auto ctrl = saturating_1d(-2, 2, 2.0);
        ctrl.tau_p = 0.25;
        const Vec u = controller_output(plant, ctrl, vec({1}), vec({0.2}), vec({0.1}));
        CHECK(std::abs(u(0) - (0.1 + 0.25 * 2.0 * 0.8)) <= 1e-15);
    }
}

TEST_CASE("scalar lag tracks a feasible reference") {
    const auto plant = testing_plants::scalar_lag();
    const auto ctrl = saturating_1d(-2, 2, 0.1);
    LoopOptions opts;
    opts.record_stride = 100;
    const auto run = simulate_closed_loop(plant, ctrl, vec({1}), vec({0}), vec({0}), 200.0, 1e-2, opts);
    CHECK(run.termination == Termination::Horizon);
    CHECK(std::abs(run.samples.back().y(0) - 1.0) < 1e-4);
    CHECK(std::abs(run.final_u_I(0) - 1.0) < 1e-4);
    CHECK(run.max_integrator_violation == 0.0);
    CHECK(std::abs(run.final_time - 200.0) <= 1e-9);
}

TEST_CASE("infeasible reference settles on the boundary of U") {
    const auto plant = testing_plants::scalar_lag();
    const auto ctrl = saturating_1d(-2, 2, 0.1);
    LoopOptions opts;
    opts.record_stride = 100;
    const auto run = simulate_closed_loop(plant, ctrl, vec({3}), vec({0}), vec({0}), 200.0, 1e-2, opts);
    CHECK(std::abs(run.final_u_I(0) - 2.0) <= 1e-12);
    CHECK(std::abs(run.samples.back().y(0) - 2.0) < 1e-4);
    CHECK(std::abs(run.samples.back().e(0) - 1.0) < 1e-4);
    CHECK(closed_loop_is_equilibrium(plant, ctrl, vec({3}), vec({2}), vec({2}), 1e-12));
    for (const auto& s : run.samples) {
        CHECK(ctrl.U.contains(s.u_I));
    }
}

TEST_CASE("classical and saturating runs agree while the projection is inactive") {
    const auto plant = testing_plants::lag_chain();
    auto sat = AwPiController{ConvexSet::box(vec({-5}), vec({5})), identity_map(1), 0.3, 0.0,
                              IntegratorMode::Saturating, 0.0};
    auto cls = sat;
    cls.mode = IntegratorMode::Classical;
    const Vec x0 = Vec::Zero(3);
    const auto a = simulate_closed_loop(plant, sat, vec({1}), x0, vec({0}), 60.0, 1e-2);
    const auto b = simulate_closed_loop(plant, cls, vec({1}), x0, vec({0}), 60.0, 1e-2);
    double min_dist = 1e300;
    for (const auto& s : a.samples) {
        min_dist = std::min(min_dist, sat.U.distance_to_boundary(s.u_I));
    }
    REQUIRE(min_dist > 0.0);
    REQUIRE(a.samples.size() == b.samples.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        worst = std::max(worst, (a.samples[i].x - b.samples[i].x).cwiseAbs().maxCoeff());
        worst = std::max(worst, (a.samples[i].u_I - b.samples[i].u_I).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("an equilibrium start stays put") {
    const auto plant = testing_plants::lag_chain();
    const auto ctrl = AwPiController{ConvexSet::box(vec({-5}), vec({5})), identity_map(1), 0.5, 0.0,
                                     IntegratorMode::Saturating, 0.0};
    const Vec u_r = vec({0.7});
    const Vec x_r = plant.xi(u_r);
    const Vec r = plant.g(x_r);
    const auto run = simulate_closed_loop(plant, ctrl, r, x_r, u_r, 20.0, 1e-2);
    for (const auto& s : run.samples) {
        CHECK((s.x - x_r).norm() <= 1e-12);
        CHECK((s.u_I - u_r).norm() <= 1e-12);
    }
}

TEST_CASE("reference schedules continue the trajectory") {
    const auto plant = testing_plants::lag_chain();
    const auto ctrl = AwPiController{ConvexSet::box(vec({-5}), vec({5})), identity_map(1), 0.4, 0.0,
                                     IntegratorMode::Saturating, 0.0};
    const Vec x0 = Vec::Zero(3);
    SECTION("two equal steps equal one long step") {
        const auto split = run_reference_schedule(plant, ctrl, {{vec({1}), 5.0}, {vec({1}), 5.0}}, x0, vec({0}), 1e-2);
        const auto whole = simulate_closed_loop(plant, ctrl, vec({1}), x0, vec({0}), 10.0, 1e-2);
        CHECK((split.final_x - whole.final_x).norm() <= 1e-12);
        CHECK((split.final_u_I - whole.final_u_I).norm() <= 1e-12);
        CHECK(split.segments.size() == 2);
        CHECK(std::abs(split.segments[1].t_start - 5.0) <= 1e-12);
    }
    SECTION("a one-entry schedule is a plain simulation") {
        const auto one = run_reference_schedule(plant, ctrl, {{vec({2}), 7.0}}, x0, vec({0}), 1e-2);
        const auto sim = simulate_closed_loop(plant, ctrl, vec({2}), x0, vec({0}), 7.0, 1e-2);
        REQUIRE(one.samples.size() == sim.samples.size());
        CHECK((one.final_x - sim.final_x).norm() == 0.0);
        CHECK((one.samples.back().u_I - sim.samples.back().u_I).norm() == 0.0);
    }
    SECTION("times increase strictly across switches") {
        const auto run = run_reference_schedule(plant, ctrl, {{vec({1}), 3.0}, {vec({-1}), 3.0}, {vec({0.5}), 3.0}},
                                                x0, vec({0}), 1e-2);
        for (std::size_t i = 1; i < run.samples.size(); ++i) {
            CHECK(run.samples[i].t > run.samples[i - 1].t);
        }
        CHECK(std::abs(run.final_time - 9.0) <= 1e-9);
    }
}

TEST_CASE("error terminations") {
    SECTION("guard on script U") {
        auto plant = testing_plants::scalar_lag();
        StaticMap n = identity_map(1);
        n.domain = [](const Vec& u) { return u(0) < 1.0; };
        n.boundary_distance = [](const Vec& u) { return 1.0 - u(0); };
        auto ctrl = AwPiController{ConvexSet::box(vec({-5}), vec({5})), n, 1.0, 0.0, IntegratorMode::Classical, 0.0};
        const auto run = simulate_closed_loop(plant, ctrl, vec({3}), vec({0}), vec({0}), 50.0, 1e-2);
        CHECK(is_error(run.termination));
        CHECK((run.termination == Termination::LeftRegionOfInterest ||
               run.termination == Termination::BoundaryApproach));
        // The last accepted step is at most one integrator increment h k |e| <= 0.03 from the edge.
        CHECK(run.min_boundary_distance <= 0.03);
        CHECK_THROWS_AS(closed_loop_rhs(plant, ctrl, vec({0}), vec({0}), vec({2})), LeftRegionOfInterest);
    }
    SECTION("unbounded classical windup blows the state up") {
        // x' = x + v is unstable; a classical integrator with a fixed large
        // error drives it away.
        const auto plant = testing_plants::lti(Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Identity(1, 1));
        auto ctrl = AwPiController{ConvexSet::box(vec({-1}), vec({1})), identity_map(1), 1.0, 0.0,
                                   IntegratorMode::Classical, 0.0};
        LoopOptions opts;
        opts.blowup_factor = 1e3;
        const auto run = simulate_closed_loop(plant, ctrl, vec({0}), vec({1}), vec({0}), 100.0, 1e-2, opts);
        CHECK(run.termination == Termination::StateBlowup);
        CHECK(run.final_time < 100.0);
    }
}

TEST_CASE("soft projection approaches the saturating integrator") {
    const auto plant = testing_plants::scalar_lag();
    const auto ctrl = saturating_1d(-2, 2, 0.5);
    SECTION("interior trajectories are unaffected") {
        const auto pts = soft_projection_convergence_check(plant, ctrl, vec({1}), vec({0}), vec({0}), 20.0, 1e-3,
                                                           {0.1, 0.01});
        for (const auto& p : pts) {
            CHECK(p.sup_error <= 1e-12);
        }
    }
    SECTION("saturated trajectories converge as K decreases") {
        const auto pts = soft_projection_convergence_check(plant, ctrl, vec({3}), vec({0}), vec({0}), 30.0, 1e-3,
                                                           {0.1, 0.05, 0.01, 0.001});
        std::vector<double> errs;
        for (const auto& p : pts) {
            errs.push_back(p.sup_error);
        }
        CHECK(non_increasing_with_slack(errs, 0.1));
        CHECK(errs.front() > 10 * errs.back());
        CHECK(errs.back() < 1e-2);
    }
    SECTION("only tau_p = 0 saturating bases are accepted") {
        auto bad = ctrl;
        bad.tau_p = 0.1;
        CHECK_THROWS_AS(soft_projection_convergence_check(plant, bad, vec({1}), vec({0}), vec({0}), 1.0, 1e-3, {0.1}),
                        std::invalid_argument);
    }
}

TEST_CASE("tau_p shifts the plant input by the proportional term") {
    const auto plant = testing_plants::scalar_lag();
    auto ctrl = saturating_1d(-2, 2, 0.5);
    ctrl.tau_p = 0.4;
    const auto run = simulate_closed_loop(plant, ctrl, vec({1}), vec({0}), vec({0}), 5.0, 1e-2);
    for (const auto& s : run.samples) {
        CHECK(std::abs(s.u(0) - (s.u_I(0) + 0.4 * 0.5 * s.e(0))) <= 1e-14);
        CHECK(std::abs(s.v(0) - s.u(0)) == 0.0);
    }
}

TEST_CASE("error decays exponentially for small gains") {
    const auto plant = testing_plants::lag_chain();
    const auto ctrl = AwPiController{ConvexSet::box(vec({-5}), vec({5})), identity_map(1), 0.2, 0.0,
                                     IntegratorMode::Saturating, 0.0};
    const auto run = simulate_closed_loop(plant, ctrl, vec({1}), Vec::Zero(3), vec({0}), 80.0, 1e-2);
    // Least-squares slope of log|e| over the second half.
    double st = 0, sl = 0, stt = 0, stl = 0;
    int n = 0;
    for (const auto& s : run.samples) {
        if (s.t < 40.0 || s.e.norm() < 1e-13) continue;
        const double l = std::log(s.e.norm());
        st += s.t;
        sl += l;
        stt += s.t * s.t;
        stl += s.t * l;
        ++n;
    }
    REQUIRE(n > 100);
    const double slope = (n * stl - st * sl) / (n * stt - st * st);
    CHECK(slope < -0.05);
}

TEST_CASE("controller checks") {
    const auto plant = testing_plants::scalar_lag();
    auto ctrl = saturating_1d(-1, 1, 1.0);
    CHECK_NOTHROW(check_controller(plant, ctrl));
    ctrl.k = 0.0;
    CHECK_THROWS_AS(check_controller(plant, ctrl), std::invalid_argument);
    ctrl.k = 1.0;
    ctrl.tau_p = -1.0;
    CHECK_THROWS_AS(check_controller(plant, ctrl), std::invalid_argument);
    ctrl.tau_p = 0.0;
    ctrl.mode = IntegratorMode::SoftProjection;
    ctrl.soft_K = 0.0;
    CHECK_THROWS_AS(check_controller(plant, ctrl), std::invalid_argument);

    auto narrow = saturating_1d(-1, 1, 1.0);
    narrow.nmap.domain = [](const Vec& u) { return u(0) < 0.5; };
    const auto diags = check_u_inside_domain(plant, narrow);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags.front().find("U point") != std::string::npos);
    CHECK(check_u_inside_domain(plant, saturating_1d(-1, 1, 1.0)).empty());
}

TEST_CASE("run CSV and metadata") {
    const auto plant = testing_plants::lag_chain();
    const auto ctrl = AwPiController{ConvexSet::box(vec({-5}), vec({5})), identity_map(1), 0.4, 0.0,
                                     IntegratorMode::Saturating, 0.0};
    const auto run = simulate_closed_loop(plant, ctrl, vec({1}), Vec::Zero(3), vec({0}), 1.0, 1e-2);
    const auto dir = std::filesystem::temp_directory_path();
    write_run_csv(run, (dir / "awpi_run.csv").string());
    write_run_metadata(run, ctrl, (dir / "awpi_run_meta.txt").string());
    CHECK(first_line(dir / "awpi_run.csv") == "t,x_1,x_2,x_3,uI_1,u_1,y_1,e_1");
    std::ifstream meta(dir / "awpi_run_meta.txt");
    const std::string text((std::istreambuf_iterator<char>(meta)), std::istreambuf_iterator<char>());
    CHECK(text.find("mode") != std::string::npos);
    CHECK(text.find("saturating") != std::string::npos);
    CHECK(text.find("termination") != std::string::npos);
    std::filesystem::remove(dir / "awpi_run.csv");
    std::filesystem::remove(dir / "awpi_run_meta.txt");
}
