#include "awpi/experiment.hpp"

#include "awpi/convex_set.hpp"
#include "awpi/csv.hpp"
#include "awpi/pds.hpp"
#include "awpi/steady_state.hpp"
#include "awpi/synchronverter.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace awpi::exp {

namespace fs = std::filesystem;
using control::AwPiController;
using control::PlantModel;

namespace {

const std::vector<std::pair<Kind, std::string>> kKindNames = {
    {Kind::ClosedLoopRun, "ClosedLoopRun"},
    {Kind::ReferenceSchedule, "ReferenceSchedule"},
    {Kind::RegionScan, "RegionScan"},
    {Kind::MonotonicityScan, "MonotonicityScan"},
    {Kind::SpConsistency, "SpConsistency"},
    {Kind::GainSearch, "GainSearch"},
    {Kind::SoftProjectionCheck, "SoftProjectionCheck"},
    {Kind::PdsDemo, "PdsDemo"},
};

const char* const kSvParamNames[] = {"J", "Dp", "R", "L", "m", "V", "omega_n", "omega_g"};

// Reads typed fields out of a JSON object, recording problems instead of
// throwing so that validation can report everything at once.
class Reader {
public:
    explicit Reader(std::vector<std::string>& diags) : diags_(diags) {}

    void fail(const std::string& path, const std::string& what) { diags_.push_back(path + ": " + what); }

    const json* object(const json& parent, const std::string& key, const std::string& path, bool required) {
        if (!parent.contains(key)) {
            if (required) {
                fail(path + key, "missing section");
            }
            return nullptr;
        }
        const json& o = parent.at(key);
        if (!o.is_object()) {
            fail(path + key, "expected an object");
            return nullptr;
        }
        return &o;
    }

    void known_keys(const json& o, const std::string& path, std::initializer_list<const char*> keys) {
        std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [key, value] : o.items()) {
            if (!allowed.count(key)) {
                fail(path + key, "unknown field");
            }
        }
    }

    double number(const json& o, const char* key, const std::string& path, double def) {
        if (!o.contains(key)) {
            return def;
        }
        const json& v = o.at(key);
        if (!v.is_number()) {
            fail(path + key, "expected a number");
            return def;
        }
        const double x = v.get<double>();
        if (!std::isfinite(x)) {
            fail(path + key, "must be finite");
            return def;
        }
        return x;
    }

    int integer(const json& o, const char* key, const std::string& path, int def) {
        if (!o.contains(key)) {
            return def;
        }
        const json& v = o.at(key);
        if (!v.is_number_integer()) {
            fail(path + key, "expected an integer");
            return def;
        }
        return v.get<int>();
    }

    std::string text(const json& o, const char* key, const std::string& path, const std::string& def) {
        if (!o.contains(key)) {
            return def;
        }
        const json& v = o.at(key);
        if (!v.is_string()) {
            fail(path + key, "expected a string");
            return def;
        }
        return v.get<std::string>();
    }

    std::vector<double> numbers(const json& v, const std::string& path) {
        std::vector<double> out;
        if (!v.is_array()) {
            fail(path, "expected an array of numbers");
            return out;
        }
        for (const auto& x : v) {
            if (!x.is_number() || !std::isfinite(x.get<double>())) {
                fail(path, "expected finite numbers");
                return {};
            }
            out.push_back(x.get<double>());
        }
        return out;
    }

    std::vector<double> numbers(const json& o, const char* key, const std::string& path) {
        return o.contains(key) ? numbers(o.at(key), path + key) : std::vector<double>{};
    }

    std::vector<std::vector<double>> matrix(const json& o, const char* key, const std::string& path) {
        std::vector<std::vector<double>> out;
        if (!o.contains(key)) {
            return out;
        }
        const json& v = o.at(key);
        if (!v.is_array()) {
            fail(path + key, "expected an array of rows");
            return out;
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            out.push_back(numbers(v[i], path + key + "[" + std::to_string(i) + "]"));
        }
        for (const auto& row : out) {
            if (row.size() != out.front().size() || row.empty()) {
                fail(path + key, "rows must be nonempty and of equal length");
                return {};
            }
        }
        return out;
    }

private:
    std::vector<std::string>& diags_;
};

Vec to_vec(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat to_mat(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) {
        return Mat(0, 0);
    }
    Mat M(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return M;
}

SetConfig parse_set(Reader& rd, const json& o, const std::string& path) {
    rd.known_keys(o, path, {"type", "lower", "upper", "center", "radius", "normals", "offsets", "margin", "vertices"});
    SetConfig s;
    s.type = rd.text(o, "type", path, "box");
    s.lower = rd.numbers(o, "lower", path);
    s.upper = rd.numbers(o, "upper", path);
    s.center = rd.numbers(o, "center", path);
    s.radius = rd.number(o, "radius", path, s.type == "sv-polygon" ? 15000.0 : 1.0);
    s.normals = rd.matrix(o, "normals", path);
    s.offsets = rd.numbers(o, "offsets", path);
    s.margin = rd.number(o, "margin", path, 500.0);
    s.vertices = rd.integer(o, "vertices", path, 12);
    if (s.type == "box") {
        if (s.lower.empty() || s.lower.size() != s.upper.size()) {
            rd.fail(path + "lower", "box needs lower and upper of equal, nonzero length");
        } else {
            for (std::size_t i = 0; i < s.lower.size(); ++i) {
                if (!(s.lower[i] < s.upper[i])) {
                    rd.fail(path + "upper", "must exceed lower componentwise");
                    break;
                }
            }
        }
    } else if (s.type == "ball") {
        if (s.center.empty()) {
            rd.fail(path + "center", "ball needs a center");
        }
        if (!(s.radius > 0.0)) {
            rd.fail(path + "radius", "must be positive");
        }
    } else if (s.type == "polyhedron") {
        if (s.normals.empty() || s.normals.size() != s.offsets.size()) {
            rd.fail(path + "normals", "polyhedron needs one offset per normal row");
        }
    } else if (s.type == "sv-polygon") {
        if (!(s.radius > 0.0)) {
            rd.fail(path + "radius", "must be positive");
        }
        if (!(s.margin >= 0.0)) {
            rd.fail(path + "margin", "must be nonnegative");
        }
        if (s.vertices < 3) {
            rd.fail(path + "vertices", "need at least 3");
        }
    } else {
        rd.fail(path + "type", "unknown set type '" + s.type + "'");
    }
    return s;
}

json set_to_json(const SetConfig& s) {
    json j;
    j["type"] = s.type;
    if (s.type == "box") {
        j["lower"] = s.lower;
        j["upper"] = s.upper;
    } else if (s.type == "ball") {
        j["center"] = s.center;
        j["radius"] = s.radius;
    } else if (s.type == "polyhedron") {
        j["normals"] = s.normals;
        j["offsets"] = s.offsets;
    } else {
        j["radius"] = s.radius;
        j["margin"] = s.margin;
        j["vertices"] = s.vertices;
    }
    return j;
}

bool uses_controller(Kind k) {
    return k != Kind::RegionScan && k != Kind::PdsDemo;
}

bool uses_reference(Kind k) {
    return k == Kind::ClosedLoopRun || k == Kind::SpConsistency || k == Kind::SoftProjectionCheck;
}

// ---------------------------------------------------------------- building

struct Context {
    PlantModel plant;
    std::optional<sv::Params> sv_params;
    Mat A, B, C;  // LTI only
    std::optional<AwPiController> ctrl;
};

sv::Params build_sv_params(const PlantConfig& pc) {
    sv::Params p;
    if (pc.sv) {
        const json& o = *pc.sv;
        double* fields[] = {&p.J, &p.Dp, &p.R, &p.L, &p.m, &p.V, &p.omega_n, &p.omega_g};
        for (std::size_t i = 0; i < std::size(kSvParamNames); ++i) {
            if (o.contains(kSvParamNames[i])) {
                *fields[i] = o.at(kSvParamNames[i]).get<double>();
            }
        }
    }
    p.validate();
    return p;
}

PlantModel lti_plant(const Mat& A, const Mat& B, const Mat& C) {
    PlantModel plant;
    plant.name = "lti";
    plant.n = static_cast<int>(A.rows());
    plant.m = static_cast<int>(B.cols());
    plant.p = static_cast<int>(C.rows());
    plant.f0 = [A, B](const Vec& x, const Vec& v) { return Vec(A * x + B * v); };
    plant.g = [C](const Vec& x) { return Vec(C * x); };
    plant.jacobian_x = [A](const Vec&, const Vec&) { return A; };
    const Eigen::FullPivLU<Mat> lu(A);
    if (lu.isInvertible()) {
        plant.xi = [lu, B](const Vec& v) { return Vec(lu.solve(-(B * v))); };
    }
    return plant;
}

PlantModel scalar_plant(double linear, double cubic) {
    PlantModel plant;
    plant.name = "scalar-testbed";
    plant.n = plant.m = plant.p = 1;
    plant.f0 = [linear, cubic](const Vec& x, const Vec& v) {
        return vec({-linear * x(0) - cubic * x(0) * x(0) * x(0) + v(0)});
    };
    plant.g = [](const Vec& x) { return x; };
    plant.jacobian_x = [linear, cubic](const Vec& x, const Vec&) {
        return Mat(Mat::Constant(1, 1, -linear - 3.0 * cubic * x(0) * x(0)));
    };
    return plant;
}

sets::ConvexSet build_set(const SetConfig& s, const std::optional<sv::Params>& svp) {
    if (s.type == "box") {
        return sets::ConvexSet::box(to_vec(s.lower), to_vec(s.upper));
    }
    if (s.type == "ball") {
        return sets::ConvexSet::ball(to_vec(s.center), s.radius);
    }
    if (s.type == "polyhedron") {
        return sets::ConvexSet::polyhedron(to_mat(s.normals), to_vec(s.offsets));
    }
    if (!svp) {
        throw ConfigError("controller.U: sv-polygon needs the synchronverter plant");
    }
    return sv::sv_build_U(*svp, s.margin, s.vertices, s.radius);
}

control::StaticMap build_nmap(const ControllerConfig& cc, const Context& ctx) {
    const auto& plant = ctx.plant;
    if (cc.nmap == "identity") {
        if (plant.m != plant.p) {
            throw ConfigError("controller.nmap: identity needs m = p");
        }
        return control::identity_map(plant.p);
    }
    if (cc.nmap == "static-matrix") {
        if (ctx.sv_params) {
            return cc.matrix.empty() ? sv::static_gain_map(*ctx.sv_params)
                                     : sv::static_gain_map(*ctx.sv_params, to_mat(cc.matrix));
        }
        if (cc.matrix.empty()) {
            throw ConfigError("controller.matrix: static-matrix needs a matrix for this plant");
        }
        return control::matrix_map(to_mat(cc.matrix));
    }
    if (cc.nmap == "sv-right-inverse") {
        if (!ctx.sv_params) {
            throw ConfigError("controller.nmap: sv-right-inverse needs the synchronverter plant");
        }
        return sv::right_inverse_map(*ctx.sv_params);
    }
    if (cc.nmap == "linear-right-inverse") {
        if (plant.name != "lti") {
            throw ConfigError("controller.nmap: linear-right-inverse needs the lti plant");
        }
        auto map = control::matrix_map(steady::linear_right_inverse(steady::lti_dc_gain(ctx.A, ctx.B, ctx.C)),
                                       "linear-right-inverse");
        return map;
    }
    throw ConfigError("controller.nmap: unknown map '" + cc.nmap + "'");
}

Context build_context(const ExperimentConfig& cfg) {
    Context ctx;
    const auto& pc = cfg.plant;
    if (!cfg.has_plant) {
        return ctx;
    }
    if (pc.type == "lti") {
        ctx.A = to_mat(pc.A);
        ctx.B = to_mat(pc.B);
        ctx.C = to_mat(pc.C);
        if (ctx.A.rows() == 0 || ctx.A.rows() != ctx.A.cols() || ctx.B.rows() != ctx.A.rows() ||
            ctx.C.cols() != ctx.A.rows()) {
            throw ConfigError("plant: lti needs square A (n x n), B (n x m) and C (p x n)");
        }
        ctx.plant = lti_plant(ctx.A, ctx.B, ctx.C);
    } else if (pc.type == "scalar-testbed") {
        ctx.plant = scalar_plant(pc.linear, pc.cubic);
    } else {
        try {
            ctx.sv_params = build_sv_params(pc);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("plant.params: ") + e.what());
        }
        ctx.plant = sv::make_plant(*ctx.sv_params);
    }
    if (cfg.has_controller && uses_controller(cfg.kind)) {
        const auto& cc = cfg.controller;
        AwPiController ctrl{build_set(cc.U, ctx.sv_params), build_nmap(cc, ctx), cc.k, cc.tau_p,
                            control::IntegratorMode::Saturating, cc.soft_K};
        if (cc.mode == "classical") {
            ctrl.mode = control::IntegratorMode::Classical;
        } else if (cc.mode == "soft-projection") {
            ctrl.mode = control::IntegratorMode::SoftProjection;
        }
        try {
            control::check_controller(ctx.plant, ctrl);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("controller: ") + e.what());
        }
        ctx.ctrl = std::move(ctrl);
    }
    return ctx;
}

std::vector<control::ReferenceStep> build_schedule(const ExperimentConfig& cfg) {
    if (cfg.schedule_preset == "sv-steps") {
        return sv::sv_step_schedule();
    }
    std::vector<control::ReferenceStep> out;
    for (const auto& e : cfg.schedule) {
        out.push_back({to_vec(e.r), e.duration});
    }
    return out;
}

Vec first_reference(const ExperimentConfig& cfg) {
    if (cfg.kind == Kind::ReferenceSchedule) {
        return build_schedule(cfg).front().r;
    }
    if (!cfg.r.empty()) {
        return to_vec(cfg.r);
    }
    if (cfg.probe_preset == "sv-steps-feasible") {
        return sv::sv_step_schedule().front().r;
    }
    return cfg.probes.empty() ? Vec() : to_vec(cfg.probes.front());
}

std::pair<Vec, Vec> initial_state(const ExperimentConfig& cfg, const Context& ctx) {
    const auto& ctrl = *ctx.ctrl;
    const Vec r = first_reference(cfg);
    Vec u0;
    if (cfg.u0_policy == "explicit") {
        u0 = to_vec(cfg.u0);
    } else if (cfg.u0_policy == "preimage") {
        if (ctx.sv_params && cfg.controller.nmap == "static-matrix") {
            u0 = cfg.controller.matrix.empty() ? sv::static_gain_preimage(*ctx.sv_params, r)
                                               : sv::static_gain_preimage(*ctx.sv_params, r,
                                                                          to_mat(cfg.controller.matrix));
        } else {
            const auto maps = steady::make_steady_state_maps(ctx.plant, ctrl.nmap);
            u0 = steady::solve_preimage(maps.composed, r, ctrl.U.project(r));
        }
    } else {
        u0 = ctrl.U.project(r);
    }
    Vec x0 = cfg.x0.empty() ? steady::equilibrium_state(ctx.plant, ctrl.nmap.eval(u0)) : to_vec(cfg.x0);
    return {x0, u0};
}

// ---------------------------------------------------------------- checks

std::vector<std::string> cross_checks(const ExperimentConfig& cfg) {
    std::vector<std::string> diags;
    const bool stepping = cfg.kind != Kind::RegionScan && cfg.kind != Kind::MonotonicityScan;
    if (stepping && cfg.h > cfg.horizon) {
        diags.push_back("numerics.h: step " + io::format_number(cfg.h) + " exceeds the horizon " +
                        io::format_number(cfg.horizon));
    }
    Context ctx;
    try {
        ctx = build_context(cfg);
    } catch (const std::exception& e) {
        diags.push_back(e.what());
        return diags;
    }
    if (cfg.kind == Kind::RegionScan && !ctx.sv_params) {
        diags.push_back("plant.type: RegionScan needs the synchronverter plant");
    }
    if ((cfg.kind == Kind::RegionScan || cfg.kind == Kind::MonotonicityScan) &&
        (cfg.scan_lower.size() != 2 || cfg.scan_upper.size() != 2)) {
        diags.push_back("scan.lower/upper: a 2-D rectangle is required");
    }
    if (cfg.kind == Kind::PdsDemo) {
        try {
            const auto set = build_set(cfg.pds_set, ctx.sv_params);
            const auto q = static_cast<std::size_t>(set.dimension());
            if (cfg.pds_q.size() != q || cfg.z0.size() != q || to_mat(cfg.pds_M).rows() != set.dimension() ||
                to_mat(cfg.pds_M).cols() != set.dimension()) {
                diags.push_back("pds: M, q and z0 must match the set dimension");
            }
        } catch (const std::exception& e) {
            diags.push_back(std::string("pds.set: ") + e.what());
        }
    }
    if (!ctx.ctrl) {
        return diags;
    }
    const auto& plant = ctx.plant;
    for (const auto& msg : control::check_u_inside_domain(plant, *ctx.ctrl)) {
        if (ctx.ctrl->mode != control::IntegratorMode::Classical) {
            diags.push_back("controller.U: " + msg);
        }
    }
    auto check_r = [&](const std::vector<double>& r, const std::string& where) {
        if (static_cast<int>(r.size()) != plant.p) {
            diags.push_back(where + ": reference must have " + std::to_string(plant.p) + " entries");
        }
    };
    if (uses_reference(cfg.kind)) {
        check_r(cfg.r, "reference");
    }
    if (cfg.kind == Kind::ReferenceSchedule) {
        for (std::size_t i = 0; i < cfg.schedule.size(); ++i) {
            check_r(cfg.schedule[i].r, "schedule[" + std::to_string(i) + "].r");
        }
    }
    if (cfg.kind == Kind::GainSearch) {
        for (std::size_t i = 0; i < cfg.probes.size(); ++i) {
            check_r(cfg.probes[i], "gain.probes[" + std::to_string(i) + "]");
        }
    }
    if (cfg.u0_policy == "explicit" && static_cast<int>(cfg.u0.size()) != plant.p) {
        diags.push_back("initial.u0: must have " + std::to_string(plant.p) + " entries");
    }
    if (!cfg.x0.empty() && static_cast<int>(cfg.x0.size()) != plant.n) {
        diags.push_back("initial.x0: must have " + std::to_string(plant.n) + " entries");
    }
    return diags;
}

// ---------------------------------------------------------------- running

struct Output {
    fs::path dir;
    RunSummary& summary;

    std::string path(const std::string& name) {
        summary.manifest.push_back(name);
        return (dir / name).string();
    }
};

void note_run(RunSummary& s, const control::ClosedLoopRun& run) {
    for (const auto& seg : run.segments) {
        s.segment_terminations.push_back(control::to_string(seg.termination));
        s.final_errors.push_back(seg.final_error);
    }
    s.error_termination = s.error_termination || control::is_error(run.termination);
}

void write_segments_csv(const control::ClosedLoopRun& run, const std::string& path) {
    const auto& first = run.segments.front();
    std::vector<std::string> header{"segment", "t_start", "t_end"};
    auto add = [&](const std::string& prefix, Eigen::Index n) {
        for (const auto& c : io::indexed_columns(prefix, static_cast<int>(n))) {
            header.push_back(c);
        }
    };
    add("r", first.r.size());
    header.push_back("termination");
    header.push_back("final_error");
    add("uI", first.final_u_I.size());
    add("y", first.final_y.size());
    io::CsvBuilder csv(header);
    for (std::size_t i = 0; i < run.segments.size(); ++i) {
        const auto& s = run.segments[i];
        csv.value(static_cast<double>(i)).value(s.t_start).value(s.t_end).values(s.r);
        csv.text(control::to_string(s.termination)).value(s.final_error).values(s.final_u_I).values(s.final_y);
        csv.end_row();
    }
    csv.save(path);
}

std::vector<Vec> feasible_step_probes(const AwPiController& ctrl) {
    std::vector<Vec> out;
    for (const auto& step : sv::sv_step_schedule()) {
        if (ctrl.U.contains(step.r)) {
            out.push_back(step.r);
        }
    }
    return out;
}

void execute(const ExperimentConfig& cfg, const Context& ctx, Output& out) {
    RunSummary& s = out.summary;
    control::LoopOptions lo;
    lo.record_stride = cfg.record_stride;

    switch (cfg.kind) {
        case Kind::ClosedLoopRun: {
            const auto [x0, u0] = initial_state(cfg, ctx);
            const auto run = control::simulate_closed_loop(ctx.plant, *ctx.ctrl, to_vec(cfg.r), x0, u0, cfg.horizon,
                                                           cfg.h, lo);
            control::write_run_csv(run, out.path("run.csv"));
            control::write_run_metadata(run, *ctx.ctrl, out.path("run_meta.txt"));
            note_run(s, run);
            break;
        }
        case Kind::ReferenceSchedule: {
            const auto [x0, u0] = initial_state(cfg, ctx);
            const auto run = control::run_reference_schedule(ctx.plant, *ctx.ctrl, build_schedule(cfg), x0, u0,
                                                             cfg.h, lo);
            control::write_run_csv(run, out.path("run.csv"));
            write_segments_csv(run, out.path("segments.csv"));
            control::write_run_metadata(run, *ctx.ctrl, out.path("run_meta.txt"));
            note_run(s, run);
            s.notes.push_back("max_integrator_violation = " + io::format_number(run.max_integrator_violation));
            s.notes.push_back("min_boundary_distance = " + io::format_number(run.min_boundary_distance));
            break;
        }
        case Kind::RegionScan: {
            const auto nodes = sv::region_raster(*ctx.sv_params, to_vec(cfg.scan_lower), to_vec(cfg.scan_upper),
                                                 cfg.nx, cfg.ny);
            sv::write_region_csv(nodes, out.path("region.csv"));
            const auto a = sv::region_agreement(nodes);
            s.notes.push_back("nodes = " + std::to_string(a.total_nodes) + ", band excluded = " +
                              std::to_string(a.excluded_band));
            s.notes.push_back("stable/|Lambda|<1 agreement = " + std::to_string(a.checked_agree) + " of " +
                              std::to_string(a.checked_nodes));
            s.notes.push_back("feasible nodes stable = " + std::to_string(a.feasible_agree) + " of " +
                              std::to_string(a.feasible_nodes));
            break;
        }
        case Kind::MonotonicityScan: {
            const auto maps = steady::make_steady_state_maps(ctx.plant, ctx.ctrl->nmap);
            const auto nodes = steady::monotonicity_raster(maps.composed, to_vec(cfg.scan_lower),
                                                           to_vec(cfg.scan_upper), cfg.nx, cfg.ny);
            steady::write_monotonicity_csv(nodes, out.path("monotonicity.csv"));
            const auto res = steady::monotonicity_scan(maps.composed, ctx.ctrl->U, cfg.samples, cfg.seed);
            io::CsvBuilder csv({"u_1", "u_2"});
            for (const auto& u : res.violations) {
                csv.values(u);
                csv.end_row();
            }
            if (ctx.plant.p == 2) {
                csv.save(out.path("monotonicity_violations.csv"));
            }
            s.notes.push_back("mu_estimate over U = " + io::format_number(res.mu_estimate));
            s.notes.push_back("min symmetric-Jacobian eigenvalue over U = " + io::format_number(res.min_sym_eig));
            s.notes.push_back("violations in U = " + std::to_string(res.violations.size()));
            break;
        }
        case Kind::SpConsistency: {
            const auto [x0, u0] = initial_state(cfg, ctx);
            const auto pts = steady::sp_consistency_check(ctx.plant, *ctx.ctrl, to_vec(cfg.r), x0, u0, cfg.horizon,
                                                          cfg.h, cfg.k_list, cfg.reduced_steps);
            io::CsvBuilder csv({"k", "slow_error", "termination"});
            std::vector<double> errs;
            for (const auto& p : pts) {
                csv.value(p.k).value(p.slow_error).text(control::to_string(p.termination));
                csv.end_row();
                errs.push_back(p.slow_error);
                s.error_termination = s.error_termination || control::is_error(p.termination);
            }
            csv.save(out.path("sp_consistency.csv"));
            s.notes.push_back(std::string("slow_error non-increasing within 10%: ") +
                              (control::non_increasing_with_slack(errs) ? "yes" : "no"));
            break;
        }
        case Kind::GainSearch: {
            const auto [x0, u0] = initial_state(cfg, ctx);
            std::vector<steady::GainProbe> probes;
            std::vector<Vec> refs;
            if (cfg.probe_preset == "sv-steps-feasible") {
                refs = feasible_step_probes(*ctx.ctrl);
            } else {
                for (const auto& r : cfg.probes) {
                    refs.push_back(to_vec(r));
                }
            }
            for (const auto& r : refs) {
                probes.push_back({r, x0, u0, cfg.probe_tolerance * std::max(1.0, r.norm())});
            }
            const AwPiController base = *ctx.ctrl;
            const auto res = steady::empirical_gain_bound(
                ctx.plant,
                [&base](double k) {
                    AwPiController c = base;
                    c.k = k;
                    return c;
                },
                probes, cfg.k_list, cfg.horizon, cfg.h);
            io::CsvBuilder csv({"k", "converged", "worst_error"});
            for (const auto& t : res.tested_gains) {
                csv.value(t.k).value(t.converged ? 1.0 : 0.0).value(t.worst_error);
                csv.end_row();
            }
            csv.save(out.path("gain_search.csv"));
            s.notes.push_back("kappa_empirical = " + io::format_number(res.kappa_empirical));
            s.notes.push_back(std::string("monotone over the grid: ") + (res.monotone ? "yes" : "no"));
            s.notes.push_back("probes: " + res.probe_description);
            break;
        }
        case Kind::SoftProjectionCheck: {
            const auto [x0, u0] = initial_state(cfg, ctx);
            AwPiController base = *ctx.ctrl;
            base.mode = control::IntegratorMode::Saturating;
            const auto pts = control::soft_projection_convergence_check(ctx.plant, base, to_vec(cfg.r), x0, u0,
                                                                        cfg.horizon, cfg.h, cfg.K_list);
            io::CsvBuilder csv({"K", "sup_error"});
            std::vector<double> errs;
            for (const auto& p : pts) {
                csv.value(p.K).value(p.sup_error);
                csv.end_row();
                errs.push_back(p.sup_error);
            }
            csv.save(out.path("soft_projection.csv"));
            s.notes.push_back(std::string("sup_error non-increasing within 10%: ") +
                              (control::non_increasing_with_slack(errs) ? "yes" : "no"));
            break;
        }
        case Kind::PdsDemo: {
            const auto set = build_set(cfg.pds_set, ctx.sv_params);
            const Mat M = to_mat(cfg.pds_M);
            const Vec q = to_vec(cfg.pds_q);
            pds::VectorField field{set.dimension(), [M, q](const Vec& z) { return Vec(M * z + q); },
                                   [M](const Vec&) { return M; }};
            const auto traj = pds::simulate_pds(set, field, to_vec(cfg.z0), cfg.horizon, cfg.h);
            pds::write_trajectory_csv(traj, out.path("pds.csv"));
            s.segment_terminations.push_back(traj.termination == pds::PdsTermination::ReachedHorizon ? "ReachedHorizon"
                                             : traj.termination == pds::PdsTermination::EquilibriumDetected
                                                 ? "EquilibriumDetected"
                                                 : "StepFailure");
            s.error_termination = traj.termination == pds::PdsTermination::StepFailure;
            s.notes.push_back("max_violation = " + io::format_number(traj.max_violation));
            s.notes.push_back("entry_time = " + io::format_number(traj.entry_time));
            break;
        }
    }
}

void write_summary(const ExperimentConfig& cfg, const RunSummary& s, const fs::path& dir) {
    std::ostringstream o;
    o << "kind = " << s.kind << '\n';
    o << "name = " << cfg.name << '\n';
    o << "config_hash = " << s.config_hash << '\n';
    o << "seed = " << cfg.seed << '\n';
    o << "status = " << (s.error_termination ? "error-termination" : "ok") << '\n';
    char wall[64];
    std::snprintf(wall, sizeof wall, "%.3f", s.wall_clock_seconds);
    o << "wall_clock_seconds = " << wall << '\n';
    for (std::size_t i = 0; i < s.segment_terminations.size(); ++i) {
        o << "segment." << i << " = " << s.segment_terminations[i];
        if (i < s.final_errors.size()) {
            o << " final_error=" << io::format_number(s.final_errors[i]);
        }
        o << '\n';
    }
    for (const auto& n : s.notes) {
        o << "note = " << n << '\n';
    }
    o << "manifest:\n";
    for (const auto& f : s.manifest) {
        o << "  " << f << '\n';
    }
    io::write_file_atomic((dir / "summary.txt").string(), o.str());
}

}  // namespace

std::string to_string(Kind k) {
    for (const auto& [kind, name] : kKindNames) {
        if (kind == k) {
            return name;
        }
    }
    return "Unknown";
}

ExperimentConfig parse_config(const json& j, std::vector<std::string>& diags) {
    Reader rd(diags);
    ExperimentConfig cfg;
    if (!j.is_object()) {
        rd.fail("config", "top level must be an object");
        return cfg;
    }
    rd.known_keys(j, "", {"kind", "name", "seed", "output", "plant", "controller", "numerics", "initial",
                          "reference", "schedule", "scan", "sp", "gain", "soft", "pds"});

    const std::string kind = rd.text(j, "kind", "", "");
    bool found = false;
    for (const auto& [k, name] : kKindNames) {
        if (name == kind) {
            cfg.kind = k;
            found = true;
        }
    }
    if (!found) {
        rd.fail("kind", kind.empty() ? "missing experiment kind" : "unknown experiment kind '" + kind + "'");
    }
    cfg.name = rd.text(j, "name", "", "");
    if (j.contains("seed")) {
        if (j.at("seed").is_number_unsigned()) {
            cfg.seed = j.at("seed").get<std::uint64_t>();
        } else {
            rd.fail("seed", "expected a nonnegative integer");
        }
    }
    cfg.output = rd.text(j, "output", "", "out");

    cfg.has_plant = j.contains("plant");
    if (const json* p = rd.object(j, "plant", "", cfg.kind != Kind::PdsDemo)) {
        rd.known_keys(*p, "plant.", {"type", "A", "B", "C", "linear", "cubic", "params"});
        cfg.plant.type = rd.text(*p, "type", "plant.", "lti");
        cfg.plant.A = rd.matrix(*p, "A", "plant.");
        cfg.plant.B = rd.matrix(*p, "B", "plant.");
        cfg.plant.C = rd.matrix(*p, "C", "plant.");
        cfg.plant.linear = rd.number(*p, "linear", "plant.", 1.0);
        cfg.plant.cubic = rd.number(*p, "cubic", "plant.", 0.0);
        if (const json* sp = rd.object(*p, "params", "plant.", false)) {
            std::set<std::string> allowed(std::begin(kSvParamNames), std::end(kSvParamNames));
            for (const auto& [key, value] : sp->items()) {
                if (!allowed.count(key)) {
                    rd.fail("plant.params." + key, "unknown field");
                } else if (!value.is_number() || !(value.get<double>() > 0.0)) {
                    rd.fail("plant.params." + key, "must be a positive number");
                }
            }
            cfg.plant.sv = *sp;
        }
        if (cfg.plant.type != "lti" && cfg.plant.type != "scalar-testbed" && cfg.plant.type != "synchronverter") {
            rd.fail("plant.type", "unknown plant '" + cfg.plant.type + "'");
        }
        if (cfg.plant.type == "lti" && (cfg.plant.A.empty() || cfg.plant.B.empty() || cfg.plant.C.empty())) {
            rd.fail("plant", "lti needs A, B and C");
        }
    }

    cfg.has_controller = j.contains("controller");
    if (uses_controller(cfg.kind) || cfg.has_controller) {
        if (const json* c = rd.object(j, "controller", "", uses_controller(cfg.kind))) {
            auto& cc = cfg.controller;
            rd.known_keys(*c, "controller.", {"mode", "k", "tau_p", "soft_K", "nmap", "matrix", "U"});
            cc.mode = rd.text(*c, "mode", "controller.", "saturating");
            cc.k = rd.number(*c, "k", "controller.", 1.0);
            cc.tau_p = rd.number(*c, "tau_p", "controller.", 0.0);
            cc.soft_K = rd.number(*c, "soft_K", "controller.", 1e-2);
            cc.nmap = rd.text(*c, "nmap", "controller.", "identity");
            cc.matrix = rd.matrix(*c, "matrix", "controller.");
            if (const json* u = rd.object(*c, "U", "controller.", true)) {
                cc.U = parse_set(rd, *u, "controller.U.");
            }
            if (cc.mode != "saturating" && cc.mode != "classical" && cc.mode != "soft-projection") {
                rd.fail("controller.mode", "unknown mode '" + cc.mode + "'");
            }
            if (!(cc.k > 0.0)) {
                rd.fail("controller.k", "must be positive");
            }
            if (!(cc.tau_p >= 0.0)) {
                rd.fail("controller.tau_p", "must be nonnegative");
            }
            if (!(cc.soft_K > 0.0)) {
                rd.fail("controller.soft_K", "must be positive");
            }
            if (cc.nmap != "identity" && cc.nmap != "static-matrix" && cc.nmap != "sv-right-inverse" &&
                cc.nmap != "linear-right-inverse") {
                rd.fail("controller.nmap", "unknown map '" + cc.nmap + "'");
            }
        }
    }

    if (const json* n = rd.object(j, "numerics", "", false)) {
        rd.known_keys(*n, "numerics.", {"h", "horizon", "record_stride"});
        cfg.h = rd.number(*n, "h", "numerics.", cfg.h);
        cfg.horizon = rd.number(*n, "horizon", "numerics.", cfg.horizon);
        cfg.record_stride = rd.integer(*n, "record_stride", "numerics.", 1);
    }
    if (!(cfg.h > 0.0)) {
        rd.fail("numerics.h", "must be positive");
    }
    if (!(cfg.horizon > 0.0)) {
        rd.fail("numerics.horizon", "must be positive");
    }
    if (cfg.record_stride < 1) {
        rd.fail("numerics.record_stride", "must be at least 1");
    }

    if (const json* i = rd.object(j, "initial", "", false)) {
        rd.known_keys(*i, "initial.", {"u0_policy", "u0", "x0"});
        cfg.u0_policy = rd.text(*i, "u0_policy", "initial.", i->contains("u0") ? "explicit" : "project-reference");
        cfg.u0 = rd.numbers(*i, "u0", "initial.");
        cfg.x0 = rd.numbers(*i, "x0", "initial.");
    }
    if (cfg.u0_policy != "project-reference" && cfg.u0_policy != "preimage" && cfg.u0_policy != "explicit") {
        rd.fail("initial.u0_policy", "unknown policy '" + cfg.u0_policy + "'");
    }
    if (cfg.u0_policy == "explicit" && cfg.u0.empty()) {
        rd.fail("initial.u0", "explicit policy needs u0");
    }

    if (j.contains("reference")) {
        cfg.r = rd.numbers(j.at("reference"), "reference");
    } else if (uses_reference(cfg.kind)) {
        rd.fail("reference", "missing reference");
    }

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        if (s.is_string()) {
            cfg.schedule_preset = s.get<std::string>();
            if (cfg.schedule_preset != "sv-steps") {
                rd.fail("schedule", "unknown preset '" + cfg.schedule_preset + "'");
            }
        } else if (s.is_array()) {
            for (std::size_t i = 0; i < s.size(); ++i) {
                const std::string path = "schedule[" + std::to_string(i) + "].";
                if (!s[i].is_object()) {
                    rd.fail(path, "expected an object");
                    continue;
                }
                rd.known_keys(s[i], path, {"r", "duration"});
                ScheduleEntry e{rd.numbers(s[i], "r", path), rd.number(s[i], "duration", path, 0.0)};
                if (!(e.duration > 0.0)) {
                    rd.fail(path + "duration", "must be positive");
                }
                cfg.schedule.push_back(std::move(e));
            }
        } else {
            rd.fail("schedule", "expected a preset name or a list");
        }
    }
    if (cfg.kind == Kind::ReferenceSchedule && cfg.schedule.empty() && cfg.schedule_preset.empty()) {
        rd.fail("schedule", "ReferenceSchedule needs a nonempty schedule");
    }

    if (const json* s = rd.object(j, "scan", "", cfg.kind == Kind::RegionScan || cfg.kind == Kind::MonotonicityScan)) {
        rd.known_keys(*s, "scan.", {"lower", "upper", "nx", "ny", "samples"});
        cfg.scan_lower = rd.numbers(*s, "lower", "scan.");
        cfg.scan_upper = rd.numbers(*s, "upper", "scan.");
        cfg.nx = rd.integer(*s, "nx", "scan.", 2);
        cfg.ny = rd.integer(*s, "ny", "scan.", 2);
        cfg.samples = rd.integer(*s, "samples", "scan.", 200);
        if (cfg.nx < 2 || cfg.ny < 2) {
            rd.fail("scan.nx", "nx and ny must be at least 2");
        }
        if (cfg.samples < 2) {
            rd.fail("scan.samples", "must be at least 2");
        }
    }

    auto positive_list = [&](const std::vector<double>& v, const std::string& path) {
        if (v.empty()) {
            rd.fail(path, "must be a nonempty list");
        }
        for (double x : v) {
            if (!(x > 0.0)) {
                rd.fail(path, "entries must be positive");
                break;
            }
        }
    };
    if (const json* s = rd.object(j, "sp", "", cfg.kind == Kind::SpConsistency)) {
        rd.known_keys(*s, "sp.", {"k_list", "reduced_steps"});
        cfg.k_list = rd.numbers(*s, "k_list", "sp.");
        cfg.reduced_steps = rd.integer(*s, "reduced_steps", "sp.", 20000);
        positive_list(cfg.k_list, "sp.k_list");
        if (cfg.reduced_steps < 1) {
            rd.fail("sp.reduced_steps", "must be positive");
        }
    }
    if (const json* g = rd.object(j, "gain", "", cfg.kind == Kind::GainSearch)) {
        rd.known_keys(*g, "gain.", {"k_grid", "probes", "tolerance"});
        cfg.k_list = rd.numbers(*g, "k_grid", "gain.");
        positive_list(cfg.k_list, "gain.k_grid");
        cfg.probe_tolerance = rd.number(*g, "tolerance", "gain.", 1e-6);
        if (g->contains("probes") && g->at("probes").is_string()) {
            cfg.probe_preset = g->at("probes").get<std::string>();
            if (cfg.probe_preset != "sv-steps-feasible") {
                rd.fail("gain.probes", "unknown preset '" + cfg.probe_preset + "'");
            }
        } else {
            cfg.probes = rd.matrix(*g, "probes", "gain.");
            if (cfg.probes.empty()) {
                rd.fail("gain.probes", "need at least one probe reference");
            }
        }
        if (!(cfg.probe_tolerance > 0.0)) {
            rd.fail("gain.tolerance", "must be positive");
        }
    }
    if (const json* s = rd.object(j, "soft", "", cfg.kind == Kind::SoftProjectionCheck)) {
        rd.known_keys(*s, "soft.", {"K_list"});
        cfg.K_list = rd.numbers(*s, "K_list", "soft.");
        positive_list(cfg.K_list, "soft.K_list");
    }
    if (const json* p = rd.object(j, "pds", "", cfg.kind == Kind::PdsDemo)) {
        rd.known_keys(*p, "pds.", {"set", "M", "q", "z0"});
        if (const json* s = rd.object(*p, "set", "pds.", true)) {
            cfg.pds_set = parse_set(rd, *s, "pds.set.");
        }
        cfg.pds_M = rd.matrix(*p, "M", "pds.");
        cfg.pds_q = rd.numbers(*p, "q", "pds.");
        cfg.z0 = rd.numbers(*p, "z0", "pds.");
    }
    return cfg;
}

ExperimentConfig parse_config(const json& j) {
    std::vector<std::string> diags;
    auto cfg = parse_config(j, diags);
    if (!diags.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& d : diags) {
            msg += "\n  " + d;
        }
        throw ConfigError(msg);
    }
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    j["kind"] = to_string(cfg.kind);
    j["name"] = cfg.name;
    j["seed"] = cfg.seed;
    j["output"] = cfg.output;

    if (cfg.has_plant) {
        json p;
        p["type"] = cfg.plant.type;
        if (cfg.plant.type == "lti") {
            p["A"] = cfg.plant.A;
            p["B"] = cfg.plant.B;
            p["C"] = cfg.plant.C;
        } else if (cfg.plant.type == "scalar-testbed") {
            p["linear"] = cfg.plant.linear;
            p["cubic"] = cfg.plant.cubic;
        }
        if (cfg.plant.sv) {
            p["params"] = *cfg.plant.sv;
        }
        j["plant"] = p;
    }

    if (cfg.has_controller || uses_controller(cfg.kind)) {
        const auto& cc = cfg.controller;
        json c;
        c["mode"] = cc.mode;
        c["k"] = cc.k;
        c["tau_p"] = cc.tau_p;
        c["soft_K"] = cc.soft_K;
        c["nmap"] = cc.nmap;
        if (!cc.matrix.empty()) {
            c["matrix"] = cc.matrix;
        }
        c["U"] = set_to_json(cc.U);
        j["controller"] = c;
    }
    j["numerics"] = {{"h", cfg.h}, {"horizon", cfg.horizon}, {"record_stride", cfg.record_stride}};
    json init;
    init["u0_policy"] = cfg.u0_policy;
    if (!cfg.u0.empty()) {
        init["u0"] = cfg.u0;
    }
    if (!cfg.x0.empty()) {
        init["x0"] = cfg.x0;
    }
    j["initial"] = init;
    if (!cfg.r.empty()) {
        j["reference"] = cfg.r;
    }
    if (!cfg.schedule_preset.empty()) {
        j["schedule"] = cfg.schedule_preset;
    } else if (!cfg.schedule.empty()) {
        json s = json::array();
        for (const auto& e : cfg.schedule) {
            s.push_back({{"r", e.r}, {"duration", e.duration}});
        }
        j["schedule"] = s;
    }
    if (cfg.kind == Kind::RegionScan || cfg.kind == Kind::MonotonicityScan) {
        j["scan"] = {{"lower", cfg.scan_lower}, {"upper", cfg.scan_upper}, {"nx", cfg.nx}, {"ny", cfg.ny},
                     {"samples", cfg.samples}};
    }
    if (cfg.kind == Kind::SpConsistency) {
        j["sp"] = {{"k_list", cfg.k_list}, {"reduced_steps", cfg.reduced_steps}};
    }
    if (cfg.kind == Kind::GainSearch) {
        json g{{"k_grid", cfg.k_list}, {"tolerance", cfg.probe_tolerance}};
        if (!cfg.probe_preset.empty()) {
            g["probes"] = cfg.probe_preset;
        } else {
            g["probes"] = cfg.probes;
        }
        j["gain"] = g;
    }
    if (cfg.kind == Kind::SoftProjectionCheck) {
        j["soft"] = {{"K_list", cfg.K_list}};
    }
    if (cfg.kind == Kind::PdsDemo) {
        j["pds"] = {{"set", set_to_json(cfg.pds_set)}, {"M", cfg.pds_M}, {"q", cfg.pds_q}, {"z0", cfg.z0}};
    }
    return j;
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::string> validate_config(const json& j) {
    std::vector<std::string> diags;
    const auto cfg = parse_config(j, diags);
    if (!diags.empty()) {
        return diags;
    }
    return cross_checks(cfg);
}

std::vector<std::string> validate_config(const std::string& path) {
    return validate_config(load_json(path));
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto diags = cross_checks(cfg);
    if (!diags.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& d : diags) {
            msg += "\n  " + d;
        }
        throw ConfigError(msg);
    }
    const Context ctx = build_context(cfg);
    RunSummary summary;
    summary.kind = to_string(cfg.kind);
    summary.config_hash = config_hash(cfg);
    Output out{fs::path(out_dir), summary};
    std::error_code ec;
    fs::create_directories(out.dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    }
    execute(cfg, ctx, out);
    summary.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_summary(cfg, summary, out.dir);
    return summary;
}

RunSummary run_experiment(const std::string& config_path, const RunOverrides& overrides) {
    ExperimentConfig cfg = parse_config(load_json(config_path));
    if (overrides.seed) {
        cfg.seed = *overrides.seed;
    }
    if (overrides.out_dir) {
        cfg.output = *overrides.out_dir;
    }
    return run_experiment(cfg, cfg.output);
}

}  // namespace awpi::exp
