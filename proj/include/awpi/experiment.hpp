#pragma once

#include "awpi/control_loop.hpp"
#include "awpi/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace awpi::exp {

using json = nlohmann::json;

enum class Kind {
    ClosedLoopRun,
    ReferenceSchedule,
    RegionScan,
    MonotonicityScan,
    SpConsistency,
    GainSearch,
    SoftProjectionCheck,
    PdsDemo
};

[[nodiscard]] std::string to_string(Kind k);

struct SetConfig {
    std::string type = "box";  // box | ball | polyhedron | sv-polygon
    std::vector<double> lower, upper;
    std::vector<double> center;
    double radius = 1.0;
    std::vector<std::vector<double>> normals;
    std::vector<double> offsets;
    double margin = 500.0;  // sv-polygon
    int vertices = 12;      // sv-polygon
};

struct PlantConfig {
    std::string type = "lti";  // lti | scalar-testbed | synchronverter
    std::vector<std::vector<double>> A, B, C;
    double linear = 1.0;  // scalar testbed: x' = -linear x - cubic x^3 + v
    double cubic = 0.0;
    std::optional<json> sv;  // synchronverter parameter overrides
};

struct ControllerConfig {
    std::string mode = "saturating";  // saturating | classical | soft-projection
    double k = 1.0;
    double tau_p = 0.0;
    double soft_K = 1e-2;
    std::string nmap = "identity";  // identity | static-matrix | sv-right-inverse | linear-right-inverse
    std::vector<std::vector<double>> matrix;
    SetConfig U;
};

struct ScheduleEntry {
    std::vector<double> r;
    double duration = 0.0;
};

struct ExperimentConfig {
    Kind kind = Kind::ClosedLoopRun;
    std::string name;
    std::uint64_t seed = 1;
    std::string output = "out";
    PlantConfig plant;
    bool has_plant = true;  // optional for PdsDemo only
    ControllerConfig controller;
    bool has_controller = true;

    // numerics
    double h = 1e-3;
    double horizon = 10.0;
    int record_stride = 1;

    // initial condition: policy "project-reference" | "preimage" | "explicit"
    std::string u0_policy = "project-reference";
    std::vector<double> u0;
    std::vector<double> x0;  // empty: Xi(N(u0))

    std::vector<double> r;
    std::string schedule_preset;  // "sv-steps" or empty
    std::vector<ScheduleEntry> schedule;

    // scans
    std::vector<double> scan_lower, scan_upper;
    int nx = 2, ny = 2;
    int samples = 200;

    std::vector<double> k_list;  // SpConsistency, GainSearch (grid)
    int reduced_steps = 20000;
    std::vector<double> K_list;  // SoftProjectionCheck
    std::string probe_preset;    // GainSearch: "sv-steps-feasible" or empty
    std::vector<std::vector<double>> probes;
    double probe_tolerance = 1e-6;

    // PdsDemo: F(z) = M z + q on the set
    SetConfig pds_set;
    std::vector<std::vector<double>> pds_M;
    std::vector<double> pds_q;
    std::vector<double> z0;
};

/// Schema check and conversion; problems are appended to `diagnostics`.
[[nodiscard]] ExperimentConfig parse_config(const json& j, std::vector<std::string>& diagnostics);
/// Throws ConfigError listing every diagnostic.
[[nodiscard]] ExperimentConfig parse_config(const json& j);
[[nodiscard]] json to_json(const ExperimentConfig& cfg);
[[nodiscard]] json load_json(const std::string& path);

/// 64-bit FNV-1a of the canonical serialization.
[[nodiscard]] std::string config_hash(const ExperimentConfig& cfg);

/// Schema plus cross-field checks (U inside script-U, h vs. horizon). Empty
/// result means valid. Throws ConfigError when the file cannot be read or
/// parsed as JSON.
[[nodiscard]] std::vector<std::string> validate_config(const std::string& path);
[[nodiscard]] std::vector<std::string> validate_config(const json& j);

struct RunSummary {
    std::string kind;
    std::string config_hash;
    std::vector<std::string> segment_terminations;
    std::vector<double> final_errors;
    double wall_clock_seconds = 0.0;
    std::vector<std::string> manifest;  // file names relative to the output directory
    std::vector<std::string> notes;
    bool error_termination = false;
};

struct RunOverrides {
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
};

/// Runs one experiment and writes its CSV files and summary.txt into the
/// output directory.
[[nodiscard]] RunSummary run_experiment(const std::string& config_path, const RunOverrides& overrides = {});
[[nodiscard]] RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitSimulation = 3,
    kExitIo = 4,
    kExitErrorTermination = 5
};

}  // namespace awpi::exp
