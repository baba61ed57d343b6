#include "awpi/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

const char* const kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  2  configuration error (unreadable file, bad JSON, failed validation)\n"
    "  3  simulation or library error (Newton failure, infeasible reference, ...)\n"
    "  4  I/O error while writing outputs\n"
    "  5  run finished but a trajectory ended in an error termination\n"
    "     (StateBlowup, BoundaryApproach or LeftRegionOfInterest)\n";

}  // namespace

int main(int argc, char** argv) {
    using namespace awpi;
    CLI::App app{"Anti-windup PI experiments on projected dynamical systems"};
    app.footer(kExitCodes);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;

    auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
    run->add_option("config", config_path, "Config file")->required();
    auto* out_opt = run->add_option("--out", out_dir, "Output directory (overrides the config)");
    auto* seed_opt = run->add_option("--seed", seed, "Seed (overrides the config)");

    auto* validate = app.add_subcommand("validate", "Check a config without running it");
    validate->add_option("config", config_path, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exp::kExitConfig;
    }

    try {
        if (validate->parsed()) {
            const auto diags = exp::validate_config(config_path);
            for (const auto& d : diags) {
                std::cout << d << '\n';
            }
            if (diags.empty()) {
                std::cout << "ok\n";
                return exp::kExitOk;
            }
            return exp::kExitConfig;
        }
        exp::RunOverrides ov;
        if (*out_opt) {
            ov.out_dir = out_dir;
        }
        if (*seed_opt) {
            ov.seed = seed;
        }
        const auto summary = exp::run_experiment(config_path, ov);
        std::cout << summary.kind << " finished in " << summary.wall_clock_seconds << " s, config "
                  << summary.config_hash << '\n';
        for (const auto& f : summary.manifest) {
            std::cout << "  wrote " << f << '\n';
        }
        for (const auto& n : summary.notes) {
            std::cout << "  " << n << '\n';
        }
        if (summary.error_termination) {
            std::cerr << "error termination in at least one trajectory\n";
            return exp::kExitErrorTermination;
        }
        return exp::kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return exp::kExitConfig;
    } catch (const IoError& e) {
        std::cerr << e.what() << '\n';
        return exp::kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << e.what() << '\n';
        return exp::kExitIo;
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return exp::kExitSimulation;
    }
}
