#include "awpi/experiment.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace awpi;
using namespace awpi::exp;
namespace fs = std::filesystem;

namespace {

fs::path config_dir() {
    const char* d = std::getenv("AWPI_CONFIG_DIR");
    return d ? fs::path(d) : fs::path("configs");
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("awpi_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int cli(const std::string& args) {
    const char* exe = std::getenv("AWPI_CLI");
    REQUIRE(exe != nullptr);
    const std::string cmd = std::string(exe) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v) {
        if (s.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("every bundled config validates") {
    int count = 0;
    for (const auto& entry : fs::directory_iterator(config_dir())) {
        if (entry.path().extension() != ".json") continue;
        ++count;
        INFO(entry.path().string());
        CHECK(validate_config(entry.path().string()).empty());
    }
    CHECK(count >= 10);
}

TEST_CASE("schema diagnostics name the offending field") {
    auto j = load_json((config_dir() / "lti_tracking.json").string());
    j["numerics"]["h"] = -0.01;
    CHECK(any_contains(validate_config(j), "numerics.h"));

    auto k = load_json((config_dir() / "lti_tracking.json").string());
    k["controller"]["bogus"] = 1;
    CHECK(any_contains(validate_config(k), "controller.bogus"));

    auto h = load_json((config_dir() / "lti_tracking.json").string());
    h["numerics"]["h"] = 500.0;
    CHECK(any_contains(validate_config(h), "numerics.h"));

    std::vector<std::string> diags;
    (void)parse_config(json{{"kind", "Nonsense"}}, diags);
    CHECK(any_contains(diags, "kind"));
    CHECK_THROWS_AS(parse_config(json{{"kind", "Nonsense"}}), ConfigError);
}

TEST_CASE("a U that leaves the domain of N is reported") {
    auto j = load_json((config_dir() / "sv_schedule_saturating.json").string());
    j["controller"]["U"] = json{{"type", "box"}, {"lower", {-40000, -20000}}, {"upper", {0, 0}}};
    CHECK(any_contains(validate_config(j), "U point"));
}

TEST_CASE("config round trip and hash") {
    for (const char* name : {"sv_schedule_saturating.json", "gain_search_lag.json", "pds_demo.json", "sp_lti.json"}) {
        const auto cfg = parse_config(load_json((config_dir() / name).string()));
        const auto again = parse_config(to_json(cfg));
        CHECK(to_json(again) == to_json(cfg));
        CHECK(config_hash(again) == config_hash(cfg));
        CHECK(config_hash(cfg).size() == 16);
    }
    auto a = parse_config(load_json((config_dir() / "lti_tracking.json").string()));
    auto b = a;
    b.k_list = {0.5};
    b.controller.k = 0.2;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("runs are deterministic") {
    const auto cfg = parse_config(load_json((config_dir() / "pds_demo.json").string()));
    const auto d1 = scratch("pds1");
    const auto d2 = scratch("pds2");
    const auto s1 = run_experiment(cfg, d1.string());
    const auto s2 = run_experiment(cfg, d2.string());
    CHECK(s1.config_hash == s2.config_hash);
    REQUIRE(fs::exists(d1 / "pds.csv"));
    CHECK(slurp(d1 / "pds.csv") == slurp(d2 / "pds.csv"));
    CHECK(fs::exists(d1 / "summary.txt"));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("closed-loop experiment writes run files") {
    auto cfg = parse_config(load_json((config_dir() / "lti_saturated.json").string()));
    const auto d = scratch("lti_sat");
    const auto s = run_experiment(cfg, d.string());
    CHECK_FALSE(s.error_termination);
    CHECK(fs::exists(d / "run.csv"));
    CHECK(fs::exists(d / "run_meta.txt"));
    REQUIRE(s.final_errors.size() == 1);
    CHECK(std::abs(s.final_errors[0] - 1.0) < 1e-3);
    fs::remove_all(d);
}

TEST_CASE("command-line exit codes") {
    const auto out = scratch("cli");
    CHECK(cli("validate " + (config_dir() / "lti_tracking.json").string()) == kExitOk);
    CHECK(cli("run " + (config_dir() / "lti_tracking.json").string() + " --out " + (out / "lti").string()) == kExitOk);
    CHECK(fs::exists(out / "lti" / "run.csv"));

    CHECK(cli("validate " + (out / "missing.json").string()) == kExitConfig);
    CHECK(cli("run " + (out / "missing.json").string()) == kExitConfig);
    {
        std::ofstream bad(out / "bad.json");
        bad << "{ not json";
    }
    CHECK(cli("run " + (out / "bad.json").string()) == kExitConfig);
    CHECK(cli("frobnicate") == kExitConfig);

    {
        std::ofstream blocker(out / "blocker");
        blocker << "x";
    }
    CHECK(cli("run " + (config_dir() / "pds_demo.json").string() + " --out " + (out / "blocker" / "sub").string()) ==
          kExitIo);

    CHECK(cli("run " + (config_dir() / "sv_schedule_classical.json").string() + " --out " + (out / "cls").string()) ==
          kExitErrorTermination);

    const char* exe = std::getenv("AWPI_CLI");
    const std::string cmd = std::string(exe) + " --help > " + (out / "help.txt").string() + " 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(slurp(out / "help.txt").find("Exit codes") != std::string::npos);
    fs::remove_all(out);
}
