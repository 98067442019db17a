#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "benchmarks.hpp"
#include "cli.hpp"

using namespace tfc;
using namespace tfc::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("tfc_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name, const std::string& content) const {
        const auto p = path / name;
        std::ofstream(p) << content;
        return p.string();
    }
    std::string out() const { return (path / "out").string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_files(const fs::path& p) {
    if (!fs::exists(p)) return 0;
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(p), fs::directory_iterator()));
}

}  // namespace

TEST_CASE("csv round trip is exact") {
    TempDir d;
    Table t;
    t.header = {"t", "a", "b"};
    t.rows = {{0.0, -1.0 / 3.0, 1e-300}, {1e300, 2.5e-17, -0.0}, {3.0, 123456789.123456789, 7.0}};
    const auto p = (d.path / "t.csv").string();
    write_csv(p, t);
    const Table r = read_csv(p);
    CHECK(r.header == t.header);
    REQUIRE(r.rows.size() == t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t j = 0; j < t.header.size(); ++j) CHECK(r.rows[i][j] == t.rows[i][j]);
    const std::string text = slurp(p);
    CHECK(text.back() == '\n');
    CHECK(text.find("0.3333333333333333") != std::string::npos);
    CHECK(text.rfind("t,a,b\n", 0) == 0);

    CHECK_THROWS_AS(read_csv(d.file("ragged.csv", "a,b\n1,2\n3\n")), SchemaError);
    CHECK_THROWS_AS(read_csv(d.file("comma.csv", "a\n1,5\n")), SchemaError);
    CHECK_THROWS_AS(read_csv(d.file("word.csv", "a\nabc\n")), SchemaError);
}

TEST_CASE("lane-emden config writes converged artifacts") {
    TempDir d;
    const auto cfg = d.file("c.json", R"({"problem": "lane_emden", "params": {"a": 0}, "solver": {"m": 2},
        "output": {"dir": ")" + d.out() + R"(", "prefix": "le"}})");
    std::ostringstream log;
    REQUIRE(run_solve(cfg, log) == kConverged);
    const Table sol = read_csv(d.out() + "/le_solution.csv");
    double worst = 0.0;
    for (double r : sol.col("residual")) worst = std::max(worst, std::abs(r));
    CHECK(worst <= 1e-12);
    for (std::size_t k = 0; k < sol.rows.size(); ++k) {
        const double x = sol.rows[k][0];
        CHECK(std::abs(sol.rows[k][1] - (1 - x * x / 6)) <= 1e-12);
    }
    const Table rep = read_csv(d.out() + "/le_report.csv");
    CHECK(rep.col("converged")[0] == 1.0);
    CHECK(fs::exists(d.out() + "/le_summary.json"));
    CHECK(run_verify(d.out() + "/le_solution.csv", cfg, log) == kConverged);
}

TEST_CASE("schema errors exit 2 without artifacts") {
    TempDir d;
    const std::string out = R"("output": {"dir": ")" + d.out() + R"("})";
    const std::vector<std::string> bad = {
        R"({"problem": "bvp", "solver": {"mm": 3}, )" + out + "}",
        R"({"problem": "bvp", "colour": 1, )" + out + "}",
        R"({"problem": "nope", )" + out + "}",
        R"({"problem": "lane_emden", "params": {"a": "zero"}, )" + out + "}",
        R"({"problem": "lane_emden", "params": {"a": -1}, )" + out + "}",
        R"({"problem": "eol", "params": {"r0": [1, 2]}, )" + out + "}",
        R"({"problem": "fol", "params": {"program": "min_max", "guess": {"t1": 40, "tf": 30}}, )" + out + "}",
        R"({"problem": "fol", "params": {"program": "min_max", "guess": {"t0": 1}}, )" + out + "}",
        R"({"problem": "lyapunov", "params": {"delta_c": -0.1}, )" + out + "}",
        R"({"problem": "convection_diffusion", )" + out + "}",
        R"({"problem": "bvp", "solver": {"N": 1}, )" + out + "}",
        R"({"problem": "bvp", )",
        R"([1, 2, 3])",
    };
    for (const auto& text : bad) {
        CAPTURE(text);
        std::ostringstream log;
        CHECK(run_solve(d.file("bad.json", text), log) == kSchemaError);
        CHECK(log.str().find("schema error") != std::string::npos);
        CHECK(count_files(d.out()) == 0);
    }
    std::ostringstream log;
    CHECK(run_solve((d.path / "missing.json").string(), log) == kSchemaError);
    CHECK(run_montecarlo(d.file("mc.json", R"({"trials": 0})"), log) == kSchemaError);
    CHECK(run_montecarlo(d.file("mc.json", R"({"trials": 3, "seed": -4})"), log) == kSchemaError);
    CHECK(count_files(d.out()) == 0);
}

TEST_CASE("non-convergence exits 1 with artifacts") {
    TempDir d;
    const auto cfg = d.file("c.json", R"({"problem": "bvp", "solver": {"m": 22, "max_iter": 1},
        "output": {"dir": ")" + d.out() + R"(", "prefix": "b"}})");
    std::ostringstream log;
    CHECK(run_solve(cfg, log) == kNotConverged);
    CHECK(fs::exists(d.out() + "/b_solution.csv"));
    CHECK(read_csv(d.out() + "/b_report.csv").col("converged")[0] == 0.0);
}

TEST_CASE("verify detects a tampered trajectory") {
    TempDir d;
    const auto cfg = d.file("c.json", R"({"problem": "eol", "params": {"gamma": 100},
        "output": {"dir": ")" + d.out() + R"(", "prefix": "e"}})");
    std::ostringstream log;
    REQUIRE(run_solve(cfg, log) == kConverged);
    const auto path = d.out() + "/e_solution.csv";
    CHECK(run_verify(path, cfg, log) == kConverged);

    Table t = read_csv(path);
    t.rows[t.rows.size() / 2][t.column("u_x")] += 1.0;
    const auto bad = (d.path / "tampered.csv").string();
    write_csv(bad, t);
    CHECK(run_verify(bad, cfg, log) == kNotConverged);

    Table missing = t;
    missing.header[1] = "q";
    write_csv(bad, missing);
    CHECK(run_verify(bad, cfg, log) == kSchemaError);
}

TEST_CASE("Monte Carlo is deterministic and thread independent") {
    bench::MonteCarloConfig cfg;
    cfg.trials = 6;
    cfg.seed = 77;
    cfg.threads = 1;
    const auto a = bench::run_monte_carlo(cfg);
    cfg.threads = 3;
    const auto b = bench::run_monte_carlo(cfg);
    REQUIRE(a.tfc.size() == 6);
    REQUIRE(a.spectral.size() == 6);
    for (int k = 0; k < 6; ++k) {
        CHECK(a.tfc[k].r0 == b.tfc[k].r0);
        CHECK(a.tfc[k].tf == b.tfc[k].tf);
        CHECK(a.tfc[k].max_residual == b.tfc[k].max_residual);
        CHECK(a.spectral[k].cost == b.spectral[k].cost);
        CHECK(a.tfc[k].success);
    }

    TempDir d;
    const auto cfg_path = d.file("mc.json", R"({"trials": 4, "seed": 9, "spectral": false,
        "output": {"dir": ")" + d.out() + R"("}})");
    std::ostringstream log;
    REQUIRE(run_montecarlo(cfg_path, log) == kConverged);
    const std::string first = slurp(d.out() + "/montecarlo_aggregate.csv");
    const Table t1 = read_csv(d.out() + "/montecarlo_trials.csv");
    REQUIRE(run_montecarlo(cfg_path, log) == kConverged);
    CHECK(slurp(d.out() + "/montecarlo_aggregate.csv") == first);
    const Table t2 = read_csv(d.out() + "/montecarlo_trials.csv");
    const int secs = t1.column("seconds");
    REQUIRE(t1.rows.size() == 4);
    for (std::size_t i = 0; i < t1.rows.size(); ++i)
        for (std::size_t j = 0; j < t1.header.size(); ++j)
            if (static_cast<int>(j) != secs) CHECK(t1.rows[i][j] == t2.rows[i][j]);
}

TEST_CASE("Monte Carlo samples stay in the dispersion box") {
    bench::MonteCarloConfig cfg;
    cfg.seed = 5;
    for (int k = 0; k < 500; ++k) {
        const GuidanceProblem p = bench::monte_carlo_case(cfg, k);
        const double dx = p.r0.x() + 2000.0, dy = p.r0.y();
        CHECK(dx * dx / 1e6 + dy * dy / 2.5e5 <= 1.0 + 1e-12);
        CHECK(std::abs(p.r0.z() - 1500.0) <= 100.0);
        CHECK(std::hypot(p.v0.x(), p.v0.y()) == doctest::Approx(100.0));
        CHECK(p.v0.x() >= -1e-12);
        CHECK(std::abs(p.v0.z() + 75.0) <= 10.0);
        CHECK(p.a_g == Eigen::Vector3d(0, 0, -1.62));
    }
    // streams depend on the trial index only
    bench::MonteCarloConfig other = cfg;
    other.trials = 3;
    CHECK(bench::monte_carlo_case(other, 42).r0 == bench::monte_carlo_case(cfg, 42).r0);
    other.seed = 6;
    CHECK(bench::monte_carlo_case(other, 42).r0 != bench::monte_carlo_case(cfg, 42).r0);
}
