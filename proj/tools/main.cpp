#include <CLI11.hpp>

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Theory of Functional Connections solver"};
    app.require_subcommand(1);

    std::string config, solution;
    auto* solve = app.add_subcommand("solve", "Solve the problem described by a JSON config");
    solve->add_option("config", config, "config file")->required();
    auto* mc = app.add_subcommand("montecarlo", "Energy-optimal landing Monte Carlo study (threads: TFC_THREADS)");
    mc->add_option("config", config, "config file")->required();
    auto* verify = app.add_subcommand("verify", "Re-propagate a solution table with RK4");
    verify->add_option("solution", solution, "solution CSV")->required();
    verify->add_option("config", config, "config the solution was produced with")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : tfc::cli::kSchemaError;
    }
    try {
        if (*solve) return tfc::cli::run_solve(config, std::cerr);
        if (*mc) return tfc::cli::run_montecarlo(config, std::cerr);
        return tfc::cli::run_verify(solution, config, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tfc::cli::kNotConverged;
    }
}
