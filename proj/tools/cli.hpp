#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfc::cli {

enum ExitCode : int { kConverged = 0, kNotConverged = 1, kSchemaError = 2 };

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric table with a header row.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const;  // -1 when absent
    std::vector<double> col(const std::string& name) const;
};

// Shortest round-trip decimal representation, '.' separator, trailing newline.
void write_csv(const std::string& path, const Table& t);
Table read_csv(const std::string& path);

// Each returns the process exit code; messages go to `log`.
int run_solve(const std::string& config_path, std::ostream& log);
int run_montecarlo(const std::string& config_path, std::ostream& log);
int run_verify(const std::string& solution_csv, const std::string& config_path, std::ostream& log);

}  // namespace tfc::cli
