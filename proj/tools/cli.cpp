#include "cli.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "benchmarks.hpp"
#include "tfc/cr3bp.hpp"

namespace tfc::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- CSV

int Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<double> Table::col(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw SchemaError("csv: missing column '" + name + "'");
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
}

namespace {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_number(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw SchemaError("csv: bad number '" + s + "'");
    return v;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

void write_csv(const std::string& path, const Table& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
    out << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_number(r[i]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

Table read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot read " + path);
    Table t;
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw SchemaError("csv: missing header in " + path);
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size()) throw SchemaError("csv: ragged row in " + path);
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_number(c));
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------- config schema

namespace {

// Object reader that remembers which keys were consumed; done() rejects the rest.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw SchemaError(where_ + ": expected an object");
    }

    bool has(const std::string& k) const { return j_.contains(k); }

    double number(const std::string& k, std::optional<double> def = {}) {
        used_.insert(k);
        if (!j_.contains(k)) {
            if (!def) throw SchemaError(where_ + ": missing '" + k + "'");
            return *def;
        }
        const json& v = j_.at(k);
        if (!v.is_number()) throw SchemaError(where_ + "." + k + ": expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw SchemaError(where_ + "." + k + ": not finite");
        return x;
    }

    double positive(const std::string& k, std::optional<double> def = {}) {
        const double x = number(k, def);
        if (!(x > 0.0)) throw SchemaError(where_ + "." + k + ": must be positive");
        return x;
    }

    int integer(const std::string& k, std::optional<int> def = {}, int lo = std::numeric_limits<int>::min()) {
        used_.insert(k);
        if (!j_.contains(k)) {
            if (!def) throw SchemaError(where_ + ": missing '" + k + "'");
            return *def;
        }
        const json& v = j_.at(k);
        if (!v.is_number_integer()) throw SchemaError(where_ + "." + k + ": expected an integer");
        const auto x = v.get<long long>();
        if (x < lo || x > std::numeric_limits<int>::max())
            throw SchemaError(where_ + "." + k + ": must be at least " + std::to_string(lo));
        return static_cast<int>(x);
    }

    std::uint64_t seed(const std::string& k, std::uint64_t def) {
        used_.insert(k);
        if (!j_.contains(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_number_unsigned()) throw SchemaError(where_ + "." + k + ": expected a non-negative integer");
        return v.get<std::uint64_t>();
    }

    bool boolean(const std::string& k, bool def) {
        used_.insert(k);
        if (!j_.contains(k)) return def;
        if (!j_.at(k).is_boolean()) throw SchemaError(where_ + "." + k + ": expected true or false");
        return j_.at(k).get<bool>();
    }

    std::string choice(const std::string& k, const std::vector<std::string>& allowed, std::optional<std::string> def) {
        used_.insert(k);
        if (!j_.contains(k)) {
            if (!def) throw SchemaError(where_ + ": missing '" + k + "'");
            return *def;
        }
        if (!j_.at(k).is_string()) throw SchemaError(where_ + "." + k + ": expected a string");
        const std::string s = j_.at(k).get<std::string>();
        for (const auto& a : allowed)
            if (a == s) return s;
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw SchemaError(where_ + "." + k + ": '" + s + "' is not one of " + list);
    }

    std::string text(const std::string& k, const std::string& def) {
        used_.insert(k);
        if (!j_.contains(k)) return def;
        if (!j_.at(k).is_string()) throw SchemaError(where_ + "." + k + ": expected a string");
        return j_.at(k).get<std::string>();
    }

    Eigen::Vector3d vec3(const std::string& k, const Eigen::Vector3d& def) {
        used_.insert(k);
        if (!j_.contains(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_array() || v.size() != 3) throw SchemaError(where_ + "." + k + ": expected three numbers");
        Eigen::Vector3d out;
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_number()) throw SchemaError(where_ + "." + k + ": expected three numbers");
            out[i] = v[i].get<double>();
            if (!std::isfinite(out[i])) throw SchemaError(where_ + "." + k + ": not finite");
        }
        return out;
    }

    std::vector<int> int_list(const std::string& k) {
        used_.insert(k);
        if (!j_.contains(k)) return {};
        const json& v = j_.at(k);
        std::vector<int> out;
        if (v.is_number_integer()) {
            out.push_back(v.get<int>());
        } else if (v.is_array() && !v.empty()) {
            for (const auto& e : v) {
                if (!e.is_number_integer()) throw SchemaError(where_ + "." + k + ": expected integers");
                out.push_back(e.get<int>());
            }
        } else {
            throw SchemaError(where_ + "." + k + ": expected an integer or a list of integers");
        }
        for (int x : out)
            if (x < 1) throw SchemaError(where_ + "." + k + ": must be positive");
        return out;
    }

    Fields sub(const std::string& k) {
        used_.insert(k);
        static const json empty = json::object();
        return Fields(j_.contains(k) ? j_.at(k) : empty, where_ + "." + k);
    }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw SchemaError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

struct Solver {
    std::optional<int> N, max_iter, query_density;
    std::vector<int> m;
    std::optional<double> tol;
    BasisKind basis;
    std::optional<LstsqMethod> method;

    int n(int def) const { return N.value_or(def); }
    int m0(int def) const { return m.empty() ? def : m[0]; }
};

Solver parse_solver(Fields f) {
    Solver s;
    if (f.has("N")) s.N = f.integer("N", {}, 2);
    s.m = f.int_list("m");
    if (f.has("tol")) s.tol = f.positive("tol");
    if (f.has("max_iter")) s.max_iter = f.integer("max_iter", {}, 1);
    if (f.has("query_density")) s.query_density = f.integer("query_density", {}, 1);
    const std::string b = f.choice("basis", {"chebyshev", "legendre"}, "chebyshev");
    s.basis = b == "legendre" ? BasisKind::legendre() : BasisKind::chebyshev();
    if (f.has("strategy")) {
        const std::string m = f.choice("strategy", {"svd", "qr", "scaled_qr", "normal", "cholesky"}, {});
        if (m == "svd") s.method = LstsqMethod::svd(true);
        if (m == "qr") s.method = LstsqMethod::qr();
        if (m == "scaled_qr") s.method = LstsqMethod::scaled_qr();
        if (m == "normal") s.method = LstsqMethod::normal();
        if (m == "cholesky") s.method = LstsqMethod::cholesky();
    }
    f.done();
    return s;
}

struct Output {
    std::string dir = ".", prefix;
    std::string path(const std::string& suffix) const { return (fs::path(dir) / (prefix + suffix)).string(); }
};

Output parse_output(Fields f, const std::string& def_prefix) {
    Output o;
    o.dir = f.text("dir", ".");
    o.prefix = f.text("prefix", def_prefix);
    if (o.prefix.empty() || o.prefix.find('/') != std::string::npos)
        throw SchemaError("output.prefix: must be a non-empty file name");
    f.done();
    return o;
}

struct VerifySettings {
    double tol = 1e-6;
    int substeps = 20;
};

// What a run produces; tables are written only after the solve finishes.
struct RunResult {
    bool converged = false;
    Table solution, report;
    json summary = json::object();
};

// A fully validated job. Building one performs every schema check; calling it solves.
struct Job {
    std::string problem;
    Output out;
    VerifySettings verify;
    std::function<RunResult()> solve;
    // RK4 re-propagation of the solution table; returns the largest scaled deviation
    std::function<double(const Table&, const VerifySettings&)> repropagate;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void apply(const Solver& s, NlsConfig& nls) {
    if (s.tol) nls.tol = *s.tol;
    if (s.max_iter) nls.max_iter = *s.max_iter;
    if (s.method) nls.method = *s.method;
}

// Largest deviation between an RK4 propagation and the tabulated states, each column scaled by its magnitude.
template <class F>
double propagate_rows(const std::vector<double>& t, const std::vector<Eigen::VectorXd>& y, std::size_t first,
                      int substeps, F&& rhs_for_interval) {
    if (y.size() < first + 2) throw SchemaError("verify: need at least two rows");
    const Eigen::Index n = y[first].size();
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(n);
    for (std::size_t k = first; k < y.size(); ++k) scale = scale.cwiseMax(y[k].cwiseAbs());
    Eigen::VectorXd state = y[first];
    double worst = 0.0;
    for (std::size_t k = first; k + 1 < y.size(); ++k) {
        if (t[k + 1] < t[k]) throw SchemaError("verify: times must be non-decreasing");
        if (t[k + 1] > t[k]) {
            auto f = rhs_for_interval(k);
            state = rk4([&](double tt, const Eigen::VectorXd& s) -> Eigen::VectorXd { return f(tt, s); }, state, t[k],
                        t[k + 1], substeps);
        }
        worst = std::max(worst, ((state - y[k + 1]).cwiseAbs().array() / scale.array()).maxCoeff());
    }
    return worst;
}

std::vector<Eigen::VectorXd> gather(const Table& t, const std::vector<std::string>& cols) {
    std::vector<int> idx;
    for (const auto& c : cols) {
        const int i = t.column(c);
        if (i < 0) throw SchemaError("verify: solution table lacks column '" + c + "'");
        idx.push_back(i);
    }
    std::vector<Eigen::VectorXd> out;
    for (const auto& r : t.rows) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) v[j] = r[idx[j]];
        out.push_back(v);
    }
    return out;
}

using Rhs = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

// y'' = f(x, y, y') from the tabulated y and y'; the first row is skipped when the equation is singular there.
// f also receives the midpoint of the current row interval so piecewise equations switch at row boundaries.
using SecondOrder = std::function<double(double x, double y, double dy, double mid)>;

double verify_second_order(const Table& tab, const VerifySettings& v, bool skip_first, SecondOrder ypp) {
    const auto t = tab.col("t");
    return propagate_rows(t, gather(tab, {"y", "y_d1"}), skip_first ? 1 : 0, v.substeps, [&](std::size_t k) -> Rhs {
        const double mid = 0.5 * (t[k] + t[k + 1]);
        return [&, mid](double x, const Eigen::VectorXd& s) {
            Eigen::VectorXd d(2);
            d << s[1], ypp(x, s[0], s[1], mid);
            return d;
        };
    });
}

// ---------------------------------------------------------------- ODE problems

Table ode_table(const OdeSolution& s, const std::vector<std::string>& names, int order) {
    Table t;
    t.header.push_back("t");
    for (const auto& n : names) {
        t.header.push_back(n);
        for (int d = 1; d <= order; ++d) t.header.push_back(n + "_d" + std::to_string(d));
    }
    const int ne = static_cast<int>(s.query_residuals.cols());
    for (int e = 0; e < ne; ++e) t.header.push_back(ne == 1 ? "residual" : "residual_" + std::to_string(e));
    for (Eigen::Index k = 0; k < s.query.size(); ++k) {
        std::vector<double> row{s.query[k]};
        for (const auto& S : s.samples)
            for (int d = 0; d <= order; ++d) row.push_back(S(k, d));
        for (int e = 0; e < ne; ++e) row.push_back(s.query_residuals(k, e));
        t.rows.push_back(std::move(row));
    }
    return t;
}

RunResult ode_result(const OdeSolution& s, const std::vector<std::string>& names, int order, double secs) {
    RunResult r;
    r.converged = s.report.converged() && s.unknowns.allFinite();
    r.solution = ode_table(s, names, order);
    const double qmax = s.query_residuals.size() ? s.query_residuals.cwiseAbs().maxCoeff() : 0.0;
    const Eigen::VectorXd bc = s.system->constraint_errors(s.unknowns);
    const double bcmax = bc.size() ? bc.cwiseAbs().maxCoeff() : 0.0;
    r.report.header = {"iterations", "max_residual", "query_max_residual", "bc_error", "seconds", "converged"};
    r.report.rows.push_back({double(s.report.iterations), s.max_node_residual(), qmax, bcmax, secs, r.converged ? 1.0 : 0.0});
    r.summary["iterations"] = s.report.iterations;
    r.summary["max_residual"] = s.max_node_residual();
    r.summary["query_max_residual"] = qmax;
    r.summary["bc_error"] = bcmax;
    r.summary["stop_reason"] = to_string(s.report.stop_reason);
    if (s.tf) {
        r.report.header.push_back("tf");
        r.report.rows[0].push_back(*s.tf);
        r.summary["tf"] = *s.tf;
    }
    for (const auto& d : s.diagnostics) r.summary["diagnostics"].push_back(d);
    return r;
}

void configure_ode(OdeProblem& p, const Solver& s) {
    p.basis = s.basis;
    apply(s, p.nls);
    if (s.query_density) p.query_density = *s.query_density;
}

Job lane_emden_job(Fields& params, const Solver& s) {
    const int a = params.integer("a", 0, 0);
    const bool spectral = params.choice("method", {"tfc", "spectral"}, "tfc") == "spectral";
    const int m_def = a == 0 ? 2 : a == 1 ? 22 : 62;
    OdeProblem p = bench::lane_emden(a, s.m0(m_def), s.n(100));
    configure_ode(p, s);
    Job j;
    j.solve = [p, spectral] {
        const auto t0 = std::chrono::steady_clock::now();
        const OdeSolution sol = spectral ? solve_spectral_baseline(p) : solve_ode(p);
        return ode_result(sol, {"y"}, 2, seconds_since(t0));
    };
    j.repropagate = [a](const Table& tab, const VerifySettings& v) {
        return verify_second_order(tab, v, true, [a](double x, double y, double dy, double) {
            return -(2.0 * dy + x * std::pow(y, a)) / x;
        });
    };
    return j;
}

Job bvp_job(Fields& params, const Solver& s) {
    const bool spectral = params.choice("method", {"tfc", "spectral"}, "tfc") == "spectral";
    OdeProblem p = bench::bvp(s.m0(22), s.n(100));
    configure_ode(p, s);
    Job j;
    j.solve = [p, spectral] {
        const auto t0 = std::chrono::steady_clock::now();
        const OdeSolution sol = spectral ? solve_spectral_baseline(p) : solve_ode(p);
        return ode_result(sol, {"y"}, 2, seconds_since(t0));
    };
    j.repropagate = [](const Table& tab, const VerifySettings& v) {
        return verify_second_order(tab, v, false, [](double x, double y, double dy, double) { return bench::bvp_forcing(x) - y * dy; });
    };
    return j;
}

Job free_time_job(Fields& params, const Solver& s) {
    const double alpha = params.number("alpha", 1.0), beta = params.number("beta", 1.0);
    if (beta == 0.0) throw SchemaError("params.beta: must be non-zero");
    FreeTimeProblem p = bench::free_time(alpha, beta);
    p.tf_guess = params.positive("tf_guess", 1.0);
    if (s.N) p.ode.N = *s.N;
    if (!s.m.empty()) {
        if (s.m.size() > 2) throw SchemaError("solver.m: at most one entry per component");
        p.ode.m = s.m;
    }
    configure_ode(p.ode, s);
    Job j;
    j.solve = [p] {
        const auto t0 = std::chrono::steady_clock::now();
        const OdeSolution sol = solve_free_time(p);
        return ode_result(sol, {"x", "u"}, 1, seconds_since(t0));
    };
    j.repropagate = [alpha, beta](const Table& tab, const VerifySettings& v) {
        return propagate_rows(tab.col("t"), gather(tab, {"x", "u"}), 0, v.substeps, [&](std::size_t) -> Rhs {
            return [&](double, const Eigen::VectorXd& s) {
                Eigen::VectorXd d(2);
                d << alpha * s[0] + beta * s[1], beta * s[0] - alpha * s[1];
                return d;
            };
        });
    };
    return j;
}

// ---------------------------------------------------------------- segmented problems

RunResult segmented_result(const SegmentedSolution& s, const SegmentedProblem& p, double secs) {
    RunResult r;
    r.converged = s.report.converged() && s.unknowns.allFinite();
    r.solution.header = {"t", "y", "y_d1", "y_d2", "residual"};
    const auto& sys = *s.system;
    for (Eigen::Index k = 0; k < s.query.size(); ++k) {
        const double x = s.query[k];
        const int seg = sys.segment_of(x, s.breakpoints);
        const OdeResidual& f = p.residuals.size() == 1 ? p.residuals[0] : p.residuals[seg];
        Eigen::MatrixXd Y(1, 3);
        Y << s.samples(k, 0), s.samples(k, 1), s.samples(k, 2);
        Eigen::VectorXd F(1);
        f(x, Y, F);
        r.solution.rows.push_back({x, Y(0, 0), Y(0, 1), Y(0, 2), F[0]});
    }
    double qmax = 0.0;
    for (const auto& row : r.solution.rows) qmax = std::max(qmax, std::abs(row[4]));
    r.report.header = {"iterations", "max_residual", "query_max_residual", "seconds", "converged"};
    r.report.rows.push_back({double(s.report.iterations), s.max_residual, qmax, secs, r.converged ? 1.0 : 0.0});
    r.summary["iterations"] = s.report.iterations;
    r.summary["max_residual"] = s.max_residual;
    r.summary["query_max_residual"] = qmax;
    r.summary["stop_reason"] = to_string(s.report.stop_reason);
    r.summary["breakpoints"] = s.breakpoints;
    return r;
}

void configure_segmented(SegmentedProblem& p, const Solver& s) {
    apply(s, p.nls);
    if (s.query_density) p.query_density = *s.query_density;
}

Job hybrid_job(Fields&, const Solver& s) {
    SegmentedProblem p = bench::hybrid(s.m0(16), s.n(100), s.basis);
    configure_segmented(p, s);
    Job j;
    j.solve = [p] {
        const auto t0 = std::chrono::steady_clock::now();
        const SegmentedSolution sol = solve_hybrid(p);
        return segmented_result(sol, p, seconds_since(t0));
    };
    j.repropagate = [](const Table& tab, const VerifySettings& v) {
        return verify_second_order(tab, v, false, [](double x, double y, double dy, double mid) {
            return bench::hybrid_forcing(x) - (mid <= std::numbers::pi / 2 ? y : y * dy);
        });
    };
    return j;
}

Job convection_job(Fields& params, const Solver& s) {
    const double pe = params.positive("pe");
    const double x1 = params.number("x1", 0.75);
    if (!(x1 > 0.0 && x1 < 1.0)) throw SchemaError("params.x1: must lie in (0, 1)");
    const std::string mode = params.choice("breakpoint", {"fixed", "joint", "outer"}, "fixed");
    SegmentedProblem p = bench::convection_diffusion(pe, s.m0(187), s.n(200), x1, s.basis);
    configure_segmented(p, s);
    Job j;
    j.solve = [p, mode, x1] {
        const auto t0 = std::chrono::steady_clock::now();
        SegmentedSolution sol;
        if (mode == "fixed") {
            sol = solve_hybrid(p);
        } else {
            BreakpointOptions o;
            o.strategy = mode == "joint" ? BreakpointStrategy::JointNLS : BreakpointStrategy::OuterScalar;
            o.x1_guess = x1;
            sol = solve_unknown_breakpoint(p, o);
        }
        return segmented_result(sol, p, seconds_since(t0));
    };
    // no repropagation: forward RK4 of the boundary layer is unstable at the tabulated spacing
    return j;
}

// ---------------------------------------------------------------- landing

GuidanceProblem parse_guidance(Fields& f, const GuidanceProblem& def, bool fuel) {
    GuidanceProblem p = def;
    p.r0 = f.vec3("r0", def.r0);
    p.v0 = f.vec3("v0", def.v0);
    p.rf = f.vec3("rf", def.rf);
    p.vf = f.vec3("vf", def.vf);
    p.a_g = f.vec3("a_g", def.a_g);
    if (fuel) {
        p.m0 = f.positive("m0", def.m0);
        p.t_min = f.positive("t_min", def.t_min);
        p.t_max = f.positive("t_max", def.t_max);
        p.alpha_fuel = f.positive("alpha_fuel", def.alpha_fuel);
        if (!(p.t_min < p.t_max)) throw SchemaError("params: t_min must be below t_max");
    } else {
        p.gamma = f.number("gamma", def.gamma);
        if (p.gamma < 0.0) throw SchemaError("params.gamma: must be non-negative");
    }
    if (p.r0 == p.rf) throw SchemaError("params: r0 and rf coincide");
    return p;
}

std::vector<std::string> xyz(const std::string& n) { return {n + "_x", n + "_y", n + "_z"}; }

Job eol_job(Fields& params, const Solver& s) {
    const GuidanceProblem p = parse_guidance(params, bench::eol_reference(0.0), false);
    const bool outer = params.choice("loop", {"single", "outer"}, "single") == "outer";
    EolOptions opt;
    opt.spectral = params.choice("method", {"tfc", "spectral"}, "tfc") == "spectral";
    opt.tf_guess = params.positive("tf_guess", 1.0);
    opt.N = s.n(opt.N);
    opt.m = s.m0(opt.m);
    if (s.tol) opt.tol = *s.tol;
    if (s.max_iter) opt.max_iter = *s.max_iter;
    if (s.method) opt.method = *s.method;
    opt.basis = s.basis;
    if (s.query_density) opt.query_points = *s.query_density * (opt.N - 1) + 1;
    Job j;
    j.solve = [p, opt, outer] {
        const auto t0 = std::chrono::steady_clock::now();
        const LandingSolution sol = outer ? eol_solve_outer_loop(p, opt) : eol_solve_single_loop(p, opt);
        const double secs = seconds_since(t0);
        RunResult r;
        r.converged = sol.converged;
        r.solution.header = {"t"};
        for (const auto& n : {"r", "v", "u"})
            for (const auto& c : xyz(n)) r.solution.header.push_back(c);
        r.solution.header.push_back("hamiltonian");
        for (Eigen::Index k = 0; k < sol.times.size(); ++k) {
            std::vector<double> row{sol.times[k]};
            for (const Eigen::MatrixXd* M : {&sol.position, &sol.velocity, &sol.control})
                for (int i = 0; i < 3; ++i) row.push_back((*M)(k, i));
            row.push_back(sol.hamiltonian[k]);
            r.solution.rows.push_back(std::move(row));
        }
        r.report.header = {"iterations", "outer_iterations", "max_residual", "seconds", "converged", "tf", "cost"};
        r.report.rows.push_back({double(sol.report.iterations), double(sol.outer_iterations), sol.max_residual, secs,
                                 sol.converged ? 1.0 : 0.0, sol.tf, sol.cost});
        r.summary["iterations"] = sol.report.iterations;
        r.summary["outer_iterations"] = sol.outer_iterations;
        r.summary["max_residual"] = sol.max_residual;
        r.summary["stop_reason"] = to_string(sol.report.stop_reason);
        r.summary["tf"] = sol.tf;
        r.summary["cost"] = sol.cost;
        return r;
    };
    j.repropagate = [p](const Table& tab, const VerifySettings& v) {
        const auto t = tab.col("t");
        std::vector<std::string> cols = xyz("r");
        for (const auto& c : xyz("v")) cols.push_back(c);
        const auto y = gather(tab, cols);
        const auto u = gather(tab, xyz("u"));
        return propagate_rows(t, y, 0, v.substeps, [&](std::size_t k) -> Rhs {
            return [&, k](double tt, const Eigen::VectorXd& s) {
                const double w = t[k + 1] > t[k] ? (tt - t[k]) / (t[k + 1] - t[k]) : 0.0;
                const Eigen::Vector3d uc = (1.0 - w) * u[k] + w * u[k + 1];
                Eigen::VectorXd d(6);
                d << s.tail<3>(), uc + p.a_g;
                return d;
            };
        });
    };
    return j;
}

Job fol_job(Fields& params, const Solver& s) {
    const std::string prog = params.choice("program", {"min_max", "max_min_max"}, {});
    const bool three = prog == "max_min_max";
    const GuidanceProblem p =
        parse_guidance(params, three ? bench::fol_max_min_max() : bench::fol_min_max(), true);
    Fields g = params.sub("guess");
    ThrustProfile guess;
    guess.program = three ? ThrustProgram::MaxMinMax : ThrustProgram::MinMax;
    guess.t1 = g.positive("t1", three ? 32.418 : 7.443);
    guess.t2 = three ? g.positive("t2", 38.838) : guess.t1;
    guess.tf = g.positive("tf", three ? 44.823 : 31.262);
    g.done();
    if (!(guess.t1 < guess.tf) || (three && !(guess.t1 < guess.t2 && guess.t2 < guess.tf)))
        throw SchemaError("params.guess: switch times must increase and precede tf");
    const bool fixed = params.choice("times", {"free", "fixed"}, "free") == "fixed";
    FolOptions opt;
    opt.N = s.n(opt.N);
    opt.m = s.m0(opt.m);
    opt.basis = s.basis;
    if (s.tol) opt.nls.tol = *s.tol;
    if (s.method) opt.nls.method = *s.method;
    if (s.max_iter) opt.outer_max_iter = *s.max_iter;
    if (s.query_density) opt.query_density = *s.query_density;
    Job j;
    j.solve = [p, guess, opt, fixed] {
        const auto t0 = std::chrono::steady_clock::now();
        const LandingSolution sol = fixed ? fol_inner_solve(p, guess, opt) : fol_outer_solve(p, guess, opt);
        const double secs = seconds_since(t0);
        RunResult r;
        r.converged = sol.converged;
        r.solution.header = {"t"};
        for (const auto& n : {"r", "v", "u"})
            for (const auto& c : xyz(n)) r.solution.header.push_back(c);
        for (const auto& c : {"thrust", "mass", "lambda_m"}) r.solution.header.push_back(c);
        for (const auto& c : xyz("lambda_v")) r.solution.header.push_back(c);
        r.solution.header.push_back("hamiltonian");
        double h_switch = 0.0;
        for (Eigen::Index k = 0; k < sol.times.size(); ++k) {
            std::vector<double> row{sol.times[k]};
            for (const Eigen::MatrixXd* M : {&sol.position, &sol.velocity, &sol.control})
                for (int i = 0; i < 3; ++i) row.push_back((*M)(k, i));
            row.push_back(sol.thrust[k]);
            row.push_back(sol.mass[k]);
            row.push_back(sol.lambda_m[k]);
            const Eigen::Vector3d lv = sol.lambda_v0 - sol.lambda_r * (sol.times[k] / sol.scale.time);
            for (int i = 0; i < 3; ++i) row.push_back(lv[i]);
            row.push_back(sol.hamiltonian[k]);
            const double last_switch = guess.program == ThrustProgram::MaxMinMax ? sol.t2 : sol.t1;
            if (sol.times[k] <= last_switch) h_switch = std::max(h_switch, std::abs(sol.hamiltonian[k]));
            r.solution.rows.push_back(std::move(row));
        }
        r.report.header = {"iterations", "outer_iterations", "max_residual", "seconds", "converged",
                           "t1",         "t2",               "tf",           "m_used",  "max_h_switched"};
        r.report.rows.push_back({double(sol.report.iterations), double(sol.outer_iterations), sol.max_residual, secs,
                                 sol.converged ? 1.0 : 0.0, sol.t1, sol.t2, sol.tf, sol.propellant, h_switch});
        r.summary["iterations"] = sol.report.iterations;
        r.summary["outer_iterations"] = sol.outer_iterations;
        r.summary["max_residual"] = sol.max_residual;
        r.summary["stop_reason"] = to_string(sol.report.stop_reason);
        r.summary["t1"] = sol.t1;
        if (guess.program == ThrustProgram::MaxMinMax) r.summary["t2"] = sol.t2;
        r.summary["tf"] = sol.tf;
        r.summary["m_used"] = sol.propellant;
        r.summary["max_h_switched"] = h_switch;
        return r;
    };
    j.repropagate = [p](const Table& tab, const VerifySettings& v) {
        const auto t = tab.col("t");
        std::vector<std::string> cols = xyz("r");
        for (const auto& c : xyz("v")) cols.push_back(c);
        cols.push_back("mass");
        const auto y = gather(tab, cols);
        const auto lv = gather(tab, xyz("lambda_v"));
        const auto thrust = tab.col("thrust");
        return propagate_rows(t, y, 0, v.substeps, [&](std::size_t k) -> Rhs {
            return [&, k](double tt, const Eigen::VectorXd& s) {
                const double w = (tt - t[k]) / (t[k + 1] - t[k]);
                const Eigen::Vector3d l = (1.0 - w) * lv[k] + w * lv[k + 1];
                const double T = thrust[k + 1];
                Eigen::VectorXd d(7);
                d << s.segment<3>(3), p.a_g - T / s[6] * l / l.norm(), -p.alpha_fuel * T;
                return d;
            };
        });
    };
    return j;
}

// ---------------------------------------------------------------- CR3BP

Job lyapunov_job(Fields& params, const Solver& s) {
    double mu;
    if (params.has("mu")) {
        mu = params.positive("mu");
        if (params.has("m1") || params.has("m2")) throw SchemaError("params: give either mu or m1/m2");
    } else {
        const double m1 = params.positive("m1", 5.9724e24), m2 = params.positive("m2", 7.346e22);
        if (!(m1 > m2)) throw SchemaError("params: m1 must exceed m2");
        mu = mu_from_masses(m1, m2);
    }
    if (!(mu > 0.0 && mu <= 0.5)) throw SchemaError("params.mu: must lie in (0, 0.5]");
    const Cr3bpSystem sys(mu);
    const int point = params.integer("point", 1, 1);
    if (point > 2) throw SchemaError("params.point: 1 or 2");
    const double cl =
        jacobi_constant({collinear_point(sys, point), 0.0, 0.0}, Eigen::Vector3d::Zero(), sys.mu);
    if (params.has("jacobi") && params.has("delta_c")) throw SchemaError("params: give either jacobi or delta_c");
    const double jacobi = params.has("jacobi") ? params.number("jacobi") : cl - params.positive("delta_c", 0.01);
    if (!(jacobi < cl)) throw SchemaError("params.jacobi: must lie below the Jacobi constant of the L point");
    std::optional<std::pair<double, int>> cont;
    if (params.has("continuation")) {
        Fields c = params.sub("continuation");
        const double c_end = c.has("jacobi_end") ? c.number("jacobi_end") : cl - c.positive("delta_c_end");
        const int steps = c.integer("steps", 10, 1);
        c.done();
        if (!(c_end < cl)) throw SchemaError("params.continuation: end value must lie below the L point");
        cont = {c_end, steps};
    }
    PeriodicOrbitProblem prob;
    prob.jacobi = jacobi;
    prob.seed = lyapunov_seed(sys, point, jacobi);
    prob.N = s.n(prob.N);
    prob.m = s.m0(prob.m);
    if (prob.m > prob.N) throw SchemaError("solver: m must not exceed N");
    if (s.tol) prob.tol = *s.tol;
    if (s.max_iter) prob.max_iter = *s.max_iter;
    if (s.method) prob.method = *s.method;
    prob.basis = s.basis;
    const int query = s.query_density ? *s.query_density * (prob.N - 1) + 1 : 401;
    Job j;
    j.solve = [sys, prob, cont, query] {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<OrbitSolution> orbits;
        bool ok;
        if (cont) {
            ContinuationResult c = continuation(sys, prob, cont->first, cont->second);
            ok = c.complete;
            orbits = std::move(c.orbits);
            if (orbits.empty()) orbits.push_back(solve_periodic(sys, prob, nullptr, query));
        } else {
            orbits.push_back(solve_periodic(sys, prob, nullptr, query));
            ok = orbits[0].converged;
        }
        const double secs = seconds_since(t0);
        RunResult r;
        r.converged = ok;
        r.solution.header = {"orbit", "t", "x", "y", "z", "v_x", "v_y", "v_z",
                             "residual_x", "residual_y", "residual_z", "residual_jacobi"};
        r.report.header = {"orbit", "iterations", "max_residual", "converged", "jacobi", "period", "x0", "vy0", "seconds"};
        double worst = 0.0;
        for (std::size_t o = 0; o < orbits.size(); ++o) {
            const OrbitSolution& orb = orbits[o];
            PeriodicOrbitProblem q = prob;
            q.jacobi = prob.jacobi + (cont ? (cont->first - prob.jacobi) * double(o) / cont->second : 0.0);
            const PeriodicOrbitSystem ps(sys, q);
            const Eigen::VectorXd tau = Eigen::VectorXd::LinSpaced(query, -1.0, 1.0);
            Eigen::MatrixXd pos(query, 3), vel(query, 3), acc(query, 3);
            for (int i = 0; i < 3; ++i) {
                pos.col(i) = ps.state(orb.unknowns, i, tau, 0);
                vel.col(i) = ps.state(orb.unknowns, i, tau, 1);
                acc.col(i) = ps.state(orb.unknowns, i, tau, 2);
            }
            for (int k = 0; k < query; ++k) {
                const OmegaPartials w = omega_and_partials(pos.row(k).transpose(), sys.mu);
                const double t = (tau[k] + 1.0) * 0.5 * orb.period;
                r.solution.rows.push_back({double(o), t, pos(k, 0), pos(k, 1), pos(k, 2), vel(k, 0), vel(k, 1),
                                           vel(k, 2), acc(k, 0) - 2 * vel(k, 1) - w.grad.x(),
                                           acc(k, 1) + 2 * vel(k, 0) - w.grad.y(), acc(k, 2) - w.grad.z(),
                                           2 * w.value - vel.row(k).squaredNorm() - q.jacobi});
            }
            r.report.rows.push_back({double(o), double(orb.report.iterations), orb.max_abs_residual(),
                                     orb.converged ? 1.0 : 0.0, orb.jacobi, orb.period, orb.alpha.x(), orb.beta.y(),
                                     o == 0 ? secs : 0.0});
            worst = std::max(worst, orb.max_abs_residual());
        }
        r.summary["orbits"] = orbits.size();
        r.summary["max_residual"] = worst;
        r.summary["mu"] = sys.mu;
        r.summary["jacobi"] = orbits.front().jacobi;
        r.summary["period"] = orbits.front().period;
        r.summary["stop_reason"] = to_string(orbits.back().report.stop_reason);
        return r;
    };
    j.repropagate = [sys](const Table& tab, const VerifySettings& v) {
        const auto orbit = tab.col("orbit"), t = tab.col("t");
        const auto y = gather(tab, {"x", "y", "z", "v_x", "v_y", "v_z"});
        double worst = 0.0;
        std::size_t begin = 0;
        while (begin < y.size()) {
            std::size_t end = begin;
            while (end < y.size() && orbit[end] == orbit[begin]) ++end;
            const std::vector<double> tt(t.begin() + begin, t.begin() + end);
            const std::vector<Eigen::VectorXd> yy(y.begin() + begin, y.begin() + end);
            worst = std::max(worst, propagate_rows(tt, yy, 0, v.substeps, [&](std::size_t) -> Rhs {
                                 return [&](double, const Eigen::VectorXd& s) -> Eigen::VectorXd {
                                     return cr3bp_rhs(sys, Eigen::Matrix<double, 6, 1>(s));
                                 };
                             }));
            begin = end;
        }
        return worst;
    };
    return j;
}

// ---------------------------------------------------------------- dispatch

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot read config " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
}

const std::vector<std::string> kProblems = {"lane_emden", "bvp",  "free_time", "hybrid",
                                            "convection_diffusion", "eol", "fol", "lyapunov"};

Job parse_job(const json& root) {
    Fields top(root, "config");
    const std::string problem = top.choice("problem", kProblems, {});
    top.seed("seed", 0);
    Fields params = top.sub("params");
    const Solver solver = parse_solver(top.sub("solver"));
    Job j;
    if (problem == "lane_emden") j = lane_emden_job(params, solver);
    if (problem == "bvp") j = bvp_job(params, solver);
    if (problem == "free_time") j = free_time_job(params, solver);
    if (problem == "hybrid") j = hybrid_job(params, solver);
    if (problem == "convection_diffusion") j = convection_job(params, solver);
    if (problem == "eol") j = eol_job(params, solver);
    if (problem == "fol") j = fol_job(params, solver);
    if (problem == "lyapunov") j = lyapunov_job(params, solver);
    params.done();
    j.problem = problem;
    j.out = parse_output(top.sub("output"), problem);
    Fields v = top.sub("verify");
    j.verify.tol = v.positive("tol", 1e-6);
    j.verify.substeps = v.integer("substeps", 20, 1);
    v.done();
    top.done();
    return j;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

void ensure_dir(const Output& o) {
    std::error_code ec;
    fs::create_directories(o.dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + o.dir);
}

}  // namespace

int run_solve(const std::string& config_path, std::ostream& log) {
    Job job;
    try {
        job = parse_job(load_json(config_path));
    } catch (const SchemaError& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    } catch (const std::invalid_argument& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    }
    RunResult r;
    try {
        r = job.solve();
    } catch (const std::exception& e) {
        log << "solver failed: " << e.what() << '\n';
        r.summary["error"] = e.what();
    }
    r.summary["problem"] = job.problem;
    r.summary["converged"] = r.converged;
    if (!r.report.header.empty()) r.summary["seconds"] = r.report.rows[0][r.report.column("seconds")];
    ensure_dir(job.out);
    if (!r.solution.header.empty()) write_csv(job.out.path("_solution.csv"), r.solution);
    if (!r.report.header.empty()) write_csv(job.out.path("_report.csv"), r.report);
    write_json(job.out.path("_summary.json"), r.summary);
    log << job.problem << ": " << (r.converged ? "converged" : "not converged");
    if (r.summary.contains("max_residual")) log << ", max residual " << r.summary["max_residual"].get<double>();
    log << '\n';
    return r.converged ? kConverged : kNotConverged;
}

int run_verify(const std::string& solution_csv, const std::string& config_path, std::ostream& log) {
    Job job;
    Table tab;
    try {
        job = parse_job(load_json(config_path));
        tab = read_csv(solution_csv);
    } catch (const SchemaError& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    } catch (const std::invalid_argument& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    }
    if (!job.repropagate) {
        log << "schema error: verify is not available for " << job.problem << '\n';
        return kSchemaError;
    }
    double dev;
    try {
        dev = job.repropagate(tab, job.verify);
    } catch (const SchemaError& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    }
    const bool ok = std::isfinite(dev) && dev <= job.verify.tol;
    log << "verify " << job.problem << ": max scaled deviation " << dev << " (tol " << job.verify.tol << ") "
        << (ok ? "PASS" : "FAIL") << '\n';
    return ok ? kConverged : kNotConverged;
}

// ---------------------------------------------------------------- Monte Carlo

namespace {

struct MonteCarloJob {
    bench::MonteCarloConfig cfg;
    double max_failure_rate = 0.01;
    Output out;
};

MonteCarloJob parse_montecarlo(const json& root) {
    Fields top(root, "config");
    top.choice("problem", {"eol_montecarlo"}, "eol_montecarlo");
    MonteCarloJob j;
    j.cfg.trials = top.integer("trials", 1000, 1);
    j.cfg.seed = top.seed("seed", 1);
    Fields params = top.sub("params");
    j.cfg.gamma = params.number("gamma", 0.0);
    if (j.cfg.gamma < 0.0) throw SchemaError("params.gamma: must be non-negative");
    j.cfg.a_g = params.vec3("a_g", j.cfg.a_g);
    params.done();
    const Solver s = parse_solver(top.sub("solver"));
    for (EolOptions* o : {&j.cfg.tfc, &j.cfg.spectral}) {
        o->N = s.n(o->N);
        o->m = s.m0(o->m);
        if (s.tol) o->tol = *s.tol;
        if (s.max_iter) o->max_iter = *s.max_iter;
        if (s.method) o->method = *s.method;
        o->basis = s.basis;
        o->query_points = 2;
    }
    j.cfg.run_spectral = top.boolean("spectral", true);
    j.cfg.success_residual = top.positive("success_residual", 1e-12);
    j.max_failure_rate = top.number("max_failure_rate", 0.01);
    j.out = parse_output(top.sub("output"), "montecarlo");
    top.done();
    return j;
}

}  // namespace

int run_montecarlo(const std::string& config_path, std::ostream& log) {
    MonteCarloJob job;
    try {
        job = parse_montecarlo(load_json(config_path));
    } catch (const SchemaError& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    } catch (const std::invalid_argument& e) {
        log << "schema error: " << e.what() << '\n';
        return kSchemaError;
    }
    job.cfg.threads = bench::threads_from_env();
    const auto t0 = std::chrono::steady_clock::now();
    const bench::MonteCarloResult res = bench::run_monte_carlo(job.cfg);
    const double secs = seconds_since(t0);

    Table trials;
    trials.header = {"trial", "method", "r0_x", "r0_y", "r0_z", "v0_x", "v0_y", "v0_z", "success",
                     "tf", "cost", "max_residual", "iterations", "seconds"};
    Table agg;
    agg.header = {"method", "trials", "failures", "failure_rate", "mean_iterations"};
    json summary;
    summary["trials"] = job.cfg.trials;
    summary["seed"] = job.cfg.seed;
    summary["threads"] = job.cfg.threads;
    summary["seconds"] = secs;
    summary["method_codes"] = {{"tfc", 0}, {"spectral", 1}};
    auto add = [&](const std::vector<bench::TrialRecord>& recs, int code, const char* name) {
        int fails = 0;
        double its = 0.0;
        for (const auto& r : recs) {
            trials.rows.push_back({double(r.trial), double(code), r.r0.x(), r.r0.y(), r.r0.z(), r.v0.x(), r.v0.y(),
                                   r.v0.z(), r.success ? 1.0 : 0.0, r.tf, r.cost, r.max_residual, double(r.iterations),
                                   r.seconds});
            fails += r.success ? 0 : 1;
            its += r.iterations;
        }
        const double n = static_cast<double>(recs.size());
        agg.rows.push_back({double(code), n, double(fails), fails / n, its / n});
        summary[name] = {{"failures", fails}, {"failure_rate", fails / n}};
    };
    add(res.tfc, 0, "tfc");
    if (job.cfg.run_spectral) add(res.spectral, 1, "spectral");
    const double rate = double(res.tfc_failures()) / job.cfg.trials;
    const bool ok = rate <= job.max_failure_rate;
    summary["passed"] = ok;
    ensure_dir(job.out);
    write_csv(job.out.path("_trials.csv"), trials);
    write_csv(job.out.path("_aggregate.csv"), agg);
    write_json(job.out.path("_summary.json"), summary);
    log << "montecarlo: " << res.tfc_failures() << " TFC failures";
    if (job.cfg.run_spectral) log << ", " << res.spectral_failures() << " spectral failures";
    log << " in " << job.cfg.trials << " trials\n";
    return ok ? kConverged : kNotConverged;
}

}  // namespace tfc::cli
