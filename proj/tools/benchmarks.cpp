#include "benchmarks.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>
#include <string>
#include <thread>

namespace tfc::bench {

OdeProblem lane_emden(int a, int m, int N) {
    OdeProblem p;
    p.order = 2;
    p.x0 = 0.0;
    p.xf = 10.0;
    p.m = {m};
    p.N = N;
    p.constraints = {point_constraint(0.0, 1.0), point_constraint(0.0, 0.0, 1)};
    p.residual = [a](double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
        F[0] = x * Y(0, 2) + 2.0 * Y(0, 1) + x * std::pow(Y(0, 0), a);
    };
    p.jacobian = [a](double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::MatrixXd> dF) {
        dF(0, 0) = a == 0 ? 0.0 : x * a * std::pow(Y(0, 0), a - 1);
        dF(0, 1) = 2.0;
        dF(0, 2) = x;
    };
    p.affine = a <= 1;
    return p;
}

double bvp_forcing(double x) {
    return std::exp(-2 * x) * std::sin(x) * (std::cos(x) - std::sin(x)) - 2 * std::exp(-x) * std::cos(x);
}

OdeProblem bvp(int m, int N) {
    OdeProblem p;
    p.order = 2;
    p.x0 = 0.0;
    p.xf = std::numbers::pi;
    p.m = {m};
    p.N = N;
    p.constraints = {point_constraint(0.0, 0.0), point_constraint(std::numbers::pi, 0.0)};
    p.residual = [](double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
        F[0] = Y(0, 2) + Y(0, 0) * Y(0, 1) - bvp_forcing(x);
    };
    p.jacobian = [](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::MatrixXd> dF) {
        dF(0, 0) = Y(0, 1);
        dF(0, 1) = Y(0, 0);
        dF(0, 2) = 1.0;
    };
    p.nls.tol = 1e-13;
    return p;
}

FreeTimeProblem free_time(double alpha, double beta) {
    FreeTimeProblem p;
    OdeProblem& o = p.ode;
    o.n_components = 2;
    o.n_equations = 2;
    o.order = 1;
    o.m = {28, 30};
    o.N = 35;
    o.constraints = {point_constraint(-1.0, 1.0, 0, 0), point_constraint(1.0, 1.0, 0, 0)};
    o.residual = [=](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
        F[0] = Y(0, 1) - alpha * Y(0, 0) - beta * Y(1, 0);
        F[1] = Y(1, 1) - beta * Y(0, 0) + alpha * Y(1, 0);
    };
    o.jacobian = [=](double, const Eigen::MatrixXd&, Eigen::Ref<Eigen::MatrixXd> dF) {
        dF << -alpha, 1.0, -beta, 0.0, -beta, 0.0, alpha, 1.0;
    };
    o.point_rows.push_back({1.0, 1, [=](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
                                F[0] = 0.5 * (Y(0, 0) * Y(0, 0) - Y(1, 0) * Y(1, 0)) - alpha / beta * Y(0, 0) * Y(1, 0);
                            }});
    o.nls.tol = 2.22e-16;
    o.nls.max_iter = 60;
    o.x0 = 0.0;
    p.tf_guess = 1.0;
    return p;
}

double hybrid_forcing(double x) {
    using std::numbers::pi;
    return -std::exp(pi - 2 * x) + std::exp(pi / 2 - x);
}

SegmentedProblem hybrid(int m, int N, BasisKind basis) {
    using std::numbers::pi;
    const double y0 = 0.9 + 0.1 * std::exp(pi / 2) * (5 - 2 * std::exp(pi / 2));
    SegmentedProblem p;
    p.seg = std::make_shared<const SegmentedExpression>(std::vector<double>{0.0, pi / 2, pi}, SegmentBoundary{y0, std::nullopt},
                                                        SegmentBoundary{std::exp(-pi / 2), std::nullopt}, basis, m, N);
    p.residuals = {[](double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
                       F[0] = Y(0, 2) + Y(0, 0) - hybrid_forcing(x);
                   },
                   [](double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
                       F[0] = Y(0, 2) + Y(0, 0) * Y(0, 1) - hybrid_forcing(x);
                   }};
    p.jacobians = {[](double, const Eigen::MatrixXd&, Eigen::Ref<Eigen::MatrixXd> dF) { dF << 1.0, 0.0, 1.0; },
                   [](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::MatrixXd> dF) {
                       dF << Y(0, 1), Y(0, 0), 1.0;
                   }};
    p.nls.tol = 1e-13;
    return p;
}

SegmentedProblem convection_diffusion(double pe, int m, int N, double x1, BasisKind basis) {
    SegmentedProblem p;
    p.seg = std::make_shared<const SegmentedExpression>(std::vector<double>{0.0, x1, 1.0}, SegmentBoundary{1.0, std::nullopt},
                                                        SegmentBoundary{0.0, std::nullopt}, basis, m, N);
    p.residuals = {[pe](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
        F[0] = Y(0, 2) - pe * Y(0, 1);
    }};
    p.jacobians = {[pe](double, const Eigen::MatrixXd&, Eigen::Ref<Eigen::MatrixXd> dF) { dF << 0.0, -pe, 1.0; }};
    p.affine = true;
    p.nls.tol = 1e-13;
    return p;
}

GuidanceProblem eol_reference(double gamma) {
    GuidanceProblem p;
    p.r0 = {500000.0, 100000.0, 50000.0};
    p.v0 = {-3000.0, 0.0, 0.0};
    p.a_g = {0.0, 0.0, -1.62 / 0.3048};
    p.gamma = gamma;
    return p;
}

GuidanceProblem fol_base() {
    GuidanceProblem p;
    const double cphi = std::cos(27.0 * std::numbers::pi / 180.0);
    p.a_g = {0.0, 0.0, -3.7114};
    p.m0 = 1905.0;
    p.t_min = 0.3 * 3100.0 * 6 * cphi;
    p.t_max = 0.8 * 3100.0 * 6 * cphi;
    p.alpha_fuel = 1.0 / (225.0 * 9.807 * cphi);
    return p;
}

GuidanceProblem fol_min_max() {
    GuidanceProblem p = fol_base();
    p.r0 = {-900.0, 10.0, 1500.0};
    p.v0 = {30.0, -10.0, -70.0};
    return p;
}

GuidanceProblem fol_max_min_max() {
    GuidanceProblem p = fol_base();
    p.r0 = {-200.0, 100.0, 1500.0};
    p.v0 = {85.0, 50.0, -65.0};
    return p;
}

GuidanceProblem monte_carlo_case(const MonteCarloConfig& cfg, int trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(trial)};
    std::mt19937_64 gen(seq);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    constexpr double pi = std::numbers::pi;
    constexpr double a = 1000.0, b = 500.0;
    const double alpha = 2.0 * pi * u01(gen);
    const double sa = std::sin(alpha), ca = std::cos(alpha);
    const double radius = a * b / std::sqrt(a * a * sa * sa + b * b * ca * ca);
    const double sf = u01(gen);
    const double dz = -100.0 + 200.0 * u01(gen);
    const double beta = -pi / 2 + pi * u01(gen);
    const double dvz = -10.0 + 20.0 * u01(gen);
    GuidanceProblem p;
    p.r0 = {-2000.0 + sf * radius * ca, sf * radius * sa, 1500.0 + dz};
    p.v0 = {100.0 * std::cos(beta), 100.0 * std::sin(beta), -75.0 + dvz};
    p.a_g = cfg.a_g;
    p.gamma = cfg.gamma;
    return p;
}

int MonteCarloResult::tfc_failures() const {
    return static_cast<int>(std::count_if(tfc.begin(), tfc.end(), [](const TrialRecord& r) { return !r.success; }));
}

int MonteCarloResult::spectral_failures() const {
    return static_cast<int>(
        std::count_if(spectral.begin(), spectral.end(), [](const TrialRecord& r) { return !r.success; }));
}

namespace {

TrialRecord run_trial(const GuidanceProblem& p, const EolOptions& opt, double success_residual, int trial) {
    TrialRecord r;
    r.trial = trial;
    r.r0 = p.r0;
    r.v0 = p.v0;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const LandingSolution s = eol_solve_single_loop(p, opt);
        r.tf = s.tf;
        r.cost = s.cost;
        r.max_residual = s.max_residual;
        r.iterations = s.report.iterations;
        r.success = s.converged && std::isfinite(s.max_residual) && s.max_residual < success_residual;
    } catch (const std::exception&) {
        r.success = false;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace

MonteCarloResult run_monte_carlo(const MonteCarloConfig& cfg) {
    if (cfg.trials < 1) throw std::invalid_argument("monte carlo: at least one trial required");
    MonteCarloResult res;
    res.tfc.resize(cfg.trials);
    if (cfg.run_spectral) res.spectral.resize(cfg.trials);
    EolOptions tfc_opt = cfg.tfc, spec = cfg.spectral;
    tfc_opt.spectral = false;
    spec.spectral = true;
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int k = next++; k < cfg.trials; k = next++) {
            const GuidanceProblem p = monte_carlo_case(cfg, k);
            res.tfc[k] = run_trial(p, tfc_opt, cfg.success_residual, k);
            if (cfg.run_spectral) res.spectral[k] = run_trial(p, spec, cfg.success_residual, k);
        }
    };
    const int n = std::clamp(cfg.threads, 1, cfg.trials);
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return res;
}

int threads_from_env() {
    if (const char* s = std::getenv("TFC_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(s, &end, 10);
        if (end != s && *end == '\0' && v >= 1) return static_cast<int>(std::min<long>(v, 256));
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace tfc::bench
