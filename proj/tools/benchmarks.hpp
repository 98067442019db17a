#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tfc/landing.hpp"
#include "tfc/odesolve.hpp"
#include "tfc/segments.hpp"

namespace tfc::bench {

// x y'' + 2 y' + x y^a = 0, y(0) = 1, y'(0) = 0 on [0, 10]
OdeProblem lane_emden(int a, int m, int N = 100);

double bvp_forcing(double x);
// y'' + y y' = f on [0, pi], y(0) = y(pi) = 0
OdeProblem bvp(int m, int N = 100);

// x' = a x + b u, u' = b x - a u, x(0) = x(tf) = 1, H(tf) = 0 with tf free
FreeTimeProblem free_time(double alpha = 1.0, double beta = 1.0);

double hybrid_forcing(double x);
// y'' + y = f on [0, pi/2], y'' + y y' = f on [pi/2, pi]
SegmentedProblem hybrid(int m, int N = 100, BasisKind basis = BasisKind::chebyshev());

// y'' - Pe y' = 0, y(0) = 1, y(1) = 0, split at x1
SegmentedProblem convection_diffusion(double pe, int m, int N = 200, double x1 = 0.75,
                                      BasisKind basis = BasisKind::chebyshev());

// Lunar descent in feet: target at the origin at rest.
GuidanceProblem eol_reference(double gamma);

GuidanceProblem fol_base();
GuidanceProblem fol_min_max();
GuidanceProblem fol_max_min_max();

// ---------------------------------------------------------------- energy-optimal Monte Carlo

struct MonteCarloConfig {
    int trials = 1000;
    std::uint64_t seed = 1;
    double gamma = 0.0;
    Eigen::Vector3d a_g{0.0, 0.0, -1.62};
    EolOptions tfc;
    EolOptions spectral;
    bool run_spectral = true;
    double success_residual = 1e-12;
    int threads = 1;
};

// Initial state on the landing ellipse; the stream depends only on (seed, trial).
GuidanceProblem monte_carlo_case(const MonteCarloConfig& cfg, int trial);

struct TrialRecord {
    int trial = 0;
    Eigen::Vector3d r0 = Eigen::Vector3d::Zero(), v0 = Eigen::Vector3d::Zero();
    bool success = false;
    double tf = 0.0, cost = 0.0, max_residual = 0.0, seconds = 0.0;
    int iterations = 0;
};

struct MonteCarloResult {
    std::vector<TrialRecord> tfc, spectral;  // indexed by trial
    int tfc_failures() const;
    int spectral_failures() const;
};

MonteCarloResult run_monte_carlo(const MonteCarloConfig& cfg);

// Threads from TFC_THREADS, falling back to the hardware count.
int threads_from_env();

}  // namespace tfc::bench
