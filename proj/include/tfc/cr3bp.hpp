#pragma once

#include <Eigen/Dense>
#include <vector>

#include "tfc/basis.hpp"
#include "tfc/linsolve.hpp"

namespace tfc {

struct Cr3bpSystem {
    double mu = 0.0;
    explicit Cr3bpSystem(double mu_);
    double mu1() const { return 1.0 - mu; }
    double mu2() const { return mu; }
};

double mu_from_masses(double m1, double m2);

struct OmegaPartials {
    double value = 0.0;
    Eigen::Vector3d grad = Eigen::Vector3d::Zero();
    Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
};

// Omega = (x^2 + y^2) / 2 + (1 - mu) / R1 + mu / R2 + (1 - mu) mu / 2
OmegaPartials omega_and_partials(const Eigen::Vector3d& r, double mu);

// C = 2 Omega - |v|^2
double jacobi_constant(const Eigen::Vector3d& r, const Eigen::Vector3d& v, double mu);

// x coordinate of L1 (between the primaries) or L2 (beyond the secondary), by bisection.
double collinear_point(const Cr3bpSystem& sys, int which);

// State derivative [r, v] -> [v, a].
Eigen::Matrix<double, 6, 1> cr3bp_rhs(const Cr3bpSystem& sys, const Eigen::Matrix<double, 6, 1>& s);

struct OrbitSeed {
    Eigen::Vector3d alpha = Eigen::Vector3d::Zero();  // position at t = 0
    Eigen::Vector3d beta = Eigen::Vector3d::Zero();   // velocity at t = 0 (time domain)
    double period = 1.0;
    // Optional trajectory the free functions are fitted to; empty means xi = 0.
    std::vector<Eigen::Vector3d> samples;  // equally spaced over one period, first point at t = 0
};

// Linear center-manifold orbit around L1 or L2 sized to reach the target Jacobi constant to first order.
OrbitSeed lyapunov_seed(const Cr3bpSystem& sys, int which, double jacobi_target, int n_samples = 200);

struct PeriodicOrbitProblem {
    double jacobi = 3.0;
    OrbitSeed seed;
    int N = 140;
    int m = 130;
    double tol = 2.22e-16;
    int max_iter = 20;
    double accept_residual = 1e-10;  // iteration cap reached below this counts as converged
    bool jacobi_all_nodes = true;
    BasisKind basis;
    double min_amplitude = 1e-6;
    LstsqMethod method = LstsqMethod::svd(true);  // minimum-norm steps; the phase along the orbit is free
};

struct OrbitSolution {
    Eigen::VectorXd unknowns;  // [xi_x, xi_y, xi_z, alpha, beta, b]
    SolveReport report;
    bool converged = false;
    bool degenerate = false;  // collapsed onto a point
    Eigen::Vector3d alpha = Eigen::Vector3d::Zero(), beta = Eigen::Vector3d::Zero();
    double b = 0.0, period = 0.0;
    double jacobi = 0.0;             // achieved at t = 0
    Eigen::Vector4d max_residual = Eigen::Vector4d::Zero();  // x, y, z, Jacobi rows
    Eigen::VectorXd times;
    Eigen::MatrixXd position, velocity;

    double max_abs_residual() const { return max_residual.maxCoeff(); }
};

// Loss over N nodes per axis plus the Jacobi rows. Periodicity is embedded for any unknowns.
class PeriodicOrbitSystem {
public:
    PeriodicOrbitSystem(const Cr3bpSystem& sys, const PeriodicOrbitProblem& p);

    int n_unknowns() const { return 3 * m_ + 7; }
    int n_rows() const { return 3 * N() + n_jacobi_rows(); }
    int N() const { return static_cast<int>(z_.size()); }
    int n_jacobi_rows() const { return p_.jacobi_all_nodes ? N() : 1; }
    int m() const { return m_; }
    int alpha_offset() const { return 3 * m_; }
    int beta_offset() const { return 3 * m_ + 3; }
    int b_offset() const { return 3 * m_ + 6; }

    Eigen::VectorXd loss(const Eigen::VectorXd& X) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& X) const;
    Eigen::VectorXd initial_guess() const;

    // position (d = 0), velocity (1) or acceleration (2) along axis i at basis points
    Eigen::VectorXd state(const Eigen::VectorXd& X, int axis, const Eigen::VectorXd& tau, int d) const;

private:
    struct Rows {
        Eigen::MatrixXd A, P;
    };
    Rows rows(const Eigen::VectorXd& tau, int d) const;
    Eigen::Vector4d kappa(const Eigen::VectorXd& X, int axis) const;

    Cr3bpSystem sys_;
    PeriodicOrbitProblem p_;
    Eigen::VectorXd z_;
    std::vector<Rows> node_;  // derivative orders 0..2 at the nodes
    int m_ = 0;
};

OrbitSolution solve_periodic(const Cr3bpSystem& sys, const PeriodicOrbitProblem& p,
                             const Eigen::VectorXd* warm = nullptr, int query_points = 401);

// Jacobi constant stepped linearly from the start orbit's value to c_end. Stops at the first failure.
struct ContinuationResult {
    std::vector<OrbitSolution> orbits;
    bool complete = false;
    int failed_step = -1;
};
ContinuationResult continuation(const Cr3bpSystem& sys, const PeriodicOrbitProblem& start, double c_end, int steps);

// RK4 over one period from the solved initial state; returns the distance between start and end states.
double orbit_closure(const Cr3bpSystem& sys, const OrbitSolution& orbit, int steps = 20000);

}  // namespace tfc
