#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "tfc/basis.hpp"
#include "tfc/constraints.hpp"
#include "tfc/linsolve.hpp"

namespace tfc {

struct GuidanceProblem {
    Eigen::Vector3d r0 = Eigen::Vector3d::Zero(), v0 = Eigen::Vector3d::Zero();
    Eigen::Vector3d rf = Eigen::Vector3d::Zero(), vf = Eigen::Vector3d::Zero();
    Eigen::Vector3d a_g = Eigen::Vector3d::Zero();
    double gamma = 0.0;  // time weight of the energy problem
    double m0 = 1.0;
    double t_min = 0.0, t_max = 0.0;  // thrust bounds (fuel problem)
    double alpha_fuel = 0.0;          // 1 / (Isp g0 cos phi)
};

struct Scaling {
    double length = 1.0, time = 1.0;
    double velocity() const { return length / time; }
    double accel() const { return length / (time * time); }
};

// Unit length max|r0|, unit time length / max|v0|. Thrust is scaled as an acceleration times kg so that
// T / m stays consistent; mass is not scaled.
struct ScaledProblem {
    GuidanceProblem problem;
    Scaling scale;
};
ScaledProblem scale_problem(const GuidanceProblem& p);
GuidanceProblem unscale_problem(const ScaledProblem& s);

// u = -6 r / t_go^2 - 4 v / t_go - a_g
Eigen::Vector3d eol_feedback(const Eigen::Vector3d& r, const Eigen::Vector3d& v, const Eigen::Vector3d& a_g,
                             double t_go);

struct LandingSolution {
    SolveReport report;    // inner (single-loop) or final inner solve
    int outer_iterations = 0;
    bool converged = false;
    double tf = 0.0;
    double cost = 0.0;         // energy: Gamma tf + 1/2 int |u|^2; fuel: propellant used
    double propellant = 0.0;   // fuel only, alpha int T dt
    double t1 = 0.0, t2 = 0.0; // switch times (fuel)
    double max_residual = 0.0; // max |L| in scaled units
    Scaling scale;

    // costate span in scaled units: lambda_v(t) = lambda_v0 - lambda_r t
    Eigen::Vector3d lambda_v0 = Eigen::Vector3d::Zero(), lambda_r = Eigen::Vector3d::Zero();

    // samples (unscaled), rows = times; fuel samples repeat each switch time once per side
    Eigen::VectorXd times;
    Eigen::MatrixXd position, velocity, control;  // control acceleration
    Eigen::VectorXd thrust, mass, lambda_m;       // fuel only
    Eigen::VectorXd hamiltonian;                  // scaled units
};

// ---------------------------------------------------------------- energy-optimal landing

struct EolOptions {
    int N = 100;
    int m = 60;
    double tol = 2.22e-16;
    int max_iter = 50;
    double tf_guess = 1.0;  // scaled
    BasisKind basis;
    bool spectral = false;  // constraints as extra residual rows instead of embedded
    int query_points = 201;
    LstsqMethod method = LstsqMethod::scaled_qr();
    bool frozen_first_step = true;  // single loop: first Gauss-Newton step with b held at its guess
};

// Loss of the energy problem in scaled units. Unknowns [xi_x, xi_y, xi_z, xi_u (2 per axis), b] with b^2 the
// mapping coefficient; b is absent when the final time is fixed.
class EolSystem {
public:
    EolSystem(const GuidanceProblem& scaled, const EolOptions& opt, bool free_time, double tf_fixed = 1.0);

    int n_unknowns() const { return n_unknowns_; }
    int n_rows() const;
    int n_state() const { return n_state_; }  // coefficients per axis
    bool free_time() const { return free_; }
    double c(const Eigen::VectorXd& X) const;
    double tf(const Eigen::VectorXd& X) const { return 2.0 / c(X); }

    Eigen::VectorXd loss(const Eigen::VectorXd& X) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& X) const;
    Eigen::VectorXd initial_guess() const;

    // axis i position (d = 0), velocity (1) or acceleration (2) at basis points
    Eigen::VectorXd state(const Eigen::VectorXd& X, int axis, const Eigen::VectorXd& z, int d) const;
    Eigen::Vector3d control(const Eigen::VectorXd& X, double z) const;
    double hamiltonian(const Eigen::VectorXd& X, double z) const;

private:
    Eigen::Vector4d kappa(int axis, double c) const;
    Eigen::MatrixXd basis_rows(const Eigen::VectorXd& z, int d) const;  // state coefficient rows
    Eigen::MatrixXd kappa_rows(const Eigen::VectorXd& z, int d) const;  // TFC only

    GuidanceProblem p_;
    EolOptions opt_;
    bool free_;
    double c_fixed_;
    Eigen::VectorXd z_;
    std::shared_ptr<const ConstrainedExpression> ce_;
    Eigen::MatrixXd A2_, P2_;  // node second-derivative rows
    int n_state_ = 0, n_unknowns_ = 0;
};

LandingSolution eol_solve_single_loop(const GuidanceProblem& p, const EolOptions& opt = {});

struct EolOuterOptions {
    double tol = 1e-13;  // on the transversality residual and the bracket width (scaled)
    int max_iter = 100;
};
LandingSolution eol_solve_outer_loop(const GuidanceProblem& p, const EolOptions& opt = {},
                                     const EolOuterOptions& outer = {});

// Closed-form feedback rollout with RK4 steps, t_go shrinking from tf to zero. Returns cost and final time.
LandingSolution eol_feedback_rollout(const GuidanceProblem& p, double tf, int steps = 20000);

// ---------------------------------------------------------------- fuel-optimal landing

enum class ThrustProgram { MaxMinMax, MinMax };

// MaxMinMax: T_max on [t0, t1], T_min on (t1, t2], T_max on (t2, tf].
// MinMax: T_min on [t0, t1], T_max on (t1, tf]; t2 is ignored.
struct ThrustProfile {
    double t1 = 0.0, t2 = 0.0, tf = 1.0;
    ThrustProgram program = ThrustProgram::MaxMinMax;

    int n_segments() const { return program == ThrustProgram::MaxMinMax ? 3 : 2; }
    std::vector<double> breakpoints(double t0 = 0.0) const;
    std::vector<double> levels(double t_min, double t_max) const;
};

// Mass of a max-min-max program; a min-max program is the same with t1 = t0.
double fol_mass(double t, double t1, double t2, double m0, double t_min, double t_max, double alpha, double t0 = 0.0);
double fol_mass(double t, const ThrustProfile& prof, const GuidanceProblem& p);

inline NlsConfig fol_nls_defaults() {
    NlsConfig c;
    c.tol = 1e-13;
    c.max_iter = 100;
    c.method = LstsqMethod::scaled_qr();
    c.step_halving = true;
    c.max_halvings = 30;
    c.halving_l2 = true;
    return c;
}

struct FolOptions {
    int N = 50;  // nodes per segment
    int m = 40;  // free-function columns per segment and axis
    BasisKind basis;
    NlsConfig nls = fol_nls_defaults();
    double outer_tol = 1e-12;
    int outer_max_iter = 60;
    bool warm_start = true;
    int query_density = 4;
};

// Inner loss for a fixed thrust program, scaled units.
// Unknowns [seg 1: xi_x xi_y xi_z | seg 2 | ... | xi_lambda (2 per axis) | r1 v1 | r2 v2 ...].
class FolSystem {
public:
    FolSystem(const GuidanceProblem& scaled, const ThrustProfile& prof, const FolOptions& opt);

    int n_segments() const { return static_cast<int>(levels_.size()); }
    int n_unknowns() const { return n_unknowns_; }
    int n_rows() const { return 3 * n_segments() * N() + 1; }
    int N() const { return static_cast<int>(z_.size()); }
    int m() const { return m_; }
    int xi_offset(int seg, int axis) const { return (seg * 3 + axis) * m_; }
    int lambda_offset() const { return 3 * n_segments() * m_; }
    int interface_offset(int j) const { return lambda_offset() + 6 + 6 * (j - 1); }  // r_j then v_j, j = 1..S-1
    const std::vector<double>& breakpoints() const { return bp_; }

    Eigen::VectorXd loss(const Eigen::VectorXd& X) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& X) const;
    Eigen::VectorXd initial_guess() const;

    double time(int seg, double z) const;
    double thrust(int seg) const { return levels_[seg]; }
    double mass(double t) const;
    Eigen::Vector3d lambda_v(const Eigen::VectorXd& X, double t) const;
    Eigen::Vector3d lambda_r(const Eigen::VectorXd& X) const;
    Eigen::Vector3d state(const Eigen::VectorXd& X, int seg, double t, int d) const;
    double hamiltonian(const Eigen::VectorXd& X, int seg, double t, double lambda_m) const;

    // lambda_m at the given times from a per-segment linear solve with lambda_m(tf) = 0
    Eigen::VectorXd lambda_m(const Eigen::VectorXd& X, const std::vector<Eigen::VectorXd>& t_per_seg) const;

private:
    Eigen::Vector4d kappa(const Eigen::VectorXd& X, int seg, int axis) const;

    GuidanceProblem p_;
    FolOptions opt_;
    std::vector<double> bp_, levels_, c_;
    double c_lambda_ = 1.0;
    Eigen::VectorXd z_;
    std::shared_ptr<const ConstrainedExpression> ce_;
    std::vector<Eigen::MatrixXd> A_, P_;  // node rows per derivative order 0..2
    int m_ = 0, n_unknowns_ = 0;
};

// Inner solve for a fixed thrust program. Warm start from `initial` when its size matches.
LandingSolution fol_inner_solve(const GuidanceProblem& p, const ThrustProfile& prof, const FolOptions& opt = {},
                                const Eigen::VectorXd* initial = nullptr, Eigen::VectorXd* unknowns_out = nullptr);

// Switch and final times from Levenberg-Marquardt on the stacked inner loss and segment Hamiltonians.
LandingSolution fol_outer_solve(const GuidanceProblem& p, const ThrustProfile& guess, const FolOptions& opt = {});

// ---------------------------------------------------------------- shared

// Classic fourth-order Runge-Kutta over [t0, t1] with a fixed step count.
template <class F, class State>
State rk4(F&& f, State y, double t0, double t1, int steps) {
    const double h = (t1 - t0) / steps;
    double t = t0;
    for (int i = 0; i < steps; ++i) {
        const State k1 = f(t, y);
        const State k2 = f(t + h / 2, State(y + h / 2 * k1));
        const State k3 = f(t + h / 2, State(y + h / 2 * k2));
        const State k4 = f(t + h, State(y + h * k3));
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += h;
    }
    return y;
}

}  // namespace tfc
