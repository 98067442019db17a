#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <vector>

#include "tfc/constraints.hpp"
#include "tfc/odesolve.hpp"

namespace tfc {

inline constexpr int kMaxSegments = 16;

struct SegmentBoundary {
    double value = 0.0;
    std::optional<double> slope;
};

// Piecewise constrained expression with C1 continuity embedded at every interior breakpoint.
// Unknowns: [xi_1 ... xi_n, beta_1, beta_1', ..., beta_{n-1}, beta_{n-1}'].
// Every segment is expressed in the basis domain; derivative constraints are divided by the segment's
// mapping coefficient so the breakpoints can move without rebuilding anything.
class SegmentedExpression {
public:
    SegmentedExpression(std::vector<double> breakpoints, SegmentBoundary left, SegmentBoundary right, BasisKind basis,
                        int m, int N);

    int n_segments() const { return static_cast<int>(ce_.size()); }
    const std::vector<double>& breakpoints() const { return bp_; }
    const SegmentBoundary& left() const { return left_; }
    const SegmentBoundary& right() const { return right_; }
    int nodes_per_segment() const { return static_cast<int>(z_.size()); }
    const Eigen::VectorXd& z_nodes() const { return z_; }
    double dz() const { return zf_ - z0_; }
    double z0() const { return z0_; }

    int n_xi() const { return n_xi_; }
    int xi_offset(int k) const { return xi_off_[k]; }
    int xi_size(int k) const { return ce_[k].n_xi(); }
    int beta_offset(int j) const { return n_xi_ + 2 * (j - 1); }  // interior breakpoint j = 1..n-1; slope at +1
    int n_unknowns() const { return n_xi_ + 2 * (n_segments() - 1); }
    const ConstrainedExpression& ce(int k) const { return ce_[k]; }

    // Basis-domain constraint values of segment k and their derivatives with respect to the unknowns and c_k.
    struct Kappa {
        Eigen::VectorXd value;
        Eigen::MatrixXd dX;  // k_c x n_unknowns
        Eigen::VectorXd dc;
    };
    Kappa kappa(int k, const Eigen::VectorXd& X, double c) const;

    // d-th derivative of segment k at problem-domain points for the given breakpoints.
    Eigen::VectorXd eval(const Eigen::VectorXd& X, int k, const Eigen::VectorXd& x, int d,
                         const std::vector<double>& bps) const;
    Eigen::VectorXd eval(const Eigen::VectorXd& X, int k, const Eigen::VectorXd& x, int d) const {
        return eval(X, k, x, d, bp_);
    }

    // xi = 0 and interface values on the straight line joining the boundary values.
    Eigen::VectorXd straight_line() const;

private:
    struct Source {
        int beta = -1;     // unknown index, or -1 for boundary data
        double data = 0.0;
        bool slope = false;
    };
    std::vector<double> bp_;
    SegmentBoundary left_, right_;
    double z0_ = -1.0, zf_ = 1.0;
    Eigen::VectorXd z_;
    std::vector<ConstrainedExpression> ce_;
    std::vector<std::vector<Source>> sources_;
    std::vector<int> xi_off_;
    int n_xi_ = 0;
};

SegmentedExpression build_segmented(int n, std::vector<double> breakpoints, SegmentBoundary left,
                                    SegmentBoundary right, BasisKind basis, int m, int N = 100);

struct SegmentedProblem {
    std::shared_ptr<const SegmentedExpression> seg;
    std::vector<OdeResidual> residuals;  // one per segment, or a single one for all
    std::vector<OdeResidualJac> jacobians;
    int order = 2;
    bool affine = false;
    NlsConfig nls;
    int query_density = 10;
};

// Loss over all segments. With a free breakpoint (two segments only) the unknowns end with c_bar,
// the first segment's mapping coefficient.
class SegmentedSystem {
public:
    SegmentedSystem(SegmentedProblem p, bool free_breakpoint);

    const SegmentedProblem& problem() const { return p_; }
    const SegmentedExpression& seg() const { return *p_.seg; }
    bool free_breakpoint() const { return free_; }
    int n_unknowns() const { return seg().n_unknowns() + (free_ ? 1 : 0); }
    int n_rows() const { return seg().n_segments() * seg().nodes_per_segment(); }

    std::vector<double> breakpoints(const Eigen::VectorXd& X) const;
    double c_bar_for(double x1) const;

    Eigen::VectorXd loss(const Eigen::VectorXd& X) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& X) const;

    // Segment containing x (left-closed at interior breakpoints: x <= x_1 belongs to the first segment).
    int segment_of(double x, const std::vector<double>& bps) const;
    Eigen::VectorXd values(const Eigen::VectorXd& X, const Eigen::VectorXd& x, int d) const;

private:
    struct SegmentState {
        double c, dc;              // mapping coefficient and its derivative with respect to c_bar
        double start, dstart;      // left breakpoint and its derivative with respect to c_bar
    };
    SegmentState state(int k, const Eigen::VectorXd& X) const;
    const OdeResidual& residual(int k) const { return p_.residuals.size() == 1 ? p_.residuals[0] : p_.residuals[k]; }
    const OdeResidualJac* jac(int k) const;

    SegmentedProblem p_;
    bool free_;
    std::vector<std::vector<ConstrainedExpression::Matrices>> mats_;  // [segment][d]
};

struct SegmentedSolution {
    Eigen::VectorXd unknowns;
    SolveReport report;
    std::vector<double> breakpoints;
    Eigen::VectorXd loss;
    Eigen::VectorXd query;
    Eigen::MatrixXd samples;  // query x (order + 1)
    double max_residual = 0.0;
    std::shared_ptr<const SegmentedSystem> system;

    Eigen::VectorXd eval(const Eigen::VectorXd& x, int d = 0) const { return system->values(unknowns, x, d); }
};

SegmentedSolution solve_hybrid(const SegmentedProblem& p);

enum class BreakpointStrategy { JointNLS, OuterScalar };

struct BreakpointOptions {
    BreakpointStrategy strategy = BreakpointStrategy::JointNLS;
    double x1_guess = 0.5;
    double box_fraction = 1e-3;  // x1 stays this fraction of the domain away from either end
    double bracket_tol = 1e-6;
};

SegmentedSolution solve_unknown_breakpoint(const SegmentedProblem& p, const BreakpointOptions& opt);

}  // namespace tfc
