#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tfc/basis.hpp"
#include "tfc/constraints.hpp"
#include "tfc/linsolve.hpp"

namespace tfc {

// Residual at one point. Y(c, d) is the d-th derivative of component c in the problem domain.
using OdeResidual = std::function<void(double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F)>;
// dF(e, c * (order + 1) + d) = dF_e / dY(c, d).
using OdeResidualJac = std::function<void(double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::MatrixXd> dF)>;

// Central-difference partials of a residual with respect to Y (column c * (order + 1) + d) and, when with_x is set,
// x (last column). Affine residuals are differentiated exactly by a unit step.
Eigen::MatrixXd residual_partials(const OdeResidual& f, int rows, double x, const Eigen::MatrixXd& Y, bool with_x,
                                  bool affine = false);

// Extra equations evaluated at a single location (terminal conditions, one-node integrals of motion).
// The Jacobian is taken by central differences.
struct PointResidual {
    double at = 0.0;  // problem domain, or basis domain in free-time mode
    int count = 1;
    OdeResidual f;
};

struct OdeProblem {
    int n_components = 1;
    int n_equations = 1;
    int order = 2;
    OdeResidual residual;
    OdeResidualJac jacobian;  // empty: finite differences per node
    std::vector<PointResidual> point_rows;

    std::vector<LinearConstraint> constraints;
    std::vector<int> free_kappa;  // constraint indices whose values join the unknowns
    std::optional<Eigen::VectorXd> weights;
    std::vector<std::vector<SupportFunction>> supports;  // per component; empty: chosen automatically

    double x0 = 0.0, xf = 1.0;
    BasisKind basis;
    std::vector<int> m{10};  // per component; a single entry applies to all
    int N = 100;             // collocation nodes

    bool affine = false;
    NlsConfig nls;
    int query_density = 10;
    std::optional<Eigen::VectorXd> initial;  // full unknown vector
};

// Unknown time domain [t0, tf]. The problem is posed in the basis domain: constraint locations and
// point_rows are basis-domain values, derivative orders and residuals refer to time.
struct FreeTimeProblem {
    OdeProblem ode;  // ode.x0 is t0; ode.xf is ignored
    double tf_guess = 1.0;
    double collapse_tol = 1e-6;  // |b| below this is reported as a collapsed domain
};

enum class OdeMode { Tfc, Spectral, FreeTime };

class OdeSystem {
public:
    OdeSystem(const OdeProblem& p, OdeMode mode);

    OdeMode mode() const { return mode_; }
    const OdeProblem& problem() const { return p_; }
    int n_unknowns() const { return n_unknowns_; }
    int n_xi() const { return n_xi_; }
    int n_rows() const;
    int n_nodes() const { return static_cast<int>(z_.size()); }
    const std::optional<ConstrainedExpression>& ce() const { return ce_; }

    // Node locations in the problem domain for the given unknowns.
    Eigen::VectorXd nodes(const Eigen::VectorXd& X) const;
    double t_final(const Eigen::VectorXd& X) const;
    double b(const Eigen::VectorXd& X) const;

    Eigen::VectorXd loss(const Eigen::VectorXd& X) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& X) const;
    Eigen::VectorXd initial_guess() const;

    // d-th problem-domain derivative of a component at problem-domain points.
    Eigen::VectorXd values(const Eigen::VectorXd& X, int comp, const Eigen::VectorXd& x, int d) const;

    // Residual of the differential equations at arbitrary problem-domain points (rows = points).
    Eigen::MatrixXd residuals(const Eigen::VectorXd& X, const Eigen::VectorXd& x) const;

    // Constraint violation C_i[y] - kappa_i of the represented solution.
    Eigen::VectorXd constraint_errors(const Eigen::VectorXd& X) const;

private:
    struct Affine {
        Eigen::MatrixXd A;  // rows x n_xi
        Eigen::MatrixXd P;  // rows x n_kappa
    };
    Affine affine_at(int comp, const Eigen::VectorXd& z, int d) const;
    Eigen::VectorXd kappa_basis(const Eigen::VectorXd& X, Eigen::MatrixXd* dk) const;
    void residual_jac(double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::MatrixXd> dF) const;

    OdeProblem p_;
    OdeMode mode_;
    std::optional<ConstrainedExpression> ce_;
    std::vector<FreeFunction> spectral_;
    std::vector<int> spectral_offset_;
    std::vector<int> orders_;     // derivative order of each constraint (free-time scaling)
    double z0_ = -1.0, zf_ = 1.0;
    DomainMap map_;
    Eigen::VectorXd z_;
    std::vector<Affine> node_mats_;   // comp * (order + 1) + d
    std::vector<std::vector<Affine>> point_mats_;
    Eigen::VectorXd kappa0_;
    int n_xi_ = 0, n_unknowns_ = 0;
};

struct OdeSolution {
    std::vector<Eigen::VectorXd> xi;  // per component
    Eigen::VectorXd unknowns;
    Eigen::VectorXd loss;
    SolveReport report;
    Eigen::VectorXd nodes;
    Eigen::MatrixXd node_residuals;  // nodes x equations, equal to the loss entries
    Eigen::VectorXd query;
    std::vector<Eigen::MatrixXd> samples;  // per component: query x (order + 1)
    Eigen::MatrixXd query_residuals;
    std::optional<double> tf;
    std::vector<std::string> diagnostics;
    std::shared_ptr<const OdeSystem> system;

    Eigen::VectorXd eval(int comp, const Eigen::VectorXd& x, int d = 0) const {
        return system->values(unknowns, comp, x, d);
    }
    double max_node_residual() const { return node_residuals.size() ? node_residuals.cwiseAbs().maxCoeff() : 0.0; }
};

OdeSolution solve_ode(const OdeProblem& p);
OdeSolution solve_spectral_baseline(const OdeProblem& p);
OdeSolution solve_free_time(const FreeTimeProblem& p);
OdeSolution solve_overconstrained(OdeProblem p, const Eigen::VectorXd& weights);

// Shared driver: affine one-shot or nonlinear least squares, then sampling.
OdeSolution solve_system(std::shared_ptr<const OdeSystem> sys, const Eigen::VectorXd& X0);

}  // namespace tfc
