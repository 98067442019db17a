#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tfc/basis.hpp"

namespace tfc {

struct FunctionalTerm {
    enum class Kind { Point, Integral, Limit };
    int component = 0;
    Kind kind = Kind::Point;
    int order = 0;
    double x = 0.0;
    double a = 0.0, b = 0.0;
    double coef = 1.0;

    static FunctionalTerm point(double x, int d = 0, double coef = 1.0, int comp = 0);
    static FunctionalTerm integral(double a, double b, double coef = 1.0, int comp = 0);
    static FunctionalTerm limit(int d = 0, double coef = 1.0, int comp = 0);
};

struct LinearConstraint {
    std::vector<FunctionalTerm> terms;
    double kappa = 0.0;
    int embed = -1;  // component that carries the constraint; -1 = first listed

    int target() const { return embed >= 0 ? embed : terms.front().component; }
};

LinearConstraint point_constraint(double x, double value, int d = 0, int comp = 0);

// A support function with exact derivatives; integral and limit are optional.
struct SupportFunction {
    std::function<double(double x, int d)> eval;
    std::function<double(double a, double b)> integral;
    std::function<double(int d)> limit;

    static SupportFunction polynomial(std::vector<double> coeffs);
    // ((x - shift) / scale)^p
    static SupportFunction monomial(int p, double shift = 0.0, double scale = 1.0);
};

// Evaluation access to an arbitrary (vector) function used as g or y.
struct FunctionHandle {
    std::function<double(int comp, double x, int d)> eval;
    std::function<double(int comp, double a, double b)> integral;
    std::function<double(int comp, int d)> limit;
};

// Value of a linear functional applied to a function handle.
double apply_functional(const LinearConstraint& c, const FunctionHandle& g);

// rho_i = kappa_i - C_i[g]
double projection(const LinearConstraint& c, const FunctionHandle& g);

// Support matrix for single-component constraints, S_ij = C_i[s_j].
Eigen::MatrixXd support_matrix(const std::vector<LinearConstraint>& cons, const std::vector<SupportFunction>& supports);

// Free function g = xi^T h(z(x)) over a subset of basis columns.
class FreeFunction {
public:
    FreeFunction() = default;
    FreeFunction(BasisKind kind, DomainMap map, std::vector<int> columns);

    int size() const { return static_cast<int>(columns_.size()); }
    const std::vector<int>& columns() const { return columns_; }
    const DomainMap& map() const { return map_; }
    const BasisKind& kind() const { return kind_; }

    // n x size() matrix of d-th problem-domain derivatives.
    Eigen::MatrixXd eval(const Eigen::VectorXd& x, int d) const;
    Eigen::RowVectorXd row(double x, int d) const;
    Eigen::RowVectorXd integral(double a, double b) const;
    Eigen::RowVectorXd limit(int d) const;

private:
    BasisKind kind_;
    DomainMap map_;
    std::vector<int> columns_;
    int width_ = 0;
};

struct ComponentSpec {
    BasisKind kind;
    int m = 1;
    DomainMap map;
    std::vector<SupportFunction> supports;  // empty: monomials chosen automatically
};

// y_c(x) = g_c(x) + sum_j phi_j(x) rho_j over all constraints embedded in component c.
// Every evaluation is affine in the stacked coefficients xi and the constraint values kappa.
class ConstrainedExpression {
public:
    ConstrainedExpression(std::vector<ComponentSpec> comps, std::vector<LinearConstraint> cons,
                          std::optional<Eigen::VectorXd> weights = std::nullopt);

    int n_components() const { return static_cast<int>(comps_.size()); }
    int n_constraints() const { return static_cast<int>(cons_.size()); }
    int n_xi() const { return n_xi_; }
    int xi_offset(int comp) const { return comps_[comp].offset; }
    int xi_size(int comp) const { return comps_[comp].g.size(); }
    const FreeFunction& free_function(int comp) const { return comps_[comp].g; }
    const std::vector<LinearConstraint>& constraints() const { return cons_; }
    bool weighted() const { return weighted_; }

    Eigen::VectorXd kappa() const;
    void set_kappa(const Eigen::VectorXd& kappa);

    // Constraints embedded in a component, in the order used by its switching functions.
    const std::vector<int>& embedded(int comp) const { return comps_[comp].cons; }
    const Eigen::MatrixXd& support_matrix(int comp) const { return comps_[comp].S; }
    const Eigen::MatrixXd& alpha(int comp) const { return comps_[comp].alpha; }

    // phi_j^(d)(x) for the j-th constraint embedded in comp (n x k_c).
    Eigen::MatrixXd switching(int comp, const Eigen::VectorXd& x, int d) const;

    struct Matrices {
        Eigen::MatrixXd A;  // n x n_xi
        Eigen::MatrixXd P;  // n x n_kappa
    };
    // y_c^(d)(x) = A xi + P kappa
    Matrices matrices(int comp, const Eigen::VectorXd& x, int d) const;

    Eigen::VectorXd evaluate(int comp, const Eigen::VectorXd& xi, const Eigen::VectorXd& x, int d) const;

    // C_i applied to the expression itself.
    double apply(int i, const Eigen::VectorXd& xi) const;

    FunctionHandle as_function(const Eigen::VectorXd& xi) const;

private:
    struct Component {
        ComponentSpec spec;
        FreeFunction g;
        int offset = 0;
        std::vector<int> cons;
        std::vector<SupportFunction> supports;
        Eigen::MatrixXd S;      // k_c x n_s
        Eigen::MatrixXd alpha;  // n_s x k_c
        Eigen::MatrixXd Qxi;    // k_c x n_xi  (rho = Qk kappa - Qxi xi)
        Eigen::MatrixXd Qk;     // k_c x n_kappa
    };

    struct AffineRow {
        Eigen::RowVectorXd xi;
        Eigen::RowVectorXd kappa;
    };

    AffineRow apply_term(const FunctionalTerm& t) const;
    Eigen::RowVectorXd switching_term(int comp, const FunctionalTerm& t) const;
    void build_component(int c);

    std::vector<Component> comps_;
    std::vector<LinearConstraint> cons_;
    std::optional<Eigen::VectorXd> weights_;
    std::vector<bool> built_;
    bool weighted_ = false;
    int n_xi_ = 0;
};

// Upper/lower bound projection of an equality-constrained expression.
class InequalityExpression {
public:
    using Bound = std::function<double(double x, int d)>;
    InequalityExpression(const ConstrainedExpression& ce, int comp, Bound f_upper, Bound f_lower);

    Eigen::VectorXd evaluate(const Eigen::VectorXd& xi, const Eigen::VectorXd& x, int d = 0) const;

private:
    const ConstrainedExpression& ce_;
    int comp_;
    Bound fu_, fl_;
};

class ConstraintError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tfc
