#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "tfc/constraints.hpp"

using namespace tfc;
using Kind = FunctionalTerm::Kind;

namespace {

ComponentSpec cheb(int m, double x0, double xf) { return {BasisKind::chebyshev(), m, domain_map(x0, xf, -1, 1), {}}; }

Eigen::VectorXd random_vector(int n, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> d;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = d(gen);
    return v;
}

Eigen::VectorXd grid(double a, double b, int n) { return Eigen::VectorXd::LinSpaced(n, a, b); }

std::vector<SupportFunction> monomials(std::initializer_list<int> powers) {
    std::vector<SupportFunction> s;
    for (int p : powers) s.push_back(SupportFunction::monomial(p));
    return s;
}

// Reference evaluation of y = g + sum phi_j (kappa_j - C_j[g]) for an arbitrary single-component g.
double reference_ce(const ConstrainedExpression& ce, const FunctionHandle& g, double x, int d) {
    Eigen::VectorXd xv(1);
    xv[0] = x;
    const Eigen::MatrixXd phi = ce.switching(0, xv, d);
    double y = g.eval(0, x, d);
    const auto& idx = ce.embedded(0);
    for (std::size_t j = 0; j < idx.size(); ++j) y += phi(0, j) * projection(ce.constraints()[idx[j]], g);
    return y;
}

FunctionHandle polynomial_handle(std::vector<double> c) {
    const SupportFunction p = SupportFunction::polynomial(c);
    FunctionHandle h;
    h.eval = [p](int, double x, int d) { return p.eval(x, d); };
    h.integral = [p](int, double a, double b) { return p.integral(a, b); };
    h.limit = [p](int, int d) { return p.limit(d); };
    return h;
}

}  // namespace

TEST_CASE("support matrix for point and derivative constraints") {
    std::vector<LinearConstraint> cons{point_constraint(0, 1), point_constraint(1, 2, 1), point_constraint(2, 3)};
    Eigen::MatrixXd expect(3, 3);
    expect << 1, 0, 0, 0, 2, 3, 1, 4, 8;
    CHECK((support_matrix(cons, monomials({0, 2, 3})) - expect).norm() < 1e-14);

    CHECK_THROWS_AS(ConstrainedExpression({{BasisKind::chebyshev(), 5, domain_map(0, 2, -1, 1), monomials({0, 1, 2})}}, cons),
                    ConstraintError);
    ConstrainedExpression ok({{BasisKind::chebyshev(), 5, domain_map(0, 2, -1, 1), monomials({0, 2, 3})}}, cons);
    CHECK((ok.support_matrix(0) - expect).norm() < 1e-14);
}

TEST_CASE("integral constraints") {
    LinearConstraint c1{{FunctionalTerm::integral(0, 3)}, 1.0};
    LinearConstraint c2{{FunctionalTerm::integral(1, 2)}, 2.0};
    Eigen::MatrixXd expect(2, 2);
    expect << 3, 9, 1, 7.0 / 3.0;
    CHECK((support_matrix({c1, c2}, monomials({0, 2})) - expect).norm() < 1e-14);

    ConstrainedExpression ce({{BasisKind::chebyshev(), 6, domain_map(0, 3, -1, 1), monomials({0, 2})}}, {c1, c2});
    const Eigen::VectorXd x = grid(0, 3, 7);
    const Eigen::MatrixXd phi = ce.switching(0, x, 0);
    for (int i = 0; i < x.size(); ++i) {
        CHECK(phi(i, 0) == doctest::Approx((3 * x[i] * x[i] - 7) / 6));
        CHECK(phi(i, 1) == doctest::Approx((-3 * x[i] * x[i] + 9) / 2));
    }
}

TEST_CASE("two point switching functions and straight line") {
    const double x1 = 0.5, x2 = 2.0;
    ConstrainedExpression ce({cheb(4, 0, 3)}, {point_constraint(x1, 1.0), point_constraint(x2, 4.0)});
    const Eigen::VectorXd x = grid(0, 3, 11);
    const Eigen::MatrixXd phi = ce.switching(0, x, 0);
    for (int i = 0; i < x.size(); ++i) CHECK(phi(i, 0) == doctest::Approx((x2 - x[i]) / (x2 - x1)));
    const Eigen::VectorXd y = ce.evaluate(0, Eigen::VectorXd::Zero(4), x, 0);
    for (int i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(1.0 + 2.0 * (x[i] - x1)));
}

TEST_CASE("four-constraint cubic switching functions") {
    const double a = 0.3, b = 1.7, D = b - a;
    std::vector<LinearConstraint> cons{point_constraint(a, 0), point_constraint(b, 0), point_constraint(a, 0, 1),
                                       point_constraint(b, 0, 1)};
    ConstrainedExpression ce({cheb(6, a, b)}, cons);
    const Eigen::VectorXd x = grid(a, b, 9);
    const Eigen::MatrixXd phi = ce.switching(0, x, 0);
    for (int i = 0; i < x.size(); ++i) {
        const double t = x[i];
        const double p1 = (-b * b * (3 * a - b) + 6 * a * b * t - 3 * (a + b) * t * t + 2 * t * t * t) / (D * D * D);
        const double p2 = (-a * a * (a - 3 * b) - 6 * a * b * t + 3 * (a + b) * t * t - 2 * t * t * t) / (D * D * D);
        const double p3 = (-a * b * b + b * (2 * a + b) * t - (a + 2 * b) * t * t + t * t * t) / (D * D);
        const double p4 = (-a * a * b + a * (a + 2 * b) * t - (2 * a + b) * t * t + t * t * t) / (D * D);
        CHECK(std::abs(phi(i, 0) - p1) < 1e-12);
        CHECK(std::abs(phi(i, 1) - p2) < 1e-12);
        CHECK(std::abs(phi(i, 2) - p3) < 1e-12);
        CHECK(std::abs(phi(i, 3) - p4) < 1e-12);
    }
}

TEST_CASE("projection functionals") {
    FunctionHandle zero = polynomial_handle({0.0});
    CHECK(projection(point_constraint(0, 1), zero) == 1.0);
    FunctionHandle lin = polynomial_handle({0.0, 1.0});
    LinearConstraint integ{{FunctionalTerm::integral(1, 2)}, 2.0};
    CHECK(projection(integ, lin) == doctest::Approx(0.5));
    CHECK(projection(point_constraint(3.0, 3.0), lin) == 0.0);
}

namespace {

struct Case {
    const char* name;
    std::vector<ComponentSpec> comps;
    std::vector<LinearConstraint> cons;
};

std::vector<Case> constraint_zoo() {
    std::vector<Case> zoo;
    zoo.push_back({"point", {cheb(8, -1, 2)}, {point_constraint(-1, 0.3), point_constraint(0.5, -2), point_constraint(2, 1)}});
    zoo.push_back({"derivative", {cheb(8, 0, 2)}, {point_constraint(0, 1), point_constraint(1, 2, 1), point_constraint(2, 3)}});
    zoo.push_back({"second derivative", {cheb(10, 0, 1)}, {point_constraint(0, 1, 2), point_constraint(1, -1), point_constraint(0.2, 4, 1)}});
    zoo.push_back({"integral", {cheb(8, 0, 3)}, {{{FunctionalTerm::integral(0, 3)}, 1.0}, {{FunctionalTerm::integral(1, 2)}, 2.0}}});
    // y(0) = y(1) and 3 = int_0^1 y + pi y'(0)
    zoo.push_back({"linear",
                   {cheb(8, 0, 1)},
                   {{{FunctionalTerm::point(1), FunctionalTerm::point(0, 0, -1)}, 0.0},
                    {{FunctionalTerm::integral(0, 1), FunctionalTerm::point(0, 1, std::numbers::pi)}, 3.0}}});
    zoo.push_back({"relative", {cheb(8, 0, 2)}, {{{FunctionalTerm::point(0, 1), FunctionalTerm::point(2, 1, -1)}, 0.0}}});
    // x(0) = 2 y(0) + int_{-1}^{1} z and y'(0) = 2 x(1) - z(1), both carried by x
    zoo.push_back({"component",
                   {cheb(7, -1, 1), cheb(7, -1, 1), cheb(7, -1, 1)},
                   {{{FunctionalTerm::point(0, 0, 1, 0), FunctionalTerm::point(0, 0, -2, 1), FunctionalTerm::integral(-1, 1, -1, 2)}, 0.0, 0},
                    {{FunctionalTerm::point(0, 1, 1, 1), FunctionalTerm::point(1, 0, -2, 0), FunctionalTerm::point(1, 0, 1, 2)}, 0.0, 0}}});
    // x(0) = 0, y(0) = 0, y(1) = y(2), 4 = 2 y(1) - int_0^3 x
    zoo.push_back({"mixed",
                   {cheb(7, 0, 3), cheb(7, 0, 3)},
                   {point_constraint(0, 0, 0, 0),
                    point_constraint(0, 0, 0, 1),
                    {{FunctionalTerm::point(1, 0, 1, 1), FunctionalTerm::point(2, 0, -1, 1)}, 0.0},
                    {{FunctionalTerm::point(1, 0, 2, 1), FunctionalTerm::integral(0, 3, -1, 0)}, 4.0, 0}}});
    return zoo;
}

}  // namespace

TEST_CASE("constraint satisfaction under random coefficients") {
    for (const auto& c : constraint_zoo()) {
        INFO(c.name);
        ConstrainedExpression ce(c.comps, c.cons);
        for (unsigned trial = 0; trial < 100; ++trial) {
            const Eigen::VectorXd xi = random_vector(ce.n_xi(), trial);
            for (int i = 0; i < ce.n_constraints(); ++i) CHECK(std::abs(ce.apply(i, xi) - c.cons[i].kappa) < 1e-9);
        }
    }
}

TEST_CASE("switching functions produce the Kronecker delta") {
    for (const auto& c : constraint_zoo()) {
        INFO(c.name);
        ConstrainedExpression ce(c.comps, c.cons);
        for (int comp = 0; comp < ce.n_components(); ++comp) {
            const Eigen::MatrixXd& S = ce.support_matrix(comp);
            if (S.size() == 0) continue;
            // C_i[phi_j] = S alpha
            const Eigen::MatrixXd K = S * ce.alpha(comp);
            CHECK((K - Eigen::MatrixXd::Identity(K.rows(), K.cols())).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("component constraint embedding choice") {
    auto base = constraint_zoo()[7];
    for (int embed : {0, 1}) {
        auto cons = base.cons;
        cons[3].embed = embed;
        ConstrainedExpression ce(base.comps, cons);
        for (unsigned trial = 0; trial < 20; ++trial) {
            const Eigen::VectorXd xi = random_vector(ce.n_xi(), 50 + trial);
            for (int i = 0; i < 4; ++i) CHECK(std::abs(ce.apply(i, xi) - cons[i].kappa) < 1e-9);
        }
    }
}

TEST_CASE("infinite constraints with a rational support") {
    SupportFunction rational;
    rational.eval = [](double x, int d) {
        // (x-1)/(x+1) = 1 - 2/(x+1)
        if (d == 0) return 1.0 - 2.0 / (x + 1);
        double f = 2.0;
        for (int k = 1; k < d; ++k) f *= -(k + 1);
        return f * std::pow(x + 1, -(d + 1));
    };
    rational.limit = [](int d) { return d == 0 ? 1.0 : 0.0; };
    std::vector<SupportFunction> s{SupportFunction::monomial(0), SupportFunction::monomial(1), rational};
    std::vector<LinearConstraint> cons{point_constraint(0, 0), point_constraint(0, 0, 1), {{FunctionalTerm::limit(1)}, 1.0}};
    Eigen::MatrixXd expect(3, 3);
    expect << 1, 0, -1, 0, 1, 2, 0, 1, 0;
    CHECK((support_matrix(cons, s) - expect).norm() < 1e-14);

    ConstrainedExpression ce({{BasisKind::elm(3, 4.0), 6, domain_map(0, 5, 0, 5), s}}, cons);
    const Eigen::VectorXd x = grid(0, 5, 6);
    const Eigen::MatrixXd phi = ce.switching(0, x, 0);
    for (int i = 0; i < x.size(); ++i) {
        const double r = (x[i] - 1) / (x[i] + 1);
        CHECK(phi(i, 0) == doctest::Approx(1.0));
        CHECK(phi(i, 1) == doctest::Approx(0.5 + r / 2));
        CHECK(phi(i, 2) == doctest::Approx(-0.5 + x[i] - r / 2));
    }
    for (unsigned trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd xi = random_vector(ce.n_xi(), trial);
        for (int i = 0; i < 3; ++i) CHECK(std::abs(ce.apply(i, xi) - cons[i].kappa) < 1e-9);
    }
    // polynomial supports have no finite slope at infinity
    CHECK_THROWS_AS(support_matrix(cons, monomials({0, 1, 2})), ConstraintError);
}

TEST_CASE("evaluation matches the switching-projection definition") {
    auto c = constraint_zoo()[4];
    ConstrainedExpression ce(c.comps, c.cons);
    const Eigen::VectorXd xi = random_vector(ce.n_xi(), 9);
    const FreeFunction& g = ce.free_function(0);
    FunctionHandle gh;
    gh.eval = [&](int, double x, int d) { return g.row(x, d).dot(xi); };
    gh.integral = [&](int, double a, double b) { return g.integral(a, b).dot(xi); };
    const Eigen::VectorXd x = grid(0, 1, 9);
    for (int d = 0; d <= 2; ++d) {
        const Eigen::VectorXd y = ce.evaluate(0, xi, x, d);
        for (int i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - reference_ce(ce, gh, x[i], d)) < 1e-11);
    }
}

TEST_CASE("non-uniqueness and projection theorems") {
    auto c = constraint_zoo()[1];
    ConstrainedExpression ce(c.comps, c.cons);
    const Eigen::VectorXd x = grid(0, 2, 13);
    const std::vector<double> gc{0.3, -1.2, 0.7, 0.05, -0.4};
    FunctionHandle g = polynomial_handle(gc);
    std::vector<double> shifted = gc;
    const double beta = 1.7;
    // the automatically chosen supports are monomials in (x - 1), so add beta (x - 1)^2 worth of any of them
    SupportFunction s = SupportFunction::monomial(0, 1.0, 1.0);
    shifted[0] += beta * s.eval(0, 0);
    FunctionHandle g2 = polynomial_handle(shifted);
    for (int i = 0; i < x.size(); ++i) CHECK(std::abs(reference_ce(ce, g, x[i], 0) - reference_ce(ce, g2, x[i], 0)) < 1e-10);

    // beta s_j for each support of an explicit set
    ConstrainedExpression ce2({{BasisKind::chebyshev(), 8, domain_map(0, 2, -1, 1), monomials({0, 2, 3})}}, c.cons);
    for (int p : {0, 2, 3}) {
        std::vector<double> gp = gc;
        gp.resize(5, 0.0);
        gp[p] += beta;
        FunctionHandle gb = polynomial_handle(gp);
        for (int i = 0; i < x.size(); ++i) CHECK(std::abs(reference_ce(ce2, g, x[i], 0) - reference_ce(ce2, gb, x[i], 0)) < 1e-10);
    }

    // y(x, y(x, g)) = y(x, g)
    FunctionHandle y;
    y.eval = [&](int, double xx, int d) { return reference_ce(ce, g, xx, d); };
    for (int i = 0; i < x.size(); ++i) CHECK(std::abs(reference_ce(ce, y, x[i], 0) - reference_ce(ce, g, x[i], 0)) < 1e-9);
}

TEST_CASE("dependent basis columns are dropped") {
    // supports 1 and x: the first two Chebyshev columns would be annihilated
    ConstrainedExpression ce({cheb(5, 0, 10)}, {point_constraint(0, 1), point_constraint(0, 0, 1)});
    const auto& cols = ce.free_function(0).columns();
    REQUIRE(cols.size() == 5);
    CHECK(cols.front() == 2);
    CHECK(cols.back() == 6);
}

TEST_CASE("weighted expressions reduce to the exact ones") {
    std::vector<LinearConstraint> two{point_constraint(0.2, 1.0), point_constraint(0.8, 3.0)};
    Eigen::VectorXd w(2);
    w << 1, 0;
    ConstrainedExpression one({{BasisKind::chebyshev(), 6, domain_map(0, 1, -1, 1), monomials({0})}}, two, w);
    const Eigen::VectorXd x = grid(0, 1, 7);
    for (unsigned trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd xi = random_vector(6, trial);
        CHECK(std::abs(one.apply(0, xi) - 1.0) < 1e-12);
        // y = g + (y1 - g(x1))
        const FreeFunction& g = one.free_function(0);
        const Eigen::VectorXd y = one.evaluate(0, xi, x, 0);
        for (int i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - (g.row(x[i], 0).dot(xi) + 1.0 - g.row(0.2, 0).dot(xi))) < 1e-12);
    }

    w << 1, 1;
    ConstrainedExpression eq({{BasisKind::chebyshev(), 6, domain_map(0, 1, -1, 1), monomials({0})}}, two, w);
    for (unsigned trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd xi = random_vector(6, 10 + trial);
        CHECK(std::abs(std::abs(eq.apply(0, xi) - 1.0) - std::abs(eq.apply(1, xi) - 3.0)) < 1e-12);
    }

    std::vector<LinearConstraint> three{point_constraint(0.0, 1.0), point_constraint(0.5, -1.0), point_constraint(1.0, 2.0)};
    Eigen::VectorXd w3(3);
    w3 << 1, 1, 0;
    ConstrainedExpression wce({{BasisKind::chebyshev(), 6, domain_map(0, 1, -1, 1), monomials({0, 1})}}, three, w3);
    ConstrainedExpression exact({{BasisKind::chebyshev(), 6, domain_map(0, 1, -1, 1), monomials({0, 1})}},
                                {three[0], three[1]});
    const Eigen::VectorXd xi = random_vector(6, 77);
    REQUIRE(wce.free_function(0).columns() == exact.free_function(0).columns());
    CHECK((wce.evaluate(0, xi, x, 0) - exact.evaluate(0, xi, x, 0)).cwiseAbs().maxCoeff() < 1e-12);

    w3.setZero();
    CHECK_THROWS(ConstrainedExpression({{BasisKind::chebyshev(), 6, domain_map(0, 1, -1, 1), monomials({0, 1})}}, three, w3));
}

TEST_CASE("inequality projection") {
    ConstrainedExpression ce({cheb(10, -1, 1)}, {point_constraint(0.0, 0.5)});
    auto up = [](double, int d) { return d == 0 ? 1.0 : 0.0; };
    auto lo = [](double, int d) { return d == 0 ? -1.0 : 0.0; };
    InequalityExpression ie(ce, 0, up, lo);
    const Eigen::VectorXd x = grid(-1, 1, 2001);
    for (unsigned trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd xi = 3.0 * random_vector(10, 300 + trial);
        const Eigen::VectorXd yhat = ce.evaluate(0, xi, x, 0);
        const Eigen::VectorXd y = ie.evaluate(xi, x);
        CHECK(y.maxCoeff() <= 1.0 + 1e-12);
        CHECK(y.minCoeff() >= -1.0 - 1e-12);
        for (int i = 0; i < x.size(); ++i) {
            if (yhat[i] <= 1.0 && yhat[i] >= -1.0) CHECK(y[i] == yhat[i]);
            if (yhat[i] > 1.0) CHECK(y[i] == 1.0);
        }
        Eigen::VectorXd x0(1);
        x0[0] = 0.0;
        CHECK(std::abs(ie.evaluate(xi, x0)[0] - 0.5) < 1e-12);
    }
    ConstrainedExpression bad({cheb(10, -1, 1)}, {point_constraint(0.0, 2.0)});
    CHECK_THROWS_AS(InequalityExpression(bad, 0, up, lo), ConstraintError);
}
