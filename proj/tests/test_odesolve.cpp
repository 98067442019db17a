#include <doctest.h>

#include <random>

#include "fixtures.hpp"

using namespace tfc;
using namespace fixtures;

namespace {

Eigen::VectorXd random_vector(int n, unsigned seed, double scale = 1.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = u(gen);
    return v;
}

double max_error(const OdeSolution& s, double (*exact)(double)) {
    double e = 0.0;
    for (int i = 0; i < s.query.size(); ++i) e = std::max(e, std::abs(s.samples[0](i, 0) - exact(s.query[i])));
    return e;
}

double jac_mismatch(const OdeSystem& sys, const Eigen::VectorXd& X) {
    const Eigen::MatrixXd J = sys.jacobian(X);
    const Eigen::MatrixXd Jfd = fd_jacobian([&](const Eigen::VectorXd& v) { return sys.loss(v); }, X);
    return (J - Jfd).cwiseAbs().maxCoeff() / std::max(1.0, J.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("analytic oracles satisfy their equations") {
    // central-difference substitution of the candidate solutions
    const double h = 1e-4;
    for (double x : {0.3, 1.1, 2.5, 3.0}) {
        auto d1 = [&](auto f) { return (f(x + h) - f(x - h)) / (2 * h); };
        auto d2 = [&](auto f) { return (f(x + h) - 2 * f(x) + f(x - h)) / (h * h); };
        CHECK(std::abs(d2(bvp_exact) + bvp_exact(x) * d1(bvp_exact) - bvp_forcing(x)) < 1e-6);
        for (int a : {0, 1, 5}) {
            auto y = [a](double t) { return lane_emden_exact(a, t); };
            CHECK(std::abs(x * d2(y) + 2 * d1(y) + x * std::pow(y(x), a)) < 1e-6);
        }
    }
}

TEST_CASE("lane-emden") {
    const auto s0 = solve_ode(lane_emden(0, 2));
    CHECK(s0.report.iterations == 1);
    CHECK(max_error(s0, [](double x) { return lane_emden_exact(0, x); }) < 1e-12);

    const auto s1 = solve_ode(lane_emden(1, 22));
    CHECK(s1.report.iterations == 1);
    CHECK(max_error(s1, [](double x) { return lane_emden_exact(1, x); }) < 1e-10);
    CHECK(s1.eval(0, Eigen::VectorXd::Constant(1, std::numbers::pi / 2))[0] ==
          doctest::Approx(2.0 / std::numbers::pi).epsilon(1e-10));

    const auto s5 = solve_ode(lane_emden(5, 62));
    CHECK(s5.report.converged());
    CHECK(max_error(s5, [](double x) { return lane_emden_exact(5, x); }) < 1e-9);
}

TEST_CASE("node residuals are the final loss entries") {
    const auto s = solve_ode(lane_emden(5, 30));
    CHECK((s.node_residuals.col(0) - s.system->loss(s.unknowns)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((s.node_residuals.col(0) - s.system->residuals(s.unknowns, s.nodes).col(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.query.size() == 10 * 99 + 1);
}

TEST_CASE("boundary-value problem") {
    const auto s = solve_ode(bvp(22));
    CHECK(s.report.converged());
    CHECK(max_error(s, bvp_exact) < 1e-9);

    double prev = 1e300;
    double floor = 1e300;
    for (int m = 2; m <= 22; m += 4) {
        const double e = max_error(solve_ode(bvp(m)), bvp_exact);
        if (prev > 1e-9) CHECK(e < prev);
        prev = e;
        floor = std::min(floor, e);
    }
    CHECK(floor <= 1e-9);
}

TEST_CASE("tfc against the spectral baseline") {
    const auto p = lane_emden(0, 2);
    const auto tfc = solve_ode(p);
    const auto spec = solve_spectral_baseline(p);
    auto exact = [](double x) { return lane_emden_exact(0, x); };
    CHECK(tfc.nodes == spec.nodes);
    CHECK(max_error(tfc, exact) <= max_error(spec, exact));

    for (const auto& q : {bvp(22), lane_emden(1, 22)}) {
        const auto a = solve_ode(q);
        const auto b = solve_spectral_baseline(q);
        const double ta = a.system->constraint_errors(a.unknowns).cwiseAbs().maxCoeff();
        const double tb = b.system->constraint_errors(b.unknowns).cwiseAbs().maxCoeff();
        CHECK(ta <= 1e-10);
        CHECK(ta <= tb);
        // spectral constraint rows are least-squares rows of the same loss
        CHECK(tb <= 10 * b.report.final_max_residual + 1e-15);
    }
}

TEST_CASE("analytic jacobians match finite differences") {
    for (unsigned seed = 0; seed < 3; ++seed) {
        const OdeSystem le(lane_emden(5, 20, 40), OdeMode::Tfc);
        CHECK(jac_mismatch(le, random_vector(le.n_unknowns(), seed, 0.1)) < 1e-6);

        auto q = bvp(15, 40);
        const OdeSystem bv(q, OdeMode::Tfc);
        CHECK(jac_mismatch(bv, random_vector(bv.n_unknowns(), seed)) < 1e-6);
        q.jacobian = nullptr;
        const OdeSystem bvfd(q, OdeMode::Tfc);
        CHECK(jac_mismatch(bvfd, random_vector(bvfd.n_unknowns(), seed)) < 1e-6);
        const OdeSystem sp(q, OdeMode::Spectral);
        CHECK(jac_mismatch(sp, random_vector(sp.n_unknowns(), seed)) < 1e-6);

        auto ft = free_time();
        ft.ode.m = {8, 9};
        ft.ode.N = 12;
        ft.ode.constraints.push_back(point_constraint(1.0, 0.5, 1, 1));
        ft.ode.free_kappa = {0};
        const OdeSystem fs(ft.ode, OdeMode::FreeTime);
        Eigen::VectorXd X = random_vector(fs.n_unknowns(), seed, 0.3);
        X[X.size() - 1] = 0.7;
        CHECK(jac_mismatch(fs, X) < 1e-6);
    }
}

TEST_CASE("free final time") {
    // H = k A B on x = A e^{sqrt2 t} + B e^{-sqrt2 t}; with x(0) = x(tf) = 1 neither mode vanishes, so H(tf)
    // decays toward zero only as tf grows and the cost tends to sqrt(2).
    const auto p = free_time();
    double prev = 1e300;
    for (double tf : {2.0, 4.0, 8.0, 12.0}) {
        OdeProblem q = p.ode;
        q.point_rows.clear();
        q.x0 = 0.0;
        q.xf = tf;
        q.affine = true;
        q.constraints = {point_constraint(0.0, 1.0), point_constraint(tf, 1.0)};
        const auto s = solve_ode(q);
        const Eigen::VectorXd T = Eigen::VectorXd::Constant(1, tf);
        const double h = free_time_hamiltonian(s.eval(0, T)[0], s.eval(1, T)[0]);
        CHECK(h > 0.0);
        CHECK(h < prev);
        prev = h;
    }

    const auto s = solve_free_time(p);
    REQUIRE(s.tf.has_value());
    const double tf = *s.tf;
    CHECK(s.diagnostics.empty());
    CHECK(tf > 15.0);
    CHECK(std::abs(s.loss[s.loss.size() - 1]) < 1e-10);
    double hmax = 0.0;
    for (int i = 0; i < s.query.size(); ++i)
        hmax = std::max(hmax, std::abs(free_time_hamiltonian(s.samples[0](i, 0), s.samples[1](i, 0))));
    CHECK(hmax < 1e-3);
    const double cost = integrate(
        [&](double t) {
            const Eigen::VectorXd tt = Eigen::VectorXd::Constant(1, t);
            const double x = s.eval(0, tt)[0], u = s.eval(1, tt)[0];
            return 0.5 * (x * x + u * u);
        },
        0.0, tf);
    CHECK(std::abs(cost - std::sqrt(2.0)) < 1e-3);
    CHECK(std::abs(s.eval(0, Eigen::VectorXd::Constant(1, tf))[0] - 1.0) < 1e-12);
    CHECK(std::abs(s.eval(0, Eigen::VectorXd::Zero(1))[0] - 1.0) < 1e-12);
}

TEST_CASE("free-time derivative constraints scale with the domain") {
    // x' = 1, x(t0) = 0, x'(tf) = 1, x(tf) = 2  ->  tf = 2
    FreeTimeProblem p;
    p.ode.order = 1;
    p.ode.m = {6};
    p.ode.N = 10;
    p.ode.constraints = {point_constraint(-1.0, 0.0), point_constraint(1.0, 1.0, 1)};
    p.ode.residual = [](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) { F[0] = Y(0, 1) - 1.0; };
    p.ode.point_rows.push_back({1.0, 1, [](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
                                    F[0] = Y(0, 0) - 2.0;
                                }});
    p.ode.nls.tol = 1e-14;
    const auto s = solve_free_time(p);
    CHECK(s.report.converged());
    CHECK(*s.tf == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("collapsed domains are diagnosed") {
    // x' = 0 with x(tf) = 1 and the terminal row x(tf) - t_f^-1 cannot close without tf -> infinity
    FreeTimeProblem p;
    p.ode.order = 1;
    p.ode.m = {4};
    p.ode.N = 8;
    p.ode.constraints = {point_constraint(-1.0, 1.0)};
    p.ode.residual = [](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) { F[0] = Y(0, 1); };
    p.ode.point_rows.push_back({1.0, 1, [](double t, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
                                    F[0] = Y(0, 0) - 1.0 - 1.0 / t;
                                }});
    p.ode.nls.max_iter = 40;
    p.ode.nls.stop_rule = StopRule::MaxAbsResidual;
    const auto s = solve_free_time(p);
    REQUIRE(!s.diagnostics.empty());
    CHECK(s.diagnostics.front().find("domain collapse") != std::string::npos);
}

TEST_CASE("merging data with dynamics") {
    OdeProblem p;
    p.order = 2;
    p.x0 = -1.0;
    p.xf = 1.0;
    p.m = {20};
    p.N = 50;
    p.constraints = {point_constraint(-1.0, 5.0), point_constraint(-0.5, 4.515), point_constraint(1.0, 2.0)};
    p.supports = {{SupportFunction::monomial(0), SupportFunction::monomial(1)}};
    p.affine = true;
    p.residual = [](double, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
        F[0] = Y(0, 2) + 2 * Y(0, 1) + Y(0, 0);
    };
    const auto s = solve_overconstrained(p, Eigen::VectorXd::Ones(3));
    CHECK(s.max_node_residual() < 1e-12);
    // the result lies in the solution family e^{-x}(c1 x + c2): fit c from two points, check a third
    const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(3, -0.8, 0.6);
    const Eigen::VectorXd ys = s.eval(0, xs);
    Eigen::Matrix2d M;
    M << xs[0], 1, xs[1], 1;
    const Eigen::Vector2d c = M.lu().solve(Eigen::Vector2d(ys[0] * std::exp(xs[0]), ys[1] * std::exp(xs[1])));
    CHECK(std::abs(std::exp(-xs[2]) * (c[0] * xs[2] + c[1]) - ys[2]) < 1e-10);
    // the observations are not met exactly
    const double miss = std::abs(s.eval(0, Eigen::VectorXd::Constant(1, -0.5))[0] - 4.515);
    CHECK(miss > 1e-6);
}

TEST_CASE("initial to boundary value transformation") {
    auto base = [] {
        OdeProblem p;
        p.order = 2;
        p.x0 = -1.0;
        p.xf = 1.0;
        p.m = {60};
        p.N = 100;
        p.affine = true;
        p.residual = [](double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::VectorXd> F) {
            F[0] = Y(0, 2) + (std::cos(3 * x * x) - 3 * x + 1) * Y(0, 1) +
                   (6 * std::sin(4 * x * x) - std::exp(std::cos(3 * x))) * Y(0, 0) -
                   2 * (1 - std::sin(3 * x)) * (3 * x - std::numbers::pi) / (4 - x);
        };
        return p;
    };
    const LinearConstraint c1 = point_constraint(-1.0, -2.0), c2 = point_constraint(-1.0, -2.0, 1),
                           c3 = point_constraint(1.0, 2.0);
    OdeProblem ivp = base(), bvp2 = base(), over = base();
    ivp.constraints = {c1, c2};
    bvp2.constraints = {c1, c3};
    over.constraints = {c1, c2, c3};
    over.supports = {{SupportFunction::monomial(0), SupportFunction::monomial(1)}};
    const auto si = solve_ode(ivp), sb = solve_ode(bvp2);
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(41, -1, 1);

    for (double g : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) {
        Eigen::VectorXd w(3);
        w << 1.0, 1.0 - g, g;
        const auto s = solve_overconstrained(over, w);
        CHECK(s.max_node_residual() < 1e-12);
        if (g == 0.0) CHECK((s.eval(0, x) - si.eval(0, x)).cwiseAbs().maxCoeff() < 1e-10);
        if (g == 1.0) CHECK((s.eval(0, x) - sb.eval(0, x)).cwiseAbs().maxCoeff() < 1e-10);
    }

    // pseudo-switching functions at gamma = 1/2 from the closed form
    const double g = 0.5, den = 1 + 4 * g - g * g;
    Eigen::VectorXd w(3);
    w << 1.0, 1.0 - g, g;
    over.weights = w;
    const OdeSystem sys(over, OdeMode::Tfc);
    const Eigen::MatrixXd phi = sys.ce()->switching(0, x, 0);
    for (int i = 0; i < x.size(); ++i) {
        CHECK(std::abs(phi(i, 0) - ((1 + g) - 2 * g * x[i]) / den) < 1e-13);
        CHECK(std::abs(phi(i, 1) - ((1 - g) * (1 - g) + (1 - g * g) * x[i]) / den) < 1e-13);
        CHECK(std::abs(phi(i, 2) - (-g * (g - 3) + 2 * g * x[i]) / den) < 1e-13);
    }
}

TEST_CASE("bad problems are rejected") {
    auto p = lane_emden(0, 2);
    p.order = 9;
    CHECK_THROWS(OdeSystem(p, OdeMode::Tfc));
    p = lane_emden(0, 2);
    p.basis = BasisKind::laguerre();
    CHECK_THROWS(OdeSystem(p, OdeMode::Tfc));
    p = lane_emden(0, 2);
    p.residual = nullptr;
    CHECK_THROWS(OdeSystem(p, OdeMode::Tfc));
}
