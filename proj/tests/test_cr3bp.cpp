#include <doctest.h>

#include <cmath>
#include <random>

#include "tfc/cr3bp.hpp"
#include "tfc/landing.hpp"

using namespace tfc;

namespace {

const Cr3bpSystem& earth_moon() {
    static const Cr3bpSystem sys(mu_from_masses(5.9724e24, 7.346e22));
    return sys;
}

double l1_jacobi(const Cr3bpSystem& sys) {
    return jacobi_constant({collinear_point(sys, 1), 0.0, 0.0}, Eigen::Vector3d::Zero(), sys.mu);
}

// Independent potential, written directly from the distances.
double omega_ref(double x, double y, double z, double mu) {
    const double r1 = std::sqrt((x + mu) * (x + mu) + y * y + z * z);
    const double r2 = std::sqrt((x - 1 + mu) * (x - 1 + mu) + y * y + z * z);
    return 0.5 * (x * x + y * y) + (1 - mu) / r1 + mu / r2 + 0.5 * (1 - mu) * mu;
}

const OrbitSolution& reference_orbit() {
    static const OrbitSolution s = [] {
        const auto& sys = earth_moon();
        PeriodicOrbitProblem p;
        p.jacobi = l1_jacobi(sys) - 0.01;
        p.seed = lyapunov_seed(sys, 1, p.jacobi);
        return solve_periodic(sys, p);
    }();
    return s;
}

}  // namespace

TEST_CASE("Earth-Moon mass parameter") {
    CHECK(earth_moon().mu == doctest::Approx(0.0121506).epsilon(1e-5));
    CHECK_THROWS(mu_from_masses(1.0, 2.0));
    CHECK_THROWS(Cr3bpSystem(0.7));
}

TEST_CASE("potential partials agree with finite differences") {
    const double mu = earth_moon().mu;
    std::mt19937 gen(3);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Vector3d r(u(gen), u(gen), 0.3 * u(gen));
        const OmegaPartials o = omega_and_partials(r, mu);
        CHECK(o.value == doctest::Approx(omega_ref(r.x(), r.y(), r.z(), mu)).epsilon(1e-14));
        const double h = 1e-5;
        for (int j = 0; j < 3; ++j) {
            Eigen::Vector3d a = r, b = r;
            a[j] += h;
            b[j] -= h;
            const double g = (omega_ref(a.x(), a.y(), a.z(), mu) - omega_ref(b.x(), b.y(), b.z(), mu)) / (2 * h);
            CHECK(std::abs(o.grad[j] - g) <= 1e-8 * std::max(1.0, std::abs(g)));
            const Eigen::Vector3d dg = (omega_and_partials(a, mu).grad - omega_and_partials(b, mu).grad) / (2 * h);
            CHECK((o.hess.col(j) - dg).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, dg.cwiseAbs().maxCoeff()));
        }
        CHECK((o.hess - o.hess.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, o.hess.norm()));
    }
}

TEST_CASE("out-of-plane force vanishes in the plane") {
    const double mu = earth_moon().mu;
    for (double x : {-0.5, 0.3, 0.9, 1.4})
        for (double y : {-0.7, 0.0, 0.2}) CHECK(omega_and_partials({x, y, 0.0}, mu).grad.z() == 0.0);
}

TEST_CASE("collinear points are equilibria") {
    const auto& sys = earth_moon();
    const double x1 = collinear_point(sys, 1), x2 = collinear_point(sys, 2);
    CHECK(x1 > -sys.mu);
    CHECK(x1 < 1 - sys.mu);
    CHECK(x2 > 1 - sys.mu);
    CHECK(x1 == doctest::Approx(0.836915).epsilon(1e-6));
    for (double x : {x1, x2}) {
        Eigen::Matrix<double, 6, 1> s;
        s << x, 0, 0, 0, 0, 0;
        CHECK(cr3bp_rhs(sys, s).cwiseAbs().maxCoeff() <= 1e-13);
    }
    CHECK_THROWS(collinear_point(sys, 3));
}

TEST_CASE("Jacobi constant equals twice the potential at rest and is conserved over a period") {
    const auto& sys = earth_moon();
    const Eigen::Vector3d r(0.8, 0.1, 0.05);
    CHECK(jacobi_constant(r, Eigen::Vector3d::Zero(), sys.mu) == doctest::Approx(2 * omega_ref(0.8, 0.1, 0.05, sys.mu)));
    using State = Eigen::Matrix<double, 6, 1>;
    State s0;
    s0 << 0.85, 0.0, 0.02, 0.0, -0.1, 0.01;
    const State s1 = rk4([&](double, const State& s) { return cr3bp_rhs(sys, s); }, s0, 0.0, 2.75, 20000);
    const double c0 = jacobi_constant(s0.head<3>(), s0.tail<3>(), sys.mu);
    const double c1 = jacobi_constant(s1.head<3>(), s1.tail<3>(), sys.mu);
    CHECK(std::abs(c1 - c0) <= 1e-8);
}

TEST_CASE("periodicity holds for any unknowns") {
    const auto& sys = earth_moon();
    PeriodicOrbitProblem p;
    p.N = 30;
    p.m = 24;
    p.jacobi = l1_jacobi(sys) - 0.01;
    p.seed = lyapunov_seed(sys, 1, p.jacobi);
    const PeriodicOrbitSystem ps(sys, p);
    std::mt19937 gen(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Eigen::Vector2d ends(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd X(ps.n_unknowns());
        for (int i = 0; i < X.size(); ++i) X[i] = u(gen);
        X[ps.b_offset()] = 0.5 + std::abs(u(gen));
        const double c = X[ps.b_offset()] * X[ps.b_offset()];
        for (int i = 0; i < 3; ++i) {
            const Eigen::VectorXd r = ps.state(X, i, ends, 0), v = ps.state(X, i, ends, 1);
            CHECK(std::abs(r[0] - X[ps.alpha_offset() + i]) <= 1e-12);
            CHECK(std::abs(r[1] - X[ps.alpha_offset() + i]) <= 1e-12);
            CHECK(std::abs(v[0] - X[ps.beta_offset() + i]) <= 1e-12 * std::max(1.0, c));
            CHECK(std::abs(v[1] - X[ps.beta_offset() + i]) <= 1e-12 * std::max(1.0, c));
        }
    }
}

TEST_CASE("orbit Jacobian agrees with finite differences") {
    const auto& sys = earth_moon();
    for (bool all_nodes : {true, false}) {
        PeriodicOrbitProblem p;
        p.N = 20;
        p.m = 14;
        p.jacobi_all_nodes = all_nodes;
        p.jacobi = l1_jacobi(sys) - 0.02;
        p.seed = lyapunov_seed(sys, 1, p.jacobi);
        const PeriodicOrbitSystem ps(sys, p);
        Eigen::VectorXd X = ps.initial_guess();
        X.array() += 1e-3;
        X[ps.alpha_offset() + 2] = 0.01;
        const Eigen::MatrixXd J = ps.jacobian(X);
        REQUIRE(J.rows() == ps.n_rows());
        Eigen::MatrixXd F(J.rows(), J.cols());
        for (int j = 0; j < X.size(); ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(X[j]));
            Eigen::VectorXd a = X, b = X;
            a[j] += h;
            b[j] -= h;
            F.col(j) = (ps.loss(a) - ps.loss(b)) / (2 * h);
        }
        CHECK((J - F).cwiseAbs().maxCoeff() / J.cwiseAbs().maxCoeff() <= 1e-7);
    }
}

TEST_CASE("linear seed matches the target energy to first order") {
    const auto& sys = earth_moon();
    const double cl = l1_jacobi(sys);
    const OrbitSeed small = lyapunov_seed(sys, 1, cl - 1e-6);
    CHECK(jacobi_constant(small.alpha, small.beta, sys.mu) == doctest::Approx(cl - 1e-6).epsilon(1e-9));
    CHECK(small.period == doctest::Approx(2.69).epsilon(0.01));
    CHECK(small.samples.size() == 200);
    CHECK_THROWS(lyapunov_seed(sys, 1, cl + 0.01));
}

TEST_CASE("L1 Lyapunov orbit") {
    const auto& sys = earth_moon();
    const OrbitSolution& s = reference_orbit();
    REQUIRE(s.converged);
    CHECK_FALSE(s.degenerate);
    CHECK(s.max_abs_residual() <= 1e-10);
    CHECK(std::abs(s.jacobi - (l1_jacobi(sys) - 0.01)) <= 1e-10);
    CHECK(orbit_closure(sys, s) <= 1e-6);
    CHECK(s.position.col(2).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(s.period > 2.6);
    CHECK(s.period < 3.0);

    // the orbit encloses L1 and stays clear of both primaries
    const double x1 = collinear_point(sys, 1);
    CHECK(s.position.col(0).minCoeff() < x1);
    CHECK(s.position.col(0).maxCoeff() > x1);
    CHECK(s.position.col(0).maxCoeff() < 1 - sys.mu);

    // residual on a dense grid stays near the node residual
    PeriodicOrbitProblem p;
    p.jacobi = l1_jacobi(sys) - 0.01;
    p.seed = lyapunov_seed(sys, 1, p.jacobi);
    const PeriodicOrbitSystem ps(sys, p);
    const Eigen::VectorXd tau = Eigen::VectorXd::LinSpaced(997, -1.0, 1.0);
    double worst = 0.0;
    Eigen::MatrixXd r(tau.size(), 3), v(tau.size(), 3), a(tau.size(), 3);
    for (int i = 0; i < 3; ++i) {
        r.col(i) = ps.state(s.unknowns, i, tau, 0);
        v.col(i) = ps.state(s.unknowns, i, tau, 1);
        a.col(i) = ps.state(s.unknowns, i, tau, 2);
    }
    for (int k = 0; k < tau.size(); ++k) {
        const OmegaPartials o = omega_and_partials(r.row(k).transpose(), sys.mu);
        worst = std::max(worst, std::abs(a(k, 0) - 2 * v(k, 1) - o.grad.x()));
        worst = std::max(worst, std::abs(a(k, 1) + 2 * v(k, 0) - o.grad.y()));
        worst = std::max(worst, std::abs(2 * o.value - v.row(k).squaredNorm() - p.jacobi));
    }
    CHECK(worst <= std::max(10 * s.max_abs_residual(), 1e-12));
}

TEST_CASE("natural-parameter continuation") {
    const auto& sys = earth_moon();
    PeriodicOrbitProblem p;
    p.N = 100;
    p.m = 90;
    p.jacobi = l1_jacobi(sys) - 0.01;
    p.seed = lyapunov_seed(sys, 1, p.jacobi);
    const ContinuationResult c = continuation(sys, p, p.jacobi - 0.03, 6);
    INFO("failed step " << c.failed_step);
    REQUIRE(c.complete);
    REQUIRE(c.orbits.size() == 7);
    for (std::size_t k = 0; k < c.orbits.size(); ++k) {
        CHECK(c.orbits[k].max_abs_residual() <= 1e-9);
        if (k > 0) CHECK(c.orbits[k].period > c.orbits[k - 1].period);
    }
    CHECK(c.orbits.back().jacobi == doctest::Approx(p.jacobi - 0.03).epsilon(1e-10));
    CHECK_THROWS(continuation(sys, p, p.jacobi, 0));
}

TEST_CASE("bad problems are rejected") {
    const auto& sys = earth_moon();
    PeriodicOrbitProblem p;
    p.N = 10;
    p.m = 20;
    CHECK_THROWS(PeriodicOrbitSystem(sys, p));
    p.N = 30;
    p.seed.period = -1.0;
    CHECK_THROWS(PeriodicOrbitSystem(sys, p));
}
