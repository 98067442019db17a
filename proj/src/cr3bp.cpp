#include "tfc/cr3bp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tfc/constraints.hpp"
#include "tfc/landing.hpp"

namespace tfc {

Cr3bpSystem::Cr3bpSystem(double mu_) : mu(mu_) {
    if (!(mu > 0.0 && mu <= 0.5)) throw std::invalid_argument("cr3bp: mass parameter must lie in (0, 0.5]");
}

double mu_from_masses(double m1, double m2) {
    if (!(m2 > 0.0) || !(m1 > m2)) throw std::invalid_argument("mu_from_masses: need m1 > m2 > 0");
    return m2 / (m1 + m2);
}

OmegaPartials omega_and_partials(const Eigen::Vector3d& r, double mu) {
    const Eigen::Vector3d d1(r.x() + mu, r.y(), r.z()), d2(r.x() + mu - 1.0, r.y(), r.z());
    const double R1 = d1.norm(), R2 = d2.norm();
    if (R1 < 1e-12 || R2 < 1e-12) throw std::domain_error("omega: state at a primary");
    const double k1 = (1.0 - mu) / (R1 * R1 * R1), k2 = mu / (R2 * R2 * R2);
    OmegaPartials o;
    o.value = 0.5 * (r.x() * r.x() + r.y() * r.y()) + (1.0 - mu) / R1 + mu / R2 + 0.5 * (1.0 - mu) * mu;
    o.grad = Eigen::Vector3d(r.x(), r.y(), 0.0) - k1 * d1 - k2 * d2;
    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    o.hess = -k1 * (I - 3.0 * d1 * d1.transpose() / (R1 * R1)) - k2 * (I - 3.0 * d2 * d2.transpose() / (R2 * R2));
    o.hess(0, 0) += 1.0;
    o.hess(1, 1) += 1.0;
    return o;
}

double jacobi_constant(const Eigen::Vector3d& r, const Eigen::Vector3d& v, double mu) {
    return 2.0 * omega_and_partials(r, mu).value - v.squaredNorm();
}

double collinear_point(const Cr3bpSystem& sys, int which) {
    const double mu = sys.mu;
    auto gx = [&](double x) { return omega_and_partials(Eigen::Vector3d(x, 0.0, 0.0), mu).grad.x(); };
    double lo, hi;
    if (which == 1) {
        lo = -mu + 1e-9;
        hi = 1.0 - mu - 1e-9;
    } else if (which == 2) {
        lo = 1.0 - mu + 1e-9;
        hi = 2.0;
    } else {
        throw std::invalid_argument("collinear_point: only L1 and L2 are supported");
    }
    double flo = gx(lo);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi), f = gx(mid);
        if ((f < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = f;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

Eigen::Matrix<double, 6, 1> cr3bp_rhs(const Cr3bpSystem& sys, const Eigen::Matrix<double, 6, 1>& s) {
    const Eigen::Vector3d r = s.head<3>(), v = s.tail<3>();
    const Eigen::Vector3d g = omega_and_partials(r, sys.mu).grad;
    Eigen::Matrix<double, 6, 1> d;
    d << v, g.x() + 2.0 * v.y(), g.y() - 2.0 * v.x(), g.z();
    return d;
}

OrbitSeed lyapunov_seed(const Cr3bpSystem& sys, int which, double jacobi_target, int n_samples) {
    const double xl = collinear_point(sys, which);
    const Eigen::Vector3d rl(xl, 0.0, 0.0);
    const OmegaPartials o = omega_and_partials(rl, sys.mu);
    const double uxx = o.hess(0, 0), uyy = o.hess(1, 1);
    const double s = 4.0 - uxx - uyy;
    const double w = std::sqrt(0.5 * (s + std::sqrt(s * s - 4.0 * uxx * uyy)));
    const double k = (w * w + uxx) / (2.0 * w);
    const double cl = jacobi_constant(rl, Eigen::Vector3d::Zero(), sys.mu);
    const double gain = k * k * w * w - uxx;
    if (!(jacobi_target < cl) || !(gain > 0.0))
        throw std::invalid_argument("lyapunov_seed: Jacobi constant must lie below that of the L point");
    const double ax = std::sqrt((cl - jacobi_target) / gain);
    OrbitSeed seed;
    seed.period = 2.0 * std::numbers::pi / w;
    seed.alpha = Eigen::Vector3d(xl + ax, 0.0, 0.0);
    seed.beta = Eigen::Vector3d(0.0, -k * w * ax, 0.0);
    for (int i = 0; i < n_samples; ++i) {
        const double t = seed.period * i / n_samples;
        seed.samples.emplace_back(xl + ax * std::cos(w * t), -k * ax * std::sin(w * t), 0.0);
    }
    return seed;
}

PeriodicOrbitSystem::PeriodicOrbitSystem(const Cr3bpSystem& sys, const PeriodicOrbitProblem& p) : sys_(sys), p_(p) {
    if (p.N < p.m) throw std::invalid_argument("periodic orbit: N must be at least m");
    if (!(p.seed.period > 0.0)) throw std::invalid_argument("periodic orbit: seed period must be positive");
    if (!p.seed.alpha.allFinite() || !p.seed.beta.allFinite()) throw std::invalid_argument("periodic orbit: bad seed");
    z_ = cgl_nodes(p.N - 1);
    for (int d = 0; d <= 2; ++d) node_.push_back(rows(z_, d));
    m_ = static_cast<int>(node_[0].A.cols());
}

PeriodicOrbitSystem::Rows PeriodicOrbitSystem::rows(const Eigen::VectorXd& tau, int d) const {
    static const std::vector<LinearConstraint> cons = {point_constraint(-1.0, 0.0, 0), point_constraint(-1.0, 0.0, 1),
                                                       point_constraint(1.0, 0.0, 0), point_constraint(1.0, 0.0, 1)};
    const ConstrainedExpression ce({{p_.basis, p_.m, domain_map(-1.0, 1.0, -1.0, 1.0), {}}}, cons);
    const auto M = ce.matrices(0, tau, d);
    return {M.A, M.P};
}

Eigen::Vector4d PeriodicOrbitSystem::kappa(const Eigen::VectorXd& X, int i) const {
    const double c = X[b_offset()] * X[b_offset()];
    const double a = X[alpha_offset() + i], s = X[beta_offset() + i] / c;
    return {a, s, a, s};
}

Eigen::VectorXd PeriodicOrbitSystem::state(const Eigen::VectorXd& X, int i, const Eigen::VectorXd& tau, int d) const {
    const double c = X[b_offset()] * X[b_offset()];
    const Rows R = rows(tau, d);
    return std::pow(c, d) * (R.A * X.segment(i * m_, m_) + R.P * kappa(X, i));
}

Eigen::VectorXd PeriodicOrbitSystem::loss(const Eigen::VectorXd& X) const {
    const int N = this->N();
    const double c = X[b_offset()] * X[b_offset()];
    Eigen::MatrixXd r(N, 3), v(N, 3), a(N, 3);
    for (int i = 0; i < 3; ++i) {
        const auto xi = X.segment(i * m_, m_);
        const Eigen::Vector4d k = kappa(X, i);
        r.col(i) = node_[0].A * xi + node_[0].P * k;
        v.col(i) = c * (node_[1].A * xi + node_[1].P * k);
        a.col(i) = c * c * (node_[2].A * xi + node_[2].P * k);
    }
    Eigen::VectorXd L(n_rows());
    for (int n = 0; n < N; ++n) {
        const OmegaPartials o = omega_and_partials(r.row(n).transpose(), sys_.mu);
        L[n] = a(n, 0) - 2.0 * v(n, 1) - o.grad.x();
        L[N + n] = a(n, 1) + 2.0 * v(n, 0) - o.grad.y();
        L[2 * N + n] = a(n, 2) - o.grad.z();
        if (n < n_jacobi_rows()) L[3 * N + n] = 2.0 * o.value - v.row(n).squaredNorm() - p_.jacobi;
    }
    return L;
}

Eigen::MatrixXd PeriodicOrbitSystem::jacobian(const Eigen::VectorXd& X) const {
    const int N = this->N(), n = n_unknowns();
    const double b = X[b_offset()], c = b * b, dc = 2.0 * b;
    // derivatives of r, v, a along each axis with respect to all unknowns
    std::vector<Eigen::MatrixXd> dr(3, Eigen::MatrixXd::Zero(N, n)), dv = dr, da = dr;
    Eigen::MatrixXd v(N, 3);
    for (int i = 0; i < 3; ++i) {
        const auto xi = X.segment(i * m_, m_);
        const Eigen::Vector4d k = kappa(X, i);
        const double beta = X[beta_offset() + i];
        const int ai = alpha_offset() + i, bi = beta_offset() + i;
        const Rows& R0 = node_[0];
        const Rows& R1 = node_[1];
        const Rows& R2 = node_[2];
        const Eigen::VectorXd p0a = R0.P.col(0) + R0.P.col(2), p0b = R0.P.col(1) + R0.P.col(3);
        const Eigen::VectorXd p1a = R1.P.col(0) + R1.P.col(2), p1b = R1.P.col(1) + R1.P.col(3);
        const Eigen::VectorXd p2a = R2.P.col(0) + R2.P.col(2), p2b = R2.P.col(1) + R2.P.col(3);
        const Eigen::VectorXd g1 = R1.A * xi + R1.P * k, g2 = R2.A * xi + R2.P * k;
        v.col(i) = c * g1;

        dr[i].middleCols(i * m_, m_) = R0.A;
        dr[i].col(ai) = p0a;
        dr[i].col(bi) = p0b / c;
        dr[i].col(b_offset()) = -p0b * beta / (c * c) * dc;

        dv[i].middleCols(i * m_, m_) = c * R1.A;
        dv[i].col(ai) = c * p1a;
        dv[i].col(bi) = p1b;
        dv[i].col(b_offset()) = (g1 - p1b * beta / c) * dc;

        da[i].middleCols(i * m_, m_) = c * c * R2.A;
        da[i].col(ai) = c * c * p2a;
        da[i].col(bi) = c * p2b;
        da[i].col(b_offset()) = (2.0 * c * g2 - p2b * beta) * dc;
    }
    Eigen::MatrixXd J(n_rows(), n);
    Eigen::MatrixXd pos(N, 3);
    for (int i = 0; i < 3; ++i)
        pos.col(i) = node_[0].A * X.segment(i * m_, m_) + node_[0].P * kappa(X, i);
    for (int k = 0; k < N; ++k) {
        const OmegaPartials o = omega_and_partials(pos.row(k).transpose(), sys_.mu);
        Eigen::RowVectorXd gx = Eigen::RowVectorXd::Zero(n), gy = gx, gz = gx;
        for (int j = 0; j < 3; ++j) {
            gx += o.hess(0, j) * dr[j].row(k);
            gy += o.hess(1, j) * dr[j].row(k);
            gz += o.hess(2, j) * dr[j].row(k);
        }
        J.row(k) = da[0].row(k) - 2.0 * dv[1].row(k) - gx;
        J.row(N + k) = da[1].row(k) + 2.0 * dv[0].row(k) - gy;
        J.row(2 * N + k) = da[2].row(k) - gz;
        if (k < n_jacobi_rows()) {
            Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
            for (int j = 0; j < 3; ++j) row += 2.0 * o.grad[j] * dr[j].row(k) - 2.0 * v(k, j) * dv[j].row(k);
            J.row(3 * N + k) = row;
        }
    }
    return J;
}

Eigen::VectorXd PeriodicOrbitSystem::initial_guess() const {
    Eigen::VectorXd X = Eigen::VectorXd::Zero(n_unknowns());
    X.segment(alpha_offset(), 3) = p_.seed.alpha;
    X.segment(beta_offset(), 3) = p_.seed.beta;
    X[b_offset()] = std::sqrt(2.0 / p_.seed.period);
    const auto& s = p_.seed.samples;
    if (!s.empty()) {
        const int n = static_cast<int>(s.size());
        Eigen::VectorXd tau(n);
        for (int k = 0; k < n; ++k) tau[k] = -1.0 + 2.0 * k / n;
        const Rows R = rows(tau, 0);
        // low-order fit; high columns fitted to equispaced samples oscillate in the second derivative
        const int k_fit = std::min(m_, std::max(1, n / 8));
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(R.A.leftCols(k_fit), Eigen::ComputeThinU | Eigen::ComputeThinV);
        for (int i = 0; i < 3; ++i) {
            Eigen::VectorXd target(n);
            for (int k = 0; k < n; ++k) target[k] = s[k][i];
            X.segment(i * m_, k_fit) = svd.solve(target - R.P * kappa(X, i));
        }
    }
    return X;
}

OrbitSolution solve_periodic(const Cr3bpSystem& sys, const PeriodicOrbitProblem& p, const Eigen::VectorXd* warm,
                             int query_points) {
    const PeriodicOrbitSystem ps(sys, p);
    const Eigen::VectorXd X0 = warm && warm->size() == ps.n_unknowns() ? *warm : ps.initial_guess();
    NlsConfig cfg;
    cfg.tol = p.tol;
    cfg.max_iter = p.max_iter;
    cfg.method = p.method;
    OrbitSolution out;
    try {
        out.report = nls_solve([&](const Eigen::VectorXd& X) { return ps.loss(X); },
                               [&](const Eigen::VectorXd& X) { return ps.jacobian(X); }, X0, cfg);
    } catch (const std::domain_error&) {
        out.report.unknowns = X0;
        out.report.stop_reason = StopReason::SingularSystem;
        return out;
    }
    const Eigen::VectorXd& X = out.report.unknowns;
    out.unknowns = X;
    out.alpha = X.segment(ps.alpha_offset(), 3);
    out.beta = X.segment(ps.beta_offset(), 3);
    out.b = X[ps.b_offset()];
    out.period = 2.0 / (out.b * out.b);
    out.jacobi = jacobi_constant(out.alpha, out.beta, sys.mu);
    const Eigen::VectorXd L = ps.loss(X);
    const int N = ps.N();
    for (int i = 0; i < 3; ++i) out.max_residual[i] = L.segment(i * N, N).cwiseAbs().maxCoeff();
    out.max_residual[3] = L.tail(ps.n_jacobi_rows()).cwiseAbs().maxCoeff();

    const Eigen::VectorXd tau = Eigen::VectorXd::LinSpaced(std::max(2, query_points), -1.0, 1.0);
    out.times = (tau.array() + 1.0) * 0.5 * out.period;
    out.position.resize(tau.size(), 3);
    out.velocity.resize(tau.size(), 3);
    for (int i = 0; i < 3; ++i) {
        out.position.col(i) = ps.state(X, i, tau, 0);
        out.velocity.col(i) = ps.state(X, i, tau, 1);
    }
    const Eigen::RowVector3d extent = out.position.colwise().maxCoeff() - out.position.colwise().minCoeff();
    out.degenerate = extent.maxCoeff() < p.min_amplitude;
    const bool small = out.max_abs_residual() <= p.accept_residual;
    out.converged = (out.report.converged() || (out.report.stop_reason == StopReason::MaxIter && small)) && small &&
                    !out.degenerate && std::isfinite(out.period);
    return out;
}

ContinuationResult continuation(const Cr3bpSystem& sys, const PeriodicOrbitProblem& start, double c_end, int steps) {
    if (steps < 1) throw std::invalid_argument("continuation: at least one step required");
    ContinuationResult res;
    PeriodicOrbitProblem p = start;
    OrbitSolution prev = solve_periodic(sys, p);
    if (!prev.converged) {
        res.failed_step = 0;
        return res;
    }
    res.orbits.push_back(prev);
    for (int k = 1; k <= steps; ++k) {
        p.jacobi = start.jacobi + (c_end - start.jacobi) * k / steps;
        OrbitSolution next = solve_periodic(sys, p, &prev.unknowns);
        if (!next.converged) {
            res.failed_step = k;
            return res;
        }
        res.orbits.push_back(next);
        prev = std::move(next);
    }
    res.complete = true;
    return res;
}

double orbit_closure(const Cr3bpSystem& sys, const OrbitSolution& orbit, int steps) {
    using State = Eigen::Matrix<double, 6, 1>;
    State s0;
    s0 << orbit.alpha, orbit.beta;
    const State s1 = rk4([&](double, const State& s) { return cr3bp_rhs(sys, s); }, s0, 0.0, orbit.period, steps);
    return (s1 - s0).norm();
}

}  // namespace tfc
