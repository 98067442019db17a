#include "tfc/landing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace tfc {

namespace {

using Vec3 = Eigen::Vector3d;

std::vector<LinearConstraint> hermite_constraints() {
    return {point_constraint(-1.0, 0.0, 0), point_constraint(-1.0, 0.0, 1), point_constraint(1.0, 0.0, 0),
            point_constraint(1.0, 0.0, 1)};
}

void check_basis(const BasisKind& b) {
    if (b.family != BasisFamily::ChebyshevT && b.family != BasisFamily::LegendreP)
        throw std::invalid_argument("landing: basis must be Chebyshev or Legendre");
}

Eigen::VectorXd nodes(int N) {
    if (N < 2) throw std::invalid_argument("landing: at least two nodes required");
    return cgl_nodes(N - 1);
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ScaledProblem scale_problem(const GuidanceProblem& p) {
    const double lmax = p.r0.cwiseAbs().maxCoeff(), vmax = p.v0.cwiseAbs().maxCoeff();
    if (!(lmax > 0.0) || !(vmax > 0.0)) throw std::invalid_argument("scale_problem: zero initial position or velocity");
    ScaledProblem s;
    s.scale.length = lmax;
    s.scale.time = lmax / vmax;
    const Scaling& u = s.scale;
    GuidanceProblem& q = s.problem;
    q = p;
    q.r0 /= u.length;
    q.rf /= u.length;
    q.v0 /= u.velocity();
    q.vf /= u.velocity();
    q.a_g /= u.accel();
    q.gamma = p.gamma / (u.accel() * u.accel());
    q.t_min = p.t_min / u.accel();
    q.t_max = p.t_max / u.accel();
    q.alpha_fuel = p.alpha_fuel * u.velocity();
    return s;
}

GuidanceProblem unscale_problem(const ScaledProblem& s) {
    const Scaling& u = s.scale;
    GuidanceProblem q = s.problem;
    q.r0 *= u.length;
    q.rf *= u.length;
    q.v0 *= u.velocity();
    q.vf *= u.velocity();
    q.a_g *= u.accel();
    q.gamma *= u.accel() * u.accel();
    q.t_min *= u.accel();
    q.t_max *= u.accel();
    q.alpha_fuel /= u.velocity();
    return q;
}

Vec3 eol_feedback(const Vec3& r, const Vec3& v, const Vec3& a_g, double t_go) {
    if (!(t_go > 0.0)) throw std::invalid_argument("eol_feedback: time to go must be positive");
    return -6.0 / (t_go * t_go) * r - 4.0 / t_go * v - a_g;
}

LandingSolution eol_feedback_rollout(const GuidanceProblem& p, double tf, int steps) {
    if (!(tf > 0.0) || steps < 1) throw std::invalid_argument("eol_feedback_rollout: bad horizon");
    using State = Eigen::Matrix<double, 6, 1>;
    State y;
    y << p.r0 - p.rf, p.v0 - p.vf;
    const double h = tf / steps;
    LandingSolution sol;
    sol.tf = tf;
    sol.times.resize(steps + 1);
    sol.position.resize(steps + 1, 3);
    sol.velocity.resize(steps + 1, 3);
    sol.control.resize(steps + 1, 3);
    double energy = 0.0;
    for (int k = 0; k <= steps; ++k) {
        const double t = k * h;
        const Vec3 u = k < steps ? eol_feedback(y.head<3>(), y.tail<3>(), p.a_g, tf - t) : Vec3(sol.control.row(k - 1));
        sol.times[k] = t;
        sol.position.row(k) = (y.head<3>() + p.rf).transpose();
        sol.velocity.row(k) = (y.tail<3>() + p.vf).transpose();
        sol.control.row(k) = u.transpose();
        if (k == steps) break;
        // zero-order hold over the step
        auto f = [&](double, const State& s) {
            State d;
            d << s.tail<3>(), p.a_g + u;
            return d;
        };
        y = rk4(f, y, t, t + h, 1);
        energy += 0.5 * u.squaredNorm() * h;
    }
    sol.cost = p.gamma * tf + energy;
    sol.converged = true;
    return sol;
}

// ---------------------------------------------------------------- energy-optimal landing

EolSystem::EolSystem(const GuidanceProblem& scaled, const EolOptions& opt, bool free_time, double tf_fixed)
    : p_(scaled), opt_(opt), free_(free_time), c_fixed_(2.0 / tf_fixed) {
    check_basis(opt.basis);
    if (!free_ && !(tf_fixed > 0.0)) throw std::invalid_argument("eol: final time must be positive");
    if (opt.m < 1) throw std::invalid_argument("eol: m must be positive");
    z_ = nodes(opt.N);
    if (opt.spectral) {
        n_state_ = opt.m;
    } else {
        ce_ = std::make_shared<const ConstrainedExpression>(
            std::vector<ComponentSpec>{{opt.basis, opt.m, domain_map(-1.0, 1.0, -1.0, 1.0), {}}}, hermite_constraints());
        n_state_ = ce_->n_xi();
    }
    A2_ = basis_rows(z_, 2);
    if (!opt.spectral) P2_ = kappa_rows(z_, 2);
    n_unknowns_ = 3 * n_state_ + 6 + (free_ ? 1 : 0);
    if (opt.N * 3 < n_unknowns_) throw std::invalid_argument("eol: fewer rows than unknowns");
}

int EolSystem::n_rows() const {
    return 3 * static_cast<int>(z_.size()) + (opt_.spectral ? 12 : 0) + (free_ ? 1 : 0);
}

double EolSystem::c(const Eigen::VectorXd& X) const {
    if (!free_) return c_fixed_;
    const double b = X[n_unknowns_ - 1];
    return b * b;
}

Eigen::MatrixXd EolSystem::basis_rows(const Eigen::VectorXd& z, int d) const {
    if (opt_.spectral) return eval_basis(opt_.basis, opt_.m, z, d);
    return ce_->matrices(0, z, d).A;
}

Eigen::MatrixXd EolSystem::kappa_rows(const Eigen::VectorXd& z, int d) const { return ce_->matrices(0, z, d).P; }

Eigen::Vector4d EolSystem::kappa(int i, double c) const {
    return {p_.r0[i], p_.v0[i] / c, p_.rf[i], p_.vf[i] / c};
}

Eigen::VectorXd EolSystem::state(const Eigen::VectorXd& X, int axis, const Eigen::VectorXd& z, int d) const {
    const double cc = c(X);
    Eigen::VectorXd v = basis_rows(z, d) * X.segment(axis * n_state_, n_state_);
    if (!opt_.spectral) v += kappa_rows(z, d) * kappa(axis, cc);
    return std::pow(cc, d) * v;
}

Vec3 EolSystem::control(const Eigen::VectorXd& X, double z) const {
    const auto u = X.segment(3 * n_state_, 6);
    return {u[0] + u[1] * z, u[2] + u[3] * z, u[4] + u[5] * z};
}

double EolSystem::hamiltonian(const Eigen::VectorXd& X, double z) const {
    const Vec3 u = control(X, z);
    const auto a = X.segment(3 * n_state_, 6);
    const Vec3 udot = c(X) * Vec3(a[1], a[3], a[5]);
    const Eigen::VectorXd zz = Eigen::VectorXd::Constant(1, z);
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = state(X, i, zz, 1)[0];
    // lambda_v = -u, lambda_r = du/dt
    return -0.5 * u.squaredNorm() + udot.dot(v) - u.dot(p_.a_g);
}

Eigen::VectorXd EolSystem::loss(const Eigen::VectorXd& X) const {
    const int N = static_cast<int>(z_.size());
    const double cc = c(X);
    Eigen::VectorXd L(n_rows());
    for (int i = 0; i < 3; ++i) {
        const auto xi = X.segment(i * n_state_, n_state_);
        Eigen::VectorXd acc = A2_ * xi;
        if (!opt_.spectral) acc += P2_ * kappa(i, cc);
        const double a0 = X[3 * n_state_ + 2 * i], a1 = X[3 * n_state_ + 2 * i + 1];
        L.segment(i * N, N) = (cc * cc * acc).array() - p_.a_g[i] - a0 - a1 * z_.array();
    }
    int row = 3 * N;
    if (opt_.spectral) {
        const Eigen::VectorXd ends = (Eigen::VectorXd(2) << -1.0, 1.0).finished();
        const Eigen::MatrixXd H0 = basis_rows(ends, 0), H1 = basis_rows(ends, 1);
        for (int i = 0; i < 3; ++i) {
            const auto xi = X.segment(i * n_state_, n_state_);
            L[row++] = H0.row(0).dot(xi) - p_.r0[i];
            L[row++] = cc * H1.row(0).dot(xi) - p_.v0[i];
            L[row++] = H0.row(1).dot(xi) - p_.rf[i];
            L[row++] = cc * H1.row(1).dot(xi) - p_.vf[i];
        }
    }
    if (free_) {
        const Vec3 u = control(X, 1.0);
        L[row] = -0.5 * u.squaredNorm() - u.dot(p_.a_g) + p_.gamma;
    }
    return L;
}

Eigen::MatrixXd EolSystem::jacobian(const Eigen::VectorXd& X) const {
    const int N = static_cast<int>(z_.size()), ns = n_state_;
    const double cc = c(X);
    const double dc = free_ ? 2.0 * X[n_unknowns_ - 1] : 0.0;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n_rows(), n_unknowns_);
    for (int i = 0; i < 3; ++i) {
        J.block(i * N, i * ns, N, ns) = cc * cc * A2_;
        J.block(i * N, 3 * ns + 2 * i, N, 1).setConstant(-1.0);
        J.block(i * N, 3 * ns + 2 * i + 1, N, 1) = -z_;
        if (free_) {
            const auto xi = X.segment(i * ns, ns);
            Eigen::VectorXd acc = A2_ * xi;
            Eigen::VectorXd dacc = Eigen::VectorXd::Zero(N);
            if (!opt_.spectral) {
                acc += P2_ * kappa(i, cc);
                const Eigen::Vector4d dk(0.0, -p_.v0[i] / (cc * cc), 0.0, -p_.vf[i] / (cc * cc));
                dacc = P2_ * dk;
            }
            J.block(i * N, n_unknowns_ - 1, N, 1) = (2.0 * cc * acc + cc * cc * dacc) * dc;
        }
    }
    int row = 3 * N;
    if (opt_.spectral) {
        const Eigen::VectorXd ends = (Eigen::VectorXd(2) << -1.0, 1.0).finished();
        const Eigen::MatrixXd H0 = basis_rows(ends, 0), H1 = basis_rows(ends, 1);
        for (int i = 0; i < 3; ++i) {
            const auto xi = X.segment(i * ns, ns);
            J.block(row, i * ns, 1, ns) = H0.row(0);
            J.block(row + 1, i * ns, 1, ns) = cc * H1.row(0);
            J.block(row + 2, i * ns, 1, ns) = H0.row(1);
            J.block(row + 3, i * ns, 1, ns) = cc * H1.row(1);
            if (free_) {
                J(row + 1, n_unknowns_ - 1) = H1.row(0).dot(xi) * dc;
                J(row + 3, n_unknowns_ - 1) = H1.row(1).dot(xi) * dc;
            }
            row += 4;
        }
    }
    if (free_) {
        const Vec3 u = control(X, 1.0);
        for (int i = 0; i < 3; ++i) {
            const double g = -u[i] - p_.a_g[i];
            J(row, 3 * ns + 2 * i) = g;
            J(row, 3 * ns + 2 * i + 1) = g;
        }
    }
    return J;
}

Eigen::VectorXd EolSystem::initial_guess() const {
    Eigen::VectorXd X = Eigen::VectorXd::Zero(n_unknowns_);
    const Vec3 R = p_.r0 / p_.r0.norm(), V = p_.v0 / p_.v0.norm();
    for (int i = 0; i < 3; ++i) {
        X[3 * n_state_ + 2 * i] = -0.5 * (R[i] + V[i]);
        X[3 * n_state_ + 2 * i + 1] = -0.5 * (R[i] - V[i]);
    }
    if (free_) X[n_unknowns_ - 1] = std::sqrt(2.0 / opt_.tf_guess);
    return X;
}

namespace {

LandingSolution eol_package(const EolSystem& sys, const Eigen::VectorXd& X, const Scaling& s, const GuidanceProblem& q,
                            const EolOptions& opt) {
    LandingSolution sol;
    sol.scale = s;
    const double cc = sys.c(X), tf = 2.0 / cc;
    sol.tf = tf * s.time;
    const Eigen::VectorXd L = sys.loss(X);
    sol.max_residual = L.size() ? L.cwiseAbs().maxCoeff() : 0.0;
    const int ns = sys.n_state();
    Vec3 a0, a1;
    for (int i = 0; i < 3; ++i) {
        a0[i] = X[3 * ns + 2 * i];
        a1[i] = X[3 * ns + 2 * i + 1];
    }
    // 1/2 int |a0 + a1 z|^2 dt over z in [-1, 1], dt = dz / c
    const double energy = 0.5 * (tf / 2.0) * (2.0 * a0.squaredNorm() + 2.0 / 3.0 * a1.squaredNorm());
    const double unit = s.length * s.length / (s.time * s.time * s.time);
    sol.cost = (q.gamma * tf + energy) * unit;
    sol.lambda_r = a1 * cc;
    sol.lambda_v0 = -(a0 - a1);

    const int nq = std::max(2, opt.query_points);
    const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(nq, -1.0, 1.0);
    sol.times = (z.array() + 1.0) / cc * s.time;
    sol.position.resize(nq, 3);
    sol.velocity.resize(nq, 3);
    sol.control.resize(nq, 3);
    for (int i = 0; i < 3; ++i) {
        sol.position.col(i) = sys.state(X, i, z, 0) * s.length;
        sol.velocity.col(i) = sys.state(X, i, z, 1) * s.velocity();
    }
    sol.hamiltonian.resize(nq);
    for (int k = 0; k < nq; ++k) {
        sol.control.row(k) = sys.control(X, z[k]).transpose() * s.accel();
        sol.hamiltonian[k] = sys.hamiltonian(X, z[k]);
    }
    return sol;
}

}  // namespace

LandingSolution eol_solve_single_loop(const GuidanceProblem& p, const EolOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    const ScaledProblem sp = scale_problem(p);
    const EolSystem sys(sp.problem, opt, true);
    NlsConfig cfg;
    cfg.tol = opt.tol;
    cfg.max_iter = opt.max_iter;
    cfg.method = opt.method;
    Eigen::VectorXd X0 = sys.initial_guess();
    int extra = 0;
    if (opt.frozen_first_step) {
        const Eigen::MatrixXd J = sys.jacobian(X0);
        try {
            X0.head(J.cols() - 1) += lstsq(J.leftCols(J.cols() - 1), -sys.loss(X0), opt.method);
            extra = 1;
        } catch (const SingularSystem&) {
        }
    }
    const SolveReport rep = nls_solve([&](const Eigen::VectorXd& X) { return sys.loss(X); },
                                      [&](const Eigen::VectorXd& X) { return sys.jacobian(X); }, X0, cfg);
    LandingSolution sol = eol_package(sys, rep.unknowns, sp.scale, sp.problem, opt);
    sol.report = rep;
    sol.report.iterations += extra;
    sol.report.wall_time = std::chrono::duration<double>(ms_since(start));
    sol.converged = rep.converged() && std::isfinite(sol.tf) && sol.tf > 0.0 && sol.max_residual < 1e-8;
    return sol;
}

LandingSolution eol_solve_outer_loop(const GuidanceProblem& p, const EolOptions& opt, const EolOuterOptions& outer) {
    const auto start = std::chrono::steady_clock::now();
    const ScaledProblem sp = scale_problem(p);
    const GuidanceProblem& q = sp.problem;
    int evals = 0;
    SolveReport last;
    auto inner = [&](double tf) {
        const EolSystem sys(q, opt, false, tf);
        const Eigen::VectorXd X0 = Eigen::VectorXd::Zero(sys.n_unknowns());
        Eigen::VectorXd X = X0;
        last = SolveReport{};
        last.iterations = 1;
        try {
            X = lstsq(sys.jacobian(X0), -sys.loss(X0), opt.method);
            last.stop_reason = StopReason::Converged;
        } catch (const SingularSystem&) {
            last.stop_reason = StopReason::SingularSystem;
        }
        last.unknowns = X;
        last.final_max_residual = sys.loss(X).cwiseAbs().maxCoeff();
        ++evals;
        const Vec3 u = sys.control(X, 1.0);
        return std::make_pair(-0.5 * u.squaredNorm() - u.dot(q.a_g) + q.gamma, X);
    };
    auto g = [&](double tf) { return inner(tf).first; };

    // bracket the transversality root: the residual is negative for short horizons
    double a = opt.tf_guess, fa = g(a);
    double b = a, fb = fa;
    for (int k = 0; k < 60 && fa * fb > 0.0; ++k) {
        if (fb < 0.0) {
            a = b;
            fa = fb;
            b *= 2.0;
        } else {
            b = a;
            fb = fa;
            a *= 0.5;
            fa = g(a);
            continue;
        }
        fb = g(b);
    }
    LandingSolution fail;
    if (fa * fb > 0.0) {
        fail.report.stop_reason = StopReason::MaxIter;
        fail.outer_iterations = evals;
        return fail;
    }
    if (a > b) {
        std::swap(a, b);
        std::swap(fa, fb);
    }
    // Illinois regula falsi
    double x = a;
    int side = 0;
    bool done = false;
    for (int it = 0; it < outer.max_iter; ++it) {
        x = (a * fb - b * fa) / (fb - fa);
        const double fx = g(x);
        if (std::abs(fx) < outer.tol || (b - a) < outer.tol * std::max(1.0, std::abs(x))) {
            done = true;
            break;
        }
        if (fx * fb > 0.0) {
            b = x;
            fb = fx;
            if (side == 1) fa *= 0.5;
            side = 1;
        } else {
            a = x;
            fa = fx;
            if (side == -1) fb *= 0.5;
            side = -1;
        }
    }
    const auto [res, X] = inner(x);
    const EolSystem sys(q, opt, false, x);
    LandingSolution sol = eol_package(sys, X, sp.scale, q, opt);
    sol.max_residual = std::max(sol.max_residual, std::abs(res));
    sol.report = last;
    sol.report.wall_time = std::chrono::duration<double>(ms_since(start));
    sol.outer_iterations = evals;
    sol.converged = done && sol.max_residual < 1e-8;
    return sol;
}

// ---------------------------------------------------------------- fuel-optimal landing

std::vector<double> ThrustProfile::breakpoints(double t0) const {
    if (program == ThrustProgram::MaxMinMax) return {t0, t1, t2, tf};
    return {t0, t1, tf};
}

std::vector<double> ThrustProfile::levels(double t_min, double t_max) const {
    if (program == ThrustProgram::MaxMinMax) return {t_max, t_min, t_max};
    return {t_min, t_max};
}

double fol_mass(double t, double t1, double t2, double m0, double t_min, double t_max, double alpha, double t0) {
    if (!(t0 <= t1 && t1 <= t2)) throw std::invalid_argument("fol_mass: switch times out of order");
    double burned;
    if (t <= t1)
        burned = t_max * (t - t0);
    else if (t <= t2)
        burned = t_max * (t1 - t0) + t_min * (t - t1);
    else
        burned = t_max * (t1 - t0) + t_min * (t2 - t1) + t_max * (t - t2);
    const double m = m0 - alpha * burned;
    if (!(m > 0.0)) throw std::domain_error("fol_mass: mass depleted");
    return m;
}

double fol_mass(double t, const ThrustProfile& prof, const GuidanceProblem& p) {
    if (prof.program == ThrustProgram::MinMax)
        return fol_mass(t, 0.0, prof.t1, p.m0, p.t_min, p.t_max, p.alpha_fuel);
    return fol_mass(t, prof.t1, prof.t2, p.m0, p.t_min, p.t_max, p.alpha_fuel);
}

FolSystem::FolSystem(const GuidanceProblem& scaled, const ThrustProfile& prof, const FolOptions& opt)
    : p_(scaled), opt_(opt) {
    check_basis(opt.basis);
    if (!(p_.t_min < p_.t_max)) throw std::invalid_argument("fol: T_min must be below T_max");
    if (!(p_.m0 > 0.0)) throw std::invalid_argument("fol: initial mass must be positive");
    bp_ = prof.breakpoints(0.0);
    for (std::size_t k = 0; k + 1 < bp_.size(); ++k)
        if (!(bp_[k + 1] > bp_[k])) throw std::invalid_argument("fol: switch times must be strictly increasing");
    levels_ = prof.levels(p_.t_min, p_.t_max);
    for (std::size_t k = 0; k + 1 < bp_.size(); ++k) c_.push_back(2.0 / (bp_[k + 1] - bp_[k]));
    c_lambda_ = 2.0 / (bp_.back() - bp_.front());
    z_ = nodes(opt.N);
    ce_ = std::make_shared<const ConstrainedExpression>(
        std::vector<ComponentSpec>{{opt.basis, opt.m, domain_map(-1.0, 1.0, -1.0, 1.0), {}}}, hermite_constraints());
    m_ = ce_->n_xi();
    for (int d = 0; d <= 2; ++d) {
        const auto M = ce_->matrices(0, z_, d);
        A_.push_back(M.A);
        P_.push_back(M.P);
    }
    n_unknowns_ = 3 * n_segments() * m_ + 6 + 6 * (n_segments() - 1);
    if (mass(bp_.back()) <= 0.0) throw std::domain_error("fol: mass depleted before the final time");
}

double FolSystem::time(int seg, double z) const { return bp_[seg] + (z + 1.0) / c_[seg]; }

double FolSystem::mass(double t) const {
    double burned = 0.0;
    for (int s = 0; s < n_segments(); ++s) {
        const double lo = bp_[s], hi = std::min(bp_[s + 1], t);
        if (hi > lo) burned += levels_[s] * (hi - lo);
    }
    return p_.m0 - p_.alpha_fuel * burned;
}

Vec3 FolSystem::lambda_v(const Eigen::VectorXd& X, double t) const {
    const double zl = -1.0 + c_lambda_ * (t - bp_.front());
    const auto a = X.segment(lambda_offset(), 6);
    return {a[0] + a[1] * zl, a[2] + a[3] * zl, a[4] + a[5] * zl};
}

Vec3 FolSystem::lambda_r(const Eigen::VectorXd& X) const {
    const auto a = X.segment(lambda_offset(), 6);
    return -c_lambda_ * Vec3(a[1], a[3], a[5]);
}

Eigen::Vector4d FolSystem::kappa(const Eigen::VectorXd& X, int s, int i) const {
    const int S = n_segments();
    const double rs = s == 0 ? p_.r0[i] : X[interface_offset(s) + i];
    const double vs = s == 0 ? p_.v0[i] : X[interface_offset(s) + 3 + i];
    const double re = s == S - 1 ? p_.rf[i] : X[interface_offset(s + 1) + i];
    const double ve = s == S - 1 ? p_.vf[i] : X[interface_offset(s + 1) + 3 + i];
    return {rs, vs / c_[s], re, ve / c_[s]};
}

Vec3 FolSystem::state(const Eigen::VectorXd& X, int s, double t, int d) const {
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, -1.0 + c_[s] * (t - bp_[s]));
    const auto M = ce_->matrices(0, z, d);
    Vec3 out;
    for (int i = 0; i < 3; ++i)
        out[i] = std::pow(c_[s], d) * (M.A.row(0).dot(X.segment(xi_offset(s, i), m_)) + M.P.row(0).dot(kappa(X, s, i)));
    return out;
}

Eigen::VectorXd FolSystem::loss(const Eigen::VectorXd& X) const {
    const int S = n_segments(), N = this->N();
    Eigen::VectorXd L(n_rows());
    for (int s = 0; s < S; ++s) {
        const double c2 = c_[s] * c_[s];
        Eigen::MatrixXd acc(N, 3);
        for (int i = 0; i < 3; ++i)
            acc.col(i) = c2 * (A_[2] * X.segment(xi_offset(s, i), m_) + P_[2] * kappa(X, s, i));
        for (int k = 0; k < N; ++k) {
            const double t = time(s, z_[k]);
            const Vec3 lv = lambda_v(X, t);
            const double beta = levels_[s] / mass(t);
            const Vec3 r = acc.row(k).transpose() - p_.a_g + beta * lv / lv.norm();
            for (int i = 0; i < 3; ++i) L[(s * 3 + i) * N + k] = r[i];
        }
    }
    const double tf = bp_.back();
    const Vec3 lv = lambda_v(X, tf);
    L[n_rows() - 1] = p_.alpha_fuel * levels_.back() + lambda_r(X).dot(p_.vf) + lv.dot(p_.a_g) -
                      levels_.back() / mass(tf) * lv.norm();
    return L;
}

Eigen::MatrixXd FolSystem::jacobian(const Eigen::VectorXd& X) const {
    const int S = n_segments(), N = this->N(), lo = lambda_offset();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n_rows(), n_unknowns_);
    for (int s = 0; s < S; ++s) {
        const double c = c_[s], c2 = c * c;
        for (int i = 0; i < 3; ++i) {
            const int row = (s * 3 + i) * N;
            J.block(row, xi_offset(s, i), N, m_) = c2 * A_[2];
            // interface columns depend on the segment times only
            if (s > 0) {
                J.block(row, interface_offset(s) + i, N, 1) = c2 * P_[2].col(0);
                J.block(row, interface_offset(s) + 3 + i, N, 1) = c * P_[2].col(1);
            }
            if (s < S - 1) {
                J.block(row, interface_offset(s + 1) + i, N, 1) = c2 * P_[2].col(2);
                J.block(row, interface_offset(s + 1) + 3 + i, N, 1) = c * P_[2].col(3);
            }
        }
        for (int k = 0; k < N; ++k) {
            const double t = time(s, z_[k]);
            const double zl = -1.0 + c_lambda_ * t;
            const Vec3 lv = lambda_v(X, t);
            const double n = lv.norm(), beta = levels_[s] / mass(t);
            const Eigen::Matrix3d D = beta * (Eigen::Matrix3d::Identity() / n - lv * lv.transpose() / (n * n * n));
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    J((s * 3 + i) * N + k, lo + 2 * j) = D(i, j);
                    J((s * 3 + i) * N + k, lo + 2 * j + 1) = D(i, j) * zl;
                }
        }
    }
    const double tf = bp_.back();
    const Vec3 lv = lambda_v(X, tf);
    const double beta = levels_.back() / mass(tf);
    for (int j = 0; j < 3; ++j) {
        const double g = p_.a_g[j] - beta * lv[j] / lv.norm();
        J(n_rows() - 1, lo + 2 * j) = g;
        J(n_rows() - 1, lo + 2 * j + 1) = g - c_lambda_ * p_.vf[j];
    }
    return J;
}

Eigen::VectorXd FolSystem::initial_guess() const {
    const int S = n_segments();
    Eigen::VectorXd X = Eigen::VectorXd::Zero(n_unknowns_);
    const double T = bp_.back() - bp_.front();
    const Vec3 slope = (p_.rf - p_.r0) / T;
    for (int j = 1; j < S; ++j) {
        X.segment(interface_offset(j), 3) = p_.r0 + slope * (bp_[j] - bp_.front());
        X.segment(interface_offset(j) + 3, 3) = slope;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A_[0], Eigen::ComputeThinU | Eigen::ComputeThinV);
    for (int s = 0; s < S; ++s)
        for (int i = 0; i < 3; ++i) {
            Eigen::VectorXd line(N());
            for (int k = 0; k < N(); ++k) line[k] = p_.r0[i] + slope[i] * (time(s, z_[k]) - bp_.front());
            X.segment(xi_offset(s, i), m_) = svd.solve(line - P_[0] * kappa(X, s, i));
        }
    const Vec3 V = p_.v0 / p_.v0.norm(), R = -p_.r0 / p_.r0.norm();
    for (int i = 0; i < 3; ++i) {
        X[lambda_offset() + 2 * i] = 0.5 * (V[i] + R[i]);
        X[lambda_offset() + 2 * i + 1] = 0.5 * (R[i] - V[i]);
    }
    // the primer direction fixes lambda only up to scale; pick the scale that zeroes the terminal row
    const double h0 = loss(X)[n_rows() - 1], hT = p_.alpha_fuel * levels_.back();
    if (h0 - hT < 0.0) X.segment(lambda_offset(), 6) *= -hT / (h0 - hT);
    return X;
}

double FolSystem::hamiltonian(const Eigen::VectorXd& X, int s, double t, double lambda_m) const {
    const Vec3 lv = lambda_v(X, t), v = state(X, s, t, 1);
    const double T = levels_[s];
    return p_.alpha_fuel * T + lambda_r(X).dot(v) + lv.dot(p_.a_g) - T / mass(t) * lv.norm() -
           lambda_m * p_.alpha_fuel * T;
}

Eigen::VectorXd FolSystem::lambda_m(const Eigen::VectorXd& X, const std::vector<Eigen::VectorXd>& t_per_seg) const {
    const int S = n_segments();
    const ConstrainedExpression ce({{opt_.basis, opt_.m, domain_map(-1.0, 1.0, -1.0, 1.0), {}}},
                                   {point_constraint(1.0, 0.0, 0)});
    const auto M1 = ce.matrices(0, z_, 1);
    int total = 0;
    for (const auto& t : t_per_seg) total += static_cast<int>(t.size());
    Eigen::VectorXd out(total);
    std::vector<int> offsets(S + 1, 0);
    for (int s = 0; s < S; ++s) offsets[s + 1] = offsets[s] + static_cast<int>(t_per_seg[s].size());
    double end_value = 0.0;
    const Eigen::VectorXd kap = Eigen::VectorXd::Constant(1, 1.0);
    for (int s = S - 1; s >= 0; --s) {
        Eigen::VectorXd rhs(N());
        for (int k = 0; k < N(); ++k) {
            const double t = time(s, z_[k]);
            const double m = mass(t);
            rhs[k] = -levels_[s] / (m * m) * lambda_v(X, t).norm();
        }
        const Eigen::VectorXd xi = lstsq(c_[s] * M1.A, rhs - c_[s] * M1.P * kap * end_value, LstsqMethod::svd(true));
        auto at = [&](const Eigen::VectorXd& z) {
            const auto M0 = ce.matrices(0, z, 0);
            return Eigen::VectorXd(M0.A * xi + M0.P * kap * end_value);
        };
        const Eigen::VectorXd& ts = t_per_seg[s];
        if (ts.size()) out.segment(offsets[s], ts.size()) = at((-1.0 + c_[s] * (ts.array() - bp_[s])).matrix());
        end_value = at(Eigen::VectorXd::Constant(1, -1.0))[0];
    }
    return out;
}

namespace {

ThrustProfile scaled_profile(const ThrustProfile& prof, const Scaling& s) {
    ThrustProfile q = prof;
    q.t1 /= s.time;
    q.t2 /= s.time;
    q.tf /= s.time;
    if (q.program == ThrustProgram::MinMax) q.t2 = q.t1;
    return q;
}

// Stacked residual of the outer loop: inner loss followed by the Hamiltonian at the nodes of every
// segment but the last.
Eigen::VectorXd outer_residual(const FolSystem& sys, const Eigen::VectorXd& X, const Eigen::VectorXd& z) {
    const int S = sys.n_segments(), N = static_cast<int>(z.size());
    std::vector<Eigen::VectorXd> ts(S);
    for (int s = 0; s < S; ++s) {
        ts[s].resize(s < S - 1 ? N : 0);
        for (int k = 0; k < ts[s].size(); ++k) ts[s][k] = sys.time(s, z[k]);
    }
    const Eigen::VectorXd lm = sys.lambda_m(X, ts);
    const Eigen::VectorXd L = sys.loss(X);
    Eigen::VectorXd R(L.size() + (S - 1) * N);
    R.head(L.size()) = L;
    for (int s = 0; s < S - 1; ++s)
        for (int k = 0; k < N; ++k) R[L.size() + s * N + k] = sys.hamiltonian(X, s, ts[s][k], lm[s * N + k]);
    return R;
}

LandingSolution fol_package(const FolSystem& sys, const Eigen::VectorXd& X, const ScaledProblem& sp,
                            const FolOptions& opt) {
    const Scaling& s = sp.scale;
    const GuidanceProblem& q = sp.problem;
    const int S = sys.n_segments();
    const auto& bp = sys.breakpoints();
    LandingSolution sol;
    sol.scale = s;
    sol.tf = bp.back() * s.time;
    sol.t1 = bp[1] * s.time;
    sol.t2 = (S == 3 ? bp[2] : bp[1]) * s.time;
    sol.max_residual = sys.loss(X).cwiseAbs().maxCoeff();
    sol.lambda_v0 = sys.lambda_v(X, 0.0);
    sol.lambda_r = sys.lambda_r(X);
    double burned = 0.0;
    for (int k = 0; k < S; ++k) burned += sys.thrust(k) * (bp[k + 1] - bp[k]);
    sol.propellant = q.alpha_fuel * burned;
    sol.cost = sol.propellant;

    const int per = std::max(1, opt.query_density * (sys.N() - 1));
    std::vector<Eigen::VectorXd> ts(S);
    for (int k = 0; k < S; ++k)
        ts[k] = Eigen::VectorXd::LinSpaced(per + 1, bp[k], bp[k + 1]);
    const Eigen::VectorXd lm = sys.lambda_m(X, ts);
    const int n = static_cast<int>(lm.size());
    sol.times.resize(n);
    sol.position.resize(n, 3);
    sol.velocity.resize(n, 3);
    sol.control.resize(n, 3);
    sol.thrust.resize(n);
    sol.mass.resize(n);
    sol.lambda_m = lm;
    sol.hamiltonian.resize(n);
    int row = 0;
    for (int k = 0; k < S; ++k)
        for (int j = 0; j < ts[k].size(); ++j, ++row) {
            const double t = ts[k][j];
            const double m = sys.mass(t);
            const Vec3 lv = sys.lambda_v(X, t);
            sol.times[row] = t * s.time;
            sol.position.row(row) = sys.state(X, k, t, 0).transpose() * s.length;
            sol.velocity.row(row) = sys.state(X, k, t, 1).transpose() * s.velocity();
            sol.control.row(row) = (-sys.thrust(k) / m * lv / lv.norm()).transpose() * s.accel();
            sol.thrust[row] = sys.thrust(k) * s.accel();
            sol.mass[row] = m;
            sol.hamiltonian[row] = sys.hamiltonian(X, k, t, lm[row]);
        }
    return sol;
}

// Cold starts take one step with the costates frozen: the dynamics are linear in the states once the
// primer direction is fixed.
SolveReport fol_newton(const FolSystem& sys, const Eigen::VectorXd* warm, const FolOptions& opt) {
    Eigen::VectorXd X0;
    int extra = 0;
    if (warm && warm->size() == sys.n_unknowns()) {
        X0 = *warm;
    } else {
        X0 = sys.initial_guess();
        Eigen::MatrixXd J = sys.jacobian(X0);
        J.middleCols(sys.lambda_offset(), 6).setZero();
        try {
            X0 += lstsq(J, -sys.loss(X0), LstsqMethod::svd(true));
            extra = 1;
        } catch (const SingularSystem&) {
        }
    }
    SolveReport rep = nls_solve([&](const Eigen::VectorXd& X) { return sys.loss(X); },
                                [&](const Eigen::VectorXd& X) { return sys.jacobian(X); }, X0, opt.nls);
    rep.iterations += extra;
    return rep;
}

}  // namespace

LandingSolution fol_inner_solve(const GuidanceProblem& p, const ThrustProfile& prof, const FolOptions& opt,
                                const Eigen::VectorXd* initial, Eigen::VectorXd* unknowns_out) {
    const auto start = std::chrono::steady_clock::now();
    const ScaledProblem sp = scale_problem(p);
    const FolSystem sys(sp.problem, scaled_profile(prof, sp.scale), opt);
    const SolveReport rep = fol_newton(sys, initial, opt);
    LandingSolution sol = fol_package(sys, rep.unknowns, sp, opt);
    sol.report = rep;
    sol.report.wall_time = std::chrono::duration<double>(ms_since(start));
    sol.converged = rep.converged() && sol.max_residual <= 1e-9;
    if (unknowns_out) *unknowns_out = rep.unknowns;
    return sol;
}

LandingSolution fol_outer_solve(const GuidanceProblem& p, const ThrustProfile& guess, const FolOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    const ScaledProblem sp = scale_problem(p);
    const ThrustProfile g0 = scaled_profile(guess, sp.scale);
    const bool three = g0.program == ThrustProgram::MaxMinMax;
    const int n = three ? 3 : 2;
    const Eigen::VectorXd zn = nodes(opt.N);

    auto to_profile = [&](const Eigen::VectorXd& tau) {
        ThrustProfile q = g0;
        q.t1 = tau[0];
        q.t2 = three ? tau[1] : tau[0];
        q.tf = tau[n - 1];
        return q;
    };
    // keep the segments ordered and non-degenerate
    auto project = [&](Eigen::VectorXd& tau) {
        const double tf = std::max(tau[n - 1], 1e-6);
        const double gap = 1e-6 * tf;
        tau[n - 1] = tf;
        tau[0] = std::clamp(tau[0], gap, tf - (n - 1) * gap);
        if (three) tau[1] = std::clamp(tau[1], tau[0] + gap, tf - gap);
    };

    Eigen::VectorXd warm;
    SolveReport last;
    auto evaluate = [&](const Eigen::VectorXd& tau, Eigen::VectorXd& X) -> Eigen::VectorXd {
        const FolSystem sys(sp.problem, to_profile(tau), opt);
        last = fol_newton(sys, opt.warm_start ? &warm : nullptr, opt);
        X = last.unknowns;
        return outer_residual(sys, X, zn);
    };

    Eigen::VectorXd tau(n);
    tau[0] = g0.t1;
    if (three) tau[1] = g0.t2;
    tau[n - 1] = g0.tf;
    project(tau);
    Eigen::VectorXd X;
    Eigen::VectorXd R;
    try {
        R = evaluate(tau, X);
    } catch (const std::exception&) {
        LandingSolution bad;
        bad.report.stop_reason = StopReason::SingularSystem;
        return bad;
    }
    warm = X;
    double mu = 1e-3;
    int it = 0;
    bool done = R.cwiseAbs().maxCoeff() < opt.outer_tol;
    for (; it < opt.outer_max_iter && !done; ++it) {
        Eigen::MatrixXd J(R.size(), n);
        for (int j = 0; j < n; ++j) {
            Eigen::VectorXd tp = tau;
            const double h = 1e-7 * std::max(1.0, std::abs(tau[j]));
            tp[j] += h;
            Eigen::VectorXd Xp;
            J.col(j) = (evaluate(tp, Xp) - R) / h;
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * R;
        bool accepted = false;
        for (int tries = 0; tries < 20 && !accepted; ++tries) {
            Eigen::MatrixXd Aug = JtJ;
            Aug.diagonal() += mu * JtJ.diagonal().cwiseMax(1e-12);
            Eigen::VectorXd step = Aug.ldlt().solve(-g);
            Eigen::VectorXd trial = tau + step;
            project(trial);
            Eigen::VectorXd Xt, Rt;
            try {
                Rt = evaluate(trial, Xt);
            } catch (const std::exception&) {
                mu *= 4.0;
                continue;
            }
            if (Rt.squaredNorm() < R.squaredNorm()) {
                const double moved = (trial - tau).cwiseAbs().maxCoeff();
                tau = trial;
                R = Rt;
                X = Xt;
                warm = X;
                mu = std::max(mu / 3.0, 1e-12);
                accepted = true;
                if (R.cwiseAbs().maxCoeff() < opt.outer_tol || moved < opt.outer_tol * std::max(1.0, tau.norm()))
                    done = true;
            } else {
                mu *= 4.0;
            }
        }
        if (!accepted) break;
    }
    const FolSystem sys(sp.problem, to_profile(tau), opt);
    LandingSolution sol = fol_package(sys, X, sp, opt);
    sol.report = last;
    sol.report.unknowns = X;
    sol.report.wall_time = std::chrono::duration<double>(ms_since(start));
    sol.outer_iterations = it;
    double hmax = 0.0;
    for (int k = 0; k < sol.times.size(); ++k)
        if (sol.times[k] <= (three ? sol.t2 : sol.t1)) hmax = std::max(hmax, std::abs(sol.hamiltonian[k]));
    sol.converged = sol.max_residual < 1e-9 && hmax < 1e-6;
    return sol;
}

}  // namespace tfc
