#include "tfc/odesolve.hpp"

#include <cmath>
#include <stdexcept>

namespace tfc {

namespace {

int width(const OdeProblem& p) { return p.n_components * (p.order + 1); }

int m_of(const OdeProblem& p, int c) { return p.m.size() == 1 ? p.m[0] : p.m[c]; }

int constraint_order(const LinearConstraint& lc) {
    auto order = [](const FunctionalTerm& t) { return t.kind == FunctionalTerm::Kind::Integral ? -1 : t.order; };
    const int o = order(lc.terms.front());
    for (const auto& t : lc.terms)
        if (order(t) != o)
            throw std::invalid_argument("free-time constraints must use a single derivative order per constraint");
    return o;
}

}  // namespace

Eigen::MatrixXd residual_partials(const OdeResidual& f, int rows, double x, const Eigen::MatrixXd& Y, bool with_x,
                                  bool affine) {
    const double rel = affine ? 1.0 : 1e-6;
    const int w = static_cast<int>(Y.size());
    Eigen::MatrixXd J(rows, w + (with_x ? 1 : 0));
    Eigen::VectorXd Fp(rows), Fm(rows);
    Eigen::MatrixXd Yp = Y;
    for (int c = 0; c < Y.rows(); ++c)
        for (int d = 0; d < Y.cols(); ++d) {
            const double h = rel * std::max(1.0, std::abs(Y(c, d)));
            Yp(c, d) = Y(c, d) + h;
            f(x, Yp, Fp);
            Yp(c, d) = Y(c, d) - h;
            f(x, Yp, Fm);
            Yp(c, d) = Y(c, d);
            J.col(c * Y.cols() + d) = (Fp - Fm) / (2 * h);
        }
    if (with_x) {
        const double h = 1e-6 * std::max(1.0, std::abs(x));
        f(x + h, Y, Fp);
        f(x - h, Y, Fm);
        J.col(w) = (Fp - Fm) / (2 * h);
    }
    return J;
}

OdeSystem::OdeSystem(const OdeProblem& p, OdeMode mode) : p_(p), mode_(mode) {
    if (!p_.residual) throw std::invalid_argument("OdeProblem: residual missing");
    if (p_.n_components < 1 || p_.n_equations < 1) throw std::invalid_argument("OdeProblem: empty system");
    if (p_.order < 0 || p_.order > kMaxDerivative) throw std::invalid_argument("OdeProblem: order exceeds derivative cap");
    if (p_.N < 2) throw std::invalid_argument("OdeProblem: at least two nodes required");
    if (p_.m.size() != 1 && static_cast<int>(p_.m.size()) != p_.n_components)
        throw std::invalid_argument("OdeProblem: m must have one entry or one per component");
    const auto [lo, hi] = reference_domain(p_.basis.family);
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("OdeProblem: collocation needs a finite basis domain");
    z0_ = lo;
    zf_ = hi;
    map_ = mode_ == OdeMode::FreeTime ? domain_map(z0_, zf_, z0_, zf_) : domain_map(p_.x0, p_.xf, z0_, zf_);
    z_ = (z0_ + (cgl_nodes(p_.N - 1).array() + 1.0) * 0.5 * (zf_ - z0_)).matrix();

    const int nk = static_cast<int>(p_.constraints.size());
    kappa0_.resize(nk);
    for (int i = 0; i < nk; ++i) kappa0_[i] = p_.constraints[i].kappa;
    orders_.assign(nk, 0);
    if (mode_ == OdeMode::FreeTime)
        for (int i = 0; i < nk; ++i) orders_[i] = constraint_order(p_.constraints[i]);
    for (int k : p_.free_kappa)
        if (k < 0 || k >= nk) throw std::invalid_argument("OdeProblem: free_kappa index out of range");

    if (mode_ == OdeMode::Spectral) {
        for (int c = 0; c < p_.n_components; ++c) {
            std::vector<int> cols(m_of(p_, c));
            for (int j = 0; j < m_of(p_, c); ++j) cols[j] = j;
            spectral_offset_.push_back(n_xi_);
            spectral_.emplace_back(p_.basis, map_, cols);
            n_xi_ += m_of(p_, c);
        }
    } else {
        std::vector<ComponentSpec> comps;
        if (!p_.supports.empty() && static_cast<int>(p_.supports.size()) != p_.n_components)
            throw std::invalid_argument("OdeProblem: supports must be given per component");
        for (int c = 0; c < p_.n_components; ++c)
            comps.push_back({p_.basis, m_of(p_, c), map_, p_.supports.empty() ? std::vector<SupportFunction>{} : p_.supports[c]});
        ce_.emplace(std::move(comps), p_.constraints, p_.weights);
        n_xi_ = ce_->n_xi();
    }
    n_unknowns_ = n_xi_ + static_cast<int>(p_.free_kappa.size()) + (mode_ == OdeMode::FreeTime ? 1 : 0);

    const Eigen::VectorXd pts = mode_ == OdeMode::FreeTime ? z_ : map_.to_x(z_);
    for (int c = 0; c < p_.n_components; ++c)
        for (int d = 0; d <= p_.order; ++d) node_mats_.push_back(affine_at(c, pts, d));
    for (const auto& pr : p_.point_rows) {
        std::vector<Affine> mats;
        for (int c = 0; c < p_.n_components; ++c)
            for (int d = 0; d <= p_.order; ++d) mats.push_back(affine_at(c, Eigen::VectorXd::Constant(1, pr.at), d));
        point_mats_.push_back(std::move(mats));
    }
}

int OdeSystem::n_rows() const {
    int r = p_.n_equations * n_nodes();
    for (const auto& pr : p_.point_rows) r += pr.count;
    if (mode_ == OdeMode::Spectral) r += static_cast<int>(p_.constraints.size());
    return r;
}

OdeSystem::Affine OdeSystem::affine_at(int comp, const Eigen::VectorXd& pts, int d) const {
    if (mode_ != OdeMode::Spectral) {
        auto M = ce_->matrices(comp, pts, d);
        return {std::move(M.A), std::move(M.P)};
    }
    Affine a{Eigen::MatrixXd::Zero(pts.size(), n_xi_), Eigen::MatrixXd::Zero(pts.size(), p_.constraints.size())};
    a.A.middleCols(spectral_offset_[comp], spectral_[comp].size()) = spectral_[comp].eval(pts, d);
    return a;
}

double OdeSystem::b(const Eigen::VectorXd& X) const { return mode_ == OdeMode::FreeTime ? X[n_unknowns_ - 1] : 1.0; }

double OdeSystem::t_final(const Eigen::VectorXd& X) const {
    if (mode_ != OdeMode::FreeTime) return p_.xf;
    const double bb = b(X);
    return p_.x0 + (zf_ - z0_) / (bb * bb);
}

Eigen::VectorXd OdeSystem::nodes(const Eigen::VectorXd& X) const {
    if (mode_ != OdeMode::FreeTime) return map_.to_x(z_);
    const double c = b(X) * b(X);
    return (p_.x0 + (z_.array() - z0_) / c).matrix();
}

Eigen::VectorXd OdeSystem::kappa_basis(const Eigen::VectorXd& X, Eigen::MatrixXd* dk) const {
    Eigen::VectorXd k = kappa0_;
    const int nk = static_cast<int>(k.size());
    if (dk) dk->setZero(nk, n_unknowns_);
    for (std::size_t j = 0; j < p_.free_kappa.size(); ++j) {
        k[p_.free_kappa[j]] = X[n_xi_ + j];
        if (dk) (*dk)(p_.free_kappa[j], n_xi_ + j) = 1.0;
    }
    if (mode_ == OdeMode::FreeTime) {
        const double bb = b(X);
        for (int i = 0; i < nk; ++i) {
            const double s = std::pow(bb, -2.0 * orders_[i]);
            if (dk) {
                dk->row(i) *= s;
                (*dk)(i, n_unknowns_ - 1) += -2.0 * orders_[i] * k[i] * s / bb;
            }
            k[i] *= s;
        }
    }
    return k;
}

Eigen::VectorXd OdeSystem::initial_guess() const {
    if (p_.initial) {
        if (p_.initial->size() != n_unknowns_) throw std::invalid_argument("OdeProblem: initial guess has wrong size");
        return *p_.initial;
    }
    Eigen::VectorXd X = Eigen::VectorXd::Zero(n_unknowns_);
    for (std::size_t j = 0; j < p_.free_kappa.size(); ++j) X[n_xi_ + j] = kappa0_[p_.free_kappa[j]];
    if (mode_ == OdeMode::FreeTime) X[n_unknowns_ - 1] = std::sqrt(zf_ - z0_);
    return X;
}

void OdeSystem::residual_jac(double x, const Eigen::MatrixXd& Y, Eigen::Ref<Eigen::MatrixXd> dF) const {
    if (p_.jacobian) {
        p_.jacobian(x, Y, dF);
        return;
    }
    dF = residual_partials(p_.residual, p_.n_equations, x, Y, false, p_.affine);
}

Eigen::VectorXd OdeSystem::loss(const Eigen::VectorXd& X) const {
    const int Nn = n_nodes(), W = width(p_);
    const Eigen::VectorXd xi = X.head(n_xi_);
    const Eigen::VectorXd k = kappa_basis(X, nullptr);
    const double c = b(X) * b(X);
    const Eigen::VectorXd t = nodes(X);

    std::vector<Eigen::VectorXd> vals(W);
    for (int j = 0; j < W; ++j) {
        const int d = j % (p_.order + 1);
        vals[j] = node_mats_[j].A * xi + node_mats_[j].P * k;
        if (mode_ == OdeMode::FreeTime) vals[j] *= std::pow(c, d);
    }
    Eigen::VectorXd L(n_rows());
    Eigen::MatrixXd Y(p_.n_components, p_.order + 1);
    Eigen::VectorXd F(p_.n_equations);
    for (int i = 0; i < Nn; ++i) {
        for (int j = 0; j < W; ++j) Y(j / (p_.order + 1), j % (p_.order + 1)) = vals[j][i];
        p_.residual(t[i], Y, F);
        for (int e = 0; e < p_.n_equations; ++e) L[e * Nn + i] = F[e];
    }
    int row = p_.n_equations * Nn;
    for (std::size_t q = 0; q < p_.point_rows.size(); ++q) {
        const auto& pr = p_.point_rows[q];
        for (int j = 0; j < W; ++j) {
            const int d = j % (p_.order + 1);
            double v = point_mats_[q][j].A.row(0).dot(xi) + point_mats_[q][j].P.row(0).dot(k);
            if (mode_ == OdeMode::FreeTime) v *= std::pow(c, d);
            Y(j / (p_.order + 1), d) = v;
        }
        const double x = mode_ == OdeMode::FreeTime ? p_.x0 + (pr.at - z0_) / c : pr.at;
        Eigen::VectorXd Fp(pr.count);
        pr.f(x, Y, Fp);
        L.segment(row, pr.count) = Fp;
        row += pr.count;
    }
    if (mode_ == OdeMode::Spectral) L.tail(p_.constraints.size()) = constraint_errors(X);
    return L;
}

Eigen::MatrixXd OdeSystem::jacobian(const Eigen::VectorXd& X) const {
    const int Nn = n_nodes(), W = width(p_), n = n_unknowns_;
    const bool ft = mode_ == OdeMode::FreeTime;
    const Eigen::VectorXd xi = X.head(n_xi_);
    Eigen::MatrixXd dk;
    const Eigen::VectorXd k = kappa_basis(X, &dk);
    const double bb = b(X), c = bb * bb;
    const Eigen::VectorXd t = nodes(X);

    // Value and full-unknown gradient of every (component, derivative) pair at the nodes.
    auto gradients = [&](const Affine& M, int d, Eigen::VectorXd& v, Eigen::MatrixXd& G) {
        const Eigen::VectorXd raw = M.A * xi + M.P * k;
        G.setZero(M.A.rows(), n);
        G.leftCols(n_xi_) = M.A;
        if (M.P.cols() > 0) G.noalias() += M.P * dk;
        const double s = ft ? std::pow(c, d) : 1.0;
        G *= s;
        v = raw * s;
        if (ft && d > 0) G.col(n - 1) += 2.0 * d * raw * std::pow(bb, 2 * d - 1);
    };

    std::vector<Eigen::VectorXd> vals(W);
    std::vector<Eigen::MatrixXd> grads(W);
    for (int j = 0; j < W; ++j) gradients(node_mats_[j], j % (p_.order + 1), vals[j], grads[j]);

    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n_rows(), n);
    Eigen::MatrixXd Y(p_.n_components, p_.order + 1);
    Eigen::MatrixXd dF(p_.n_equations, W);
    for (int i = 0; i < Nn; ++i) {
        for (int j = 0; j < W; ++j) Y(j / (p_.order + 1), j % (p_.order + 1)) = vals[j][i];
        residual_jac(t[i], Y, dF);
        for (int e = 0; e < p_.n_equations; ++e) {
            auto r = J.row(e * Nn + i);
            for (int j = 0; j < W; ++j)
                if (dF(e, j) != 0.0) r.noalias() += dF(e, j) * grads[j].row(i);
        }
        if (ft) {
            // nodes move with b: dt/db = -2 (z - z0) / b^3
            const Eigen::MatrixXd dx = residual_partials(p_.residual, p_.n_equations, t[i], Y, true);
            const double dtdb = -2.0 * (z_[i] - z0_) / (c * bb);
            for (int e = 0; e < p_.n_equations; ++e) J(e * Nn + i, n - 1) += dx(e, W) * dtdb;
        }
    }
    int row = p_.n_equations * Nn;
    for (std::size_t q = 0; q < p_.point_rows.size(); ++q) {
        const auto& pr = p_.point_rows[q];
        std::vector<Eigen::VectorXd> pv(W);
        std::vector<Eigen::MatrixXd> pg(W);
        for (int j = 0; j < W; ++j) {
            gradients(point_mats_[q][j], j % (p_.order + 1), pv[j], pg[j]);
            Y(j / (p_.order + 1), j % (p_.order + 1)) = pv[j][0];
        }
        const double x = ft ? p_.x0 + (pr.at - z0_) / c : pr.at;
        const Eigen::MatrixXd dP = residual_partials(pr.f, pr.count, x, Y, ft);
        for (int r = 0; r < pr.count; ++r) {
            for (int j = 0; j < W; ++j) J.row(row + r) += dP(r, j) * pg[j].row(0);
            if (ft) J(row + r, n - 1) += dP(r, W) * (-2.0 * (pr.at - z0_) / (c * bb));
        }
        row += pr.count;
    }
    if (mode_ == OdeMode::Spectral) {
        const int nk = static_cast<int>(p_.constraints.size());
        for (int i = 0; i < nk; ++i) {
            Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
            for (const auto& term : p_.constraints[i].terms) {
                const auto& g = spectral_[term.component];
                Eigen::RowVectorXd h;
                switch (term.kind) {
                    case FunctionalTerm::Kind::Point: h = g.row(term.x, term.order); break;
                    case FunctionalTerm::Kind::Integral: h = g.integral(term.a, term.b); break;
                    case FunctionalTerm::Kind::Limit: h = g.limit(term.order); break;
                }
                r.segment(spectral_offset_[term.component], g.size()) += term.coef * h;
            }
            r -= dk.row(i);
            J.row(row + i) = r;
        }
    }
    return J;
}

Eigen::VectorXd OdeSystem::values(const Eigen::VectorXd& X, int comp, const Eigen::VectorXd& x, int d) const {
    Eigen::VectorXd pts = x;
    double s = 1.0;
    if (mode_ == OdeMode::FreeTime) {
        const double c = b(X) * b(X);
        pts = (z0_ + c * (x.array() - p_.x0)).matrix();
        s = std::pow(c, d);
    }
    const Affine M = affine_at(comp, pts, d);
    return s * (M.A * X.head(n_xi_) + M.P * kappa_basis(X, nullptr));
}

Eigen::MatrixXd OdeSystem::residuals(const Eigen::VectorXd& X, const Eigen::VectorXd& x) const {
    const int W = width(p_);
    std::vector<Eigen::VectorXd> vals(W);
    for (int j = 0; j < W; ++j) vals[j] = values(X, j / (p_.order + 1), x, j % (p_.order + 1));
    Eigen::MatrixXd R(x.size(), p_.n_equations);
    Eigen::MatrixXd Y(p_.n_components, p_.order + 1);
    Eigen::VectorXd F(p_.n_equations);
    for (int i = 0; i < x.size(); ++i) {
        for (int j = 0; j < W; ++j) Y(j / (p_.order + 1), j % (p_.order + 1)) = vals[j][i];
        p_.residual(x[i], Y, F);
        R.row(i) = F.transpose();
    }
    return R;
}

Eigen::VectorXd OdeSystem::constraint_errors(const Eigen::VectorXd& X) const {
    const int nk = static_cast<int>(p_.constraints.size());
    const bool ft = mode_ == OdeMode::FreeTime;
    const double c = b(X) * b(X);
    auto to_problem = [&](double v) { return ft ? p_.x0 + (v - z0_) / c : v; };
    Eigen::VectorXd kap = kappa0_;
    for (std::size_t j = 0; j < p_.free_kappa.size(); ++j) kap[p_.free_kappa[j]] = X[n_xi_ + j];

    Eigen::VectorXd gx, gw;
    gauss_legendre(64, gx, gw);
    Eigen::VectorXd err(nk);
    for (int i = 0; i < nk; ++i) {
        double acc = 0.0;
        for (const auto& term : p_.constraints[i].terms) {
            switch (term.kind) {
                case FunctionalTerm::Kind::Point:
                    acc += term.coef * values(X, term.component, Eigen::VectorXd::Constant(1, to_problem(term.x)), term.order)[0];
                    break;
                case FunctionalTerm::Kind::Integral: {
                    const double a = to_problem(term.a), bnd = to_problem(term.b);
                    const Eigen::VectorXd q = (0.5 * (a + bnd) + 0.5 * (bnd - a) * gx.array()).matrix();
                    acc += term.coef * 0.5 * (bnd - a) * gw.dot(values(X, term.component, q, 0));
                    break;
                }
                case FunctionalTerm::Kind::Limit: {
                    if (mode_ != OdeMode::Spectral) throw std::invalid_argument("constraint_errors: limit terms unsupported");
                    const Eigen::RowVectorXd h = spectral_[term.component].limit(term.order);
                    acc += term.coef * h.dot(X.segment(spectral_offset_[term.component], spectral_[term.component].size()));
                    break;
                }
            }
        }
        err[i] = acc - kap[i];
    }
    return err;
}

OdeSolution solve_system(std::shared_ptr<const OdeSystem> sys, const Eigen::VectorXd& X0) {
    const OdeProblem& p = sys->problem();
    OdeSolution sol;
    LossFn loss = [&](const Eigen::VectorXd& X) { return sys->loss(X); };
    JacFn jac = [&](const Eigen::VectorXd& X) { return sys->jacobian(X); };

    if (p.affine) {
        const auto start = std::chrono::steady_clock::now();
        SolveReport rep;
        rep.unknowns = X0;
        rep.iterations = 1;
        try {
            const Eigen::MatrixXd J = jac(X0);
            const Eigen::VectorXd L0 = loss(X0);
            const Eigen::VectorXd step = lstsq(J, -L0, p.nls.method);
            rep.unknowns = X0 + step;
            rep.last_max_step = step.size() ? step.cwiseAbs().maxCoeff() : 0.0;
            rep.stop_reason = StopReason::Converged;
        } catch (const SingularSystem&) {
            rep.stop_reason = StopReason::SingularSystem;
        }
        rep.final_max_residual = loss(rep.unknowns).cwiseAbs().maxCoeff();
        rep.wall_time = std::chrono::steady_clock::now() - start;
        sol.report = rep;
    } else {
        sol.report = nls_solve(loss, jac, X0, p.nls);
    }

    const Eigen::VectorXd& X = sol.report.unknowns;
    sol.unknowns = X;
    sol.loss = sys->loss(X);
    for (int c = 0, off = 0; c < p.n_components; ++c) {
        const int mc = sys->ce() ? sys->ce()->xi_size(c) : (p.m.size() == 1 ? p.m[0] : p.m[c]);
        const int o = sys->ce() ? sys->ce()->xi_offset(c) : off;
        sol.xi.push_back(X.segment(o, mc));
        off += mc;
    }
    const int Nn = sys->n_nodes();
    sol.nodes = sys->nodes(X);
    sol.node_residuals.resize(Nn, p.n_equations);
    for (int e = 0; e < p.n_equations; ++e) sol.node_residuals.col(e) = sol.loss.segment(e * Nn, Nn);

    const double t0 = p.x0, tf = sys->t_final(X);
    if (sys->mode() == OdeMode::FreeTime) {
        sol.tf = tf;
        const double bb = sys->b(X);
        if (!std::isfinite(bb) || !std::isfinite(tf)) sol.diagnostics.push_back("domain collapse: non-finite final time");
    }
    if (std::isfinite(tf)) {
        const int nq = std::max(2, p.query_density * (Nn - 1) + 1);
        sol.query = Eigen::VectorXd::LinSpaced(nq, t0, tf);
        for (int c = 0; c < p.n_components; ++c) {
            Eigen::MatrixXd S(nq, p.order + 1);
            for (int d = 0; d <= p.order; ++d) S.col(d) = sys->values(X, c, sol.query, d);
            sol.samples.push_back(std::move(S));
        }
        sol.query_residuals = sys->residuals(X, sol.query);
    }
    sol.system = std::move(sys);
    return sol;
}

OdeSolution solve_ode(const OdeProblem& p) {
    auto sys = std::make_shared<const OdeSystem>(p, OdeMode::Tfc);
    return solve_system(sys, sys->initial_guess());
}

OdeSolution solve_spectral_baseline(const OdeProblem& p) {
    auto sys = std::make_shared<const OdeSystem>(p, OdeMode::Spectral);
    return solve_system(sys, sys->initial_guess());
}

OdeSolution solve_free_time(const FreeTimeProblem& p) {
    if (!(p.tf_guess > p.ode.x0)) throw std::invalid_argument("free-time: final time guess must exceed t0");
    auto sys = std::make_shared<const OdeSystem>(p.ode, OdeMode::FreeTime);
    Eigen::VectorXd X0 = sys->initial_guess();
    if (!p.ode.initial) {
        const auto [z0, zf] = reference_domain(p.ode.basis.family);
        X0[X0.size() - 1] = std::sqrt((zf - z0) / (p.tf_guess - p.ode.x0));
    }
    OdeSolution sol = solve_system(sys, X0);
    if (std::abs(sol.system->b(sol.unknowns)) < p.collapse_tol) sol.diagnostics.push_back("domain collapse: b -> 0");
    return sol;
}

OdeSolution solve_overconstrained(OdeProblem p, const Eigen::VectorXd& weights) {
    p.weights = weights;
    return solve_ode(p);
}

}  // namespace tfc
