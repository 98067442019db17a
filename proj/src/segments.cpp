#include "tfc/segments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace tfc {

SegmentedExpression::SegmentedExpression(std::vector<double> breakpoints, SegmentBoundary left, SegmentBoundary right,
                                         BasisKind basis, int m, int N)
    : bp_(std::move(breakpoints)), left_(left), right_(right) {
    const int n = static_cast<int>(bp_.size()) - 1;
    if (n < 2) throw std::invalid_argument("segments: at least two segments required");
    if (n > kMaxSegments) throw std::invalid_argument("segments: too many segments");
    for (int k = 0; k < n; ++k)
        if (!(bp_[k + 1] > bp_[k])) throw std::invalid_argument("segments: breakpoints must be strictly increasing");
    if (N < 2) throw std::invalid_argument("segments: at least two nodes per segment");
    const auto [lo, hi] = reference_domain(basis.family);
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("segments: basis domain must be finite");
    z0_ = lo;
    zf_ = hi;
    z_ = (z0_ + (cgl_nodes(N - 1).array() + 1.0) * 0.5 * (zf_ - z0_)).matrix();

    const DomainMap id = domain_map(z0_, zf_, z0_, zf_);
    auto beta_of = [](int j) { return 2 * (j - 1); };
    for (int k = 0; k < n; ++k) {
        std::vector<LinearConstraint> cons;
        std::vector<Source> src;
        auto add = [&](double at, int d, Source s) {
            cons.push_back(point_constraint(at, 0.0, d));
            src.push_back(s);
        };
        // interior breakpoint j sits between segments j-1 and j (0-based segments)
        if (k == 0) {
            add(z0_, 0, {-1, left_.value, false});
            if (left_.slope) add(z0_, 1, {-1, *left_.slope, true});
        } else {
            add(z0_, 0, {beta_of(k), 0.0, false});
            add(z0_, 1, {beta_of(k) + 1, 0.0, true});
        }
        if (k == n - 1) {
            add(zf_, 0, {-1, right_.value, false});
            if (right_.slope) add(zf_, 1, {-1, *right_.slope, true});
        } else {
            add(zf_, 0, {beta_of(k + 1), 0.0, false});
            add(zf_, 1, {beta_of(k + 1) + 1, 0.0, true});
        }
        ce_.emplace_back(std::vector<ComponentSpec>{{basis, m, id, {}}}, std::move(cons));
        sources_.push_back(std::move(src));
        xi_off_.push_back(n_xi_);
        n_xi_ += ce_.back().n_xi();
    }
    // beta indices were recorded relative to the start of the interface block
    for (auto& src : sources_)
        for (auto& s : src)
            if (s.beta >= 0) s.beta += n_xi_;
}

SegmentedExpression::Kappa SegmentedExpression::kappa(int k, const Eigen::VectorXd& X, double c) const {
    const auto& src = sources_[k];
    const int nk = static_cast<int>(src.size());
    Kappa out{Eigen::VectorXd(nk), Eigen::MatrixXd::Zero(nk, X.size()), Eigen::VectorXd::Zero(nk)};
    for (int i = 0; i < nk; ++i) {
        const double raw = src[i].beta >= 0 ? X[src[i].beta] : src[i].data;
        const double s = src[i].slope ? 1.0 / c : 1.0;
        out.value[i] = raw * s;
        if (src[i].beta >= 0) out.dX(i, src[i].beta) = s;
        if (src[i].slope) out.dc[i] = -raw / (c * c);
    }
    return out;
}

Eigen::VectorXd SegmentedExpression::eval(const Eigen::VectorXd& X, int k, const Eigen::VectorXd& x, int d,
                                          const std::vector<double>& bps) const {
    const double c = dz() / (bps[k + 1] - bps[k]);
    const Eigen::VectorXd z = (z0_ + c * (x.array() - bps[k])).matrix();
    const auto M = ce_[k].matrices(0, z, d);
    const Kappa kp = kappa(k, X, c);
    return std::pow(c, d) * (M.A * X.segment(xi_off_[k], ce_[k].n_xi()) + M.P * kp.value);
}

Eigen::VectorXd SegmentedExpression::straight_line() const {
    Eigen::VectorXd X = Eigen::VectorXd::Zero(n_unknowns());
    const double L = bp_.back() - bp_.front();
    const double slope = (right_.value - left_.value) / L;
    for (int j = 1; j < n_segments(); ++j) {
        X[beta_offset(j)] = left_.value + slope * (bp_[j] - bp_.front());
        X[beta_offset(j) + 1] = slope;
    }
    return X;
}

SegmentedExpression build_segmented(int n, std::vector<double> breakpoints, SegmentBoundary left,
                                    SegmentBoundary right, BasisKind basis, int m, int N) {
    if (static_cast<int>(breakpoints.size()) != n + 1)
        throw std::invalid_argument("segments: need n + 1 breakpoints for n segments");
    return SegmentedExpression(std::move(breakpoints), left, right, basis, m, N);
}

SegmentedSystem::SegmentedSystem(SegmentedProblem p, bool free_breakpoint) : p_(std::move(p)), free_(free_breakpoint) {
    if (!p_.seg) throw std::invalid_argument("segments: expression missing");
    const int n = seg().n_segments();
    if (p_.residuals.size() != 1 && static_cast<int>(p_.residuals.size()) != n)
        throw std::invalid_argument("segments: one residual, or one per segment, required");
    if (free_ && n != 2) throw std::invalid_argument("segments: a free breakpoint needs exactly two segments");
    if (p_.order < 0 || p_.order > kMaxDerivative) throw std::invalid_argument("segments: bad order");
    for (int k = 0; k < n; ++k) {
        std::vector<ConstrainedExpression::Matrices> mk;
        for (int d = 0; d <= p_.order; ++d) mk.push_back(seg().ce(k).matrices(0, seg().z_nodes(), d));
        mats_.push_back(std::move(mk));
    }
}

const OdeResidualJac* SegmentedSystem::jac(int k) const {
    if (p_.jacobians.empty()) return nullptr;
    const auto& j = p_.jacobians.size() == 1 ? p_.jacobians[0] : p_.jacobians[k];
    return j ? &j : nullptr;
}

double SegmentedSystem::c_bar_for(double x1) const { return seg().dz() / (x1 - seg().breakpoints().front()); }

SegmentedSystem::SegmentState SegmentedSystem::state(int k, const Eigen::VectorXd& X) const {
    const auto& bp = seg().breakpoints();
    const double dz = seg().dz();
    if (!free_) return {dz / (bp[k + 1] - bp[k]), 0.0, bp[k], 0.0};
    const double cb = X[X.size() - 1];
    if (k == 0) return {cb, 1.0, bp.front(), 0.0};
    const double L = bp.back() - bp.front();
    const double den = cb * L - dz;
    return {cb * dz / den, -dz * dz / (den * den), bp.front() + dz / cb, -dz / (cb * cb)};
}

std::vector<double> SegmentedSystem::breakpoints(const Eigen::VectorXd& X) const {
    std::vector<double> bp = seg().breakpoints();
    if (free_) bp[1] = bp.front() + seg().dz() / X[X.size() - 1];
    return bp;
}

Eigen::VectorXd SegmentedSystem::loss(const Eigen::VectorXd& X) const {
    const int n = seg().n_segments(), Nn = seg().nodes_per_segment();
    const Eigen::VectorXd& z = seg().z_nodes();
    const Eigen::VectorXd Xb = X.head(seg().n_unknowns());
    Eigen::VectorXd L(n_rows());
    Eigen::MatrixXd Y(1, p_.order + 1);
    Eigen::VectorXd F(1);
    for (int k = 0; k < n; ++k) {
        const SegmentState s = state(k, X);
        const auto kp = seg().kappa(k, Xb, s.c);
        const Eigen::VectorXd xi = Xb.segment(seg().xi_offset(k), seg().xi_size(k));
        std::vector<Eigen::VectorXd> v(p_.order + 1);
        for (int d = 0; d <= p_.order; ++d) v[d] = std::pow(s.c, d) * (mats_[k][d].A * xi + mats_[k][d].P * kp.value);
        for (int i = 0; i < Nn; ++i) {
            for (int d = 0; d <= p_.order; ++d) Y(0, d) = v[d][i];
            residual(k)(s.start + (z[i] - seg().z0()) / s.c, Y, F);
            L[k * Nn + i] = F[0];
        }
    }
    return L;
}

Eigen::MatrixXd SegmentedSystem::jacobian(const Eigen::VectorXd& X) const {
    const int n = seg().n_segments(), Nn = seg().nodes_per_segment(), nu = n_unknowns();
    const int W = p_.order + 1;
    const Eigen::VectorXd& z = seg().z_nodes();
    const Eigen::VectorXd Xb = X.head(seg().n_unknowns());
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n_rows(), nu);
    Eigen::MatrixXd Y(1, W), dF(1, W);
    for (int k = 0; k < n; ++k) {
        const SegmentState s = state(k, X);
        const auto kp = seg().kappa(k, Xb, s.c);
        const int off = seg().xi_offset(k), nx = seg().xi_size(k);
        const Eigen::VectorXd xi = Xb.segment(off, nx);
        std::vector<Eigen::VectorXd> raw(W), v(W), dv_dc(W);
        std::vector<Eigen::MatrixXd> dbeta(W);
        for (int d = 0; d < W; ++d) {
            const auto& M = mats_[k][d];
            const double cd = std::pow(s.c, d);
            raw[d] = M.A * xi + M.P * kp.value;
            v[d] = cd * raw[d];
            dbeta[d] = cd * (M.P * kp.dX.rightCols(seg().n_unknowns() - seg().n_xi()));
            dv_dc[d] = cd * (M.P * kp.dc);
            if (d > 0) dv_dc[d] += d * std::pow(s.c, d - 1) * raw[d];
        }
        for (int i = 0; i < Nn; ++i) {
            const int row = k * Nn + i;
            for (int d = 0; d < W; ++d) Y(0, d) = v[d][i];
            const double x = s.start + (z[i] - seg().z0()) / s.c;
            const OdeResidualJac* jf = jac(k);
            Eigen::MatrixXd part;
            if (jf) {
                (*jf)(x, Y, dF);
                if (free_) part = residual_partials(residual(k), 1, x, Y, true, p_.affine);
            } else {
                part = residual_partials(residual(k), 1, x, Y, free_, p_.affine);
                dF = part.leftCols(W);
            }
            for (int d = 0; d < W; ++d) {
                if (dF(0, d) == 0.0) continue;
                J.block(row, off, 1, nx).noalias() += dF(0, d) * std::pow(s.c, d) * mats_[k][d].A.row(i);
                J.block(row, seg().n_xi(), 1, dbeta[d].cols()) += dF(0, d) * dbeta[d].row(i);
                if (free_) J(row, nu - 1) += dF(0, d) * dv_dc[d][i] * s.dc;
            }
            if (free_) {
                const double dx = s.dstart - (z[i] - seg().z0()) / (s.c * s.c) * s.dc;
                J(row, nu - 1) += part(0, W) * dx;
            }
        }
    }
    return J;
}

int SegmentedSystem::segment_of(double x, const std::vector<double>& bps) const {
    const int n = static_cast<int>(bps.size()) - 1;
    for (int k = 0; k < n - 1; ++k)
        if (x <= bps[k + 1]) return k;
    return n - 1;
}

Eigen::VectorXd SegmentedSystem::values(const Eigen::VectorXd& X, const Eigen::VectorXd& x, int d) const {
    const auto bps = breakpoints(X);
    const Eigen::VectorXd Xb = X.head(seg().n_unknowns());
    Eigen::VectorXd out(x.size());
    for (int i = 0; i < x.size(); ++i)
        out[i] = seg().eval(Xb, segment_of(x[i], bps), Eigen::VectorXd::Constant(1, x[i]), d, bps)[0];
    return out;
}

namespace {

SegmentedSolution finish(std::shared_ptr<const SegmentedSystem> sys, SolveReport rep) {
    SegmentedSolution sol;
    sol.unknowns = rep.unknowns;
    sol.report = std::move(rep);
    sol.breakpoints = sys->breakpoints(sol.unknowns);
    sol.loss = sys->loss(sol.unknowns);
    sol.max_residual = sol.loss.cwiseAbs().maxCoeff();
    const auto& p = sys->problem();
    const int per = std::max(1, p.query_density * (sys->seg().nodes_per_segment() - 1));
    const int n = sys->seg().n_segments();
    sol.query.resize(n * per + 1);
    for (int k = 0; k < n; ++k)
        sol.query.segment(k * per, per) =
            Eigen::VectorXd::LinSpaced(per + 1, sol.breakpoints[k], sol.breakpoints[k + 1]).head(per);
    sol.query[n * per] = sol.breakpoints.back();
    const int nq = static_cast<int>(sol.query.size());
    sol.samples.resize(nq, p.order + 1);
    for (int d = 0; d <= p.order; ++d) sol.samples.col(d) = sys->values(sol.unknowns, sol.query, d);
    sol.system = std::move(sys);
    return sol;
}

SolveReport run(const SegmentedSystem& sys, const Eigen::VectorXd& X0, const NlsConfig& cfg, bool affine) {
    LossFn loss = [&](const Eigen::VectorXd& X) { return sys.loss(X); };
    JacFn jac = [&](const Eigen::VectorXd& X) { return sys.jacobian(X); };
    if (!affine) return nls_solve(loss, jac, X0, cfg);
    const auto start = std::chrono::steady_clock::now();
    SolveReport rep;
    rep.iterations = 1;
    rep.unknowns = X0;
    try {
        const Eigen::VectorXd step = lstsq(jac(X0), -loss(X0), cfg.method);
        rep.unknowns = X0 + step;
        rep.last_max_step = step.cwiseAbs().maxCoeff();
        rep.stop_reason = StopReason::Converged;
    } catch (const SingularSystem&) {
        rep.stop_reason = StopReason::SingularSystem;
    }
    rep.final_max_residual = loss(rep.unknowns).cwiseAbs().maxCoeff();
    rep.wall_time = std::chrono::steady_clock::now() - start;
    return rep;
}

}  // namespace

SegmentedSolution solve_hybrid(const SegmentedProblem& p) {
    auto sys = std::make_shared<const SegmentedSystem>(p, false);
    SolveReport rep = run(*sys, p.seg->straight_line(), p.nls, p.affine);
    return finish(std::move(sys), std::move(rep));
}

SegmentedSolution solve_unknown_breakpoint(const SegmentedProblem& p, const BreakpointOptions& opt) {
    if (!p.seg || p.seg->n_segments() != 2) throw std::invalid_argument("unknown breakpoint: exactly two segments required");
    const auto& bp = p.seg->breakpoints();
    const double x0 = bp.front(), xf = bp.back(), L = xf - x0;
    const double lo = x0 + opt.box_fraction * L, hi = xf - opt.box_fraction * L;
    if (!(lo < hi)) throw std::invalid_argument("unknown breakpoint: empty box");
    const double guess = std::clamp(opt.x1_guess, lo, hi);

    auto with_break = [&](double x1) {
        SegmentedProblem q = p;
        q.seg = std::make_shared<const SegmentedExpression>(
            std::vector<double>{x0, x1, xf}, p.seg->left(), p.seg->right(), p.seg->ce(0).free_function(0).kind(),
            p.seg->xi_size(0), p.seg->nodes_per_segment());
        return q;
    };

    if (opt.strategy == BreakpointStrategy::JointNLS) {
        auto sys = std::make_shared<const SegmentedSystem>(with_break(guess), true);
        Eigen::VectorXd X0(sys->n_unknowns());
        X0 << sys->seg().straight_line(), sys->c_bar_for(guess);
        NlsConfig cfg = p.nls;
        const double cmin = sys->c_bar_for(hi), cmax = sys->c_bar_for(lo);
        cfg.project = [cmin, cmax](Eigen::VectorXd& X) { X[X.size() - 1] = std::clamp(X[X.size() - 1], cmin, cmax); };
        SolveReport rep = run(*sys, X0, cfg, false);
        return finish(std::move(sys), std::move(rep));
    }

    auto inner = [&](double x1) {
        auto sys = std::make_shared<const SegmentedSystem>(with_break(x1), false);
        SolveReport rep = run(*sys, sys->seg().straight_line(), p.nls, p.affine);
        return std::make_pair(sys, rep);
    };
    auto objective = [&](double x1) { return inner(x1).second.final_max_residual; };
    // coarse scan, refined towards both ends so thin layers are not stepped over
    std::vector<double> grid{lo, hi, guess};
    for (int i = 1; i < 10; ++i) grid.push_back(x0 + 0.1 * i * L);
    for (double e = 1e-2; e > opt.box_fraction; e *= 0.1) {
        grid.push_back(x0 + e * L);
        grid.push_back(xf - e * L);
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    std::vector<double> f(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) f[i] = objective(grid[i]);
    int evals = static_cast<int>(grid.size());
    const auto ib = static_cast<std::size_t>(std::min_element(f.begin(), f.end()) - f.begin());
    double best = grid[ib], fbest = f[ib];

    // golden-section search on max|L| between the scan neighbours
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = grid[ib == 0 ? 0 : ib - 1], b = grid[std::min(ib + 1, grid.size() - 1)];
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = objective(c), fd = objective(d);
    evals += 2;
    while (b - a > opt.bracket_tol * L) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d);
        }
        ++evals;
    }
    if (std::min(fc, fd) < fbest) best = fc <= fd ? c : d;
    auto [sys, rep] = inner(best);
    rep.iterations = evals;
    return finish(std::move(sys), std::move(rep));
}

}  // namespace tfc
