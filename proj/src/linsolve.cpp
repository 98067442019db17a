#include "tfc/linsolve.hpp"

#include <cmath>

namespace tfc {

namespace {

void check_shape(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    if (A.rows() != b.size()) throw std::invalid_argument("lstsq: row count of A differs from length of b");
    if (!A.allFinite() || !b.allFinite()) throw std::invalid_argument("lstsq: non-finite input");
}

Eigen::VectorXd solve_svd(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, bool truncate) {
    // Columns are equilibrated first so the cutoff is not dominated by column scale.
    Eigen::VectorXd scale = A.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < scale.size(); ++j) scale[j] = scale[j] > 0.0 ? 1.0 / scale[j] : 1.0;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A * scale.asDiagonal(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    if (s.size() == 0 || s[0] == 0.0) throw SingularSystem("lstsq(SVD): zero matrix");
    const double cut = kSvdCutoff * s[0];
    Eigen::VectorXd utb = svd.matrixU().transpose() * b;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s[i] > cut) {
            utb[i] /= s[i];
        } else {
            if (!truncate) throw SingularSystem("lstsq(SVD): rank deficient");
            utb[i] = 0.0;
        }
    }
    return scale.asDiagonal() * (svd.matrixV() * utb);
}

Eigen::VectorXd solve_qr(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < A.cols()) throw SingularSystem("lstsq(QR): zero pivot");
    return qr.solve(b);
}

Eigen::VectorXd solve_normal(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    if (A.rows() < A.cols()) throw std::invalid_argument("lstsq: normal equations need rows >= cols");
    const Eigen::MatrixXd N = A.transpose() * A;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(N);
    if (!lu.isInvertible()) throw SingularSystem("lstsq(normal equations): singular Gram matrix");
    return lu.solve(A.transpose() * b);
}

Eigen::VectorXd solve_cholesky(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    if (A.rows() < A.cols()) throw std::invalid_argument("lstsq: Cholesky needs rows >= cols");
    Eigen::LLT<Eigen::MatrixXd> llt(A.transpose() * A);
    if (llt.info() != Eigen::Success) throw SingularSystem("lstsq(Cholesky): zero pivot");
    const Eigen::MatrixXd& L = llt.matrixL();
    if ((L.diagonal().array().abs() == 0.0).any()) throw SingularSystem("lstsq(Cholesky): zero pivot");
    return llt.solve(A.transpose() * b);
}

Eigen::VectorXd solve_scaled_qr(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    Eigen::VectorXd s(A.cols());
    for (Eigen::Index k = 0; k < A.cols(); ++k) {
        const double nk = A.col(k).norm();
        if (nk == 0.0) throw SingularSystem("lstsq(scaled QR): zero column");
        s[k] = 1.0 / nk;
    }
    const Eigen::MatrixXd B = A * s.asDiagonal();
    return s.asDiagonal() * solve_qr(B, b);
}

}  // namespace

Eigen::VectorXd lstsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const LstsqMethod& method) {
    check_shape(A, b);
    switch (method.kind) {
        case LstsqKind::NormalEquations: return solve_normal(A, b);
        case LstsqKind::QR: return solve_qr(A, b);
        case LstsqKind::SVD: return solve_svd(A, b, method.truncate_svd);
        case LstsqKind::Cholesky: return solve_cholesky(A, b);
        case LstsqKind::ScaledQR: return solve_scaled_qr(A, b);
        case LstsqKind::Weighted: {
            const Eigen::VectorXd& w = method.weights;
            if (w.size() != A.rows()) throw std::invalid_argument("lstsq: weight count differs from row count");
            if ((w.array() < 0.0).any()) throw std::invalid_argument("lstsq: negative weight");
            const Eigen::MatrixXd WA = w.asDiagonal() * A;
            const Eigen::VectorXd Wb = w.asDiagonal() * b;
            return solve_qr(WA, Wb);
        }
    }
    throw std::logic_error("lstsq: unknown method");
}

std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::Converged: return "converged";
        case StopReason::MaxIter: return "max_iter";
        case StopReason::SingularSystem: return "singular_system";
        case StopReason::Stalled: return "stalled";
    }
    return "unknown";
}

SolveReport nls_solve(const LossFn& loss, const JacFn& jac, const Eigen::VectorXd& xi0, const NlsConfig& cfg) {
    if (!(cfg.tol > 0.0) || cfg.max_iter < 1) throw std::invalid_argument("nls_solve: bad configuration");
    const auto start = std::chrono::steady_clock::now();
    SolveReport rep;
    Eigen::VectorXd xi = xi0;
    Eigen::VectorXd L = loss(xi);
    for (int it = 1; it <= cfg.max_iter; ++it) {
        rep.iterations = it;
        Eigen::VectorXd dxi;
        try {
            dxi = lstsq(jac(xi), -L, cfg.method);
        } catch (const SingularSystem&) {
            rep.stop_reason = StopReason::SingularSystem;
            break;
        }
        auto advance = [&](const Eigen::VectorXd& step) {
            Eigen::VectorXd t = xi + step;
            if (cfg.project) cfg.project(t);
            return t;
        };
        Eigen::VectorXd trial = advance(dxi);
        Eigen::VectorXd Lt = loss(trial);
        if (cfg.step_halving) {
            auto size = [&](const Eigen::VectorXd& v) { return cfg.halving_l2 ? v.norm() : v.cwiseAbs().maxCoeff(); };
            const double before = size(L);
            bool reduced = size(Lt) <= before;
            for (int h = 0; h < cfg.max_halvings && !reduced; ++h) {
                dxi *= 0.5;
                trial = advance(dxi);
                Lt = loss(trial);
                rep.halving_used = true;
                reduced = size(Lt) <= before;
            }
            if (!reduced && cfg.halving_l2) {
                rep.stop_reason = StopReason::Stalled;
                break;
            }
        }
        rep.last_max_step = dxi.size() ? (trial - xi).cwiseAbs().maxCoeff() : 0.0;
        xi = std::move(trial);
        L = std::move(Lt);
        const double maxL = L.size() ? L.cwiseAbs().maxCoeff() : 0.0;
        const bool res_ok = maxL < cfg.tol;
        const bool step_ok = rep.last_max_step < cfg.tol;
        bool stop = false;
        switch (cfg.stop_rule) {
            case StopRule::MaxAbsResidual: stop = res_ok; break;
            case StopRule::MaxAbsStep: stop = step_ok; break;
            case StopRule::Either: stop = res_ok || step_ok; break;
        }
        if (stop) {
            rep.stop_reason = StopReason::Converged;
            break;
        }
    }
    rep.unknowns = xi;
    rep.final_max_residual = L.size() ? L.cwiseAbs().maxCoeff() : 0.0;
    rep.wall_time = std::chrono::steady_clock::now() - start;
    return rep;
}

Eigen::MatrixXd fd_jacobian(const LossFn& loss, const Eigen::VectorXd& x, double rel_step) {
    const Eigen::VectorXd f0 = loss(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = rel_step * std::max(1.0, std::abs(x[k]));
        xp[k] = x[k] + h;
        const Eigen::VectorXd fp = loss(xp);
        xp[k] = x[k] - h;
        const Eigen::VectorXd fm = loss(xp);
        xp[k] = x[k];
        J.col(k) = (fp - fm) / (2 * h);
    }
    return J;
}

}  // namespace tfc
