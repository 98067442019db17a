#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <functional>
#include <stdexcept>
#include <string>

namespace tfc {

enum class LstsqKind { NormalEquations, QR, SVD, Cholesky, ScaledQR, Weighted };

struct LstsqMethod {
    LstsqKind kind = LstsqKind::SVD;
    Eigen::VectorXd weights;   // Weighted only, one per row
    bool truncate_svd = false; // SVD: drop small singular values instead of failing

    static LstsqMethod svd(bool truncate = false) { return {LstsqKind::SVD, {}, truncate}; }
    static LstsqMethod qr() { return {LstsqKind::QR, {}, false}; }
    static LstsqMethod scaled_qr() { return {LstsqKind::ScaledQR, {}, false}; }
    static LstsqMethod normal() { return {LstsqKind::NormalEquations, {}, false}; }
    static LstsqMethod cholesky() { return {LstsqKind::Cholesky, {}, false}; }
    static LstsqMethod weighted(Eigen::VectorXd w) { return {LstsqKind::Weighted, std::move(w), false}; }
};

class SingularSystem : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kSvdCutoff = 1e-13;

Eigen::VectorXd lstsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const LstsqMethod& method = {});

enum class StopRule { MaxAbsResidual, MaxAbsStep, Either };
enum class StopReason { Converged, MaxIter, SingularSystem, Stalled };

std::string to_string(StopReason r);

struct NlsConfig {
    double tol = 1e-13;
    int max_iter = 50;
    StopRule stop_rule = StopRule::Either;
    LstsqMethod method = LstsqMethod::svd(true);
    bool step_halving = false;
    int max_halvings = 4;
    bool halving_l2 = false;  // accept a halved step on the 2-norm of the loss instead of the max norm
    std::function<void(Eigen::VectorXd&)> project;  // applied to every accepted iterate (box constraints)
};

struct SolveReport {
    Eigen::VectorXd unknowns;
    int iterations = 0;
    StopReason stop_reason = StopReason::MaxIter;
    double final_max_residual = 0.0;
    double last_max_step = 0.0;
    bool halving_used = false;
    std::chrono::duration<double> wall_time{0};

    bool converged() const { return stop_reason == StopReason::Converged; }
};

using LossFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

SolveReport nls_solve(const LossFn& loss, const JacFn& jac, const Eigen::VectorXd& xi0, const NlsConfig& cfg = {});

// Central finite-difference Jacobian, used as a fallback and as a test oracle.
Eigen::MatrixXd fd_jacobian(const LossFn& loss, const Eigen::VectorXd& x, double rel_step = 1e-6);

}  // namespace tfc
