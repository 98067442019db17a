#pragma once

#include <cmath>
#include <numbers>

#include "benchmarks.hpp"

namespace fixtures {

using namespace tfc;
using namespace tfc::bench;

inline double lane_emden_exact(int a, double x) {
    switch (a) {
        case 0: return 1.0 - x * x / 6.0;
        case 1: return x == 0.0 ? 1.0 : std::sin(x) / x;
        default: return 1.0 / std::sqrt(1.0 + x * x / 3.0);
    }
}

inline double bvp_exact(double x) { return std::exp(-x) * std::sin(x); }

// Hamiltonian of the free-time problem with the control eliminated.
inline double free_time_hamiltonian(double x, double u, double alpha = 1.0, double beta = 1.0) {
    return 0.5 * (x * x - u * u) - alpha / beta * x * u;
}

inline double hybrid_exact(double x) {
    using std::numbers::pi;
    if (x <= pi / 2) return -0.2 * std::exp(pi - 2 * x) + 0.5 * std::exp(pi / 2 - x) + (9 * std::cos(x) + 7 * std::sin(x)) / 10;
    return std::exp(pi / 2 - x);
}

inline double convection_exact(double pe, double x) { return std::expm1(pe * (x - 1)) / std::expm1(-pe); }

// Gauss-Legendre quadrature of f over [a, b].
template <class F>
double integrate(F&& f, double a, double b, int n = 200) {
    Eigen::VectorXd z, w;
    gauss_legendre(n, z, w);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += w[i] * f(0.5 * (a + b) + 0.5 * (b - a) * z[i]);
    return 0.5 * (b - a) * acc;
}

// Optimal time-to-go of the free-time energy problem with r, v measured from the target at rest:
// t^4 (Gamma + |g|^2 / 2) - 2 |v|^2 t^2 - 12 (r.v) t - 18 |r|^2 = 0, largest positive root.
inline double eol_time_to_go(const GuidanceProblem& p) {
    const Eigen::Vector3d r = p.r0 - p.rf, v = p.v0 - p.vf;
    const double a = p.gamma + 0.5 * p.a_g.squaredNorm(), b = v.squaredNorm(), c = r.dot(v), d = r.squaredNorm();
    auto f = [&](double t) { return a * t * t * t * t - 2 * b * t * t - 12 * c * t - 18 * d; };
    double hi = 1.0;
    while (f(hi) < 0.0) hi *= 2.0;
    double lo = hi / 2.0;
    while (lo > 1e-12 && f(lo) >= 0.0) lo /= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Energy cost for a fixed final time: the optimal path is the cubic Hermite arc between the end states.
inline double eol_cubic_cost(const GuidanceProblem& p, double tf) {
    auto acc = [&](double t) {
        const double s = t / tf;
        const double h00 = 12 * s - 6, h10 = 6 * s - 4, h01 = 6 - 12 * s, h11 = 6 * s - 2;
        return Eigen::Vector3d((h00 * p.r0 + h10 * tf * p.v0 + h01 * p.rf + h11 * tf * p.vf) / (tf * tf));
    };
    return p.gamma * tf + 0.5 * integrate([&](double t) { return (acc(t) - p.a_g).squaredNorm(); }, 0.0, tf, 20);
}

// Fuel solution re-propagated with RK4 under the primer-vector control, scaled units.
// Returns [r, v, m] at the final time.
inline Eigen::Matrix<double, 7, 1> fol_repropagate(const GuidanceProblem& p, const LandingSolution& s,
                                                   int steps_per_segment = 4000) {
    const ScaledProblem sp = scale_problem(p);
    const GuidanceProblem& q = sp.problem;
    using State = Eigen::Matrix<double, 7, 1>;
    State y;
    y << q.r0, q.v0, q.m0;
    const bool three = s.t2 > s.t1;
    std::vector<double> bp = {0.0, s.t1 / s.scale.time};
    std::vector<double> lv = three ? std::vector<double>{q.t_max, q.t_min, q.t_max} : std::vector<double>{q.t_min, q.t_max};
    if (three) bp.push_back(s.t2 / s.scale.time);
    bp.push_back(s.tf / s.scale.time);
    for (std::size_t k = 0; k + 1 < bp.size(); ++k) {
        const double T = lv[k];
        auto f = [&](double t, const State& x) {
            const Eigen::Vector3d l = s.lambda_v0 - s.lambda_r * t;
            State d;
            d << x.segment<3>(3), q.a_g - T / x[6] * l / l.norm(), -q.alpha_fuel * T;
            return d;
        };
        y = rk4(f, y, bp[k], bp[k + 1], steps_per_segment);
    }
    return y;
}

}  // namespace fixtures
