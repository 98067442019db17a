#include "tfc/basis.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace tfc {

namespace {

struct ThreeTerm {
    double a, b, c;  // P_{k+1} = (a z + b) P_k - c P_{k-1}
};

ThreeTerm recurrence(BasisFamily f, int k) {
    const double kk = k;
    switch (f) {
        case BasisFamily::ChebyshevT: return {k == 0 ? 1.0 : 2.0, 0.0, 1.0};
        case BasisFamily::LegendreP: return {(2 * kk + 1) / (kk + 1), 0.0, kk / (kk + 1)};
        case BasisFamily::LaguerreL: return {-1.0 / (kk + 1), (2 * kk + 1) / (kk + 1), kk / (kk + 1)};
        case BasisFamily::HermiteProb: return {1.0, 0.0, kk};
        case BasisFamily::HermitePhys: return {2.0, 0.0, 2 * kk};
        default: throw std::logic_error("no three-term recurrence for this family");
    }
}

Eigen::MatrixXd eval_polynomial(BasisFamily f, int m, const Eigen::VectorXd& z, int d) {
    const Eigen::Index n = z.size();
    // cascade[j] holds the j-th derivative of P_k, P_{k-1} for all points
    std::vector<Eigen::ArrayXd> cur(d + 1, Eigen::ArrayXd::Zero(n)), prev(d + 1, Eigen::ArrayXd::Zero(n));
    Eigen::MatrixXd out(n, m);
    cur[0].setOnes();
    out.col(0) = cur[d].matrix();
    for (int k = 0; k + 1 < m; ++k) {
        const ThreeTerm r = recurrence(f, k);
        std::vector<Eigen::ArrayXd> next(d + 1);
        for (int j = 0; j <= d; ++j) {
            next[j] = (r.a * z.array() + r.b) * cur[j] - r.c * prev[j];
            if (j > 0) next[j] += j * r.a * cur[j - 1];
        }
        prev = std::move(cur);
        cur = std::move(next);
        out.col(k + 1) = cur[d].matrix();
    }
    return out;
}

Eigen::MatrixXd eval_fourier(int m, const Eigen::VectorXd& z, int d) {
    Eigen::MatrixXd out(z.size(), m);
    const double shift = d * std::numbers::pi / 2;
    for (int col = 0; col < m; ++col) {
        if (col == 0) {
            out.col(0).setConstant(d == 0 ? 1.0 : 0.0);
            continue;
        }
        const int k = (col + 1) / 2;
        const double scale = std::pow(double(k), d);
        const bool is_cos = (col % 2 == 1);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double arg = k * z[i] + shift;
            out(i, col) = scale * (is_cos ? std::cos(arg) : std::sin(arg));
        }
    }
    return out;
}

// Coefficients (in powers of s) of the d-th derivative of the logistic function written as a polynomial in s = sigma.
std::vector<double> sigmoid_derivative_poly(int d) {
    std::vector<double> p{0.0, 1.0};
    for (int j = 0; j < d; ++j) {
        // p'(s) * s (1 - s)
        std::vector<double> dp(p.size() > 1 ? p.size() - 1 : 1, 0.0);
        for (std::size_t i = 1; i < p.size(); ++i) dp[i - 1] = i * p[i];
        std::vector<double> q(dp.size() + 2, 0.0);
        for (std::size_t i = 0; i < dp.size(); ++i) {
            q[i + 1] += dp[i];
            q[i + 2] -= dp[i];
        }
        p = std::move(q);
    }
    return p;
}

Eigen::MatrixXd eval_elm(const BasisKind& kind, int m, const Eigen::VectorXd& z, int d) {
    const ElmLayer layer = elm_layer(m, kind.seed, kind.weight_scale);
    const std::vector<double> poly = sigmoid_derivative_poly(d);
    Eigen::MatrixXd out(z.size(), m);
    for (int k = 0; k < m; ++k) {
        const double wd = std::pow(layer.w[k], d);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-(layer.w[k] * z[i] + layer.b[k])));
            double v = 0.0;
            for (auto it = poly.rbegin(); it != poly.rend(); ++it) v = v * s + *it;
            out(i, k) = wd * v;
        }
    }
    return out;
}

}  // namespace

std::pair<double, double> reference_domain(BasisFamily f) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    switch (f) {
        case BasisFamily::LaguerreL: return {0.0, inf};
        case BasisFamily::HermiteProb:
        case BasisFamily::HermitePhys: return {-inf, inf};
        case BasisFamily::FourierSeries: return {-std::numbers::pi, std::numbers::pi};
        default: return {-1.0, 1.0};
    }
}

Eigen::MatrixXd eval_basis(const BasisKind& kind, int m, const Eigen::VectorXd& points, int d) {
    if (m < 1) throw std::invalid_argument("eval_basis: m must be at least 1");
    if (d < 0) throw std::invalid_argument("eval_basis: negative derivative order");
    switch (kind.family) {
        case BasisFamily::FourierSeries: return eval_fourier(m, points, d);
        case BasisFamily::ElmSigmoid:
            if (d > kMaxDerivative) throw std::invalid_argument("eval_basis: derivative order above 8");
            return eval_elm(kind, m, points, d);
        default:
            if (d > kMaxDerivative) throw std::invalid_argument("eval_basis: derivative order above 8");
            return eval_polynomial(kind.family, m, points, d);
    }
}

Eigen::VectorXd cgl_nodes(int N) {
    if (N < 1) throw std::invalid_argument("cgl_nodes: N must be at least 1");
    Eigen::VectorXd z(N + 1);
    // sine form keeps z_j = -z_{N-j} bitwise
    for (int j = 0; j <= N; ++j) z[j] = std::sin(std::numbers::pi * (2.0 * j - N) / (2.0 * N));
    z[0] = -1.0;
    z[N] = 1.0;
    return z;
}

void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be at least 1");
    nodes.resize(n);
    weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 1; k < n; ++k) {
                const double p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1);
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        {
            double p0 = 1.0, p1 = x;
            for (int k = 1; k < n; ++k) {
                const double p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1);
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;
}

DomainMap::DomainMap(double x0, double xf, double z0, double zf) : x0_(x0), xf_(xf), z0_(z0), zf_(zf) {
    if (!(xf > x0) || !(zf > z0)) throw std::invalid_argument("DomainMap: degenerate interval");
    c_ = (zf - z0) / (xf - x0);
}

Eigen::VectorXd DomainMap::to_z(const Eigen::VectorXd& x) const {
    return ((x.array() - x0_) * c_ + z0_).matrix();
}

Eigen::VectorXd DomainMap::to_x(const Eigen::VectorXd& z) const {
    return ((z.array() - z0_) / c_ + x0_).matrix();
}

DomainMap domain_map(double x0, double xf, double z0, double zf) { return DomainMap(x0, xf, z0, zf); }

ElmLayer elm_layer(int m, std::uint64_t seed, double scale) {
    if (m < 1) throw std::invalid_argument("elm_layer: m must be at least 1");
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ElmLayer layer{Eigen::VectorXd(m), Eigen::VectorXd(m)};
    for (int k = 0; k < m; ++k) {
        layer.w[k] = scale * u(gen);
        layer.b[k] = scale * u(gen);
    }
    return layer;
}

}  // namespace tfc
