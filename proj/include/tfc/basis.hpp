#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace tfc {

enum class BasisFamily { ChebyshevT, LegendreP, LaguerreL, HermiteProb, HermitePhys, FourierSeries, ElmSigmoid };

struct BasisKind {
    BasisFamily family = BasisFamily::ChebyshevT;
    std::uint64_t seed = 0;      // ElmSigmoid only
    double weight_scale = 1.0;   // ElmSigmoid only

    static BasisKind chebyshev() { return {}; }
    static BasisKind legendre() { return {BasisFamily::LegendreP}; }
    static BasisKind laguerre() { return {BasisFamily::LaguerreL}; }
    static BasisKind hermite_prob() { return {BasisFamily::HermiteProb}; }
    static BasisKind hermite_phys() { return {BasisFamily::HermitePhys}; }
    static BasisKind fourier() { return {BasisFamily::FourierSeries}; }
    static BasisKind elm(std::uint64_t seed, double scale = 1.0) { return {BasisFamily::ElmSigmoid, seed, scale}; }
};

inline constexpr int kMaxDerivative = 8;

// Reference interval of a basis family. Infinite ends are +-infinity.
std::pair<double, double> reference_domain(BasisFamily f);

// Values of derivative order d of basis columns 0..m-1 at each point (rows).
// Fourier columns are ordered 1, cos z, sin z, cos 2z, sin 2z, ...
Eigen::MatrixXd eval_basis(const BasisKind& kind, int m, const Eigen::VectorXd& points, int d);

// Chebyshev-Gauss-Lobatto points, N+1 of them, from -1 to +1.
Eigen::VectorXd cgl_nodes(int N);

// n-point Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

class DomainMap {
public:
    DomainMap() = default;
    DomainMap(double x0, double xf, double z0, double zf);

    double x0() const { return x0_; }
    double xf() const { return xf_; }
    double z0() const { return z0_; }
    double zf() const { return zf_; }
    double c() const { return c_; }

    double to_z(double x) const { return z0_ + c_ * (x - x0_); }
    double to_x(double z) const { return x0_ + (z - z0_) / c_; }
    Eigen::VectorXd to_z(const Eigen::VectorXd& x) const;
    Eigen::VectorXd to_x(const Eigen::VectorXd& z) const;

private:
    double x0_ = -1.0, xf_ = 1.0, z0_ = -1.0, zf_ = 1.0, c_ = 1.0;
};

DomainMap domain_map(double x0, double xf, double z0, double zf);

struct ElmLayer {
    Eigen::VectorXd w;
    Eigen::VectorXd b;
};

// Hidden weights and biases, uniform on [-scale, scale], reproducible from the seed.
ElmLayer elm_layer(int m, std::uint64_t seed, double scale = 1.0);

}  // namespace tfc
