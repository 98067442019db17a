#include "tfc/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tfc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double falling_factorial(int p, int d) {
    double r = 1.0;
    for (int i = 0; i < d; ++i) r *= (p - i);
    return r;
}

int quadrature_points(const BasisKind& kind, int width) {
    if (kind.family == BasisFamily::ElmSigmoid || kind.family == BasisFamily::FourierSeries) return 64;
    return std::max(2, (width + 2 + 1) / 2 + 1);
}

double term_on_support(const FunctionalTerm& t, const SupportFunction& s) {
    switch (t.kind) {
        case FunctionalTerm::Kind::Point: return t.coef * s.eval(t.x, t.order);
        case FunctionalTerm::Kind::Integral:
            if (s.integral) return t.coef * s.integral(t.a, t.b);
            {
                Eigen::VectorXd nodes, w;
                gauss_legendre(64, nodes, w);
                double acc = 0.0;
                for (Eigen::Index q = 0; q < nodes.size(); ++q)
                    acc += w[q] * s.eval(0.5 * (t.b - t.a) * nodes[q] + 0.5 * (t.a + t.b), 0);
                return t.coef * 0.5 * (t.b - t.a) * acc;
            }
        case FunctionalTerm::Kind::Limit:
            if (!s.limit) return kInf;
            return t.coef * s.limit(t.order);
    }
    return kInf;
}

double rank_tolerance(const Eigen::MatrixXd& M) {
    return 1e-10 * std::max(1.0, M.cwiseAbs().maxCoeff());
}

int numeric_rank(const Eigen::MatrixXd& M) {
    if (M.cols() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const Eigen::VectorXd s = svd.singularValues();
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > rank_tolerance(M)) ++r;
    return r;
}

}  // namespace

FunctionalTerm FunctionalTerm::point(double x, int d, double coef, int comp) {
    FunctionalTerm t;
    t.component = comp;
    t.kind = Kind::Point;
    t.order = d;
    t.x = x;
    t.coef = coef;
    return t;
}

FunctionalTerm FunctionalTerm::integral(double a, double b, double coef, int comp) {
    if (!(a < b)) throw std::invalid_argument("FunctionalTerm: integral needs a < b");
    FunctionalTerm t;
    t.component = comp;
    t.kind = Kind::Integral;
    t.a = a;
    t.b = b;
    t.coef = coef;
    return t;
}

FunctionalTerm FunctionalTerm::limit(int d, double coef, int comp) {
    FunctionalTerm t;
    t.component = comp;
    t.kind = Kind::Limit;
    t.order = d;
    t.coef = coef;
    return t;
}

LinearConstraint point_constraint(double x, double value, int d, int comp) {
    return LinearConstraint{{FunctionalTerm::point(x, d, 1.0, comp)}, value, -1};
}

SupportFunction SupportFunction::monomial(int p, double shift, double scale) {
    SupportFunction s;
    s.eval = [p, shift, scale](double x, int d) {
        if (d > p) return 0.0;
        const double u = (x - shift) / scale;
        return falling_factorial(p, d) * std::pow(u, p - d) / std::pow(scale, d);
    };
    s.integral = [p, shift, scale](double a, double b) {
        const double ua = (a - shift) / scale, ub = (b - shift) / scale;
        return scale * (std::pow(ub, p + 1) - std::pow(ua, p + 1)) / (p + 1);
    };
    s.limit = [p, scale](int d) {
        if (d > p) return 0.0;
        if (d == p) return falling_factorial(p, d) / std::pow(scale, d);
        return kInf;
    };
    return s;
}

SupportFunction SupportFunction::polynomial(std::vector<double> coeffs) {
    SupportFunction s;
    s.eval = [coeffs](double x, int d) {
        double acc = 0.0;
        for (int p = static_cast<int>(coeffs.size()) - 1; p >= d; --p)
            acc = acc * x + coeffs[p] * falling_factorial(p, d);
        return acc;
    };
    s.integral = [coeffs](double a, double b) {
        double acc = 0.0;
        for (std::size_t p = 0; p < coeffs.size(); ++p)
            acc += coeffs[p] * (std::pow(b, p + 1) - std::pow(a, p + 1)) / double(p + 1);
        return acc;
    };
    s.limit = [coeffs](int d) {
        int deg = static_cast<int>(coeffs.size()) - 1;
        while (deg > 0 && coeffs[deg] == 0.0) --deg;
        if (d > deg) return 0.0;
        if (d == deg) return coeffs[deg] * falling_factorial(deg, d);
        return coeffs[deg] > 0 ? kInf : -kInf;
    };
    return s;
}

double apply_functional(const LinearConstraint& c, const FunctionHandle& g) {
    double acc = 0.0;
    for (const auto& t : c.terms) {
        switch (t.kind) {
            case FunctionalTerm::Kind::Point: acc += t.coef * g.eval(t.component, t.x, t.order); break;
            case FunctionalTerm::Kind::Integral:
                if (!g.integral) throw std::invalid_argument("apply_functional: function has no integral");
                acc += t.coef * g.integral(t.component, t.a, t.b);
                break;
            case FunctionalTerm::Kind::Limit:
                if (!g.limit) throw std::invalid_argument("apply_functional: function has no limit");
                acc += t.coef * g.limit(t.component, t.order);
                break;
        }
    }
    return acc;
}

double projection(const LinearConstraint& c, const FunctionHandle& g) { return c.kappa - apply_functional(c, g); }

Eigen::MatrixXd support_matrix(const std::vector<LinearConstraint>& cons, const std::vector<SupportFunction>& supports) {
    Eigen::MatrixXd S(cons.size(), supports.size());
    for (std::size_t i = 0; i < cons.size(); ++i) {
        for (std::size_t j = 0; j < supports.size(); ++j) {
            double v = 0.0;
            for (const auto& t : cons[i].terms) v += term_on_support(t, supports[j]);
            if (!std::isfinite(v)) {
                std::ostringstream os;
                os << "support matrix entry (" << i << "," << j << ") is not finite";
                throw ConstraintError(os.str());
            }
            S(i, j) = v;
        }
    }
    return S;
}

FreeFunction::FreeFunction(BasisKind kind, DomainMap map, std::vector<int> columns)
    : kind_(kind), map_(map), columns_(std::move(columns)) {
    width_ = columns_.empty() ? 0 : *std::max_element(columns_.begin(), columns_.end()) + 1;
}

Eigen::MatrixXd FreeFunction::eval(const Eigen::VectorXd& x, int d) const {
    Eigen::MatrixXd out(x.size(), size());
    if (size() == 0) return out;
    const Eigen::MatrixXd H = eval_basis(kind_, width_, map_.to_z(x), d) * std::pow(map_.c(), d);
    for (int k = 0; k < size(); ++k) out.col(k) = H.col(columns_[k]);
    return out;
}

Eigen::RowVectorXd FreeFunction::row(double x, int d) const {
    Eigen::VectorXd xv(1);
    xv[0] = x;
    return eval(xv, d).row(0);
}

Eigen::RowVectorXd FreeFunction::integral(double a, double b) const {
    Eigen::VectorXd nodes, w;
    gauss_legendre(quadrature_points(kind_, width_), nodes, w);
    const Eigen::VectorXd xq = ((nodes.array() + 1.0) * 0.5 * (b - a) + a).matrix();
    return 0.5 * (b - a) * (w.transpose() * eval(xq, 0));
}

Eigen::RowVectorXd FreeFunction::limit(int d) const {
    Eigen::RowVectorXd out(size());
    if (kind_.family == BasisFamily::ElmSigmoid) {
        const ElmLayer layer = elm_layer(width_, kind_.seed, kind_.weight_scale);
        for (int k = 0; k < size(); ++k) {
            const double w = layer.w[columns_[k]];
            if (d > 0) out[k] = 0.0;
            else if (w > 0) out[k] = 1.0;
            else if (w < 0) out[k] = 0.0;
            else out[k] = 1.0 / (1.0 + std::exp(-layer.b[columns_[k]]));
        }
        return out;
    }
    if (kind_.family == BasisFamily::FourierSeries) {
        out.setConstant(std::numeric_limits<double>::quiet_NaN());
        return out;
    }
    Eigen::VectorXd z0(1);
    z0[0] = 0.0;
    const Eigen::MatrixXd H = d <= kMaxDerivative ? eval_basis(kind_, width_, z0, d) : Eigen::MatrixXd::Zero(1, width_);
    for (int k = 0; k < size(); ++k) {
        const int deg = columns_[k];
        if (d > deg) out[k] = 0.0;
        else if (d == deg) out[k] = H(0, deg) * std::pow(map_.c(), d);
        else out[k] = kInf;
    }
    return out;
}

ConstrainedExpression::ConstrainedExpression(std::vector<ComponentSpec> comps, std::vector<LinearConstraint> cons,
                                             std::optional<Eigen::VectorXd> weights)
    : cons_(std::move(cons)), weights_(std::move(weights)) {
    if (comps.empty()) throw std::invalid_argument("ConstrainedExpression: no components");
    weighted_ = weights_.has_value();
    if (weighted_) {
        if (weights_->size() != static_cast<Eigen::Index>(cons_.size()))
            throw std::invalid_argument("ConstrainedExpression: one weight per constraint required");
        if ((weights_->array() < 0.0).any()) throw std::invalid_argument("ConstrainedExpression: negative weight");
    }
    for (auto& spec : comps) {
        Component c;
        c.spec = std::move(spec);
        if (c.spec.m < 1) throw std::invalid_argument("ConstrainedExpression: m must be at least 1");
        comps_.push_back(std::move(c));
    }
    for (std::size_t i = 0; i < cons_.size(); ++i) {
        const auto& lc = cons_[i];
        if (lc.terms.empty()) throw std::invalid_argument("ConstrainedExpression: constraint without terms");
        for (const auto& t : lc.terms)
            if (t.component < 0 || t.component >= n_components() || t.order < 0)
                throw std::invalid_argument("ConstrainedExpression: bad functional term");
        const int tgt = lc.target();
        if (tgt < 0 || tgt >= n_components()) throw std::invalid_argument("ConstrainedExpression: bad embedding");
        comps_[tgt].cons.push_back(static_cast<int>(i));
    }
    // Offsets depend only on m, so they can be fixed before any component is built.
    for (auto& c : comps_) {
        c.offset = n_xi_;
        n_xi_ += c.spec.m;
    }
    built_.assign(comps_.size(), false);
    std::vector<int> state(comps_.size(), 0);
    std::function<void(int)> visit = [&](int c) {
        if (state[c] == 2) return;
        if (state[c] == 1) throw ConstraintError("component constraints form a dependency cycle");
        state[c] = 1;
        for (int i : comps_[c].cons)
            for (const auto& t : cons_[i].terms)
                if (t.component != c) visit(t.component);
        build_component(c);
        state[c] = 2;
    };
    for (int c = 0; c < n_components(); ++c) visit(c);
}

void ConstrainedExpression::build_component(int ci) {
    Component& c = comps_[ci];
    const int k = static_cast<int>(c.cons.size());
    const DomainMap& map = c.spec.map;

    auto own_value = [&](int i, const SupportFunction& s) {
        double v = 0.0;
        for (const auto& t : cons_[i].terms)
            if (t.component == ci) v += term_on_support(t, s);
        return v;
    };
    auto support_column = [&](const SupportFunction& s) {
        Eigen::VectorXd col(k);
        for (int l = 0; l < k; ++l) col[l] = own_value(c.cons[l], s);
        return col;
    };

    if (!c.spec.supports.empty()) {
        c.supports = c.spec.supports;
        c.S.resize(k, c.supports.size());
        for (std::size_t j = 0; j < c.supports.size(); ++j) {
            c.S.col(j) = support_column(c.supports[j]);
            for (int l = 0; l < k; ++l) {
                if (!std::isfinite(c.S(l, j))) {
                    std::ostringstream os;
                    os << "support matrix entry (" << l << "," << j << ") is not finite";
                    throw ConstraintError(os.str());
                }
            }
        }
    } else if (k > 0) {
        const double shift = 0.5 * (map.x0() + map.xf());
        const double scale = 0.5 * (map.xf() - map.x0());
        c.S.resize(k, 0);
        for (int p = 0; p < 2 * k + 2 && static_cast<int>(c.supports.size()) < k; ++p) {
            SupportFunction s = SupportFunction::monomial(p, shift, scale);
            Eigen::VectorXd col = support_column(s);
            if (!col.allFinite()) continue;
            Eigen::MatrixXd trial(k, c.S.cols() + 1);
            trial << c.S, col;
            if (numeric_rank(trial) == trial.cols()) {
                c.S = trial;
                c.supports.push_back(std::move(s));
            }
        }
        if (static_cast<int>(c.supports.size()) < k)
            throw ConstraintError("no monomial supports give an invertible support matrix");
    }

    const int ns = static_cast<int>(c.supports.size());
    if (k > 0) {
        if (!weighted_) {
            if (ns != k) throw ConstraintError("support count must equal constraint count");
            if (numeric_rank(c.S) < k) throw ConstraintError("support matrix is singular");
            c.alpha = c.S.fullPivLu().inverse();
        } else {
            if (ns > k) throw ConstraintError("weighted expression needs no more supports than constraints");
            Eigen::VectorXd w(k);
            for (int l = 0; l < k; ++l) w[l] = (*weights_)[c.cons[l]];
            const Eigen::MatrixXd StW = c.S.transpose() * w.asDiagonal();
            const Eigen::MatrixXd M = StW * c.S;
            if (numeric_rank(M) < ns) throw ConstraintError("weighted normal matrix is singular");
            c.alpha = M.fullPivLu().solve(StW);
        }
    } else {
        c.alpha.resize(0, 0);
    }

    // Greedy selection of basis columns whose projected form stays independent.
    const int m = c.spec.m;
    int pool = m + 2 * k + 4;
    if (c.spec.kind.family == BasisFamily::FourierSeries) pool += 2;
    std::vector<int> all(pool);
    for (int p = 0; p < pool; ++p) all[p] = p;
    FreeFunction full(c.spec.kind, map, all);
    const int ns_pts = std::max(2 * pool, pool + 20);
    Eigen::VectorXd xs = map.to_x(cgl_nodes(ns_pts - 1) * (0.5 * (map.zf() - map.z0())) +
                                  Eigen::VectorXd::Constant(ns_pts, 0.5 * (map.zf() + map.z0())));
    const Eigen::MatrixXd Hraw = full.eval(xs, 0);
    Eigen::MatrixXd H = Hraw;
    if (k > 0) {
        Eigen::MatrixXd Cown = Eigen::MatrixXd::Zero(k, pool);
        for (int l = 0; l < k; ++l) {
            for (const auto& t : cons_[c.cons[l]].terms) {
                if (t.component != ci) continue;
                switch (t.kind) {
                    case FunctionalTerm::Kind::Point: Cown.row(l) += t.coef * full.row(t.x, t.order); break;
                    case FunctionalTerm::Kind::Integral: Cown.row(l) += t.coef * full.integral(t.a, t.b); break;
                    case FunctionalTerm::Kind::Limit: Cown.row(l) += t.coef * full.limit(t.order); break;
                }
            }
        }
        Eigen::MatrixXd Sx(ns_pts, ns);
        for (int j = 0; j < ns; ++j)
            for (int i = 0; i < ns_pts; ++i) Sx(i, j) = c.supports[j].eval(xs[i], 0);
        const Eigen::MatrixXd Phi = Sx * c.alpha;
        for (int p = 0; p < pool; ++p) {
            if (!Cown.col(p).allFinite()) {
                H.col(p).setZero();
                continue;
            }
            H.col(p) -= Phi * Cown.col(p);
        }
    }
    std::vector<int> keep;
    Eigen::MatrixXd Q(ns_pts, 0);
    for (int p = 0; p < pool && static_cast<int>(keep.size()) < m; ++p) {
        Eigen::VectorXd v = H.col(p);
        const double ref = Hraw.col(p).norm();
        if (!(ref > 0.0) || !v.allFinite()) continue;
        for (int pass = 0; pass < 2; ++pass) v -= Q * (Q.transpose() * v);
        const double nv = v.norm();
        if (nv > 1e-10 * ref) {
            Q.conservativeResize(Eigen::NoChange, Q.cols() + 1);
            Q.col(Q.cols() - 1) = v / nv;
            keep.push_back(p);
        }
    }
    if (static_cast<int>(keep.size()) < m)
        throw ConstraintError("basis cannot supply the requested number of independent free-function columns");
    c.g = FreeFunction(c.spec.kind, map, keep);

    const int nk = n_constraints();
    c.Qxi = Eigen::MatrixXd::Zero(k, n_xi_);
    c.Qk = Eigen::MatrixXd::Zero(k, nk);
    for (int l = 0; l < k; ++l) {
        const int i = c.cons[l];
        c.Qk(l, i) = 1.0;
        for (const auto& t : cons_[i].terms) {
            if (t.component == ci) {
                Eigen::RowVectorXd r;
                switch (t.kind) {
                    case FunctionalTerm::Kind::Point: r = c.g.row(t.x, t.order); break;
                    case FunctionalTerm::Kind::Integral: r = c.g.integral(t.a, t.b); break;
                    case FunctionalTerm::Kind::Limit: r = c.g.limit(t.order); break;
                }
                if (!r.allFinite()) throw ConstraintError("free function is not finite at a constraint");
                c.Qxi.row(l).segment(c.offset, c.g.size()) += t.coef * r;
            } else {
                const AffineRow ar = apply_term(t);
                c.Qxi.row(l) += ar.xi;
                c.Qk.row(l) -= ar.kappa;
            }
        }
    }
    built_[ci] = true;
}

Eigen::RowVectorXd ConstrainedExpression::switching_term(int ci, const FunctionalTerm& t) const {
    const Component& c = comps_[ci];
    const int ns = static_cast<int>(c.supports.size());
    Eigen::RowVectorXd s(ns);
    FunctionalTerm unit = t;
    unit.coef = 1.0;
    for (int j = 0; j < ns; ++j) s[j] = term_on_support(unit, c.supports[j]);
    return ns ? Eigen::RowVectorXd(s * c.alpha) : Eigen::RowVectorXd(0);
}

ConstrainedExpression::AffineRow ConstrainedExpression::apply_term(const FunctionalTerm& t) const {
    const int ci = t.component;
    if (!built_[ci]) throw std::logic_error("ConstrainedExpression: component used before construction");
    const Component& c = comps_[ci];
    AffineRow out{Eigen::RowVectorXd::Zero(n_xi_), Eigen::RowVectorXd::Zero(n_constraints())};
    Eigen::RowVectorXd gr;
    switch (t.kind) {
        case FunctionalTerm::Kind::Point: gr = c.g.row(t.x, t.order); break;
        case FunctionalTerm::Kind::Integral: gr = c.g.integral(t.a, t.b); break;
        case FunctionalTerm::Kind::Limit: gr = c.g.limit(t.order); break;
    }
    out.xi.segment(c.offset, c.g.size()) = gr;
    if (!c.cons.empty()) {
        const Eigen::RowVectorXd phi = switching_term(ci, t);
        out.xi -= phi * c.Qxi;
        out.kappa = phi * c.Qk;
    }
    out.xi *= t.coef;
    out.kappa *= t.coef;
    return out;
}

Eigen::VectorXd ConstrainedExpression::kappa() const {
    Eigen::VectorXd k(n_constraints());
    for (int i = 0; i < n_constraints(); ++i) k[i] = cons_[i].kappa;
    return k;
}

void ConstrainedExpression::set_kappa(const Eigen::VectorXd& kappa) {
    if (kappa.size() != n_constraints()) throw std::invalid_argument("set_kappa: size mismatch");
    for (int i = 0; i < n_constraints(); ++i) cons_[i].kappa = kappa[i];
}

Eigen::MatrixXd ConstrainedExpression::switching(int ci, const Eigen::VectorXd& x, int d) const {
    const Component& c = comps_[ci];
    const int ns = static_cast<int>(c.supports.size());
    Eigen::MatrixXd Sx(x.size(), ns);
    for (int j = 0; j < ns; ++j)
        for (Eigen::Index i = 0; i < x.size(); ++i) Sx(i, j) = c.supports[j].eval(x[i], d);
    if (ns == 0) return Eigen::MatrixXd(x.size(), 0);
    return Sx * c.alpha;
}

ConstrainedExpression::Matrices ConstrainedExpression::matrices(int ci, const Eigen::VectorXd& x, int d) const {
    const Component& c = comps_[ci];
    Matrices out{Eigen::MatrixXd::Zero(x.size(), n_xi_), Eigen::MatrixXd::Zero(x.size(), n_constraints())};
    out.A.middleCols(c.offset, c.g.size()) = c.g.eval(x, d);
    if (!c.cons.empty()) {
        const Eigen::MatrixXd Phi = switching(ci, x, d);
        out.A.noalias() -= Phi * c.Qxi;
        out.P.noalias() = Phi * c.Qk;
    }
    return out;
}

Eigen::VectorXd ConstrainedExpression::evaluate(int comp, const Eigen::VectorXd& xi, const Eigen::VectorXd& x, int d) const {
    const Matrices M = matrices(comp, x, d);
    return M.A * xi + M.P * kappa();
}

double ConstrainedExpression::apply(int i, const Eigen::VectorXd& xi) const {
    const Eigen::VectorXd k = kappa();
    double acc = 0.0;
    for (const auto& t : cons_[i].terms) {
        const AffineRow r = apply_term(t);
        acc += r.xi.dot(xi) + r.kappa.dot(k);
    }
    return acc;
}

FunctionHandle ConstrainedExpression::as_function(const Eigen::VectorXd& xi) const {
    FunctionHandle h;
    const Eigen::VectorXd k = kappa();
    h.eval = [this, xi, k](int comp, double x, int d) {
        const AffineRow r = apply_term(FunctionalTerm::point(x, d, 1.0, comp));
        return r.xi.dot(xi) + r.kappa.dot(k);
    };
    h.integral = [this, xi, k](int comp, double a, double b) {
        const AffineRow r = apply_term(FunctionalTerm::integral(a, b, 1.0, comp));
        return r.xi.dot(xi) + r.kappa.dot(k);
    };
    h.limit = [this, xi, k](int comp, int d) {
        const AffineRow r = apply_term(FunctionalTerm::limit(d, 1.0, comp));
        return r.xi.dot(xi) + r.kappa.dot(k);
    };
    return h;
}

InequalityExpression::InequalityExpression(const ConstrainedExpression& ce, int comp, Bound f_upper, Bound f_lower)
    : ce_(ce), comp_(comp), fu_(std::move(f_upper)), fl_(std::move(f_lower)) {
    for (int i : ce.embedded(comp)) {
        const auto& c = ce.constraints()[i];
        if (c.terms.size() != 1 || c.terms[0].kind != FunctionalTerm::Kind::Point || c.terms[0].order != 0)
            throw ConstraintError("inequality bounds combine only with point value constraints");
        const double x = c.terms[0].x;
        const double v = c.kappa / c.terms[0].coef;
        if (v > fu_(x, 0) || v < fl_(x, 0)) {
            std::ostringstream os;
            os << "equality constraint at x=" << x << " lies outside the inequality band";
            throw ConstraintError(os.str());
        }
    }
}

Eigen::VectorXd InequalityExpression::evaluate(const Eigen::VectorXd& xi, const Eigen::VectorXd& x, int d) const {
    const Eigen::VectorXd y0 = ce_.evaluate(comp_, xi, x, 0);
    Eigen::VectorXd yd = d == 0 ? y0 : ce_.evaluate(comp_, xi, x, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double up = fu_(x[i], 0), lo = fl_(x[i], 0);
        // step function with value 0 at the switch point
        if (y0[i] - up > 0.0) yd[i] = d == 0 ? up : fu_(x[i], d);
        else if (lo - y0[i] > 0.0) yd[i] = d == 0 ? lo : fl_(x[i], d);
    }
    return yd;
}

}  // namespace tfc
