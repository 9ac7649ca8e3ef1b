#pragma once

#include <memory>
#include <optional>
#include <string>

#include "symode/ode.hpp"

namespace symode {

constexpr int kProbeCount = 64;

enum class SystemClass { BarL, L, Lprime, Ldoubleprime };

inline const char* to_string(SystemClass c) {
    switch (c) {
    case SystemClass::BarL: return "barL";
    case SystemClass::L: return "L";
    case SystemClass::Lprime: return "Lprime";
    default: return "Ldoubleprime";
    }
}

/// x_tt = A x_t + B x + f. Primed classes store A = 0 and B = V.
struct System {
    SystemClass cls = SystemClass::L;
    Field field = Field::complex;
    MatrixFunction A;
    MatrixFunction B;
    VectorFunction f;
    Domain dom;

    long n() const { return B.n(); }
    Domain domain() const { return dom; }
    bool primed() const { return cls == SystemClass::Lprime || cls == SystemClass::Ldoubleprime; }
    const MatrixFunction& V() const {
        if (!primed()) throw InapplicableError("system is not in a reduced (A = 0) class");
        return B;
    }

    static System make(SystemClass cls, MatrixFunction A, MatrixFunction B, VectorFunction f, Field field,
                       std::optional<Domain> dom = std::nullopt) {
        const long n = B.n();
        require_same_dim(A.n(), n, "system A");
        require_same_dim(f.n(), n, "system f");
        const Domain d = dom ? *dom : B.domain();
        if (!(d.hi > d.lo)) throw std::invalid_argument("system domain must have positive length");
        auto fit = [&](auto g, const char* what) {
            g = g.with_domain(d);
            if (!g.domain().contains(d.lo) || !g.domain().contains(d.hi))
                throw std::invalid_argument(std::string("sampled ") + what + " does not cover the system domain");
            return g;
        };
        System s;
        s.cls = cls;
        s.field = field;
        s.A = fit(A, "A");
        s.B = fit(B, "B");
        s.f = fit(f, "f");
        s.dom = d;
        if (s.primed() && !(s.A.is<MatrixFunction::Constant>() && s.A.as<MatrixFunction::Constant>().m.norm() == 0))
            throw std::invalid_argument("reduced classes carry no A");
        return s;
    }
    static System barL(MatrixFunction A, MatrixFunction B, VectorFunction f, Field field = Field::complex) {
        return make(SystemClass::BarL, std::move(A), std::move(B), std::move(f), field);
    }
    static System L(MatrixFunction A, MatrixFunction B, Field field = Field::complex) {
        const long n = B.n();
        const Domain d = B.domain();
        return make(SystemClass::L, std::move(A), std::move(B), VectorFunction::zero(n, d), field);
    }
    static System lprime(MatrixFunction V, Field field = Field::complex) {
        const long n = V.n();
        const Domain d = V.domain();
        return make(SystemClass::Lprime, MatrixFunction::zero(n, d), std::move(V), VectorFunction::zero(n, d),
                    field);
    }
    static System ldoubleprime(MatrixFunction V, Field field = Field::complex) {
        System s = lprime(std::move(V), field);
        s.cls = SystemClass::Ldoubleprime;
        return s;
    }

    bool a_is_zero() const {
        return A.is<MatrixFunction::Constant>() && A.as<MatrixFunction::Constant>().m.norm() == 0.0;
    }

    /// B - A_t/2 + A^2/4, which equals V after the A-zero gauge.
    Mat criterion(double t) const {
        if (primed() || a_is_zero()) return B(t);
        const Mat a = A(t);
        return B(t) - 0.5 * A.deriv(t, 1) + 0.25 * a * a;
    }

    Vec accel(double t, const Vec& x, const Vec& xt) const {
        Vec out = B(t) * x;
        if (!a_is_zero()) out += A(t) * xt;
        if (!f.is_zero()) out += f(t);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Transforms

/// (t, x) -> (T(t), H(t) x + h(t)).
struct Transform {
    ScalarFunction T;
    MatrixFunction H;
    VectorFunction h;
    Domain source;
    std::optional<Mat> C; ///< set when H = T_t^{1/2} C
    std::string note;

    long n() const { return H.n(); }
    double map(double t) const { return T(t).real(); }

    static Transform identity(long n, Domain d) {
        Transform tr;
        tr.T = ScalarFunction::identity();
        tr.H = MatrixFunction::constant(eye(n), d);
        tr.h = VectorFunction::zero(n, d);
        tr.source = d;
        tr.C = eye(n);
        tr.note = "identity";
        return tr;
    }

    static Transform point(ScalarFunction T, MatrixFunction H, VectorFunction h, Domain d) {
        require_same_dim(H.n(), h.n(), "transform");
        Transform tr;
        tr.T = std::move(T);
        tr.H = H.with_domain(d);
        tr.h = h.with_domain(d);
        tr.source = d;
        if (tr.T.is_affine() && tr.H.is<MatrixFunction::Constant>() && tr.h.is_zero()) {
            const cplx a = tr.T.deriv(0.0, 1);
            if (std::abs(a.imag()) == 0 && a.real() > 0)
                tr.C = tr.H.as<MatrixFunction::Constant>().m / std::sqrt(a.real());
        }
        return tr;
    }

    /// H = T_t^{1/2} C with the principal branch; real systems need T_t > 0.
    static Transform primed(ScalarFunction T, const Mat& C, Domain d, Field field) {
        const long n = C.rows();
        for (double t : probe_points(d, kProbeCount)) {
            const cplx tt = T.deriv(t, 1);
            if (field == Field::real && !(tt.real() > 0 && tt.imag() == 0.0))
                throw InapplicableError("real systems need an orientation-preserving T (T_t > 0)");
        }
        Transform tr;
        tr.source = d;
        tr.C = C;
        tr.h = VectorFunction::zero(n, d);
        if (T.is_affine()) {
            tr.H = MatrixFunction::constant(std::sqrt(T.deriv(0.0, 1)) * C, d);
        } else {
            tr.H = MatrixFunction::callable(
                n, d,
                [T, C](double t, int k) -> Mat {
                    const cplx t1 = T.deriv(t, 1), r = std::sqrt(t1);
                    if (k == 0) return r * C;
                    const cplx t2 = T.deriv(t, 2);
                    if (k == 1) return (t2 / (2.0 * r)) * C;
                    const cplx t3 = T.deriv(t, 3);
                    return (t3 / (2.0 * r) - t2 * t2 / (4.0 * r * t1)) * C;
                },
                2);
        }
        tr.T = std::move(T);
        return tr;
    }

    bool is_identity() const {
        return T.is_polynomial() && T.degree() == 1 && T.poly().c[0] == 0.0 && T.poly().c[1] == 1.0 &&
               H.is<MatrixFunction::Constant>() && (H.as<MatrixFunction::Constant>().m - eye(n())).norm() == 0 &&
               h.is_zero();
    }

    /// Checks |T_t| > 0 and H invertible on probe points; returns the sign of T_t.
    int validate(const ToleranceConfig& cfg) const {
        int sign = 0;
        for (double t : probe_points(source, kProbeCount)) {
            const double tt = T.deriv(t, 1).real();
            if (std::abs(T.deriv(t, 1)) <= cfg.rank_tol || std::abs(T.deriv(t, 1).imag()) > cfg.rank_tol)
                throw InapplicableError("transform: T_t vanishes or is not real at t=" + std::to_string(t));
            const int s = tt > 0 ? 1 : -1;
            if (sign != 0 && s != sign) throw InapplicableError("transform: T_t changes sign");
            sign = s;
            Eigen::JacobiSVD<Mat> svd(H(t));
            const auto& sv = svd.singularValues();
            if (sv(sv.size() - 1) <= cfg.rank_tol * std::max(1.0, sv(0)))
                throw InapplicableError("transform: H is singular at t=" + std::to_string(t));
        }
        return sign;
    }

    Domain image() const {
        const double a = map(source.lo), b = map(source.hi);
        return {std::min(a, b), std::max(a, b)};
    }
};

/// second after first.
inline Transform compose(const Transform& second, const Transform& first) {
    const long n = first.n();
    require_same_dim(second.n(), n, "compose");
    const Domain d = first.source;
    if (first.T.is_affine() && second.T.is_affine() && first.H.is<MatrixFunction::Constant>() &&
        second.H.is<MatrixFunction::Constant>() && first.h.is<VectorFunction::Constant>() &&
        second.h.is<VectorFunction::Constant>()) {
        const cplx a1 = first.T.deriv(0, 1), b1 = first.T(0), a2 = second.T.deriv(0, 1), b2 = second.T(0);
        const Mat h2 = second.H.as<MatrixFunction::Constant>().m;
        const Vec v = h2 * first.h.as<VectorFunction::Constant>().v + second.h.as<VectorFunction::Constant>().v;
        Transform tr = Transform::point(ScalarFunction::polynomial({a2 * b1 + b2, a2 * a1}),
                                        MatrixFunction::constant(h2 * first.H.as<MatrixFunction::Constant>().m, d),
                                        VectorFunction::constant(v, d), d);
        if (first.C && second.C) tr.C = *second.C * *first.C;
        tr.note = second.note + " after " + first.note;
        return tr;
    }
    const ScalarFunction T1 = first.T, T2 = second.T;
    const MatrixFunction H1 = first.H, H2 = second.H;
    const VectorFunction h1 = first.h, h2 = second.h;
    Transform tr;
    tr.source = d;
    tr.T = ScalarFunction::analytic(
        [T1, T2](double t, int k) -> cplx {
            const double s = T1(t).real();
            if (k == 0) return T2(s);
            const cplx p1 = T1.deriv(t, 1);
            if (k == 1) return T2.deriv(s, 1) * p1;
            const cplx p2 = T1.deriv(t, 2);
            if (k == 2) return T2.deriv(s, 2) * p1 * p1 + T2.deriv(s, 1) * p2;
            return T2.deriv(s, 3) * p1 * p1 * p1 + 3.0 * T2.deriv(s, 2) * p1 * p2 + T2.deriv(s, 1) * T1.deriv(t, 3);
        },
        3);
    tr.H = MatrixFunction::callable(
        n, d,
        [T1, H1, H2](double t, int k) -> Mat {
            const double s = T1(t).real();
            if (k == 0) return H2.deriv_unchecked(s, 0) * H1.deriv_unchecked(t, 0);
            const cplx p1 = T1.deriv(t, 1);
            const Mat g0 = H2.deriv_unchecked(s, 0), g1 = H2.deriv_unchecked(s, 1);
            const Mat k0 = H1.deriv_unchecked(t, 0), k1 = H1.deriv_unchecked(t, 1);
            if (k == 1) return p1 * g1 * k0 + g0 * k1;
            const cplx p2 = T1.deriv(t, 2);
            return p1 * p1 * H2.deriv_unchecked(s, 2) * k0 + p2 * g1 * k0 + 2.0 * p1 * g1 * k1 +
                   g0 * H1.deriv_unchecked(t, 2);
        },
        2);
    tr.h = VectorFunction::callable(
        n, d,
        [T1, H2, h1, h2](double t, int k) -> Vec {
            const double s = T1(t).real();
            const Vec v0 = h1.deriv(t, 0);
            if (k == 0) return H2.deriv_unchecked(s, 0) * v0 + h2.deriv(s, 0);
            const cplx p1 = T1.deriv(t, 1);
            const Mat g0 = H2.deriv_unchecked(s, 0), g1 = H2.deriv_unchecked(s, 1);
            const Vec v1 = h1.deriv(t, 1);
            if (k == 1) return p1 * g1 * v0 + g0 * v1 + p1 * h2.deriv(s, 1);
            const cplx p2 = T1.deriv(t, 2);
            return p1 * p1 * H2.deriv_unchecked(s, 2) * v0 + p2 * g1 * v0 + 2.0 * p1 * g1 * v1 +
                   g0 * h1.deriv(t, 2) + p1 * p1 * h2.deriv(s, 2) + p2 * h2.deriv(s, 1);
        },
        2);
    if (first.C && second.C) tr.C = *second.C * *first.C;
    tr.note = second.note + " after " + first.note;
    return tr;
}

// ---------------------------------------------------------------------------
// Reparametrization helpers for the closed-form (affine T, constant H) path

namespace detail {

/// G(s) = F((s - b)/a) on the mapped domain.
inline MatrixFunction reparam_affine(const MatrixFunction& F, double a, double b) {
    const Domain d0 = F.domain();
    const Domain d{std::min(a * d0.lo + b, a * d0.hi + b), std::max(a * d0.lo + b, a * d0.hi + b)};
    const long n = F.n();
    if (F.is<MatrixFunction::Constant>()) return F.with_domain(d);
    if (F.is<MatrixFunction::Polynomial>())
        return MatrixFunction::polynomial(
            compose_affine(F.as<MatrixFunction::Polynomial>().c, 1.0 / a, -b / a, Mat(Mat::Zero(n, n))), d);
    if (F.is<MatrixFunction::ConjExp>()) {
        const auto& c = F.as<MatrixFunction::ConjExp>();
        const Mat g = matrix_exp((-b / a) * c.ups);
        return MatrixFunction::conj_exp(c.eps, c.ups / a, g * c.w * matrix_exp((b / a) * c.ups), d);
    }
    if (F.is<MatrixFunction::Exponential>()) {
        const auto& x = F.as<MatrixFunction::Exponential>();
        return MatrixFunction::exponential(x.gen / a, matrix_exp((-b / a) * x.gen) * x.right, d);
    }
    if (F.is<MatrixFunction::Sampled>()) {
        const auto& s = F.as<MatrixFunction::Sampled>();
        std::vector<double> t;
        std::vector<Mat> v, dv;
        for (size_t i = 0; i < s.t.size(); ++i) {
            t.push_back(a * s.t[i] + b);
            v.push_back(s.v[i]);
            dv.push_back(s.d[i] / a);
        }
        if (a < 0) {
            std::reverse(t.begin(), t.end());
            std::reverse(v.begin(), v.end());
            std::reverse(dv.begin(), dv.end());
        }
        auto out = MatrixFunction::sampled(t, v, dv);
        out.note = F.note;
        return out;
    }
    return MatrixFunction::callable(
        n, d, [F, a, b](double s, int k) { return F.deriv_unchecked((s - b) / a, k) / std::pow(a, k); }, 8);
}

inline VectorFunction reparam_affine(const VectorFunction& F, double a, double b) {
    const Domain d0 = F.domain();
    const Domain d{std::min(a * d0.lo + b, a * d0.hi + b), std::max(a * d0.lo + b, a * d0.hi + b)};
    const long n = F.n();
    if (F.is<VectorFunction::Constant>()) return F.with_domain(d);
    if (F.is<VectorFunction::Polynomial>())
        return VectorFunction::polynomial(
            compose_affine(F.as<VectorFunction::Polynomial>().c, 1.0 / a, -b / a, Vec(Vec::Zero(n))), d);
    return VectorFunction::callable(
        n, d, [F, a, b](double s, int k) { return Vec(F.deriv((s - b) / a, k) / std::pow(a, k)); }, 2);
}

/// scale * C F C^{-1}
inline MatrixFunction conjugate(const MatrixFunction& F, const Mat& C, cplx scale) {
    const Mat Ci = C.inverse();
    const Domain d = F.domain();
    MatrixFunction out;
    if (F.is<MatrixFunction::Constant>()) {
        out = MatrixFunction::constant(scale * C * F.as<MatrixFunction::Constant>().m * Ci, d);
    } else if (F.is<MatrixFunction::Polynomial>()) {
        std::vector<Mat> c;
        for (const auto& m : F.as<MatrixFunction::Polynomial>().c) c.push_back(scale * C * m * Ci);
        out = MatrixFunction::polynomial(c, d);
    } else if (F.is<MatrixFunction::ConjExp>()) {
        const auto& c = F.as<MatrixFunction::ConjExp>();
        out = MatrixFunction::conj_exp(scale * c.eps, C * c.ups * Ci, scale * C * c.w * Ci, d);
    } else if (F.is<MatrixFunction::Exponential>()) {
        const auto& x = F.as<MatrixFunction::Exponential>();
        out = MatrixFunction::exponential(C * x.gen * Ci, scale * C * x.right * Ci, d);
    } else if (F.is<MatrixFunction::Sampled>()) {
        const auto& s = F.as<MatrixFunction::Sampled>();
        std::vector<Mat> v, dv;
        for (size_t i = 0; i < s.t.size(); ++i) {
            v.push_back(scale * C * s.v[i] * Ci);
            dv.push_back(scale * C * s.d[i] * Ci);
        }
        out = MatrixFunction::sampled(s.t, v, dv);
    } else {
        out = MatrixFunction::callable(
            F.n(), d, [F, C, Ci, scale](double t, int k) -> Mat { return scale * C * F.deriv_unchecked(t, k) * Ci; },
            8);
    }
    out.note = F.note;
    return out;
}

inline VectorFunction scale_vector(const VectorFunction& F, const Mat& M) {
    const Domain d = F.domain();
    if (F.is_zero()) return F;
    if (F.is<VectorFunction::Constant>()) return VectorFunction::constant(M * F.as<VectorFunction::Constant>().v, d);
    if (F.is<VectorFunction::Polynomial>()) {
        std::vector<Vec> c;
        for (const auto& v : F.as<VectorFunction::Polynomial>().c) c.push_back(M * v);
        return VectorFunction::polynomial(c, d);
    }
    return VectorFunction::callable(
        F.n(), d, [F, M](double t, int k) -> Vec { return M * F.deriv(t, k); }, 2);
}

inline bool is_zero_fn(const MatrixFunction& F) {
    return F.is<MatrixFunction::Constant>() && F.as<MatrixFunction::Constant>().m.norm() == 0.0;
}

// Sorts a sampled path by ascending abscissa.
template <class T>
void sort_by_abscissa(std::vector<double>& s, std::vector<T>& v, std::vector<T>& d) {
    if (s.size() > 1 && s.front() > s.back()) {
        std::reverse(s.begin(), s.end());
        std::reverse(v.begin(), v.end());
        std::reverse(d.begin(), d.end());
    }
}

} // namespace detail

/// Push-forward of the arbitrary elements under (T, H, h).
inline System apply_equivalence(const System& sys, const Transform& tr, const ToleranceConfig& cfg) {
    const long n = sys.n();
    require_same_dim(tr.n(), n, "apply_equivalence");
    tr.validate(cfg);
    const Domain dom = sys.domain();
    const bool affine_closed = tr.T.is_affine() && tr.H.is<MatrixFunction::Constant>() && tr.h.is_zero();

    if (affine_closed) {
        const cplx ac = tr.T.deriv(0.0, 1), bc = tr.T(0.0);
        const double a = ac.real(), b = bc.real();
        const Mat C = tr.H.as<MatrixFunction::Constant>().m;
        System out;
        out.cls = sys.cls;
        out.field = sys.field;
        out.dom = {std::min(a * dom.lo + b, a * dom.hi + b), std::max(a * dom.lo + b, a * dom.hi + b)};
        out.B = detail::reparam_affine(detail::conjugate(sys.B, C, 1.0 / (a * a)), a, b);
        const Domain d = out.dom;
        out.A = detail::is_zero_fn(sys.A) ? MatrixFunction::zero(n, d)
                                          : detail::reparam_affine(detail::conjugate(sys.A, C, 1.0 / a), a, b);
        out.f = sys.f.is_zero() ? VectorFunction::zero(n, d)
                                : detail::reparam_affine(detail::scale_vector(sys.f, C / (a * a)), a, b);
        return out;
    }

    // General path: sample the push-forward on the source grid.
    const Domain src{std::max(dom.lo, tr.source.lo), std::min(dom.hi, tr.source.hi)};
    const auto grid = uniform_grid(src, cfg.ode_steps);
    std::vector<double> s;
    std::vector<Mat> av, bv;
    std::vector<Vec> fv;
    const bool primed_path = sys.primed() && tr.C.has_value() && tr.h.is_zero();
    for (double t : grid) {
        const cplx t1 = tr.T.deriv(t, 1), t2 = tr.T.deriv(t, 2);
        const Mat H = tr.H(t), H1 = tr.H.deriv(t, 1), H2 = tr.H.deriv(t, 2);
        const Mat Hi = H.inverse();
        s.push_back(tr.map(t));
        if (primed_path) {
            const cplx t3 = tr.T.deriv(t, 3);
            const Mat& C = *tr.C;
            const cplx schw = (2.0 * t1 * t3 - 3.0 * t2 * t2) / (4.0 * std::pow(t1, 4));
            bv.push_back(C * sys.B(t) * C.inverse() / (t1 * t1) + schw * eye(n));
            continue;
        }
        const Mat At = (t1 * H * sys.A(t) + 2.0 * t1 * H1 - t2 * H) * Hi / (t1 * t1);
        const Mat Bt = (t1 * H * sys.B(t) - t1 * t1 * At * H1 + t1 * H2 - t2 * H1) * Hi / (t1 * t1 * t1);
        av.push_back(At);
        bv.push_back(Bt);
        if (!sys.f.is_zero() || !tr.h.is_zero()) {
            const Vec h0 = tr.h.deriv(t, 0), h1 = tr.h.deriv(t, 1), h2 = tr.h.deriv(t, 2);
            fv.push_back((t1 * H * sys.f(t) + t1 * h2 - t2 * h1 - t1 * t1 * At * h1 - t1 * t1 * t1 * Bt * h0) /
                         (t1 * t1 * t1));
        }
    }
    auto finish = [&](std::vector<Mat> v) {
        std::vector<Mat> d;
        auto ss = s;
        detail::sort_by_abscissa(ss, v, d);
        auto out = MatrixFunction::sampled(ss, v);
        out.note = "sampled push-forward (non-affine T or non-constant H)";
        return out;
    };
    System out;
    out.field = sys.field;
    out.B = finish(bv);
    const Domain d = out.B.domain();
    out.dom = d;
    if (primed_path) {
        out.cls = SystemClass::Lprime;
        out.A = MatrixFunction::zero(n, d);
        out.f = VectorFunction::zero(n, d);
        return out;
    }
    out.A = finish(av);
    if (fv.empty()) {
        out.f = VectorFunction::zero(n, d);
    } else {
        std::vector<Vec> dd;
        auto ss = s;
        detail::sort_by_abscissa(ss, fv, dd);
        out.f = VectorFunction::sampled(ss, fv);
    }
    out.cls = fv.empty() ? SystemClass::L : SystemClass::BarL;
    return out;
}

// ---------------------------------------------------------------------------
// Gauges

struct TransformedSystem {
    System system;
    Transform transform;
    std::string note;
    double ode_error = 0.0;                 ///< Richardson estimate of the RK4 sub-solve, if any
    std::optional<VectorFunction> particular; ///< gauge_f_zero: the particular solution subtracted
};

namespace detail {

template <class T>
std::function<T(double, int)> hermite_callable(std::shared_ptr<const OdePath<T>> p) {
    return [p](double t, int k) -> T {
        if (k == 0) return hermite(p->t, p->y, p->dy, t);
        return hermite(p->t, p->y, p->dy, t, true);
    };
}

} // namespace detail

/// Removes f by subtracting the particular solution with zero data at the left endpoint.
inline TransformedSystem gauge_f_zero(const System& sys, const ToleranceConfig& cfg) {
    const long n = sys.n();
    const Domain d = sys.domain();
    if (sys.f.is_zero()) {
        System out = sys;
        if (out.cls == SystemClass::BarL) out.cls = SystemClass::L;
        return {out, Transform::identity(n, d), "f already zero", 0.0, VectorFunction::zero(n, d)};
    }
    auto rhs = [&sys, n](double t, const Vec& y) -> Vec {
        Vec out(2 * n);
        out.head(n) = y.tail(n);
        out.tail(n) = sys.accel(t, y.head(n), y.tail(n));
        return out;
    };
    auto path = std::make_shared<OdePath<Vec>>(rk4_from_lo(rhs, d, cfg.ode_steps, Vec(Vec::Zero(2 * n))));
    const System src = sys;
    auto xp = VectorFunction::callable(
        n, d,
        [path, src, n](double t, int k) -> Vec {
            const Vec y = hermite(path->t, path->y, path->dy, t);
            if (k == 0) return y.head(n);
            if (k == 1) return y.tail(n);
            return src.accel(t, y.head(n), y.tail(n));
        },
        2);
    auto minus = VectorFunction::callable(
        n, d, [xp](double t, int k) -> Vec { return -xp.deriv(t, k); }, 2);
    Transform tr = Transform::point(ScalarFunction::identity(), MatrixFunction::constant(eye(n), d), minus, d);
    tr.note = "subtract particular solution";
    System out = System::make(SystemClass::L, sys.A, sys.B, VectorFunction::zero(n, d), sys.field, d);
    return {out, tr, "particular solution by RK4 from t_lo", path->error_estimate, xp};
}

/// Removes A via H_t = -H A / 2, H(t0) = E at the domain midpoint.
inline TransformedSystem gauge_A_zero(const System& sys, const ToleranceConfig& cfg) {
    const long n = sys.n();
    const Domain d = sys.domain();
    if (!sys.f.is_zero()) throw InapplicableError("A-zero gauge needs a homogeneous system; remove f first");
    if (sys.primed() || sys.a_is_zero()) {
        System out = System::lprime(sys.B, sys.field);
        return {out, Transform::identity(n, d), "A already zero", 0.0, std::nullopt};
    }
    const double t0 = d.mid();
    if (sys.A.is<MatrixFunction::Constant>()) {
        const Mat ups = -0.5 * sys.A.as<MatrixFunction::Constant>().m;
        const Mat shift = matrix_exp(-t0 * ups), unshift = matrix_exp(t0 * ups);
        const MatrixFunction H = MatrixFunction::exponential(ups, shift, d);
        Transform tr = Transform::point(ScalarFunction::identity(), H, VectorFunction::zero(n, d), d);
        tr.note = "H = exp((t - t0) Y), Y = -A/2";
        MatrixFunction V;
        if (sys.B.is<MatrixFunction::Constant>()) {
            const Mat w = shift * (sys.B.as<MatrixFunction::Constant>().m + ups * ups) * unshift;
            V = MatrixFunction::conj_exp(0.0, ups, w, d);
        } else {
            const MatrixFunction B = sys.B;
            V = MatrixFunction::callable(
                n, d,
                [B, ups, shift, unshift](double t, int k) -> Mat {
                    const Mat h = matrix_exp(t * ups) * shift;
                    const Mat hi = unshift * matrix_exp(-t * ups);
                    Mat c = B.deriv_unchecked(t, 0) + ups * ups;
                    if (k == 0) return h * c * hi;
                    const Mat c1 = B.deriv_unchecked(t, 1);
                    if (k == 1) return h * (c1 + commutator(ups, c)) * hi;
                    const Mat c2 = B.deriv_unchecked(t, 2);
                    return h * (c2 + 2.0 * commutator(ups, c1) + commutator(ups, commutator(ups, c))) * hi;
                },
                2);
            V.note = "conjugated B with closed-form H";
        }
        return {System::lprime(V, sys.field), tr, "closed form for constant A", 0.0, std::nullopt};
    }
    const MatrixFunction A = sys.A;
    auto rhs = [&A](double t, const Mat& h) -> Mat { return -0.5 * h * A(t); };
    auto path = std::make_shared<OdePath<Mat>>(rk4_from_mid(rhs, d, cfg.ode_steps, eye(n)));
    auto H = MatrixFunction::callable(
        n, d,
        [path, A](double t, int k) -> Mat {
            const Mat h = hermite(path->t, path->y, path->dy, t);
            if (k == 0) return h;
            if (k == 1) return -0.5 * h * A(t);
            return 0.25 * h * A(t) * A(t) - 0.5 * h * A.deriv(t, 1);
        },
        2);
    H.note = "RK4 from midpoint";
    const System src = sys;
    auto V = MatrixFunction::callable(
        n, d,
        [H, src, A](double t, int k) -> Mat {
            const Mat h = H(t), hi = h.inverse();
            const Mat c = src.criterion(t);
            if (k == 0) return h * c * hi;
            const Mat a = A(t), a1 = A.deriv(t, 1);
            const Mat c1 = src.B.deriv(t, 1) - 0.5 * A.deriv(t, 2) + 0.25 * (a1 * a + a * a1);
            return h * (c1 - 0.5 * commutator(a, c)) * hi;
        },
        1);
    V.note = "sampled H (RK4)";
    Transform tr = Transform::point(ScalarFunction::identity(), H, VectorFunction::zero(n, d), d);
    tr.note = "H_t = -H A / 2 by RK4";
    for (double t : probe_points(d, kProbeCount))
        if (std::abs(H(t).determinant()) <= cfg.rank_tol)
            throw NumericalError("A-zero gauge: H lost invertibility at t=" + std::to_string(t));
    return {System::lprime(V, sys.field), tr, "RK4 for H", path->error_estimate, std::nullopt};
}

inline bool trace_vanishes(const MatrixFunction& V, const ToleranceConfig& cfg) {
    for (double t : probe_points(V.domain(), kProbeCount)) {
        const Mat v = V(t);
        if (std::abs(v.trace()) > cfg.residual_tol * std::max(1.0, v.norm())) return false;
    }
    return true;
}

/// Makes V traceless via T = phi1/phi2 with phi'' = (tr V / n) phi.
inline TransformedSystem gauge_traceless(const System& sys, const ToleranceConfig& cfg,
                                         double min_fraction = 0.25) {
    const long n = sys.n();
    const Domain d = sys.domain();
    const MatrixFunction V = sys.V();
    if (trace_vanishes(V, cfg)) {
        System out = System::ldoubleprime(V, sys.field);
        return {out, Transform::identity(n, d), "trace already zero", 0.0, std::nullopt};
    }
    const auto split = trace_split(V);
    const ScalarFunction u = split.u;
    for (double t : probe_points(d, kProbeCount))
        if (std::abs(u(t).imag()) > cfg.residual_tol * std::max(1.0, std::abs(u(t))))
            throw InapplicableError("traceless gauge needs a real trace; tr V is complex-valued here");
    auto rhs = [&u](double t, const Mat& y) -> Mat {
        Mat out(2, 2);
        out.row(0) = y.row(1);
        out.row(1) = u(t) * y.row(0);
        return out;
    };
    Mat y0(2, 2);
    y0 << 0.0, 1.0, 1.0, 0.0; // columns: phi1 (0, 1), phi2 (1, 0)
    const auto path = rk4_from_mid(rhs, d, cfg.ode_steps, y0);

    // maximal zero-free stretch of phi2 around the midpoint
    const size_t mid = path.t.size() / 2;
    const double floor = 0.1;
    size_t lo = mid, hi = mid;
    while (lo > 0 && std::abs(path.y[lo - 1](0, 1)) >= floor) --lo;
    while (hi + 1 < path.t.size() && std::abs(path.y[hi + 1](0, 1)) >= floor) ++hi;
    std::string note = "phi2 from RK4 at the midpoint";
    Domain work{path.t[lo], path.t[hi]};
    if (lo > 0 || hi + 1 < path.t.size()) {
        if (work.length() < min_fraction * d.length())
            throw InapplicableError("traceless gauge: phi2 vanishes too close to the midpoint");
        note += "; domain shrunk to [" + std::to_string(work.lo) + ", " + std::to_string(work.hi) +
                "] where |phi2| >= 0.1";
    }
    auto phi = std::make_shared<OdePath<Mat>>(path);
    // phi1, phi2 and their first derivatives, Hermite-interpolated.
    auto state = [phi](double t) { return Mat(hermite(phi->t, phi->y, phi->dy, t)); };
    auto T = ScalarFunction::analytic(
        [state, u](double t, int k) -> cplx {
            const Mat y = state(t);
            const cplx p2 = y(0, 1), q2 = y(1, 1);
            if (k == 0) return y(0, 0) / p2;
            if (k == 1) return 1.0 / (p2 * p2);
            if (k == 2) return -2.0 * q2 / (p2 * p2 * p2);
            return -2.0 * u(t) / (p2 * p2) + 6.0 * q2 * q2 / std::pow(p2, 4);
        },
        3);
    auto H = MatrixFunction::callable(
        n, work,
        [state, u, n](double t, int k) -> Mat {
            const Mat y = state(t);
            const cplx p2 = y(0, 1), q2 = y(1, 1);
            if (k == 0) return eye(n) / p2;
            if (k == 1) return eye(n) * (-q2 / (p2 * p2));
            return eye(n) * (-u(t) / p2 + 2.0 * q2 * q2 / (p2 * p2 * p2));
        },
        2);
    Transform tr;
    tr.T = T;
    tr.H = H;
    tr.h = VectorFunction::zero(n, work);
    tr.source = work;
    tr.C = eye(n);
    tr.note = "T = phi1/phi2, H = E/phi2";

    std::vector<double> s;
    std::vector<Mat> v, dv;
    for (size_t i = lo; i <= hi; ++i) {
        const double t = path.t[i];
        const cplx p2 = path.y[i](0, 1), q2 = path.y[i](1, 1);
        const Mat v0 = V(t) - u(t) * eye(n);
        const Mat v1 = V.deriv(t, 1) - u.deriv(t, 1) * eye(n);
        const cplx p4 = std::pow(p2, 4);
        s.push_back((path.y[i](0, 0) / p2).real());
        v.push_back(p4 * v0);
        dv.push_back((4.0 * p2 * p2 * p2 * q2 * v0 + p4 * v1) * (p2 * p2));
    }
    auto Vt = MatrixFunction::sampled(s, v, dv);
    Vt.note = "sampled in the new time variable";
    System out = System::ldoubleprime(Vt, sys.field);
    for (double t : probe_points(out.domain(), kProbeCount))
        if (std::abs(Vt(t).trace()) > cfg.residual_tol)
            throw NumericalError("traceless gauge: trace residual above tolerance");
    return {out, tr, note, path.error_estimate, std::nullopt};
}

/// Orbit of the free particle: the criterion matrix is proportional to E everywhere.
inline bool singular_class_test(const System& sys, const ToleranceConfig& cfg) {
    const long n = sys.n();
    for (double t : probe_points(sys.domain(), kProbeCount)) {
        const Mat c = sys.criterion(t);
        const Mat off = c - (c.trace() / double(n)) * eye(n);
        if (off.norm() > cfg.residual_tol * std::max(1.0, c.norm())) return false;
    }
    return true;
}

/// Pushes three random solutions of src through tr and measures how far they are from
/// solving dst. Returns the largest residual normalized by max(1, |state|).
inline double verify_equivalence(const System& src, const System& dst, const Transform& tr,
                                  const ToleranceConfig& cfg, std::uint64_t seed = 17) {
    const long n = src.n();
    require_same_dim(dst.n(), n, "verify_equivalence");
    require_same_dim(tr.n(), n, "verify_equivalence");
    const Domain d = tr.source;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const Domain img = dst.domain();
    auto rhs = [&src, n](double t, const Vec& y) -> Vec {
        Vec out(2 * n);
        out.head(n) = y.tail(n);
        out.tail(n) = src.accel(t, y.head(n), y.tail(n));
        return out;
    };
    double worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        Vec y0(2 * n);
        for (long i = 0; i < 2 * n; ++i)
            y0(i) = src.field == Field::real ? cplx(g(rng), 0) : cplx(g(rng), g(rng));
        const auto path = rk4_from_mid(rhs, d, cfg.ode_steps, y0, false);
        for (size_t i = 1; i + 1 < path.t.size(); ++i) {
            const double t = path.t[i];
            const double s = tr.map(t);
            if (!img.contains(s)) continue;
            const Vec x = path.y[i].head(n), xt = path.y[i].tail(n);
            const Vec xtt = src.accel(t, x, xt);
            const cplx t1 = tr.T.deriv(t, 1), t2 = tr.T.deriv(t, 2);
            const Mat H = tr.H(t), H1 = tr.H.deriv(t, 1), H2 = tr.H.deriv(t, 2);
            const Vec y = H * x + tr.h.deriv(t, 0);
            const Vec y1 = H1 * x + H * xt + tr.h.deriv(t, 1);
            const Vec y2 = H2 * x + 2.0 * H1 * xt + H * xtt + tr.h.deriv(t, 2);
            const Vec ys = y1 / t1;
            const Vec yss = (y2 - ys * t2) / (t1 * t1);
            const Vec r = yss - dst.accel(s, y, ys);
            const double scale = std::max({1.0, y.norm(), ys.norm()});
            worst = std::max(worst, r.norm() / scale);
        }
    }
    return worst;
}

} // namespace symode
