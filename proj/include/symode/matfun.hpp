#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "symode/linalg.hpp"

namespace symode {

struct Domain {
    double lo = -1.0;
    double hi = 1.0;

    double mid() const { return 0.5 * (lo + hi); }
    double length() const { return hi - lo; }
    double slack() const { return 1e-9 * std::max(1.0, std::abs(hi) + std::abs(lo)); }
    bool contains(double t) const { return t >= lo - slack() && t <= hi + slack(); }
};

/// steps+1 equispaced nodes covering the domain.
inline std::vector<double> uniform_grid(const Domain& d, int steps) {
    std::vector<double> g(steps + 1);
    for (int i = 0; i <= steps; ++i) g[i] = d.lo + d.length() * i / steps;
    g.back() = d.hi;
    return g;
}

/// Cell-centred probe points, avoiding the endpoints.
inline std::vector<double> probe_points(const Domain& d, int count) {
    std::vector<double> p(count);
    for (int i = 0; i < count; ++i) p[i] = d.lo + d.length() * (i + 0.5) / count;
    return p;
}

// ---------------------------------------------------------------------------
// Finite differences and Hermite interpolation

/// Fornberg's recursion: weights[k][j] for the k-th derivative at x0 from nodes x[0..m).
inline std::vector<std::vector<double>> fd_weights(double x0, const double* x, int m, int maxder) {
    std::vector<std::vector<double>> c(maxder + 1, std::vector<double>(m, 0.0));
    double c1 = 1.0, c4 = x[0] - x0;
    c[0][0] = 1.0;
    for (int i = 1; i < m; ++i) {
        const int mn = std::min(i, maxder);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = x[i] - x0;
        for (int j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for (int k = mn; k >= 1; --k) c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3;
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    return c;
}

inline int stencil_start(int i, int count, int width) {
    return std::clamp(i - width / 2, 0, std::max(0, count - width));
}

/// k-th derivative at every node from a sliding five-point stencil.
template <class T>
std::vector<T> fd_derivative(const std::vector<double>& t, const std::vector<T>& v, int k = 1) {
    const int m = static_cast<int>(t.size());
    const int width = std::min(m, 5);
    std::vector<T> out(m);
    for (int i = 0; i < m; ++i) {
        const int s = stencil_start(i, m, width);
        const auto w = fd_weights(t[i], t.data() + s, width, k);
        T acc = v[s] * w[k][0];
        for (int j = 1; j < width; ++j) acc = acc + v[s + j] * w[k][j];
        out[i] = acc;
    }
    return out;
}

inline size_t locate(const std::vector<double>& t, double x) {
    auto it = std::upper_bound(t.begin(), t.end(), x);
    size_t i = it == t.begin() ? 0 : static_cast<size_t>(it - t.begin()) - 1;
    return std::min(i, t.size() - 2);
}

template <class T>
T hermite(const std::vector<double>& t, const std::vector<T>& v, const std::vector<T>& d, double x,
          bool derivative = false) {
    const size_t i = locate(t, x);
    const double h = t[i + 1] - t[i];
    const double s = (x - t[i]) / h;
    const double s2 = s * s, s3 = s2 * s;
    if (!derivative) {
        return v[i] * (2 * s3 - 3 * s2 + 1) + d[i] * (h * (s3 - 2 * s2 + s)) + v[i + 1] * (-2 * s3 + 3 * s2) +
               d[i + 1] * (h * (s3 - s2));
    }
    return v[i] * ((6 * s2 - 6 * s) / h) + d[i] * (3 * s2 - 4 * s + 1) + v[i + 1] * ((-6 * s2 + 6 * s) / h) +
           d[i + 1] * (3 * s2 - 2 * s);
}

inline void check_grid(const std::vector<double>& t) {
    if (t.size() < 2) throw std::invalid_argument("sampled function needs at least two grid points");
    for (size_t i = 1; i < t.size(); ++i)
        if (!(t[i] > t[i - 1])) throw std::invalid_argument("sampled grid must be strictly ascending");
}

inline double factorial_ratio(int l, int k) {
    double r = 1;
    for (int j = 0; j < k; ++j) r *= (l - j);
    return r;
}

/// Coefficients of p(alpha*s + beta) in s.
template <class T>
std::vector<T> compose_affine(const std::vector<T>& c, double alpha, double beta, const T& zero) {
    std::vector<T> out(c.size(), zero);
    for (size_t l = 0; l < c.size(); ++l) {
        double binom = 1;
        for (size_t j = 0; j <= l; ++j) {
            out[j] = out[j] + c[l] * (binom * std::pow(alpha, double(j)) * std::pow(beta, double(l - j)));
            binom = binom * double(l - j) / double(j + 1);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scalar functions

class ScalarFunction {
public:
    struct Poly {
        std::vector<cplx> c;
    };
    /// sum_j coef_j * exp(rate_j * t)
    struct ExpSum {
        std::vector<cplx> coef;
        std::vector<cplx> rate;
    };
    struct Samples {
        std::vector<double> t;
        std::vector<cplx> v;
        std::vector<cplx> d;
    };
    /// Derivatives of every order up to max_order supplied by a callback.
    struct Analytic {
        std::function<cplx(double, int)> f;
        int max_order = 0;
    };

    ScalarFunction() : rep_(Poly{{0.0}}) {}

    static ScalarFunction polynomial(std::vector<cplx> c) {
        while (c.size() > 1 && c.back() == 0.0) c.pop_back();
        if (c.empty()) c.push_back(0.0);
        ScalarFunction f;
        f.rep_ = Poly{std::move(c)};
        return f;
    }
    static ScalarFunction constant(cplx v) { return polynomial({v}); }
    static ScalarFunction identity() { return polynomial({0.0, 1.0}); }
    static ScalarFunction exp_sum(std::vector<cplx> coef, std::vector<cplx> rate) {
        ScalarFunction f;
        f.rep_ = ExpSum{std::move(coef), std::move(rate)};
        return f;
    }
    static ScalarFunction sampled(std::vector<double> t, std::vector<cplx> v, std::vector<cplx> d = {}) {
        check_grid(t);
        if (v.size() != t.size()) throw std::invalid_argument("sampled scalar: value count differs from grid");
        if (d.empty()) d = fd_derivative(t, v);
        ScalarFunction f;
        f.rep_ = Samples{std::move(t), std::move(v), std::move(d)};
        return f;
    }
    static ScalarFunction analytic(std::function<cplx(double, int)> fn, int max_order) {
        ScalarFunction f;
        f.rep_ = Analytic{std::move(fn), max_order};
        return f;
    }

    bool is_polynomial() const { return std::holds_alternative<Poly>(rep_); }
    bool is_sampled() const { return std::holds_alternative<Samples>(rep_); }
    bool is_exp_sum() const { return std::holds_alternative<ExpSum>(rep_); }
    bool is_affine() const { return is_polynomial() && poly().c.size() <= 2; }
    const Poly& poly() const { return std::get<Poly>(rep_); }
    const ExpSum& exps() const { return std::get<ExpSum>(rep_); }
    const Samples& samples() const { return std::get<Samples>(rep_); }
    long degree() const { return is_polynomial() ? static_cast<long>(poly().c.size()) - 1 : -1; }

    cplx deriv(double t, int k) const {
        if (auto p = std::get_if<Poly>(&rep_)) {
            cplx acc = 0;
            for (size_t l = p->c.size(); l-- > static_cast<size_t>(k);)
                acc = acc * t + p->c[l] * factorial_ratio(static_cast<int>(l), k);
            return acc;
        }
        if (auto e = std::get_if<ExpSum>(&rep_)) {
            cplx acc = 0;
            for (size_t j = 0; j < e->coef.size(); ++j)
                acc += e->coef[j] * std::pow(e->rate[j], k) * std::exp(e->rate[j] * t);
            return acc;
        }
        if (auto a = std::get_if<Analytic>(&rep_)) {
            if (k > a->max_order) throw std::logic_error("analytic scalar: derivative order too high");
            return a->f(t, k);
        }
        const auto& s = std::get<Samples>(rep_);
        if (k == 0) return hermite(s.t, s.v, s.d, t);
        if (k == 1) return hermite(s.t, s.v, s.d, t, true);
        return derivative().deriv(t, k - 1);
    }

    cplx operator()(double t) const { return deriv(t, 0); }

    ScalarFunction derivative() const {
        if (auto p = std::get_if<Poly>(&rep_)) {
            std::vector<cplx> c;
            for (size_t l = 1; l < p->c.size(); ++l) c.push_back(p->c[l] * double(l));
            return polynomial(c);
        }
        if (auto e = std::get_if<ExpSum>(&rep_)) {
            auto coef = e->coef;
            for (size_t j = 0; j < coef.size(); ++j) coef[j] *= e->rate[j];
            return exp_sum(coef, e->rate);
        }
        if (auto a = std::get_if<Analytic>(&rep_)) {
            auto fn = a->f;
            return analytic([fn](double t, int k) { return fn(t, k + 1); }, a->max_order - 1);
        }
        const auto& s = std::get<Samples>(rep_);
        return sampled(s.t, s.d);
    }

private:
    std::variant<Poly, ExpSum, Samples, Analytic> rep_;
};

// ---------------------------------------------------------------------------
// Matrix functions

class MatrixFunction {
public:
    struct Constant {
        Mat m;
    };
    struct Polynomial {
        std::vector<Mat> c;
    };
    /// eps*E + exp(t*ups) * w * exp(-t*ups)
    struct ConjExp {
        cplx eps;
        Mat ups;
        Mat w;
    };
    /// exp(t*gen) * right
    struct Exponential {
        Mat gen;
        Mat right;
    };
    struct Sampled {
        std::vector<double> t;
        std::vector<Mat> v;
        std::vector<Mat> d;
    };
    /// Value and derivatives supplied by a callback, up to max_order.
    struct Callable {
        std::function<Mat(double, int)> f;
        int max_order = 0;
    };
    using Rep = std::variant<Constant, Polynomial, ConjExp, Exponential, Sampled, Callable>;

    MatrixFunction() = default;

    static MatrixFunction constant(const Mat& m, Domain dom = {}) {
        return MatrixFunction(m.rows(), dom, Constant{m});
    }
    static MatrixFunction zero(long n, Domain dom = {}) { return constant(Mat::Zero(n, n), dom); }
    static MatrixFunction polynomial(std::vector<Mat> c, Domain dom = {}) {
        if (c.empty()) throw std::invalid_argument("polynomial matrix function needs a coefficient");
        const long n = c.front().rows();
        while (c.size() > 1 && c.back().norm() == 0.0) c.pop_back();
        if (c.size() == 1) return constant(c.front(), dom);
        return MatrixFunction(n, dom, Polynomial{std::move(c)});
    }
    static MatrixFunction conj_exp(cplx eps, const Mat& ups, const Mat& w, Domain dom = {}) {
        require_same_dim(ups.rows(), w.rows(), "conj_exp");
        return MatrixFunction(w.rows(), dom, ConjExp{eps, ups, w});
    }
    static MatrixFunction exponential(const Mat& gen, const Mat& right, Domain dom = {}) {
        return MatrixFunction(gen.rows(), dom, Exponential{gen, right});
    }
    static MatrixFunction sampled(std::vector<double> t, std::vector<Mat> v, std::vector<Mat> d = {}) {
        check_grid(t);
        if (v.size() != t.size()) throw std::invalid_argument("sampled matrix: value count differs from grid");
        if (d.empty()) d = fd_derivative(t, v);
        const long n = v.front().rows();
        Domain dom{t.front(), t.back()};
        return MatrixFunction(n, dom, Sampled{std::move(t), std::move(v), std::move(d)});
    }
    static MatrixFunction callable(long n, Domain dom, std::function<Mat(double, int)> f, int max_order) {
        return MatrixFunction(n, dom, Callable{std::move(f), max_order});
    }

    long n() const { return n_; }
    const Domain& domain() const { return domain_; }
    MatrixFunction with_domain(Domain d) const {
        MatrixFunction f = *this;
        if (!f.is<Sampled>()) f.domain_ = d;
        return f;
    }
    const Rep& rep() const { return rep_; }
    template <class T>
    bool is() const {
        return std::holds_alternative<T>(rep_);
    }
    template <class T>
    const T& as() const {
        return std::get<T>(rep_);
    }

    std::string note; ///< provenance, e.g. why a result degraded to Sampled

    Mat deriv(double t, int k) const {
        if (!domain_.contains(t))
            throw std::out_of_range("matrix function evaluated at t=" + std::to_string(t) + " outside [" +
                                    std::to_string(domain_.lo) + ", " + std::to_string(domain_.hi) + "]");
        return deriv_unchecked(t, k);
    }
    Mat operator()(double t) const { return deriv(t, 0); }

    Mat deriv_unchecked(double t, int k) const {
        if (auto c = std::get_if<Constant>(&rep_)) return k == 0 ? c->m : Mat::Zero(n_, n_);
        if (auto p = std::get_if<Polynomial>(&rep_)) {
            Mat acc = Mat::Zero(n_, n_);
            for (size_t l = p->c.size(); l-- > static_cast<size_t>(k);)
                acc = acc * t + p->c[l] * factorial_ratio(static_cast<int>(l), k);
            return acc;
        }
        if (auto c = std::get_if<ConjExp>(&rep_)) {
            Mat kk = c->w;
            for (int j = 0; j < k; ++j) kk = commutator(c->ups, kk);
            const Mat e = matrix_exp(t * c->ups);
            const Mat einv = matrix_exp(-t * c->ups);
            Mat out = e * kk * einv;
            if (k == 0) out += c->eps * eye(n_);
            return out;
        }
        if (auto x = std::get_if<Exponential>(&rep_)) {
            Mat g = eye(n_);
            for (int j = 0; j < k; ++j) g = g * x->gen;
            return matrix_exp(t * x->gen) * g * x->right;
        }
        if (auto c = std::get_if<Callable>(&rep_)) {
            if (k > c->max_order) {
                // Central difference of the highest supplied order.
                const double h = 1e-4 * std::max(1.0, domain_.length());
                return (deriv_unchecked(t + h, k - 1) - deriv_unchecked(t - h, k - 1)) / (2 * h);
            }
            return c->f(t, k);
        }
        const auto& s = std::get<Sampled>(rep_);
        if (k == 0) return hermite(s.t, s.v, s.d, t);
        if (k == 1) return hermite(s.t, s.v, s.d, t, true);
        return differentiate().deriv_unchecked(t, k - 1);
    }

    MatrixFunction differentiate() const {
        MatrixFunction out = *this;
        if (is<Constant>()) {
            out.rep_ = Constant{Mat::Zero(n_, n_)};
        } else if (auto p = std::get_if<Polynomial>(&rep_)) {
            std::vector<Mat> c;
            for (size_t l = 1; l < p->c.size(); ++l) c.push_back(p->c[l] * double(l));
            return polynomial(c, domain_);
        } else if (auto c = std::get_if<ConjExp>(&rep_)) {
            out.rep_ = ConjExp{0.0, c->ups, commutator(c->ups, c->w)};
        } else if (auto x = std::get_if<Exponential>(&rep_)) {
            out.rep_ = Exponential{x->gen, x->gen * x->right};
        } else if (auto c = std::get_if<Callable>(&rep_)) {
            auto fn = c->f;
            out.rep_ = Callable{[fn](double t, int k) { return fn(t, k + 1); }, c->max_order - 1};
        } else {
            const auto& s = std::get<Sampled>(rep_);
            out.rep_ = Sampled{s.t, s.d, fd_derivative(s.t, s.d)};
        }
        return out;
    }

    /// Representation-independent sampling on a grid inside the domain.
    MatrixFunction resample(const std::vector<double>& grid) const {
        std::vector<Mat> v, d;
        for (double t : grid) {
            v.push_back(deriv(t, 0));
            d.push_back(deriv(t, 1));
        }
        auto out = sampled(grid, v, d);
        out.note = note;
        return out;
    }

    bool is_closed_form() const { return !is<Sampled>() && !is<Callable>(); }

private:
    MatrixFunction(long n, Domain d, Rep r) : n_(n), domain_(d), rep_(std::move(r)) {}

    long n_ = 0;
    Domain domain_;
    Rep rep_ = Constant{Mat()};
};

inline Mat evaluate(const MatrixFunction& f, double t) { return f(t); }
inline MatrixFunction differentiate(const MatrixFunction& f) { return f.differentiate(); }

struct TraceSplit {
    ScalarFunction u;     ///< tr F / n
    MatrixFunction trless; ///< F - u E
};

inline TraceSplit trace_split(const MatrixFunction& f) {
    const long n = f.n();
    const double dn = static_cast<double>(n);
    const Domain dom = f.domain();
    if (f.is<MatrixFunction::Constant>()) {
        const Mat& m = f.as<MatrixFunction::Constant>().m;
        const cplx u = m.trace() / dn;
        return {ScalarFunction::constant(u), MatrixFunction::constant(m - u * eye(n), dom)};
    }
    if (f.is<MatrixFunction::Polynomial>()) {
        std::vector<cplx> uc;
        std::vector<Mat> fc;
        for (const auto& c : f.as<MatrixFunction::Polynomial>().c) {
            const cplx u = c.trace() / dn;
            uc.push_back(u);
            fc.push_back(c - u * eye(n));
        }
        return {ScalarFunction::polynomial(uc), MatrixFunction::polynomial(fc, dom)};
    }
    if (f.is<MatrixFunction::ConjExp>()) {
        const auto& c = f.as<MatrixFunction::ConjExp>();
        const cplx tw = c.w.trace() / dn;
        return {ScalarFunction::constant(c.eps + tw),
                MatrixFunction::conj_exp(0.0, c.ups, c.w - tw * eye(n), dom)};
    }
    const MatrixFunction s = f.is<MatrixFunction::Sampled>() ? f : f.resample(uniform_grid(dom, 256));
    const auto& smp = s.as<MatrixFunction::Sampled>();
    std::vector<cplx> uv, ud;
    std::vector<Mat> v, d;
    for (size_t i = 0; i < smp.t.size(); ++i) {
        uv.push_back(smp.v[i].trace() / dn);
        ud.push_back(smp.d[i].trace() / dn);
        v.push_back(smp.v[i] - uv.back() * eye(n));
        d.push_back(smp.d[i] - ud.back() * eye(n));
    }
    return {ScalarFunction::sampled(smp.t, uv, ud), MatrixFunction::sampled(smp.t, v, d)};
}

/// K_0 = W, K_{l+1} = [ups, K_l], stopped before the first linearly dependent term.
inline std::vector<Mat> kl_sequence(const Mat& upsilon, const Mat& w, const ToleranceConfig& cfg) {
    require_same_dim(upsilon.rows(), w.rows(), "kl_sequence");
    const long n = w.rows();
    std::vector<Mat> out;
    if (w.norm() == 0.0) return out;
    out.push_back(w);
    Mat stacked = vec(w) / w.norm();
    for (long l = 0; l < n * n; ++l) {
        const Mat next = commutator(upsilon, out.back());
        const double nn = next.norm();
        if (nn <= cfg.rank_tol * std::max(1.0, upsilon.norm()) * out.back().norm()) break;
        Mat trial(n * n, stacked.cols() + 1);
        trial << stacked, vec(next) / nn;
        if (numerical_rank(trial, cfg.rank_tol) <= stacked.cols()) break;
        stacked = trial;
        out.push_back(next);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vector functions

class VectorFunction {
public:
    struct Constant {
        Vec v;
    };
    struct Polynomial {
        std::vector<Vec> c;
    };
    struct Sampled {
        std::vector<double> t;
        std::vector<Vec> v;
        std::vector<Vec> d;
    };
    struct Callable {
        std::function<Vec(double, int)> f;
        int max_order = 0;
    };
    using Rep = std::variant<Constant, Polynomial, Sampled, Callable>;

    VectorFunction() = default;

    static VectorFunction zero(long n, Domain dom = {}) { return constant(Vec::Zero(n), dom); }
    static VectorFunction constant(const Vec& v, Domain dom = {}) { return VectorFunction(v.size(), dom, Constant{v}); }
    static VectorFunction polynomial(std::vector<Vec> c, Domain dom = {}) {
        if (c.empty()) throw std::invalid_argument("polynomial vector function needs a coefficient");
        while (c.size() > 1 && c.back().norm() == 0.0) c.pop_back();
        if (c.size() == 1) return constant(c.front(), dom);
        const long n = c.front().size();
        return VectorFunction(n, dom, Polynomial{std::move(c)});
    }
    static VectorFunction sampled(std::vector<double> t, std::vector<Vec> v, std::vector<Vec> d = {}) {
        check_grid(t);
        if (v.size() != t.size()) throw std::invalid_argument("sampled vector: value count differs from grid");
        if (d.empty()) d = fd_derivative(t, v);
        const long n = v.front().size();
        Domain dom{t.front(), t.back()};
        return VectorFunction(n, dom, Sampled{std::move(t), std::move(v), std::move(d)});
    }
    static VectorFunction callable(long n, Domain dom, std::function<Vec(double, int)> f, int max_order) {
        return VectorFunction(n, dom, Callable{std::move(f), max_order});
    }

    long n() const { return n_; }
    const Domain& domain() const { return domain_; }
    const Rep& rep() const { return rep_; }
    template <class T>
    bool is() const {
        return std::holds_alternative<T>(rep_);
    }
    template <class T>
    const T& as() const {
        return std::get<T>(rep_);
    }
    VectorFunction with_domain(Domain d) const {
        VectorFunction f = *this;
        if (!f.is<Sampled>()) f.domain_ = d;
        return f;
    }

    bool is_zero() const {
        if (auto c = std::get_if<Constant>(&rep_)) return c->v.norm() == 0.0;
        return false;
    }

    Vec deriv(double t, int k) const {
        if (!domain_.contains(t))
            throw std::out_of_range("vector function evaluated at t=" + std::to_string(t) + " outside domain");
        if (auto c = std::get_if<Constant>(&rep_)) return k == 0 ? c->v : Vec::Zero(n_);
        if (auto p = std::get_if<Polynomial>(&rep_)) {
            Vec acc = Vec::Zero(n_);
            for (size_t l = p->c.size(); l-- > static_cast<size_t>(k);)
                acc = acc * t + p->c[l] * factorial_ratio(static_cast<int>(l), k);
            return acc;
        }
        if (auto c = std::get_if<Callable>(&rep_)) {
            if (k > c->max_order) throw std::logic_error("callable vector: derivative order too high");
            return c->f(t, k);
        }
        const auto& s = std::get<Sampled>(rep_);
        if (k == 0) return hermite(s.t, s.v, s.d, t);
        if (k == 1) return hermite(s.t, s.v, s.d, t, true);
        VectorFunction d = sampled(s.t, s.d, fd_derivative(s.t, s.d));
        return d.deriv(t, k - 1);
    }
    Vec operator()(double t) const { return deriv(t, 0); }

private:
    VectorFunction(long n, Domain d, Rep r) : n_(n), domain_(d), rep_(std::move(r)) {}

    long n_ = 0;
    Domain domain_;
    Rep rep_ = Constant{Vec()};
};

} // namespace symode
