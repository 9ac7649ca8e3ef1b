#pragma once

#include <optional>
#include <string>
#include <vector>

#include "symode/gauge.hpp"

namespace symode {

// ---------------------------------------------------------------------------
// Symmetry vector fields

/// tau d_t + (eta x + chi) d_x. Without an explicit eta the field is in reduced
/// form, eta = tau_t E / 2 + gamma with constant gamma.
struct SymmetryField {
    ScalarFunction tau;
    Mat gamma;
    std::optional<MatrixFunction> eta;
    std::optional<VectorFunction> chi;

    long n() const { return eta ? eta->n() : gamma.rows(); }

    static SymmetryField reduced(ScalarFunction tau, Mat gamma) { return {std::move(tau), std::move(gamma), {}, {}}; }
    static SymmetryField general(ScalarFunction tau, MatrixFunction eta) {
        const long n = eta.n();
        return {std::move(tau), Mat::Zero(n, n), std::move(eta), {}};
    }

    Mat eta_at(double t, int k) const {
        if (eta) return eta->deriv_unchecked(t, k);
        const long m = gamma.rows();
        Mat out = 0.5 * tau.deriv(t, k + 1) * eye(m);
        if (k == 0) out += gamma;
        return out;
    }
};

/// Largest residual of the reduced classifying condition at the probe points.
inline double verify_symmetry(const MatrixFunction& V, const SymmetryField& q) {
    if (q.eta) throw InapplicableError("verify_symmetry: reduced systems need a constant-gamma field");
    const long n = V.n();
    double worst = 0;
    for (double t : probe_points(V.domain(), kProbeCount)) {
        const Mat v = V(t);
        const Mat r = q.tau(t) * V.deriv(t, 1) - commutator(q.gamma, v) + 2.0 * q.tau.deriv(t, 1) * v -
                      0.5 * q.tau.deriv(t, 3) * eye(n);
        worst = std::max(worst, r.norm());
    }
    return worst;
}

/// Classifying condition for (A, B) systems with a general eta.
inline double verify_symmetry(const System& sys, const SymmetryField& q) {
    if (sys.primed() && !q.eta) return verify_symmetry(sys.V(), q);
    const long n = sys.n();
    double worst = 0;
    for (double t : probe_points(sys.domain(), kProbeCount)) {
        const Mat a = sys.A(t), b = sys.B(t);
        const Mat e0 = q.eta_at(t, 0), e1 = q.eta_at(t, 1), e2 = q.eta_at(t, 2);
        const cplx tau = q.tau(t), t1 = q.tau.deriv(t, 1), t2 = q.tau.deriv(t, 2);
        const Mat ra = tau * sys.A.deriv(t, 1) - commutator(e0, a) + t1 * a - 2.0 * e1 + t2 * eye(n);
        const Mat rb = tau * sys.B.deriv(t, 1) - commutator(e0, b) + 2.0 * t1 * b + a * e1 - e2;
        worst = std::max({worst, ra.norm(), rb.norm()});
    }
    return worst;
}

inline ScalarFunction tau_bracket(const ScalarFunction& a, const ScalarFunction& b) {
    if (a.is_polynomial() && b.is_polynomial()) {
        const auto& p = a.poly().c;
        const auto& q = b.poly().c;
        std::vector<cplx> out(p.size() + q.size(), 0.0);
        for (size_t i = 0; i < p.size(); ++i)
            for (size_t j = 0; j < q.size(); ++j) {
                // p_i t^i * j q_j t^(j-1) - q_j t^j * i p_i t^(i-1)
                if (i + j >= 1) out[i + j - 1] += p[i] * q[j] * double(int(j) - int(i));
            }
        return ScalarFunction::polynomial(out);
    }
    return ScalarFunction::analytic(
        [a, b](double t, int k) -> cplx {
            cplx acc = 0;
            double binom = 1;
            for (int j = 0; j <= k; ++j) {
                acc += binom * (a.deriv(t, j) * b.deriv(t, k - j + 1) - b.deriv(t, j) * a.deriv(t, k - j + 1));
                binom = binom * (k - j) / (j + 1);
            }
            return acc;
        },
        3);
}

/// Lie bracket of vector fields tau d_t + eta x d_x; chi is dropped.
inline SymmetryField bracket(const SymmetryField& q1, const SymmetryField& q2) {
    require_same_dim(q1.n(), q2.n(), "bracket");
    const ScalarFunction tau = tau_bracket(q1.tau, q2.tau);
    if (!q1.eta && !q2.eta) return SymmetryField::reduced(tau, Mat(-commutator(q1.gamma, q2.gamma)));
    Domain d = q1.eta ? q1.eta->domain() : q2.eta->domain();
    auto eta = MatrixFunction::callable(
        q1.n(), d,
        [q1, q2](double t, int k) -> Mat {
            // derivatives of tau1 eta2' - tau2 eta1' - [eta1, eta2] by Leibniz
            Mat acc = Mat::Zero(q1.n(), q1.n());
            double binom = 1;
            for (int j = 0; j <= k; ++j) {
                acc += binom * (q1.tau.deriv(t, j) * q2.eta_at(t, k - j + 1) -
                                q2.tau.deriv(t, j) * q1.eta_at(t, k - j + 1) -
                                commutator(q1.eta_at(t, j), q2.eta_at(t, k - j)));
                binom = binom * (k - j) / (j + 1);
            }
            return acc;
        },
        1);
    return SymmetryField::general(tau, eta);
}

// ---------------------------------------------------------------------------
// Essential algebra

struct EssentialAlgebra {
    long n = 0;
    long k = 0;
    std::vector<SymmetryField> t_part; ///< k fields with independent tau
    SubspaceBasis s;                   ///< the ideal of pure matrix symmetries in sl(n)
    bool improper_shift = false;
    bool normalized = false; ///< t_part brought to P = d_t + Y, D = t d_t + L with [L, Y] = Y
    double gap = std::numeric_limits<double>::infinity();
    bool inconclusive = false;
    std::vector<std::string> notes;

    long dim_s() const { return s.dim(); }
    long dim_ess() const { return 1 + s.dim() + k; }
    long dim_total() const { return dim_ess() + 2 * n; }
};

namespace detail {

/// Scaled quadratic basis 1, s, s^2 with s = (t - mid) / half.
inline std::vector<ScalarFunction> quadratic_tau_basis(const Domain& d) {
    const double m = d.mid(), h = std::max(1e-12, 0.5 * d.length());
    std::vector<ScalarFunction> out;
    out.push_back(ScalarFunction::constant(1.0));
    out.push_back(ScalarFunction::polynomial({-m / h, 1.0 / h}));
    out.push_back(ScalarFunction::polynomial({m * m / (h * h), -2.0 * m / (h * h), 1.0 / (h * h)}));
    return out;
}

/// Solutions of tau''' = 4 u tau' for constant u.
inline std::vector<ScalarFunction> constant_trace_tau_basis(cplx u, const Domain& d, double tol) {
    if (std::abs(u) <= tol) return quadratic_tau_basis(d);
    const cplx lam = 2.0 * std::sqrt(u);
    const double m = d.mid();
    return {ScalarFunction::constant(1.0), ScalarFunction::exp_sum({std::exp(-lam * m)}, {lam}),
            ScalarFunction::exp_sum({std::exp(lam * m)}, {-lam})};
}

inline Mat sl_part(const Mat& g) { return g - (g.trace() / double(g.rows())) * eye(g.rows()); }

inline Mat off_subspace(const Mat& g, const SubspaceBasis& s) { return sl_part(g) - s.project(sl_part(g)); }

/// Largest-modulus entry made real and positive.
inline cplx dominant_phase(const Vec& v) {
    Eigen::Index i = 0;
    v.cwiseAbs().maxCoeff(&i);
    return v(i) / std::abs(v(i));
}

struct NullspaceSplit {
    Mat basis;  ///< columns z = (c_0, c_1, c_2, vec gamma), unscaled
    Mat c_block; ///< scaled c-rows of the orthonormal basis
    double gap = std::numeric_limits<double>::infinity();
};

inline NullspaceSplit scaled_nullspace(Mat sys, double rel_tol) {
    const long cols = sys.cols();
    Eigen::VectorXd scale(cols);
    for (long j = 0; j < cols; ++j) {
        const double nj = sys.col(j).norm();
        scale(j) = nj > 0 ? 1.0 / nj : 1.0;
        sys.col(j) *= scale(j);
    }
    const auto ns = nullspace(sys, rel_tol);
    NullspaceSplit out;
    out.gap = ns.gap();
    out.c_block = ns.basis.topRows(3);
    out.basis = scale.cast<cplx>().asDiagonal() * ns.basis;
    return out;
}

} // namespace detail

/// Turns the nullspace of the classifying system into an algebra description.
inline EssentialAlgebra assemble_algebra(long n, const detail::NullspaceSplit& ns,
                                         const std::vector<ScalarFunction>& tau_basis, SubspaceBasis s,
                                         const ToleranceConfig& cfg) {
    EssentialAlgebra alg;
    alg.n = n;
    alg.s = std::move(s);
    alg.gap = ns.gap;
    const long d = ns.basis.cols();
    const double ctol = std::sqrt(cfg.rank_tol);
    Eigen::JacobiSVD<Mat> svd(ns.c_block, Eigen::ComputeFullV);
    long k = 0;
    for (long i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > ctol) ++k;
    alg.k = k;
    for (long i = 0; i < k; ++i) {
        Vec z = ns.basis * svd.matrixV().col(i);
        const Vec c = z.head(3);
        z /= c(0) != 0.0 && std::abs(c(0)) >= 1e-3 * c.norm() ? c(0) : detail::dominant_phase(c) * c.norm();
        ScalarFunction tau;
        bool first = true;
        // tau = sum c_j basis_j, kept closed where possible
        std::vector<cplx> poly;
        std::vector<cplx> coef, rate;
        bool all_poly = true;
        for (int j = 0; j < 3; ++j) all_poly = all_poly && tau_basis[j].is_polynomial();
        if (all_poly) {
            for (int j = 0; j < 3; ++j) {
                const auto& pc = tau_basis[j].poly().c;
                if (poly.size() < pc.size()) poly.resize(pc.size(), 0.0);
                for (size_t l = 0; l < pc.size(); ++l) poly[l] += z(j) * pc[l];
            }
            for (auto& p : poly)
                if (std::abs(p) < 1e-13 * std::max(1.0, z.head(3).norm())) p = 0.0;
            tau = ScalarFunction::polynomial(poly);
        } else {
            for (int j = 0; j < 3; ++j) {
                const auto& b = tau_basis[j];
                if (b.is_polynomial()) {
                    coef.push_back(z(j) * b.poly().c[0]);
                    rate.push_back(0.0);
                } else {
                    for (size_t l = 0; l < b.exps().coef.size(); ++l) {
                        coef.push_back(z(j) * b.exps().coef[l]);
                        rate.push_back(b.exps().rate[l]);
                    }
                }
            }
            tau = ScalarFunction::exp_sum(coef, rate);
        }
        (void)first;
        const Mat gamma = detail::off_subspace(unvec(z.tail(n * n), n), alg.s);
        alg.t_part.push_back(SymmetryField::reduced(tau, gamma));
    }
    if (d != 1 + alg.s.dim() + k) {
        alg.inconclusive = true;
        alg.notes.push_back("nullspace dimension " + std::to_string(d) + " differs from 1 + dim s + k = " +
                            std::to_string(1 + alg.s.dim() + k));
    }
    return alg;
}

/// Brings a k=2 pair to P = d_t + Y, D = t d_t + L with L semisimple and [L, Y] = Y,
/// when the t-components allow it (constant and affine after recombination).
inline void normalize_pair(EssentialAlgebra& alg, const ToleranceConfig& cfg) {
    if (alg.k != 2) return;
    const long n = alg.n;
    SymmetryField q1 = alg.t_part[0], q2 = alg.t_part[1];
    if (!q1.tau.is_polynomial() || !q2.tau.is_polynomial()) {
        alg.notes.push_back("k=2 with non-polynomial t-components (improper t-shift invariance)");
        return;
    }
    auto coeffs = [](const ScalarFunction& f) {
        Eigen::Vector3cd c = Eigen::Vector3cd::Zero();
        for (size_t l = 0; l < f.poly().c.size() && l < 3; ++l) c(l) = f.poly().c[l];
        return c;
    };
    const Eigen::Vector3cd a = coeffs(q1.tau), b = coeffs(q2.tau);
    // P spans the derived algebra; its tau is the bracket of the two.
    SymmetryField p = bracket(q1, q2);
    const Eigen::Vector3cd pc = coeffs(p.tau);
    Eigen::Matrix<cplx, 3, 2> ab;
    ab << a, b;
    const Eigen::Vector2cd xy = ab.colPivHouseholderQr().solve(pc);
    if ((ab * xy - pc).norm() > cfg.residual_tol * std::max(1.0, pc.norm())) {
        alg.notes.push_back("t-components do not close under the bracket");
        alg.inconclusive = true;
        return;
    }
    // D = x q1 + y q2 with (x, y) so that [P, D] = P: coefficient a_P y - b_P x = 1.
    const cplx pa = xy(0), pb = xy(1);
    cplx x, y;
    if (std::abs(pa) >= std::abs(pb)) {
        x = 0.0;
        y = 1.0 / pa;
    } else {
        x = -1.0 / pb;
        y = 0.0;
    }
    const Eigen::Vector3cd dc = x * a + y * b;
    p.gamma = detail::off_subspace(p.gamma, alg.s);
    Mat dg = detail::off_subspace(x * q1.gamma + y * q2.gamma, alg.s);
    const bool standard = std::abs(pc(1)) + std::abs(pc(2)) <= 1e-9 * std::abs(pc(0)) && std::abs(dc(2)) <= 1e-9 &&
                          std::abs(dc(1)) > 1e-9;
    if (!standard) {
        alg.t_part = {p, SymmetryField::reduced(ScalarFunction::polynomial({dc(0), dc(1), dc(2)}), dg)};
        alg.notes.push_back("k=2 pair kept in solver coordinates (P has a finite double root)");
        return;
    }
    // P = d_t + Y, D = t d_t + L after rescaling and shifting by P.
    const cplx p0 = pc(0);
    Mat ups = p.gamma / p0;
    Mat dgam = (dg - (dc(0) / p0) * p.gamma) / dc(1);
    Mat lam = detail::sl_part(0.5 * eye(n) + dgam);
    const auto jc = jordan_chevalley(lam, cfg);
    if (alg.s.contains(jc.nilpotent, std::sqrt(cfg.rank_tol))) lam = jc.semisimple;
    try {
        const auto hc = hat_check_split(ups, lam, cfg);
        if (alg.s.contains(hc.check, std::sqrt(cfg.rank_tol))) ups = hc.hat;
    } catch (const InapplicableError&) {
        alg.notes.push_back("Lambda has no semisimple representative modulo s");
    }
    // lowest eigenvalue shifted to zero
    const auto cl = eig_clustered(lam, cfg);
    cplx lowest = cl.front().value;
    for (const auto& c : cl)
        if (c.value.real() < lowest.real()) lowest = c.value;
    lam -= lowest * eye(n);
    alg.t_part = {SymmetryField::reduced(ScalarFunction::constant(1.0), ups),
                  SymmetryField::reduced(ScalarFunction::identity(), lam - 0.5 * eye(n))};
    const double rel = (commutator(lam, ups) - ups).norm();
    alg.normalized = rel <= cfg.residual_tol * std::max(1.0, ups.norm());
    if (!alg.normalized) alg.notes.push_back("[L, Y] = Y holds only modulo s");
}

namespace detail {

/// Rows of  sum_j c_j (tau_j W' + 2 tau_j' W) + [W, Gamma] = 0  at one probe point.
inline Mat probe_rows(const Mat& w, const Mat& w1, const std::vector<ScalarFunction>& tb, double t) {
    const long n = w.rows();
    Mat rows(n * n, 3 + n * n);
    for (int j = 0; j < 3; ++j) rows.col(j) = vec(tb[j](t) * w1 + 2.0 * tb[j].deriv(t, 1) * w);
    rows.rightCols(n * n) = ad_matrix(w);
    const double sc = std::max({w.norm(), w1.norm(), 1e-300});
    return rows / sc;
}

inline SubspaceBasis probe_centralizer(long n, const std::vector<Mat>& values, const ToleranceConfig& cfg,
                                       double rank_tol) {
    ToleranceConfig c = cfg;
    c.rank_tol = rank_tol;
    // Compress the probe values to an independent set first.
    return centralizer_basis(n, span_of(n, values, rank_tol).elems, true, c);
}

} // namespace detail

/// Exact coefficient matching for polynomial V with tau of degree at most 2.
inline EssentialAlgebra solve_symmetries_poly(const MatrixFunction& V, const ToleranceConfig& cfg) {
    const long n = V.n();
    std::vector<Mat> coef;
    if (V.is<MatrixFunction::Constant>()) coef = {V.as<MatrixFunction::Constant>().m};
    else if (V.is<MatrixFunction::Polynomial>()) coef = V.as<MatrixFunction::Polynomial>().c;
    else throw InapplicableError("polynomial solver needs a constant or polynomial V");
    const long d = static_cast<long>(coef.size()) - 1;
    std::vector<Mat> w;
    std::vector<cplx> u;
    double wnorm = 0, scale = 0;
    for (const auto& c : coef) {
        u.push_back(c.trace() / double(n));
        w.push_back(c - u.back() * eye(n));
        wnorm = std::max(wnorm, w.back().norm());
        scale = std::max(scale, c.norm());
    }
    if (wnorm <= cfg.residual_tol * std::max(1.0, scale))
        throw InapplicableError("singular class; use singular path");
    bool has_trace = false;
    bool trace_constant = true;
    for (long p = 0; p <= d; ++p) {
        if (std::abs(u[p]) > 0) has_trace = true;
        if (p > 0 && std::abs(u[p]) > cfg.rank_tol * std::max(1.0, scale)) trace_constant = false;
    }
    auto W = [&](long p) -> Mat { return p < 0 || p > d ? Mat(Mat::Zero(n, n)) : w[p]; };
    auto U = [&](long p) -> cplx { return p < 0 || p > d ? cplx(0.0) : u[p]; };
    const long blocks = d + 2;
    Mat sys = Mat::Zero(blocks * n * n + (has_trace ? blocks : 0), 3 + n * n);
    for (long p = 0; p <= d + 1; ++p) {
        auto rows = sys.middleRows(p * n * n, n * n);
        rows.col(0) = double(p + 1) * vec(W(p + 1));
        rows.col(1) = double(p + 2) * vec(W(p));
        rows.col(2) = double(p + 3) * vec(W(p - 1));
        rows.rightCols(n * n) = ad_matrix(W(p));
        if (has_trace) {
            const long r = blocks * n * n + p;
            sys(r, 0) = double(p + 1) * U(p + 1);
            sys(r, 1) = double(p + 2) * U(p);
            sys(r, 2) = double(p + 3) * U(p - 1);
        }
    }
    const auto ns = detail::scaled_nullspace(sys, cfg.rank_tol);
    const std::vector<ScalarFunction> tb{ScalarFunction::constant(1.0), ScalarFunction::identity(),
                                         ScalarFunction::polynomial({0.0, 0.0, 1.0})};
    auto alg = assemble_algebra(n, ns, tb, centralizer_basis(n, w, true, cfg), cfg);
    if (has_trace && !trace_constant)
        alg.notes.push_back("non-constant trace: t-components restricted to degree <= 2");
    normalize_pair(alg, cfg);
    return alg;
}

/// Probe-point discretization of the classifying condition for a traceless V,
/// or for V with a given basis of admissible t-components.
inline EssentialAlgebra solve_symmetries_sampled(const MatrixFunction& V, const ToleranceConfig& cfg,
                                                 std::optional<std::vector<ScalarFunction>> tau_basis = {}) {
    const long n = V.n();
    const Domain d = V.domain();
    const auto tb = tau_basis ? *tau_basis : detail::quadratic_tau_basis(d);
    const auto probes = probe_points(d, kProbeCount);
    Mat sys(static_cast<long>(probes.size()) * n * n, 3 + n * n);
    std::vector<Mat> values;
    double vmax = 0, scale = 0;
    for (size_t i = 0; i < probes.size(); ++i) {
        const double t = probes[i];
        const Mat v = V(t), v1 = V.deriv(t, 1);
        const Mat w = detail::sl_part(v), w1 = detail::sl_part(v1);
        values.push_back(w);
        vmax = std::max(vmax, w.norm());
        scale = std::max(scale, v.norm());
        sys.middleRows(static_cast<long>(i) * n * n, n * n) = detail::probe_rows(w, w1, tb, t);
    }
    if (vmax <= cfg.residual_tol * std::max(1.0, scale)) throw InapplicableError("singular class; use singular path");
    const bool exact = V.is_closed_form() && !V.is<MatrixFunction::Sampled>();
    const double tol = exact ? std::max(cfg.rank_tol, 1e-11) : std::sqrt(cfg.rank_tol);
    const auto ns = detail::scaled_nullspace(sys, tol);
    auto alg = assemble_algebra(n, ns, tb, detail::probe_centralizer(n, values, cfg, tol), cfg);
    if (ns.gap < 10.0) {
        alg.inconclusive = true;
        alg.notes.push_back("singular-value gap " + std::to_string(ns.gap) + " below 10");
    }
    normalize_pair(alg, cfg);
    return alg;
}

/// V = eps E + exp(t Y) W exp(-t Y): P = d_t + Y is known; s is the centralizer of
/// the K-sequence; a second t-component is searched among the admissible ones.
inline EssentialAlgebra classify_structured(cplx eps, const Mat& upsilon, const Mat& w, const Domain& dom,
                                            const ToleranceConfig& cfg) {
    const long n = w.rows();
    const Mat ups0 = detail::sl_part(upsilon);
    const cplx u = eps + w.trace() / double(n);
    const Mat w0 = detail::sl_part(w);
    if (w0.norm() <= cfg.residual_tol * std::max(1.0, w.norm()))
        throw InapplicableError("singular class; use singular path");
    const auto ks = kl_sequence(ups0, w0, cfg);
    SubspaceBasis s = centralizer_basis(n, ks, true, cfg);
    const auto V0 = MatrixFunction::conj_exp(0.0, ups0, w0, dom);
    const double utol = cfg.residual_tol * std::max(1.0, w0.norm());
    auto tb = detail::constant_trace_tau_basis(u, dom, utol);
    // Keep the exponentials moderate: probe on a window of unit length around the midpoint.
    const double half = std::min(0.5 * dom.length(), 0.5 / std::max(1.0, ups0.norm() + std::sqrt(std::abs(u))));
    const Domain win{dom.mid() - half, dom.mid() + half};
    auto probe_alg = solve_symmetries_sampled(V0.with_domain(win), cfg, tb);

    EssentialAlgebra alg;
    alg.n = n;
    alg.s = s;
    alg.k = probe_alg.k;
    alg.gap = probe_alg.gap;
    alg.notes = probe_alg.notes;
    alg.inconclusive = probe_alg.inconclusive;
    if (probe_alg.s.dim() != s.dim()) {
        alg.notes.push_back("probe centralizer dimension differs from the K-sequence centralizer");
        alg.inconclusive = true;
    }
    if (alg.k < 1) {
        alg.notes.push_back("probe solver lost the shift symmetry");
        alg.inconclusive = true;
        alg.k = 1;
    }
    if (alg.k == 1) {
        alg.t_part = {SymmetryField::reduced(ScalarFunction::constant(1.0), detail::off_subspace(ups0, s))};
    } else {
        alg.t_part = probe_alg.t_part;
        alg.normalized = probe_alg.normalized;
        alg.improper_shift = std::abs(u) > utol;
        // Cross-check with the algebraic test when the trace vanishes.
        if (!alg.improper_shift) {
            const Mat next = commutator(ups0, ks.back());
            bool terminates = next.norm() <= cfg.residual_tol * std::max(1.0, ks.back().norm());
            Mat stacked(static_cast<long>(ks.size()) * n * n, n * n);
            Vec rhs(stacked.rows());
            for (size_t l = 0; l < ks.size(); ++l) {
                stacked.middleRows(static_cast<long>(l) * n * n, n * n) = -ad_matrix(ks[l]);
                rhs.segment(static_cast<long>(l) * n * n, n * n) = -double(l + 2) * vec(ks[l]);
            }
            // [L, K] = -ad(K) vec L
            const Vec sol = stacked.colPivHouseholderQr().solve(rhs);
            const bool solvable = (stacked * sol - rhs).norm() <= cfg.residual_tol * std::max(1.0, rhs.norm());
            if (!(terminates && solvable)) {
                alg.notes.push_back("probe solver found k=2 but the K-sequence test disagrees");
                alg.inconclusive = true;
            }
        }
    }
    if (alg.k == 2 && alg.improper_shift) alg.notes.push_back("improper t-shift invariance");
    return alg;
}

// ---------------------------------------------------------------------------
// n = 2 labels

enum class Sl2Type { zero, nilpotent, split, complex_pair };

inline Sl2Type sl2_type(const Mat& g, Field field, double tol) {
    const Mat m = detail::sl_part(g);
    const double nm = m.norm();
    if (nm <= tol) return Sl2Type::zero;
    Mat mn = m / nm;
    const cplx ph = detail::dominant_phase(vec(mn));
    mn /= ph;
    const cplx det = mn.determinant();
    if (std::abs(det) <= std::sqrt(tol)) return Sl2Type::nilpotent;
    if (field == Field::complex) return Sl2Type::split;
    return det.real() < 0 ? Sl2Type::split : Sl2Type::complex_pair;
}

inline std::string label_case_n2(const EssentialAlgebra& alg, Field field, const ToleranceConfig& cfg) {
    if (alg.n != 2) throw InapplicableError("case labels exist for n = 2 only");
    const double tol = std::sqrt(cfg.rank_tol);
    auto sub = [&](Sl2Type t, const char* nil, const char* split, const char* cpx) -> std::string {
        switch (t) {
        case Sl2Type::nilpotent: return nil;
        case Sl2Type::split: return split;
        case Sl2Type::complex_pair: return cpx;
        default: throw NumericalError("outside n=2 table: vanishing generator");
        }
    };
    const long ds = alg.dim_s();
    if (alg.k == 0 && ds == 0) return "0";
    if (alg.k == 0 && ds == 1) return sub(sl2_type(alg.s.elems[0], field, tol), "1", "2", "1R");
    if (alg.k == 1 && ds == 0) return sub(sl2_type(alg.t_part[0].gamma, field, tol), "3", "4", "3R");
    if (alg.k == 1 && ds == 1) return sub(sl2_type(alg.s.elems[0], field, tol), "5", "6", "5R");
    if (alg.k == 2 && ds == 1) return "7";
    throw NumericalError("outside n=2 table: k=" + std::to_string(alg.k) + ", dim s=" + std::to_string(ds));
}

/// Reference (k, dim_ess) per label.
inline std::pair<long, long> n2_reference(const std::string& label) {
    static const std::vector<std::pair<std::string, std::pair<long, long>>> table{
        {"0", {0, 1}}, {"1", {0, 2}}, {"2", {0, 2}}, {"3", {1, 2}}, {"4", {1, 2}}, {"5", {1, 3}},
        {"6", {1, 3}}, {"7", {2, 4}}, {"1R", {0, 2}}, {"3R", {1, 2}}, {"5R", {1, 3}}};
    for (const auto& [l, v] : table)
        if (l == label) return v;
    throw std::invalid_argument("unknown case label " + label);
}

// ---------------------------------------------------------------------------
// Dispatcher

struct ClassificationReport {
    long n = 0;
    Field field = Field::complex;
    bool singular = false;
    long dim_total = 0;
    std::optional<EssentialAlgebra> algebra;
    std::string case_label;
    std::string path;
    std::vector<std::string> notes;
    double gauge_residual = 0.0;

    long k() const { return algebra ? algebra->k : 0; }
    long dim_s() const { return algebra ? algebra->dim_s() : 0; }
    long dim_ess() const { return algebra ? algebra->dim_ess() : dim_total - 2 * n; }
};

namespace detail {

inline bool constant_trace_polynomial(const MatrixFunction& V, const ToleranceConfig& cfg) {
    if (V.is<MatrixFunction::Constant>()) return true;
    if (!V.is<MatrixFunction::Polynomial>()) return false;
    const auto& c = V.as<MatrixFunction::Polynomial>().c;
    for (size_t l = 1; l < c.size(); ++l)
        if (std::abs(c[l].trace()) > cfg.rank_tol * std::max(1.0, c[l].norm())) return false;
    return true;
}

} // namespace detail

inline ClassificationReport classify(const System& sys, const ToleranceConfig& cfg, bool verify_gauges = false) {
    ClassificationReport rep;
    rep.n = sys.n();
    rep.field = sys.field;
    const long n = rep.n;
    if (singular_class_test(sys, cfg)) {
        rep.singular = true;
        rep.dim_total = (n + 2) * (n + 2) - 1;
        rep.path = "singular";
        rep.notes.push_back("free-particle orbit: algebra isomorphic to sl(n+2)");
        return rep;
    }
    System work = sys;
    if (!work.f.is_zero()) {
        work = System::make(SystemClass::L, work.A, work.B, VectorFunction::zero(n, work.domain()), work.field,
                            work.domain());
        rep.notes.push_back("f ignored: inhomogeneity only shifts solutions");
    }
    if (!work.primed()) {
        const auto g = gauge_A_zero(work, cfg);
        if (verify_gauges && !g.transform.is_identity())
            rep.gauge_residual = std::max(rep.gauge_residual, verify_equivalence(work, g.system, g.transform, cfg));
        work = g.system;
    }
    const MatrixFunction& V = work.V();
    if (V.is<MatrixFunction::ConjExp>()) {
        const auto& c = V.as<MatrixFunction::ConjExp>();
        rep.algebra = classify_structured(c.eps, c.ups, c.w, V.domain(), cfg);
        rep.path = "structured";
    } else if (V.is<MatrixFunction::Constant>() || V.is<MatrixFunction::Polynomial>()) {
        rep.algebra = solve_symmetries_poly(V, cfg);
        rep.path = "polynomial";
    } else {
        EssentialAlgebra alg;
        try {
            const auto g = gauge_traceless(work, cfg);
            if (verify_gauges && !g.transform.is_identity())
                rep.gauge_residual = std::max(rep.gauge_residual, verify_equivalence(work, g.system, g.transform, cfg));
            if (!g.transform.is_identity()) rep.notes.push_back("traceless gauge: " + g.note);
            alg = solve_symmetries_sampled(g.system.V(), cfg);
        } catch (const InapplicableError& e) {
            if (std::string(e.what()).find("singular") != std::string::npos) throw;
            rep.notes.push_back(std::string("traceless gauge skipped: ") + e.what());
            const auto split = trace_split(V);
            std::vector<ScalarFunction> tb;
            bool constant = true;
            const cplx u0 = split.u(V.domain().mid());
            for (double t : probe_points(V.domain(), 16))
                if (std::abs(split.u(t) - u0) > cfg.residual_tol * std::max(1.0, std::abs(u0))) constant = false;
            if (!constant) throw;
            alg = solve_symmetries_sampled(V, cfg, detail::constant_trace_tau_basis(u0, V.domain(), cfg.residual_tol));
        }
        rep.algebra = alg;
        rep.path = "sampled";
    }
    for (const auto& note : rep.algebra->notes) rep.notes.push_back(note);
    rep.dim_total = rep.algebra->dim_total();
    if (n == 2) rep.case_label = label_case_n2(*rep.algebra, sys.field, cfg);
    return rep;
}

// ---------------------------------------------------------------------------
// Similarity of t-shift-invariant systems

enum class SimilarityOutcome { similar, not_similar, inconclusive };

inline const char* to_string(SimilarityOutcome o) {
    switch (o) {
    case SimilarityOutcome::similar: return "similar";
    case SimilarityOutcome::not_similar: return "not_similar";
    default: return "inconclusive";
    }
}

struct SimilarityVerdict {
    SimilarityOutcome outcome = SimilarityOutcome::inconclusive;
    cplx alpha = 1.0;
    Mat M;
    Mat Gamma;
    double residual = std::numeric_limits<double>::infinity();
    std::string reason;
};

struct ShiftInvariantPair {
    Mat upsilon;
    Mat v0;
};

namespace detail {

inline double witness_residual(const ShiftInvariantPair& a, const ShiftInvariantPair& b, cplx alpha, const Mat& M,
                               const Mat& G) {
    const Mat Mi = M.inverse();
    const double r1 = (b.upsilon - alpha * M * (a.upsilon + G) * Mi).norm();
    const double r2 = (b.v0 - alpha * alpha * M * a.v0 * Mi).norm();
    return (r1 + r2) / (1.0 + b.upsilon.norm() + b.v0.norm());
}

struct Invariant {
    int weight;
    cplx a;
    cplx b;
};

// tr(K_i K_j) scales with alpha^(i+j+4); traces of powers of V(0) with alpha^(2p).
inline std::vector<Invariant> invariants(const std::vector<Mat>& ka, const std::vector<Mat>& kb, const Mat& va,
                                         const Mat& vb) {
    std::vector<Invariant> out;
    const long n = va.rows();
    Mat pa = eye(n), pb = eye(n);
    for (long p = 1; p <= n; ++p) {
        pa = pa * va;
        pb = pb * vb;
        out.push_back({int(2 * p), pa.trace(), pb.trace()});
    }
    for (size_t i = 0; i < ka.size(); ++i)
        for (size_t j = i; j < ka.size(); ++j)
            if (i + j > 0) out.push_back({int(i + j + 4), (ka[i] * ka[j]).trace(), (kb[i] * kb[j]).trace()});
    return out;
}

inline bool spectra_match(const Mat& va, const Mat& vb, cplx alpha2, const ToleranceConfig& cfg) {
    const long n = va.rows();
    Eigen::ComplexEigenSolver<Mat> ea(va), eb(vb);
    std::vector<cplx> la(ea.eigenvalues().data(), ea.eigenvalues().data() + n);
    std::vector<cplx> lb(eb.eigenvalues().data(), eb.eigenvalues().data() + n);
    std::vector<bool> used(n, false);
    const double tol = std::sqrt(cfg.eig_cluster_tol) * std::max(1.0, vb.norm());
    for (const auto& x : la) {
        long best = -1;
        double bd = tol;
        for (long j = 0; j < n; ++j)
            if (!used[j] && std::abs(alpha2 * x - lb[j]) <= bd) {
                bd = std::abs(alpha2 * x - lb[j]);
                best = j;
            }
        if (best < 0) return false;
        used[best] = true;
    }
    return true;
}

} // namespace detail

/// Searches (alpha, M, Gamma) with  Y_b = alpha M (Y_a + Gamma) M^-1,  V_b(0) = alpha^2 M V_a(0) M^-1.
inline SimilarityVerdict similar_structured(const ShiftInvariantPair& a, const ShiftInvariantPair& b,
                                            const ToleranceConfig& cfg, std::uint64_t seed = 1) {
    const long n = a.v0.rows();
    require_same_dim(b.v0.rows(), n, "similar_structured");
    SimilarityVerdict out;
    const double wtol = std::min(1e-8, cfg.residual_tol);
    // K-sequences with K_0 = V(0); the lists are compared term by term.
    auto kseq = [&](const ShiftInvariantPair& p) {
        std::vector<Mat> k{p.v0};
        for (long l = 0; l < n * n; ++l) k.push_back(commutator(p.upsilon, k.back()));
        return k;
    };
    const auto ka = kseq(a), kb = kseq(b);
    const auto ka_ind = kl_sequence(a.upsilon, a.v0, cfg), kb_ind = kl_sequence(b.upsilon, b.v0, cfg);
    if (ka_ind.size() != kb_ind.size()) {
        out.outcome = SimilarityOutcome::not_similar;
        out.reason = "K-sequences span spaces of different dimension";
        return out;
    }
    const long m = static_cast<long>(ka_ind.size());
    const auto inv = detail::invariants(std::vector<Mat>(ka.begin(), ka.begin() + m + 1),
                                        std::vector<Mat>(kb.begin(), kb.begin() + m + 1), a.v0, b.v0);
    auto small = [&](cplx x, double ref) { return std::abs(x) <= 1e-9 * std::max(1.0, ref); };
    double ref = 1.0;
    for (const auto& i : inv) ref = std::max({ref, std::abs(i.a), std::abs(i.b)});
    // Candidate scalings from the lowest-weight invariant that does not vanish.
    std::vector<cplx> cands;
    const detail::Invariant* lead = nullptr;
    for (const auto& i : inv) {
        const double r = std::pow(ref, double(i.weight) / inv.back().weight);
        if (small(i.a, r) != small(i.b, r)) {
            out.outcome = SimilarityOutcome::not_similar;
            out.reason = "invariant of weight " + std::to_string(i.weight) + " vanishes for one system only";
            return out;
        }
        if (!small(i.a, r) && (!lead || i.weight < lead->weight)) lead = &i;
    }
    if (lead) {
        const cplx ratio = lead->b / lead->a;
        const double mag = std::pow(std::abs(ratio), 1.0 / lead->weight);
        for (int j = 0; j < lead->weight; ++j)
            cands.push_back(std::polar(mag, (std::arg(ratio) + 2 * M_PI * j) / lead->weight));
    } else {
        Eigen::ComplexEigenSolver<Mat> ea(a.upsilon), eb(b.upsilon);
        cands.push_back(1.0);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j)
                if (std::abs(ea.eigenvalues()(i)) > 1e-9) cands.push_back(eb.eigenvalues()(j) / ea.eigenvalues()(i));
    }
    // Filter by the remaining invariants and by the spectrum of V(0).
    std::vector<cplx> alive;
    for (const auto& al : cands) {
        if (std::abs(al) < 1e-12) continue;
        bool ok = true;
        for (const auto& i : inv)
            if (std::abs(std::pow(al, i.weight) * i.a - i.b) > 1e-6 * std::max(1.0, std::abs(i.b))) ok = false;
        if (ok && detail::spectra_match(a.v0, b.v0, al * al, cfg)) alive.push_back(al);
    }
    std::sort(alive.begin(), alive.end(), [](cplx x, cplx y) {
        const double ax = std::abs(std::arg(x)), ay = std::abs(std::arg(y));
        return ax != ay ? ax < ay : std::abs(x) < std::abs(y);
    });
    if (alive.empty()) {
        out.outcome = SimilarityOutcome::not_similar;
        out.reason = "no scaling alpha matches the invariants and the spectrum of V(0)";
        return out;
    }
    const SubspaceBasis s = centralizer_basis(n, ka_ind, true, cfg);
    const long nn = n * n;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& al : alive) {
        // M with K_b,l M = alpha^(l+2) M K_a,l
        Mat lin((m + 1) * nn, nn);
        for (long l = 0; l <= m; ++l)
            lin.middleRows(l * nn, nn) = Eigen::kroneckerProduct(eye(n), kb[l]) -
                                         std::pow(al, double(l + 2)) * Eigen::kroneckerProduct(ka[l].transpose(), eye(n));
        auto solve_m = [&](const Mat& gamma) -> std::optional<Mat> {
            Mat full(lin.rows() + nn, nn);
            full << lin, Mat(Eigen::kroneckerProduct(eye(n), b.upsilon) -
                             al * Eigen::kroneckerProduct(Mat((a.upsilon + gamma).transpose()), eye(n)));
            const auto ns = nullspace(full, 1e-9);
            if (ns.basis.cols() == 0) return std::nullopt;
            std::vector<Mat> basis;
            for (long c = 0; c < ns.basis.cols(); ++c) basis.push_back(unvec(ns.basis.col(c), n));
            return invertible_in_affine_space(basis, Mat::Zero(n, n), cfg, rng());
        };
        auto accept = [&](const Mat& M, const Mat& G) {
            const double r = detail::witness_residual(a, b, al, M, G);
            best = std::min(best, r);
            if (r < wtol) {
                out.outcome = SimilarityOutcome::similar;
                out.alpha = al;
                out.M = M;
                out.Gamma = G;
                out.residual = r;
                return true;
            }
            return false;
        };
        if (s.dim() == 0) {
            if (auto M = solve_m(Mat::Zero(n, n)); M && accept(*M, Mat::Zero(n, n))) return out;
            continue;
        }
        // Alternate between Gamma in s (least squares) and M (nullspace).
        const auto mspace = nullspace(lin, 1e-9);
        if (mspace.basis.cols() == 0) continue;
        for (int start = 0; start < 8; ++start) {
            Vec coef(mspace.basis.cols());
            for (long c = 0; c < coef.size(); ++c) coef(c) = cplx(g(rng), g(rng));
            Mat M = unvec(mspace.basis * coef, n);
            Mat G = Mat::Zero(n, n);
            for (int it = 0; it < 40; ++it) {
                if (std::abs(M.determinant()) < 1e-12 * std::pow(std::max(1e-300, M.norm()), double(n))) break;
                // alpha M G = Y_b M - alpha M Y_a, G in span(s)
                Mat lsq(nn, s.dim());
                for (long j = 0; j < s.dim(); ++j) lsq.col(j) = vec(al * M * s.elems[j]);
                const Vec rhs = vec(b.upsilon * M - al * M * a.upsilon);
                const Vec gc = lsq.colPivHouseholderQr().solve(rhs);
                G = Mat::Zero(n, n);
                for (long j = 0; j < s.dim(); ++j) G += gc(j) * s.elems[j];
                if (accept(M, G)) return out;
                if (auto Mn = solve_m(G)) {
                    if (accept(*Mn, G)) return out;
                    M = *Mn;
                } else {
                    // least-squares M in the K-space for this Gamma
                    Mat full(nn, mspace.basis.cols());
                    const Mat op = Eigen::kroneckerProduct(eye(n), b.upsilon) -
                                   al * Eigen::kroneckerProduct(Mat((a.upsilon + G).transpose()), eye(n));
                    full = op * mspace.basis;
                    Eigen::JacobiSVD<Mat> svd(full, Eigen::ComputeFullV);
                    M = unvec(mspace.basis * svd.matrixV().col(svd.matrixV().cols() - 1), n);
                }
            }
        }
    }
    out.outcome = SimilarityOutcome::inconclusive;
    out.residual = best;
    out.reason = "no verified witness found";
    return out;
}

/// Constant-coefficient systems: Y = -A/2, V(0) = B + Y^2. The witness is returned in
/// the (A, B) form: Gamma-check = -2 Gamma.
inline SimilarityVerdict similar_constant_coeff(const Mat& A, const Mat& B, const Mat& At, const Mat& Bt,
                                                const ToleranceConfig& cfg, std::uint64_t seed = 1) {
    const Mat ya = -0.5 * A, yb = -0.5 * At;
    auto v = similar_structured({ya, B + ya * ya}, {yb, Bt + yb * yb}, cfg, seed);
    if (v.outcome == SimilarityOutcome::similar) v.Gamma = -2.0 * v.Gamma;
    return v;
}

} // namespace symode
