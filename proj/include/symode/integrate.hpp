#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "symode/symalg.hpp"

namespace symode {

/// Fundamental solutions on a uniform grid: columns of x are 2n independent solutions.
struct SolutionSet {
    long n = 0;
    Domain dom;
    std::vector<double> t;
    std::vector<Mat> x;  ///< n x 2n positions
    std::vector<Mat> xt; ///< n x 2n velocities
    std::optional<std::vector<Vec>> xp, xpt;
    std::string method;
    int quadratures = 0;
    std::vector<std::string> notes;

    Mat state(size_t i) const {
        Mat s(2 * n, 2 * n);
        s << x[i], xt[i];
        return s;
    }

    /// Smallest |det| of the stacked state relative to the product of its column norms.
    double min_wronskian() const {
        double worst = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < t.size(); ++i) {
            const Mat s = state(i);
            double prod = 1;
            for (long c = 0; c < s.cols(); ++c) prod *= std::max(1e-300, s.col(c).norm());
            worst = std::min(worst, std::abs(s.determinant()) / prod);
        }
        return worst;
    }
};

enum class Procedure { singular, one_symmetry, two_symmetry, constant_direct };

inline const char* to_string(Procedure p) {
    switch (p) {
    case Procedure::singular: return "singular";
    case Procedure::one_symmetry: return "one_symmetry";
    case Procedure::two_symmetry: return "two_symmetry";
    default: return "constant_direct";
    }
}

struct IntegrationPlan {
    Procedure tag = Procedure::constant_direct;
    std::vector<Mat> H;
    std::vector<cplx> T;
    Mat A_const, B_const;
    double constancy = 0.0; ///< largest relative drift of the straightened coefficients
    Mat Lambda, modal;
    std::vector<long> block_sizes; ///< generalized eigenspaces of Lambda
    std::vector<long> chain_sizes;
    double block_residual = 0.0; ///< largest entry outside the permitted blocks
    long elementary_divisors = 0;
    long distinct_eigenvalues = 0;
    std::optional<int> quadrature_bound;
};

struct Integration {
    SolutionSet solution;
    IntegrationPlan plan;
};

// ---------------------------------------------------------------------------
// Residual

/// Defect of (x, x_t) samples as a first-order system, with five-point differences.
inline double residual(const System& sys, const std::vector<double>& t, const std::vector<Vec>& x,
                       const std::vector<Vec>& xt) {
    if (t.size() < 8) throw std::invalid_argument("residual: grid needs at least 8 points");
    const auto dx = fd_derivative(t, x);
    const auto dv = fd_derivative(t, xt);
    double scale = 1e-300, worst = 0;
    for (size_t i = 0; i < t.size(); ++i) scale = std::max({scale, x[i].norm(), xt[i].norm()});
    for (size_t i = 2; i + 2 < t.size(); ++i) {
        const Vec r1 = dx[i] - xt[i];
        const Vec r2 = dv[i] - sys.accel(t[i], x[i], xt[i]);
        worst = std::max({worst, r1.norm(), r2.norm()});
    }
    return worst / scale;
}

/// Positions only: both derivatives by differences.
inline double residual(const System& sys, const std::vector<double>& t, const std::vector<Vec>& x) {
    if (t.size() < 8) throw std::invalid_argument("residual: grid needs at least 8 points");
    return residual(sys, t, x, fd_derivative(t, x));
}

/// Worst column of a solution set, plus the particular solution when present.
inline double residual(const System& sys, const SolutionSet& sol) {
    const System hom = System::make(SystemClass::L, sys.A, sys.B, VectorFunction::zero(sys.n(), sys.domain()),
                                    sys.field, sol.dom);
    double worst = 0;
    for (long c = 0; c < 2 * sol.n; ++c) {
        std::vector<Vec> x, v;
        for (size_t i = 0; i < sol.t.size(); ++i) {
            x.push_back(sol.x[i].col(c));
            v.push_back(sol.xt[i].col(c));
        }
        worst = std::max(worst, residual(hom, sol.t, x, v));
    }
    if (sol.xp) {
        const System inh = System::make(sys.cls, sys.A, sys.B, sys.f, sys.field, sol.dom);
        worst = std::max(worst, residual(inh, sol.t, *sol.xp, *sol.xpt));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Constant coefficients

inline Mat companion(const Mat& A, const Mat& B) {
    const long n = A.rows();
    Mat c = Mat::Zero(2 * n, 2 * n);
    c.topRightCorner(n, n) = eye(n);
    c.bottomLeftCorner(n, n) = B;
    c.bottomRightCorner(n, n) = A;
    return c;
}

inline Integration solve_constant(const Mat& A, const Mat& B, const Domain& dom, const ToleranceConfig& cfg) {
    require_same_dim(A.rows(), B.rows(), "solve_constant");
    const long n = A.rows();
    const Mat c = companion(A, B);
    Integration out;
    auto& s = out.solution;
    s.n = n;
    s.dom = dom;
    s.t = uniform_grid(dom, cfg.ode_steps);
    for (double t : s.t) {
        const Mat phi = matrix_exp(c * (t - dom.lo));
        s.x.push_back(phi.topRows(n));
        s.xt.push_back(phi.bottomRows(n));
    }
    s.method = "constant coefficients: exponential of the companion matrix";
    out.plan.tag = Procedure::constant_direct;
    out.plan.A_const = A;
    out.plan.B_const = B;
    return out;
}

namespace detail {

/// Straightened coefficients at each node for a transform with T_t = 1/tau and tau H_t + H eta = 0.
struct Straightened {
    Mat A, B;
    double drift = 0;
};

inline Straightened straighten(const System& sys, const std::function<cplx(double, int)>& tau,
                               const std::function<Mat(double, int)>& eta, const std::vector<double>& t,
                               const std::vector<Mat>& H) {
    std::vector<Mat> as, bs;
    for (size_t i = 0; i < t.size(); ++i) {
        const double ti = t[i];
        const cplx ta = tau(ti, 0), ta1 = tau(ti, 1);
        const Mat e = eta(ti, 0), e1 = eta(ti, 1);
        const Mat& h = H[i];
        const Mat ht = -h * e / ta;
        const Mat htt = -(ht * e + h * e1) / ta + h * e * ta1 / (ta * ta);
        const cplx Tt = 1.0 / ta, Ttt = -ta1 / (ta * ta);
        const Mat hi = h.inverse();
        const Mat a = (Tt * h * sys.A(ti) + 2.0 * Tt * ht - Ttt * h) * hi / (Tt * Tt);
        const Mat b = (Tt * h * sys.B(ti) - Tt * Tt * a * ht + Tt * htt - Ttt * ht) * hi / (Tt * Tt * Tt);
        as.push_back(a);
        bs.push_back(b);
    }
    const size_t mid = t.size() / 2;
    Straightened out{as[mid], bs[mid], 0.0};
    for (size_t i = 0; i < t.size(); ++i)
        out.drift = std::max({out.drift, (as[i] - out.A).norm() / (1.0 + out.A.norm()),
                              (bs[i] - out.B).norm() / (1.0 + out.B.norm())});
    return out;
}

/// x = H^-1 x~(T), x_t = (H^-1)_t x~ + H^-1 x~_s T_t with x~ the constant-coefficient flow from T(t_0).
inline void pull_back(SolutionSet& s, const Mat& A, const Mat& B, const std::vector<cplx>& T,
                      const std::vector<cplx>& Tt, const std::vector<Mat>& Hinv, const std::vector<Mat>& Hinv_t) {
    const long n = s.n;
    const Mat c = companion(A, B);
    s.x.clear();
    s.xt.clear();
    for (size_t i = 0; i < s.t.size(); ++i) {
        const Mat phi = matrix_exp(c * (T[i] - T[0]));
        const Mat pos = phi.topRows(n), vel = phi.bottomRows(n);
        s.x.push_back(Hinv[i] * pos);
        s.xt.push_back(Hinv_t[i] * pos + Tt[i] * Hinv[i] * vel);
    }
}

inline void require_nonvanishing(const std::function<cplx(double, int)>& tau, const std::vector<double>& t,
                                 const char* what) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (double ti : t) {
        lo = std::min(lo, std::abs(tau(ti, 0)));
        hi = std::max(hi, std::abs(tau(ti, 0)));
    }
    if (!(lo > 1e-8 * std::max(1.0, hi))) throw InapplicableError(std::string(what) + " vanishes on the domain");
}

/// Drops chi, keeping tau and eta.
inline SymmetryField homogeneous_part(SymmetryField q) {
    q.chi.reset();
    return q;
}

inline double symmetry_scale(const System& sys) {
    double s = 1.0;
    for (double t : probe_points(sys.domain(), 16)) s = std::max({s, sys.A(t).norm(), sys.B(t).norm()});
    return s;
}

inline System homogeneous(const System& sys) {
    return System::make(sys.primed() ? sys.cls : SystemClass::L, sys.A, sys.B,
                         VectorFunction::zero(sys.n(), sys.domain()), sys.field, sys.domain());
}

inline void attach_particular(SolutionSet& s, const System& sys, const ToleranceConfig& cfg) {
    if (sys.f.is_zero()) return;
    const auto g = gauge_f_zero(sys, cfg);
    std::vector<Vec> xp, xpt;
    for (double t : s.t) {
        xp.push_back(g.particular->deriv(t, 0));
        xpt.push_back(g.particular->deriv(t, 1));
    }
    s.xp = xp;
    s.xpt = xpt;
    s.notes.push_back("inhomogeneous part: particular solution by RK4, symmetries used on the homogeneous system");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Singular class

inline Integration integrate_singular(const System& sys_in, const ToleranceConfig& cfg, double min_fraction = 0.25) {
    if (!singular_class_test(sys_in, cfg)) throw InapplicableError("integrate_singular: system is not singular");
    const long n = sys_in.n();
    System sys = sys_in;
    Integration out;
    auto& s = out.solution;
    const Domain full = sys.domain();
    auto U = [&](double t) -> cplx { return sys.criterion(t).trace() / double(n); };
    // phi'' = U phi; columns (phi1, phi2) with phi1(t0) = 0, phi1' = 1, phi2(t0) = 1, phi2' = 0
    auto phi_rhs = [&](double t, const Mat& y) -> Mat {
        Mat m(2, 2);
        m << 0, 1, U(t), 0;
        return m * y;
    };
    Mat y0(2, 2);
    y0 << 0, 1, 1, 0;
    auto phi = rk4_from_lo(phi_rhs, full, cfg.ode_steps, y0, false);
    size_t last = phi.t.size() - 1;
    for (size_t i = 0; i < phi.t.size(); ++i)
        if (std::abs(phi.y[i](0, 1)) < 0.1) {
            last = i == 0 ? 0 : i - 1;
            break;
        }
    if (last + 1 < phi.t.size()) {
        const Domain d{full.lo, phi.t[last]};
        if (d.length() < min_fraction * full.length())
            throw NumericalError("integrate_singular: phi_2 vanishes too early on the domain");
        sys = System::make(sys.cls, sys.A, sys.B, sys.f, sys.field, d);
        s.notes.push_back("domain shrunk to [" + std::to_string(d.lo) + ", " + std::to_string(d.hi) +
                          "] where |phi_2| >= 0.1");
        phi = rk4_from_lo(phi_rhs, d, cfg.ode_steps, y0, false);
    }
    const Domain d = sys.domain();
    // M' = -A^T M / 2, H0 = M^T
    auto m_rhs = [&](double t, const Mat& m) -> Mat { return -0.5 * sys.A(t).transpose() * m; };
    const auto mpath = rk4_from_lo(m_rhs, d, cfg.ode_steps, eye(n), false);

    s.n = n;
    s.dom = d;
    s.t = mpath.t;
    std::vector<cplx> T, Tt;
    std::vector<Mat> Hinv, Hinv_t;
    for (size_t i = 0; i < s.t.size(); ++i) {
        const cplx p1 = phi.y[i](0, 0), p2 = phi.y[i](0, 1), dp2 = phi.y[i](1, 1);
        T.push_back(p1 / p2);
        Tt.push_back(1.0 / (p2 * p2));
        const Mat h0inv = mpath.y[i].transpose().inverse();
        Hinv.push_back(p2 * h0inv);
        Hinv_t.push_back(0.5 * sys.A(s.t[i]) * Hinv.back() + (dp2 / p2) * Hinv.back());
        out.plan.H.push_back(mpath.y[i].transpose() / p2);
    }
    // x~ = c0 + c1 T
    for (size_t i = 0; i < s.t.size(); ++i) {
        Mat pos(n, 2 * n), vel(n, 2 * n);
        pos << eye(n), (T[i] - T[0]) * eye(n);
        vel << Mat::Zero(n, n), eye(n);
        s.x.push_back(Hinv[i] * pos);
        s.xt.push_back(Hinv_t[i] * pos + Tt[i] * Hinv[i] * vel);
    }
    if (!sys.f.is_zero()) {
        // x~_ss = f~ with ds = T_t dt: w = int phi_2 H0 f dt, x~_p = int w T_t dt
        std::vector<Vec> g, dg, wt, dwt;
        for (size_t i = 0; i < s.t.size(); ++i) {
            const double t = s.t[i];
            const cplx p2 = phi.y[i](0, 1), dp2 = phi.y[i](1, 1);
            const Mat h0 = mpath.y[i].transpose();
            const Vec f = sys.f(t), f1 = sys.f.deriv(t, 1);
            g.push_back(p2 * h0 * f);
            dg.push_back(dp2 * h0 * f - 0.5 * p2 * h0 * sys.A(t) * f + p2 * h0 * f1);
        }
        const auto w = hermite_cumulative(s.t, g, dg, 0);
        for (size_t i = 0; i < s.t.size(); ++i) {
            const cplx p2 = phi.y[i](0, 1), dp2 = phi.y[i](1, 1);
            wt.push_back(w[i] * Tt[i]);
            dwt.push_back(g[i] * Tt[i] + w[i] * (-2.0 * dp2 / (p2 * p2 * p2)));
        }
        const auto xs = hermite_cumulative(s.t, wt, dwt, 0);
        std::vector<Vec> xp, xpt;
        for (size_t i = 0; i < s.t.size(); ++i) {
            xp.push_back(Hinv[i] * xs[i]);
            xpt.push_back(Hinv_t[i] * xs[i] + Tt[i] * Hinv[i] * w[i]);
        }
        s.xp = xp;
        s.xpt = xpt;
        s.quadratures = static_cast<int>(2 * n);
    }
    s.method = "singular class: straightened to x~'' = f~";
    out.plan.tag = Procedure::singular;
    out.plan.T = T;
    out.plan.A_const = Mat::Zero(n, n);
    out.plan.B_const = Mat::Zero(n, n);
    out.plan.quadrature_bound = static_cast<int>(2 * n);
    return out;
}

// ---------------------------------------------------------------------------
// One symmetry

inline Integration integrate_one_symmetry(const System& sys, const SymmetryField& q_in, const ToleranceConfig& cfg) {
    const long n = sys.n();
    const System hom = detail::homogeneous(sys);
    const SymmetryField q = detail::homogeneous_part(q_in);
    const Domain d = sys.domain();
    const auto grid = uniform_grid(d, cfg.ode_steps);
    auto tau = [&q](double t, int k) { return q.tau.deriv(t, k); };
    auto eta = [&q](double t, int k) { return q.eta_at(t, k); };
    detail::require_nonvanishing(tau, grid, "tau");
    const double sres = verify_symmetry(hom, q);
    if (sres > cfg.residual_tol * detail::symmetry_scale(hom))
        throw InapplicableError("symmetry not verified (residual " + std::to_string(sres) + ")");

    Integration out;
    auto& s = out.solution;
    s.n = n;
    s.dom = d;
    // tau H_t + H eta = 0, H(t0) = E
    auto h_rhs = [&](double t, const Mat& h) -> Mat { return -h * eta(t, 0) / tau(t, 0); };
    const auto hp = rk4_from_lo(h_rhs, d, cfg.ode_steps, eye(n), false);
    s.t = hp.t;
    // T_t = 1 / tau by quadrature
    std::vector<cplx> g, dg;
    for (double t : s.t) {
        g.push_back(1.0 / tau(t, 0));
        dg.push_back(-tau(t, 1) / (tau(t, 0) * tau(t, 0)));
    }
    const auto T = hermite_cumulative(s.t, g, dg, 0);
    s.quadratures = 1;
    const auto st = detail::straighten(hom, tau, eta, s.t, hp.y);
    if (st.drift > cfg.residual_tol)
        throw NumericalError("symmetry not verified / numerics insufficient: straightened coefficients drift by " +
                             std::to_string(st.drift));
    std::vector<Mat> hinv, hinv_t;
    for (size_t i = 0; i < s.t.size(); ++i) {
        hinv.push_back(hp.y[i].inverse());
        hinv_t.push_back(eta(s.t[i], 0) * hinv.back() / tau(s.t[i], 0));
    }
    detail::pull_back(s, st.A, st.B, T, g, hinv, hinv_t);
    s.method = "one symmetry: straightened to constant coefficients";
    detail::attach_particular(s, sys, cfg);
    out.plan.tag = Procedure::one_symmetry;
    out.plan.H = hp.y;
    out.plan.T = T;
    out.plan.A_const = st.A;
    out.plan.B_const = st.B;
    out.plan.constancy = st.drift;
    return out;
}

// ---------------------------------------------------------------------------
// Two symmetries

namespace detail {

struct FieldEval {
    std::function<cplx(double, int)> tau;
    std::function<Mat(double, int)> eta;
};

inline FieldEval combine(cplx a, const SymmetryField& q1, cplx b, const SymmetryField& q2) {
    return {[=](double t, int k) { return a * q1.tau.deriv(t, k) + b * q2.tau.deriv(t, k); },
            [=](double t, int k) -> Mat { return a * q1.eta_at(t, k) + b * q2.eta_at(t, k); }};
}

/// Fundamental matrix of y' = a(t) y with Y(t0) = E by back-substitution when a(t) is
/// triangular up to a fixed permutation. Returns nothing if the coupling graph has a cycle.
struct QuadratureSolve {
    std::vector<Mat> Y;
    int quadratures = 0;
};

inline std::optional<QuadratureSolve> triangular_by_quadrature(const std::vector<double>& t,
                                                               const std::vector<Mat>& a, double tol) {
    const long m = a.front().rows();
    const size_t N = t.size();
    double scale = 0;
    for (const auto& ai : a) scale = std::max(scale, ai.cwiseAbs().maxCoeff());
    const double cut = tol * std::max(1.0, scale);
    std::vector<std::vector<bool>> dep(m, std::vector<bool>(m, false));
    for (long j = 0; j < m; ++j)
        for (long k = 0; k < m; ++k)
            if (j != k)
                for (const auto& ai : a)
                    if (std::abs(ai(j, k)) > cut) {
                        dep[j][k] = true;
                        break;
                    }
    // topological order: rows whose dependencies are all placed
    std::vector<long> order;
    std::vector<bool> placed(m, false);
    while (static_cast<long>(order.size()) < m) {
        bool progress = false;
        for (long j = 0; j < m; ++j) {
            if (placed[j]) continue;
            bool ready = true;
            for (long k = 0; k < m; ++k)
                if (dep[j][k] && !placed[k]) ready = false;
            if (ready) {
                order.push_back(j);
                placed[j] = true;
                progress = true;
            }
        }
        if (!progress) return std::nullopt;
    }
    QuadratureSolve out;
    // exponents, shared between rows with the same diagonal function
    std::vector<long> group(m, -1);
    std::vector<std::vector<cplx>> phis;
    for (long j = 0; j < m; ++j) {
        for (long k = 0; k < j && group[j] < 0; ++k) {
            bool same = true;
            for (const auto& ai : a)
                if (std::abs(ai(j, j) - ai(k, k)) > cut) {
                    same = false;
                    break;
                }
            if (same) group[j] = group[k];
        }
        if (group[j] >= 0) continue;
        std::vector<cplx> v(N);
        double vmax = 0;
        for (size_t i = 0; i < N; ++i) {
            v[i] = a[i](j, j);
            vmax = std::max(vmax, std::abs(v[i]));
        }
        group[j] = static_cast<long>(phis.size());
        if (vmax <= cut) {
            phis.emplace_back(N, cplx(1.0));
            continue;
        }
        const auto dv = fd_derivative(t, v);
        const auto ex = hermite_cumulative(t, v, dv, 0);
        std::vector<cplx> phi(N);
        for (size_t i = 0; i < N; ++i) phi[i] = std::exp(ex[i]);
        phis.push_back(phi);
        ++out.quadratures;
    }
    for (long j = 0; j < m; ++j)
        for (long k = 0; k < m; ++k)
            if (dep[j][k]) {
                ++out.quadratures;
                break;
            }
    out.Y.assign(N, Mat::Zero(m, m));
    for (long c = 0; c < m; ++c) {
        for (long j : order) {
            const auto& phi = phis[group[j]];
            bool coupled = false;
            for (long k = 0; k < m; ++k) coupled = coupled || dep[j][k];
            const double init = j == c ? 1.0 : 0.0;
            if (!coupled) {
                for (size_t i = 0; i < N; ++i) out.Y[i](j, c) = init * phi[i];
                continue;
            }
            std::vector<cplx> integrand(N);
            for (size_t i = 0; i < N; ++i) {
                cplx gsum = 0;
                for (long k = 0; k < m; ++k)
                    if (dep[j][k]) gsum += a[i](j, k) * out.Y[i](k, c);
                integrand[i] = gsum / phi[i];
            }
            const auto di = fd_derivative(t, integrand);
            const auto acc = hermite_cumulative(t, integrand, di, 0);
            for (size_t i = 0; i < N; ++i) out.Y[i](j, c) = phi[i] * (init + acc[i]);
        }
    }
    return out;
}

/// Modal matrix of zeta(t) for the constant Jordan form, chosen as the projection of a
/// reference modal matrix onto the solutions of zeta X = X Lambda; smooth in t.
struct SmoothModal {
    Mat lambda;
    Mat ref;
    long dim;

    std::pair<Mat, Mat> at(const Mat& zeta, const Mat& zeta_t) const {
        const long n = zeta.rows();
        const Mat S = Eigen::kroneckerProduct(eye(n), zeta) - Eigen::kroneckerProduct(lambda.transpose(), eye(n));
        Eigen::JacobiSVD<Mat> svd(S, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const long nn = n * n, r = nn - dim;
        const Mat N = svd.matrixV().rightCols(dim);
        const Mat P = N * N.adjoint();
        // pseudo-inverse on the retained singular directions
        Mat Sp = Mat::Zero(nn, nn);
        for (long i = 0; i < r; ++i)
            Sp += svd.matrixV().col(i) * svd.matrixU().col(i).adjoint() / svd.singularValues()(i);
        const Mat St = Eigen::kroneckerProduct(eye(n), zeta_t);
        const Mat G = Sp * St * P;
        const Mat Pt = -G - G.adjoint();
        const Vec r0 = vec(ref);
        return {unvec(P * r0, n), unvec(Pt * r0, n)};
    }
};

} // namespace detail

inline Integration integrate_two_symmetries(const System& sys, const SymmetryField& q1_in,
                                            const SymmetryField& q2_in, const ToleranceConfig& cfg) {
    const long n = sys.n();
    const System hom = detail::homogeneous(sys);
    const SymmetryField q1 = detail::homogeneous_part(q1_in), q2 = detail::homogeneous_part(q2_in);
    const Domain d = sys.domain();
    const auto probes = probe_points(d, kProbeCount);
    {
        Mat taus(probes.size(), 2);
        for (size_t i = 0; i < probes.size(); ++i) {
            taus(i, 0) = q1.tau(probes[i]);
            taus(i, 1) = q2.tau(probes[i]);
        }
        if (numerical_rank(taus, 1e-8) < 2) throw InapplicableError("tau-components dependent");
    }
    const double scale = detail::symmetry_scale(hom);
    for (const auto* q : {&q1, &q2}) {
        const double r = verify_symmetry(hom, *q);
        if (r > cfg.residual_tol * scale)
            throw InapplicableError("symmetry not verified (residual " + std::to_string(r) + ")");
    }
    // [q1, q2] = a q1 + b q2 from samples of (tau, eta)
    const SymmetryField br = bracket(q1, q2);
    const long rowsper = 1 + n * n;
    Mat lhs(static_cast<long>(probes.size()) * rowsper, 2);
    Vec rhs(lhs.rows());
    for (size_t i = 0; i < probes.size(); ++i) {
        const double t = probes[i];
        const long r0 = static_cast<long>(i) * rowsper;
        lhs(r0, 0) = q1.tau(t);
        lhs(r0, 1) = q2.tau(t);
        rhs(r0) = br.tau(t);
        lhs.block(r0 + 1, 0, n * n, 1) = vec(q1.eta_at(t, 0));
        lhs.block(r0 + 1, 1, n * n, 1) = vec(q2.eta_at(t, 0));
        rhs.segment(r0 + 1, n * n) = vec(br.eta_at(t, 0));
    }
    const Vec ab = lhs.colPivHouseholderQr().solve(rhs);
    if ((lhs * ab - rhs).norm() > cfg.residual_tol * std::max(1.0, rhs.norm()))
        throw InapplicableError("not a 2-dim algebra: the bracket leaves the span");
    const cplx a = ab(0), b = ab(1);
    if (std::abs(a) + std::abs(b) < 1e-12) throw InapplicableError("not a 2-dim algebra: the fields commute");
    // Q1' = [q1, q2], Q2' = x q1 + y q2 with a y - b x = 1
    cplx x = 0.0, y = 0.0;
    if (std::abs(a) >= std::abs(b)) y = 1.0 / a;
    else x = -1.0 / b;
    const auto p1 = detail::combine(a, q1, b, q2);
    const auto p2 = detail::combine(x, q1, y, q2);

    Integration out;
    auto& s = out.solution;
    s.n = n;
    s.dom = d;
    s.t = uniform_grid(d, cfg.ode_steps);
    detail::require_nonvanishing(p1.tau, s.t, "tau of the straightened field");
    auto Tfun = [&](double t) { return p2.tau(t, 0) / p1.tau(t, 0); };
    auto Ttfun = [&](double t) {
        const cplx t1 = p1.tau(t, 0);
        return (p2.tau(t, 1) * t1 - p2.tau(t, 0) * p1.tau(t, 1)) / (t1 * t1);
    };
    auto zeta = [&](double t) -> Mat { return p2.eta(t, 0) - Tfun(t) * p1.eta(t, 0); };
    auto zeta_t = [&](double t) -> Mat {
        return p2.eta(t, 1) - Ttfun(t) * p1.eta(t, 0) - Tfun(t) * p1.eta(t, 1);
    };
    // Jordan form at the midpoint; similarity invariants must not drift
    const auto jd = jordan_form(zeta(d.mid()), cfg);
    const Mat lam = jd.J;
    {
        const Mat z0 = zeta(d.mid());
        Mat pw0 = eye(n);
        std::vector<cplx> inv0;
        for (long p = 1; p <= n; ++p) {
            pw0 = pw0 * z0;
            inv0.push_back(pw0.trace());
        }
        double drift = 0;
        for (double t : probes) {
            Mat pw = eye(n);
            const Mat z = zeta(t);
            for (long p = 1; p <= n; ++p) {
                pw = pw * z;
                drift = std::max(drift, std::abs(pw.trace() - inv0[p - 1]) / std::max(1.0, std::abs(inv0[p - 1])));
            }
        }
        if (drift > cfg.residual_tol)
            throw NumericalError("similarity class of zeta drifts by " + std::to_string(drift));
    }
    const long cdim = n * n - numerical_rank(Mat(Eigen::kroneckerProduct(eye(n), lam) -
                                                 Eigen::kroneckerProduct(lam.transpose(), eye(n))),
                                             1e-9);
    const detail::SmoothModal sm{lam, jd.modal, cdim};
    auto hat = [&](double t) {
        const auto [m, mt] = sm.at(zeta(t), zeta_t(t));
        const Mat h = m.inverse();
        return std::make_pair(h, Mat(-h * mt * h));
    };
    auto eta_check = [&](double t) -> Mat {
        const auto [h, ht] = hat(t);
        return (p1.tau(t, 0) * ht + h * p1.eta(t, 0)) * h.inverse();
    };
    // generalized eigenspaces of Lambda
    std::vector<long> cluster_of(n), offsets, sizes;
    for (size_t bi = 0; bi < jd.blocks.size(); ++bi) {
        for (long l = 0; l < jd.blocks[bi].size; ++l) cluster_of[jd.block_offset[bi] + l] = jd.blocks[bi].cluster;
        out.plan.chain_sizes.push_back(jd.blocks[bi].size);
    }
    for (long ci = 0; ci < jd.distinct_eigenvalues(); ++ci) {
        long first = -1, count = 0;
        for (long r = 0; r < n; ++r)
            if (cluster_of[r] == ci) {
                if (first < 0) first = r;
                ++count;
            }
        offsets.push_back(first);
        sizes.push_back(count);
    }
    std::vector<Mat> ech;
    ech.reserve(s.t.size());
    double off_block = 0;
    for (double t : s.t) {
        ech.push_back(eta_check(t));
        for (long r = 0; r < n; ++r)
            for (long c = 0; c < n; ++c)
                if (cluster_of[r] != cluster_of[c]) off_block = std::max(off_block, std::abs(ech.back()(r, c)));
        off_block = std::max(off_block, commutator(lam, ech.back()).cwiseAbs().maxCoeff());
    }
    out.plan.block_residual = off_block;
    if (off_block > cfg.residual_tol * std::max(1.0, scale))
        throw NumericalError("eta-check is not block-diagonal (off-block entry " + std::to_string(off_block) + ")");
    // Block solves of tau1 H_t + H eta-check = 0, i.e. (H_ii^T)' = -(eta_ii^T / tau1) H_ii^T
    std::vector<Mat> hcheck(s.t.size(), Mat::Zero(n, n));
    for (size_t ci = 0; ci < sizes.size(); ++ci) {
        const long o = offsets[ci], m = sizes[ci];
        std::vector<Mat> coef;
        for (size_t i = 0; i < s.t.size(); ++i)
            coef.push_back(-ech[i].block(o, o, m, m).transpose() / p1.tau(s.t[i], 0));
        if (auto qs = detail::triangular_by_quadrature(s.t, coef, 1e-9)) {
            s.quadratures += qs->quadratures;
            for (size_t i = 0; i < s.t.size(); ++i) hcheck[i].block(o, o, m, m) = qs->Y[i].transpose();
        } else {
            s.notes.push_back("coupled block of size " + std::to_string(m) + " solved by RK4");
            auto rhs_b = [&, o, m](double t, const Mat& yb) -> Mat {
                return -eta_check(t).block(o, o, m, m).transpose() / p1.tau(t, 0) * yb;
            };
            const auto path = rk4_from_lo(rhs_b, d, cfg.ode_steps, Mat(eye(m)), false);
            for (size_t i = 0; i < s.t.size(); ++i) hcheck[i].block(o, o, m, m) = path.y[i].transpose();
        }
    }
    std::vector<Mat> H, hinv, hinv_t;
    std::vector<cplx> T, Tt;
    for (size_t i = 0; i < s.t.size(); ++i) {
        const double t = s.t[i];
        const Mat h = hcheck[i] * hat(t).first;
        H.push_back(h);
        hinv.push_back(h.inverse());
        hinv_t.push_back(p1.eta(t, 0) * hinv.back() / p1.tau(t, 0));
        T.push_back(Tfun(t));
        Tt.push_back(Ttfun(t));
    }
    const auto st = detail::straighten(hom, p1.tau, p1.eta, s.t, H);
    if (st.drift > cfg.residual_tol)
        throw NumericalError("symmetry not verified / numerics insufficient: straightened coefficients drift by " +
                             std::to_string(st.drift));
    detail::pull_back(s, st.A, st.B, T, Tt, hinv, hinv_t);
    s.method = "two symmetries: block-split straightening";
    detail::attach_particular(s, sys, cfg);

    auto& plan = out.plan;
    plan.tag = Procedure::two_symmetry;
    plan.H = H;
    plan.T = T;
    plan.A_const = st.A;
    plan.B_const = st.B;
    plan.constancy = st.drift;
    plan.Lambda = lam;
    plan.modal = jd.modal;
    plan.block_sizes = sizes;
    plan.elementary_divisors = jd.elementary_divisors();
    plan.distinct_eigenvalues = jd.distinct_eigenvalues();
    bool distinct_divisors = true;
    for (size_t i = 0; i < jd.blocks.size(); ++i)
        for (size_t j = i + 1; j < jd.blocks.size(); ++j)
            if (jd.blocks[i].cluster == jd.blocks[j].cluster && jd.blocks[i].size == jd.blocks[j].size)
                distinct_divisors = false;
    if (distinct_divisors)
        plan.quadrature_bound = static_cast<int>(n + plan.elementary_divisors - plan.distinct_eigenvalues);
    return out;
}

/// Direct RK4 fundamental matrix, used as an oracle.
inline SolutionSet integrate_rk4(const System& sys, const ToleranceConfig& cfg) {
    const long n = sys.n();
    auto rhs = [&](double t, const Mat& y) -> Mat {
        Mat out(2 * n, 2 * n);
        const Mat x = y.topRows(n), v = y.bottomRows(n);
        out.topRows(n) = v;
        Mat acc = sys.B(t) * x;
        if (!sys.a_is_zero()) acc += sys.A(t) * v;
        out.bottomRows(n) = acc;
        return out;
    };
    const auto p = rk4_from_lo(rhs, sys.domain(), cfg.ode_steps, Mat(eye(2 * n)), false);
    SolutionSet s;
    s.n = n;
    s.dom = sys.domain();
    s.t = p.t;
    for (const auto& y : p.y) {
        s.x.push_back(y.topRows(n));
        s.xt.push_back(y.bottomRows(n));
    }
    s.method = "direct RK4";
    return s;
}

/// Largest relative distance of the oracle columns from the span of the solution set, per node.
inline double span_distance(const SolutionSet& a, const SolutionSet& oracle) {
    double worst = 0;
    for (size_t i = 0; i < a.t.size(); i += std::max<size_t>(1, a.t.size() / 64)) {
        const Mat sa = a.state(i), so = oracle.state(i);
        const Mat coef = sa.colPivHouseholderQr().solve(so);
        worst = std::max(worst, (sa * coef - so).norm() / std::max(1e-300, so.norm()));
    }
    return worst;
}

} // namespace symode
