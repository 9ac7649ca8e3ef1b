#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "symode/error.hpp"

namespace symode {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

enum class Field { real, complex };

inline const char* to_string(Field f) { return f == Field::real ? "real" : "complex"; }

struct ToleranceConfig {
    double rank_tol = 1e-9;        ///< relative singular-value cutoff
    double eig_cluster_tol = 1e-7; ///< eigenvalue clustering radius (scaled by max(1, |M|))
    double residual_tol = 1e-6;    ///< ODE / algebraic residual target
    int ode_steps = 1024;          ///< fixed RK4 steps across a working domain

    void validate() const {
        if (!(rank_tol > 0 && eig_cluster_tol > 0 && residual_tol > 0))
            throw std::invalid_argument("tolerances must be strictly positive");
        if (!(rank_tol < eig_cluster_tol && eig_cluster_tol < 1))
            throw std::invalid_argument("tolerances must satisfy rank_tol < eig_cluster_tol < 1");
        if (ode_steps < 8 || ode_steps % 2 != 0)
            throw std::invalid_argument("ode_steps must be an even number >= 8");
    }
};

inline Mat eye(long n) { return Mat::Identity(n, n); }

inline Mat commutator(const Mat& a, const Mat& b) {
    require_same_dim(a.rows(), a.cols(), "commutator");
    require_same_dim(a.rows(), b.rows(), "commutator");
    require_same_dim(b.rows(), b.cols(), "commutator");
    return a * b - b * a;
}

/// Column-major vectorization.
inline Vec vec(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

inline Mat unvec(const Vec& v, long n) { return Eigen::Map<const Mat>(v.data(), n, n); }

/// Matrix of X -> K X - X K acting on vec(X).
inline Mat ad_matrix(const Mat& k) {
    const Mat I = eye(k.rows());
    Mat left = Eigen::kroneckerProduct(I, k);
    Mat right = Eigen::kroneckerProduct(k.transpose(), I);
    return left - right;
}

inline Mat trace_row(long n) {
    return vec(eye(n)).transpose() / std::sqrt(static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Nullspaces and subspaces

struct NullspaceResult {
    Mat basis;                  ///< orthonormal columns
    double retained_min = 1.0;  ///< smallest kept singular value, relative to the largest
    double discarded_max = 0.0; ///< largest discarded singular value, relative to the largest

    double gap() const {
        return discarded_max > 0 ? retained_min / discarded_max
                                 : std::numeric_limits<double>::infinity();
    }
};

inline NullspaceResult nullspace(const Mat& m, double rel_tol) {
    NullspaceResult out;
    const long cols = m.cols();
    if (m.rows() == 0 || m.norm() == 0.0) {
        out.basis = eye(cols);
        return out;
    }
    Mat work = m;
    if (m.rows() > 2 * cols) {
        // Tall stacks: compress to the triangular factor first.
        Eigen::HouseholderQR<Mat> qr(m);
        work = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    }
    Eigen::JacobiSVD<Mat> svd(work, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double smax = s(0);
    long rank = 0;
    while (rank < s.size() && s(rank) > rel_tol * smax) ++rank;
    out.basis = svd.matrixV().rightCols(cols - rank);
    out.retained_min = rank > 0 ? s(rank - 1) / smax : 1.0;
    out.discarded_max = rank < s.size() ? s(rank) / smax : 0.0;
    return out;
}

/// Right singular vectors belonging to the `count` smallest singular values.
inline Mat smallest_right_vectors(const Mat& m, long count) {
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullV);
    return svd.matrixV().rightCols(count);
}

inline long numerical_rank(const Mat& m, double rel_tol) {
    if (m.size() == 0 || m.norm() == 0.0) return 0;
    Eigen::JacobiSVD<Mat> svd(m);
    const auto& s = svd.singularValues();
    long r = 0;
    while (r < s.size() && s(r) > rel_tol * s(0)) ++r;
    return r;
}

/// A subspace of gl(n), stored as a Frobenius-orthonormal list.
struct SubspaceBasis {
    long n = 0;
    bool traceless = false;
    std::vector<Mat> elems;

    long dim() const { return static_cast<long>(elems.size()); }

    Mat columns() const {
        Mat c(n * n, dim());
        for (long i = 0; i < dim(); ++i) c.col(i) = vec(elems[i]);
        return c;
    }

    Mat project(const Mat& m) const {
        if (elems.empty()) return Mat::Zero(n, n);
        const Mat q = columns();
        return unvec(q * (q.adjoint() * vec(m)), n);
    }

    double distance(const Mat& m) const { return (m - project(m)).norm(); }

    bool contains(const Mat& m, double tol) const {
        return distance(m) <= tol * std::max(1.0, m.norm());
    }
};

inline SubspaceBasis span_of(long n, const std::vector<Mat>& mats, double rel_tol,
                             bool traceless_tag = false) {
    SubspaceBasis out;
    out.n = n;
    out.traceless = traceless_tag;
    if (mats.empty()) return out;
    Mat c(n * n, static_cast<long>(mats.size()));
    for (size_t i = 0; i < mats.size(); ++i) c.col(static_cast<long>(i)) = vec(mats[i]);
    if (c.norm() == 0.0) return out;
    Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    for (long i = 0; i < s.size(); ++i)
        if (s(i) > rel_tol * s(0)) out.elems.push_back(unvec(svd.matrixU().col(i), n));
    return out;
}

inline SubspaceBasis basis_from_columns(long n, const Mat& cols, bool traceless_tag) {
    SubspaceBasis out;
    out.n = n;
    out.traceless = traceless_tag;
    for (long i = 0; i < cols.cols(); ++i) out.elems.push_back(unvec(cols.col(i), n));
    return out;
}

/// {G : [G, K] = 0 for all K in mats}, optionally intersected with sl(n).
inline SubspaceBasis centralizer_basis(long n, const std::vector<Mat>& mats, bool restrict_traceless,
                                       const ToleranceConfig& cfg) {
    std::vector<Mat> blocks;
    for (const auto& k : mats) {
        require_same_dim(k.rows(), n, "centralizer_basis");
        require_same_dim(k.cols(), n, "centralizer_basis");
        const double nk = k.norm();
        if (nk > 0) blocks.push_back(ad_matrix(k) / nk);
    }
    if (restrict_traceless) blocks.push_back(trace_row(n));
    long rows = 0;
    for (const auto& b : blocks) rows += b.rows();
    Mat stacked(rows, n * n);
    long r = 0;
    for (const auto& b : blocks) {
        stacked.middleRows(r, b.rows()) = b;
        r += b.rows();
    }
    return basis_from_columns(n, nullspace(stacked, cfg.rank_tol).basis, restrict_traceless);
}

inline bool bracket_closed(const SubspaceBasis& s, double tol) {
    for (const auto& a : s.elems)
        for (const auto& b : s.elems)
            if (!s.contains(commutator(a, b), tol)) return false;
    return true;
}

/// {u in sl(n) : [u, v] in span(s) for all v in s}.
inline SubspaceBasis normalizer_basis(const SubspaceBasis& s, const ToleranceConfig& cfg) {
    const long n = s.n;
    if (!bracket_closed(s, cfg.residual_tol)) throw InapplicableError("not a subalgebra");
    const long nn = n * n;
    Mat proj_off = Mat::Identity(nn, nn);
    if (s.dim() > 0) {
        const Mat q = s.columns();
        proj_off -= q * q.adjoint();
    }
    Mat stacked(s.dim() * nn + 1, nn);
    for (long i = 0; i < s.dim(); ++i) stacked.middleRows(i * nn, nn) = -proj_off * ad_matrix(s.elems[i]);
    stacked.bottomRows(1) = trace_row(n);
    return basis_from_columns(n, nullspace(stacked, cfg.rank_tol).basis, true);
}

inline bool same_span(const SubspaceBasis& a, const SubspaceBasis& b, double tol) {
    if (a.dim() != b.dim()) return false;
    for (const auto& m : a.elems)
        if (!b.contains(m, tol)) return false;
    return true;
}

/// True iff span(s) = C_sl(C_sl(s)).
inline bool double_centralizer_fixed(const SubspaceBasis& s, const ToleranceConfig& cfg) {
    const SubspaceBasis c = centralizer_basis(s.n, s.elems, true, cfg);
    const SubspaceBasis cc = centralizer_basis(s.n, c.elems, true, cfg);
    return same_span(s, cc, std::sqrt(cfg.rank_tol));
}

// ---------------------------------------------------------------------------
// Spectra

struct EigenCluster {
    cplx value;
    long multiplicity = 0;
    Mat basis; ///< n x multiplicity, orthonormal basis of the generalized eigenspace
};

namespace detail {

inline double defect_radius(long size, double scale) {
    const double eps = std::numeric_limits<double>::epsilon();
    return 10.0 * std::pow(100.0 * eps, 1.0 / static_cast<double>(size)) * scale;
}

inline cplx mean_of(const std::vector<cplx>& ev, const std::vector<long>& idx) {
    cplx s = 0;
    for (long i : idx) s += ev[i];
    return s / static_cast<double>(idx.size());
}

// Single-linkage grouping with a fixed radius.
inline std::vector<std::vector<long>> link(const std::vector<cplx>& ev, const std::vector<long>& idx,
                                           double radius) {
    std::vector<long> parent(idx.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](long i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (size_t a = 0; a < idx.size(); ++a)
        for (size_t b = a + 1; b < idx.size(); ++b)
            if (std::abs(ev[idx[a]] - ev[idx[b]]) <= radius) parent[find(a)] = find(b);
    std::vector<std::vector<long>> groups;
    std::vector<long> slot(idx.size(), -1);
    for (size_t a = 0; a < idx.size(); ++a) {
        const long r = find(static_cast<long>(a));
        if (slot[r] < 0) {
            slot[r] = static_cast<long>(groups.size());
            groups.emplace_back();
        }
        groups[slot[r]].push_back(idx[a]);
    }
    return groups;
}

// A perturbed Jordan block of size m spreads its computed eigenvalues over a
// disc of radius ~ (eps |M|)^(1/m). Groups are formed with the widest plausible
// radius and split again when their spread exceeds what their size explains.
inline void cluster_rec(const std::vector<cplx>& ev, const std::vector<long>& idx, long size_cap,
                        double abs_radius, double scale, std::vector<std::vector<long>>& out) {
    const double radius = std::max(abs_radius, defect_radius(size_cap, scale));
    for (auto& g : link(ev, idx, radius)) {
        const long m = static_cast<long>(g.size());
        const cplx mu = mean_of(ev, g);
        double spread = 0;
        for (long i : g) spread = std::max(spread, std::abs(ev[i] - mu));
        const bool ok = m == 1 || spread <= std::max(abs_radius, defect_radius(m, scale));
        if (ok || size_cap <= 1 || m <= 1) {
            out.push_back(g);
        } else {
            cluster_rec(ev, g, std::min(size_cap, m) - 1, abs_radius, scale, out);
        }
    }
}

} // namespace detail

inline std::vector<EigenCluster> eig_clustered(const Mat& m, const ToleranceConfig& cfg) {
    require_same_dim(m.rows(), m.cols(), "eig_clustered");
    const long n = m.rows();
    std::vector<EigenCluster> out;
    if (n == 0) return out;
    if (!m.allFinite()) throw NumericalError("eig_clustered: non-finite input");
    Eigen::ComplexEigenSolver<Mat> es;
    es.setMaxIterations(60 * n);
    es.compute(m, false);
    if (es.info() != Eigen::Success)
        throw NumericalError("eig_clustered: Hessenberg QR did not converge (n=" + std::to_string(n) +
                             ", |M|=" + std::to_string(m.norm()) + ")");
    std::vector<cplx> ev(es.eigenvalues().data(), es.eigenvalues().data() + n);
    const double scale = std::max(1.0, m.norm());
    const double abs_radius = cfg.eig_cluster_tol * scale;
    std::vector<long> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::vector<long>> groups;
    detail::cluster_rec(ev, all, n, abs_radius, scale, groups);

    for (const auto& g : groups) {
        EigenCluster c;
        c.value = detail::mean_of(ev, g);
        c.multiplicity = static_cast<long>(g.size());
        out.push_back(c);
    }
    std::sort(out.begin(), out.end(), [&](const EigenCluster& a, const EigenCluster& b) {
        if (std::abs(a.value.real() - b.value.real()) > abs_radius) return a.value.real() < b.value.real();
        return a.value.imag() < b.value.imag();
    });
    for (auto& c : out) {
        Mat shifted = m - c.value * eye(n);
        Mat power = eye(n);
        for (long j = 0; j < c.multiplicity; ++j) power = shifted * power;
        c.basis = smallest_right_vectors(power, c.multiplicity);
    }
    return out;
}

/// Concatenated generalized eigenbases, in cluster order.
inline Mat cluster_modal(const std::vector<EigenCluster>& cl, long n) {
    Mat u(n, n);
    long col = 0;
    for (const auto& c : cl) {
        u.middleCols(col, c.multiplicity) = c.basis;
        col += c.multiplicity;
    }
    return u;
}

struct JordanBlock {
    cplx value;
    long size = 0;
    long cluster = 0;
};

struct JordanData {
    Mat modal;  ///< columns are Jordan chains, eigenvector first within each chain
    Mat J;      ///< Jordan matrix assembled from the blocks
    std::vector<JordanBlock> blocks;
    std::vector<EigenCluster> clusters;
    std::vector<long> block_offset;

    long distinct_eigenvalues() const { return static_cast<long>(clusters.size()); }
    long elementary_divisors() const { return static_cast<long>(blocks.size()); }
};

namespace detail {

// Jordan chains of a nilpotent m x m matrix; each chain listed top vector first.
inline std::vector<std::vector<Vec>> nilpotent_chains(const Mat& N, double rel_tol, double scale) {
    const long m = N.rows();
    std::vector<Mat> powers(m + 2);
    powers[0] = eye(m);
    for (long j = 1; j <= m + 1; ++j) powers[j] = N * powers[j - 1];
    std::vector<long> kdim(m + 2, 0);
    for (long j = 1; j <= m + 1; ++j) {
        Eigen::JacobiSVD<Mat> svd(powers[j]);
        long r = 0;
        const double thr = rel_tol * std::pow(scale, static_cast<double>(j));
        for (long i = 0; i < svd.singularValues().size(); ++i)
            if (svd.singularValues()(i) > thr) ++r;
        kdim[j] = m - r;
    }
    kdim[m] = m;
    kdim[m + 1] = m;
    std::vector<std::vector<Vec>> chains;
    for (long j = m; j >= 1; --j) {
        const long count = (kdim[j] - kdim[j - 1]) - (kdim[j + 1] - kdim[j]);
        if (count <= 0) continue;
        const Mat kj = smallest_right_vectors(powers[j], kdim[j]);
        std::vector<Vec> avoid;
        if (j > 1) {
            const Mat klow = smallest_right_vectors(powers[j - 1], kdim[j - 1]);
            for (long c = 0; c < klow.cols(); ++c) avoid.push_back(klow.col(c));
        }
        for (const auto& ch : chains) {
            const long len = static_cast<long>(ch.size());
            if (len > j) avoid.push_back(ch[len - j]);
        }
        Mat comp = kj;
        if (!avoid.empty()) {
            Mat a(m, static_cast<long>(avoid.size()));
            for (size_t c = 0; c < avoid.size(); ++c) a.col(static_cast<long>(c)) = avoid[c];
            Eigen::JacobiSVD<Mat> qa(a, Eigen::ComputeThinU);
            long r = 0;
            while (r < qa.singularValues().size() &&
                   qa.singularValues()(r) > 1e-10 * qa.singularValues()(0))
                ++r;
            const Mat q = qa.matrixU().leftCols(r);
            comp = kj - q * (q.adjoint() * kj);
        }
        Eigen::JacobiSVD<Mat> sc(comp, Eigen::ComputeFullV);
        for (long c = 0; c < count; ++c) {
            Vec v = kj * sc.matrixV().col(c);
            v /= v.norm();
            std::vector<Vec> chain{v};
            for (long l = 1; l < j; ++l) chain.push_back(N * chain.back());
            chains.push_back(chain);
        }
    }
    return chains;
}

} // namespace detail

inline JordanData jordan_form(const Mat& m, const ToleranceConfig& cfg) {
    const long n = m.rows();
    JordanData out;
    out.clusters = eig_clustered(m, cfg);
    out.modal = Mat::Zero(n, n);
    out.J = Mat::Zero(n, n);
    const double scale = std::max(1.0, m.norm());
    long col = 0;
    for (size_t ci = 0; ci < out.clusters.size(); ++ci) {
        const auto& c = out.clusters[ci];
        const Mat& u = c.basis;
        const Mat N = u.adjoint() * (m - c.value * eye(n)) * u;
        const double nil_tol = std::max(1e-6, std::sqrt(cfg.eig_cluster_tol));
        for (const auto& chain : detail::nilpotent_chains(N, nil_tol, scale)) {
            const long len = static_cast<long>(chain.size());
            out.block_offset.push_back(col);
            out.blocks.push_back({c.value, len, static_cast<long>(ci)});
            for (long l = 0; l < len; ++l) {
                out.modal.col(col + l) = u * chain[len - 1 - l];
                out.J(col + l, col + l) = c.value;
                if (l > 0) out.J(col + l - 1, col + l) = 1.0;
            }
            col += len;
        }
    }
    if (col != n) throw NumericalError("jordan_form: chain construction did not span the space");
    return out;
}

struct JordanChevalley {
    Mat semisimple;
    Mat nilpotent;
};

inline JordanChevalley jordan_chevalley(const Mat& m, const ToleranceConfig& cfg) {
    const long n = m.rows();
    const auto cl = eig_clustered(m, cfg);
    const Mat u = cluster_modal(cl, n);
    const Mat uinv = u.inverse();
    Mat d = Mat::Zero(n, n);
    long col = 0;
    for (const auto& c : cl) {
        for (long i = 0; i < c.multiplicity; ++i) d(col + i, col + i) = c.value;
        col += c.multiplicity;
    }
    JordanChevalley out;
    out.semisimple = u * d * uinv;
    out.nilpotent = m - out.semisimple;
    return out;
}

inline Mat matrix_exp(const Mat& m) {
    if (!m.allFinite()) throw NumericalError("matrix_exp: non-finite input");
    Mat r = m.exp();
    if (!r.allFinite()) throw NumericalError("matrix_exp: overflow (|M| = " + std::to_string(m.norm()) + ")");
    return r;
}

struct HatCheck {
    Mat hat;
    Mat check;
};

/// Split upsilon into the part raising lambda-eigenvalues by exactly one and the rest.
inline HatCheck hat_check_split(const Mat& upsilon, const Mat& lambda, const ToleranceConfig& cfg) {
    const long n = lambda.rows();
    require_same_dim(upsilon.rows(), n, "hat_check_split");
    const auto jc = jordan_chevalley(lambda, cfg);
    if (jc.nilpotent.norm() > cfg.residual_tol * std::max(1.0, lambda.norm()))
        throw InapplicableError("hat_check_split: lambda is not semisimple");
    const auto cl = eig_clustered(lambda, cfg);
    const Mat u = cluster_modal(cl, n);
    const Mat uinv = u.inverse();
    Mat y = uinv * upsilon * u;
    const double radius = cfg.eig_cluster_tol * std::max(1.0, lambda.norm());
    long ri = 0;
    for (const auto& ci : cl) {
        long cj0 = 0;
        for (const auto& cj : cl) {
            if (std::abs(ci.value - cj.value - 1.0) > radius)
                y.block(ri, cj0, ci.multiplicity, cj.multiplicity).setZero();
            cj0 += cj.multiplicity;
        }
        ri += ci.multiplicity;
    }
    HatCheck out;
    out.hat = u * y * uinv;
    out.check = upsilon - out.hat;
    return out;
}

/// Searches offset + span(basis) for a well-conditioned element.
inline std::optional<Mat> invertible_in_affine_space(const std::vector<Mat>& basis, const Mat& offset,
                                                     const ToleranceConfig& cfg, std::uint64_t seed = 0x5eed) {
    (void)cfg;
    for (const auto& b : basis) require_same_dim(b.rows(), offset.rows(), "invertible_in_affine_space");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> grid(-2, 2);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 64; ++trial) {
        Mat x = offset;
        for (const auto& b : basis) x += (trial < 32 ? double(grid(rng)) : gauss(rng)) * b;
        if (x.norm() == 0.0) continue;
        Eigen::JacobiSVD<Mat> svd(x);
        const auto& s = svd.singularValues();
        if (s(s.size() - 1) > 1e-6 * s(0)) return x;
    }
    return std::nullopt;
}

} // namespace symode
