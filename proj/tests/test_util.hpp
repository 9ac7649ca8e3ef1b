#pragma once

#include <random>

#include <Eigen/LU>

#include "symode/linalg.hpp"

namespace symode::testing {

inline Mat mat2(cplx a, cplx b, cplx c, cplx d) {
    Mat m(2, 2);
    m << a, b, c, d;
    return m;
}

inline Mat S1() { return mat2(0, 1, 0, 0); }
inline Mat S2() { return mat2(1, 0, 0, -1); }
inline Mat S3() { return mat2(0, 0, -1, 0); }
inline Mat E2() { return eye(2); }

inline Mat random_mat(long n, std::mt19937_64& rng, bool real = false) {
    std::normal_distribution<double> g(0.0, 1.0);
    Mat m(n, n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j) m(i, j) = real ? cplx(g(rng), 0.0) : cplx(g(rng), g(rng));
    return m;
}

inline Mat random_traceless(long n, std::mt19937_64& rng, bool real = false) {
    Mat m = random_mat(n, rng, real);
    return m - (m.trace() / double(n)) * eye(n);
}

/// Entrywise assembly of [G, K] = 0 over the n^2 unknown entries of G, solved by
/// full-pivot LU. Written independently of the Kronecker-lift code.
inline long brute_force_centralizer_dim(long n, const std::vector<Mat>& mats, bool traceless) {
    const long nn = n * n;
    Mat sys = Mat::Zero(static_cast<long>(mats.size()) * nn + (traceless ? 1 : 0), nn);
    auto idx = [n](long p, long q) { return p * n + q; };
    long row = 0;
    for (const auto& k : mats) {
        const double nk = std::max(1e-300, k.norm());
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j, ++row)
                for (long m = 0; m < n; ++m) {
                    sys(row, idx(i, m)) += k(m, j) / nk;
                    sys(row, idx(m, j)) -= k(i, m) / nk;
                }
    }
    if (traceless)
        for (long i = 0; i < n; ++i) sys(row, idx(i, i)) = 1.0;
    if (sys.rows() == 0) return nn;
    Eigen::FullPivLU<Mat> lu(sys);
    lu.setThreshold(1e-9);
    return nn - lu.rank();
}

inline Mat jordan_nilpotent(const std::vector<long>& sizes) {
    long n = 0;
    for (long s : sizes) n += s;
    Mat j = Mat::Zero(n, n);
    long off = 0;
    for (long s : sizes) {
        for (long i = 0; i + 1 < s; ++i) j(off + i, off + i + 1) = 1.0;
        off += s;
    }
    return j;
}

} // namespace symode::testing
