#pragma once

#include <string>
#include <vector>

#include "symode/symalg.hpp"

namespace symode {

struct N2Case {
    std::string label;
    System sys;
};

namespace n2 {

inline Mat m2(cplx a, cplx b, cplx c, cplx d) {
    Mat m(2, 2);
    m << a, b, c, d;
    return m;
}
inline Mat S1() { return m2(0, 1, 0, 0); }
inline Mat S2() { return m2(1, 0, 0, -1); }
inline Mat S3() { return m2(0, 0, -1, 0); }

} // namespace n2

/// One reduced system per row of the n = 2 table on t in [-1, 1]. The three real rows
/// are appended when `with_real` is set. Every system is tagged with `field`, except that
/// the real rows are always tagged real.
inline std::vector<N2Case> n2_representatives(Field field = Field::complex, bool with_real = false) {
    using namespace n2;
    const Domain d{-1.0, 1.0};
    const Mat Z = Mat::Zero(2, 2);
    // v(t) = 1 + t + t^3 is not of the form (a + b t)^p
    auto generic = [&](const Mat& m) { return MatrixFunction::polynomial({m, m, Z, m}, d); };
    const Mat R = S1() + S3();
    const Mat X = S1() - S3();
    std::vector<N2Case> out;
    auto add = [&](std::string label, MatrixFunction V, Field f) {
        out.push_back({std::move(label), System::lprime(std::move(V), f)});
    };
    add("0", MatrixFunction::polynomial({S3(), S1(), S2(), S3()}, d), field);
    add("1", generic(S1()), field);
    add("2", generic(S2()), field);
    add("3", MatrixFunction::polynomial({S3(), -S2(), S1()}, d), field);
    add("4", MatrixFunction::conj_exp(0.0, S2(), S1() + S3(), d), field);
    add("5", MatrixFunction::conj_exp(0.0, S2(), S1(), d), field);
    add("6", MatrixFunction::constant(S2(), d), field);
    add("7", MatrixFunction::constant(S1(), d), field);
    if (with_real) {
        add("1R", generic(R), Field::real);
        add("3R", MatrixFunction::conj_exp(0.0, R, R + X, d), Field::real);
        add("5R", MatrixFunction::constant(R, d), Field::real);
    }
    return out;
}

} // namespace symode
