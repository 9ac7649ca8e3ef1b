#include <gtest/gtest.h>

#include "symode/matfun.hpp"
#include "test_util.hpp"

using namespace symode;
using namespace symode::testing;

namespace {
const ToleranceConfig cfg{};
}

TEST(Evaluate, ConjExpAtZeroIsW) {
    std::mt19937_64 rng(1);
    const Mat ups = random_mat(2, rng), w = random_mat(2, rng);
    const auto f = MatrixFunction::conj_exp(0.0, ups, w);
    EXPECT_LT((f(0.0) - w).norm(), 1e-13);
}

TEST(Evaluate, PolynomialAtTwo) {
    std::mt19937_64 rng(2);
    const Mat m0 = random_mat(3, rng), m1 = random_mat(3, rng);
    const auto f = MatrixFunction::polynomial({m0, m1}, {-3, 3});
    EXPECT_LT((f(2.0) - m0 - 2.0 * m1).norm(), 1e-14);
}

TEST(Evaluate, ConjExpWithZeroUpsilon) {
    const auto f = MatrixFunction::conj_exp(0.25, Mat::Zero(2, 2), S1());
    for (double t : {-0.7, 0.0, 0.9}) EXPECT_LT((f(t) - 0.25 * E2() - S1()).norm(), 1e-15);
}

TEST(Evaluate, OutsideDomainThrows) {
    const auto f = MatrixFunction::constant(S1(), {0, 1});
    EXPECT_THROW(f(1.5), std::out_of_range);
}

TEST(Differentiate, ConjExpGivesFirstK) {
    std::mt19937_64 rng(3);
    const Mat ups = random_mat(2, rng), w = random_mat(2, rng);
    const auto d = MatrixFunction::conj_exp(0.3, ups, w).differentiate();
    EXPECT_LT((d(0.0) - commutator(ups, w)).norm(), 1e-13);
}

TEST(Differentiate, ConstantAndLinear) {
    EXPECT_EQ(MatrixFunction::constant(S2()).differentiate()(0.2).norm(), 0.0);
    const auto d = MatrixFunction::polynomial({Mat::Zero(2, 2), S1()}).differentiate();
    EXPECT_TRUE(d.is<MatrixFunction::Constant>());
    EXPECT_LT((d(0.5) - S1()).norm(), 1e-15);
}

TEST(Differentiate, CentralDifferenceConvergesQuadratically) {
    std::mt19937_64 rng(4);
    std::vector<MatrixFunction> fs{
        MatrixFunction::polynomial({random_mat(2, rng), random_mat(2, rng), random_mat(2, rng),
                                    random_mat(2, rng)}),
        MatrixFunction::conj_exp(0.5, 0.5 * random_mat(2, rng), random_mat(2, rng))};
    for (const auto& f : fs) {
        const auto df = f.differentiate();
        const double t = 0.3;
        auto err = [&](double h) { return ((f(t + h) - f(t - h)) / (2 * h) - df(t)).norm(); };
        const double ratio = err(1e-3) / err(1e-4);
        EXPECT_GT(ratio, 50.0);
        EXPECT_LT(ratio, 200.0);
    }
}

TEST(Differentiate, SampledMatchesClosedForm) {
    std::mt19937_64 rng(5);
    const auto f = MatrixFunction::conj_exp(0.0, 0.7 * random_mat(2, rng), random_mat(2, rng));
    const auto s = f.resample(uniform_grid(f.domain(), 400));
    for (double t : probe_points(f.domain(), 16)) {
        EXPECT_LT((s(t) - f(t)).norm(), 1e-8);
        EXPECT_LT((s.deriv(t, 1) - f.deriv(t, 1)).norm(), 1e-6);
        EXPECT_LT((s.deriv(t, 2) - f.deriv(t, 2)).norm(), 1e-4);
    }
}

TEST(Differentiate, SampledWithoutDerivativesUsesFiniteDifferences) {
    const Domain d{0, 1};
    const auto grid = uniform_grid(d, 200);
    std::vector<Mat> v;
    for (double t : grid) v.push_back(std::sin(3 * t) * S1() + t * t * S2());
    const auto s = MatrixFunction::sampled(grid, v);
    for (double t : probe_points(d, 10)) {
        const Mat expect = 3 * std::cos(3 * t) * S1() + 2 * t * S2();
        EXPECT_LT((s.deriv(t, 1) - expect).norm(), 1e-6);
    }
}

TEST(ConjExp, SpectrumIsTimeIndependent) {
    std::mt19937_64 rng(6);
    const Mat ups = random_mat(3, rng), w = random_mat(3, rng);
    const cplx eps(0.4, -0.1);
    const auto f = MatrixFunction::conj_exp(eps, ups, w);
    auto spectrum = [&](double t) {
        std::vector<cplx> out;
        for (const auto& c : eig_clustered(f(t) - eps * eye(3), cfg)) out.push_back(c.value);
        return out;
    };
    const auto ref = spectrum(0.0);
    for (double t : {-0.8, -0.2, 0.5, 1.0}) {
        const auto s = spectrum(t);
        ASSERT_EQ(s.size(), ref.size());
        for (size_t i = 0; i < s.size(); ++i) EXPECT_LT(std::abs(s[i] - ref[i]), 1e-7 * std::max(1.0, w.norm()));
    }
}

TEST(TraceSplit, ConjExpTracelessW) {
    const auto ts = trace_split(MatrixFunction::conj_exp(0.7, S2(), S1() + S3()));
    EXPECT_NEAR(std::abs(ts.u(0.3) - 0.7), 0.0, 1e-15);
    ASSERT_TRUE(ts.trless.is<MatrixFunction::ConjExp>());
    EXPECT_EQ(ts.trless.as<MatrixFunction::ConjExp>().eps, cplx(0.0));
}

TEST(TraceSplit, ConstantDiagonal) {
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 1.0;
    const auto ts = trace_split(MatrixFunction::constant(d));
    EXPECT_NEAR(std::abs(ts.u(0.0) - 2.0), 0.0, 1e-15);
    EXPECT_LT((ts.trless(0.0) - S2()).norm(), 1e-15);
}

TEST(TraceSplit, PolynomialTraceIsLinear) {
    const auto ts = trace_split(MatrixFunction::polynomial({S2(), E2()}));
    EXPECT_EQ(ts.u.degree(), 1);
    EXPECT_NEAR(std::abs(ts.u(0.8) - 0.8), 0.0, 1e-15);
    EXPECT_TRUE(ts.trless.is<MatrixFunction::Constant>());
    EXPECT_LT((ts.trless(0.8) - S2()).norm(), 1e-15);
}

TEST(TraceSplit, TracelessPartHasZeroTraceEverywhere) {
    std::mt19937_64 rng(7);
    const Domain d{-1, 1};
    std::vector<MatrixFunction> fs{
        MatrixFunction::polynomial({random_mat(3, rng), random_mat(3, rng), random_mat(3, rng)}, d),
        MatrixFunction::conj_exp(0.1, random_mat(3, rng), random_mat(3, rng), d),
        MatrixFunction::exponential(0.5 * random_mat(3, rng), random_mat(3, rng), d)};
    for (const auto& f : fs) {
        const auto ts = trace_split(f);
        for (double t : probe_points(d, 32)) {
            EXPECT_LT(std::abs(ts.trless(t).trace()), cfg.residual_tol);
            EXPECT_LT((ts.trless(t) + ts.u(t) * eye(3) - f(t)).norm(), 1e-6 * std::max(1.0, f(t).norm()));
        }
    }
}

TEST(KlSequence, DiagonalUpsilon) {
    const cplx b1 = 0.7, b3 = -1.3;
    const auto k = kl_sequence(S2(), b1 * S1() + b3 * S3(), cfg);
    ASSERT_EQ(k.size(), 2u);
    for (size_t l = 0; l < k.size(); ++l) {
        const Mat expect = std::pow(2.0, double(l)) * b1 * S1() + std::pow(-2.0, double(l)) * b3 * S3();
        EXPECT_LT((k[l] - expect).norm(), 1e-13);
    }
}

TEST(KlSequence, ZeroUpsilon) {
    EXPECT_EQ(kl_sequence(Mat::Zero(2, 2), S2(), cfg).size(), 1u);
}

TEST(KlSequence, NilpotentUpsilon) {
    const cplx b2 = 0.4, b3 = 1.1;
    const auto k = kl_sequence(S1(), b2 * S2() + b3 * S3(), cfg);
    ASSERT_EQ(k.size(), 3u);
    EXPECT_LT((k[1] - (-2.0 * b2 * S1() - b3 * S2())).norm(), 1e-13);
    EXPECT_LT((k[2] - 2.0 * b3 * S1()).norm(), 1e-13);
    EXPECT_LT(commutator(S1(), k[2]).norm(), 1e-13);
}

TEST(KlSequence, NextTermLiesInSpan) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const long n = 2 + trial % 3;
        const Mat ups = random_mat(n, rng), w = random_traceless(n, rng);
        const auto k = kl_sequence(ups, w, cfg);
        ASSERT_FALSE(k.empty());
        const Mat next = commutator(ups, k.back());
        const auto span = span_of(n, k, 1e-12);
        EXPECT_LT(span.distance(next), 1e-6 * std::max(1.0, next.norm())) << "trial " << trial;
    }
}

TEST(ScalarFunctions, PolynomialAndExpSum) {
    const auto p = ScalarFunction::polynomial({1.0, 2.0, 3.0, 0.0});
    EXPECT_EQ(p.degree(), 2);
    EXPECT_NEAR(std::abs(p.deriv(2.0, 1) - 14.0), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(p.deriv(2.0, 3)), 0.0, 1e-14);
    const auto e = ScalarFunction::exp_sum({2.0}, {-1.0});
    EXPECT_NEAR(std::abs(e.deriv(0.5, 2) - 2.0 * std::exp(-0.5)), 0.0, 1e-14);
}

TEST(Sampled, GridValidation) {
    EXPECT_THROW(MatrixFunction::sampled({0.0}, {S1()}), std::invalid_argument);
    EXPECT_THROW(MatrixFunction::sampled({0.0, 0.0}, {S1(), S1()}), std::invalid_argument);
    EXPECT_THROW(MatrixFunction::sampled({0.0, 1.0}, {S1()}), std::invalid_argument);
}

TEST(VectorFunctions, PolynomialDerivatives) {
    Vec c0(2), c2(2);
    c0 << 1.0, 0.0;
    c2 << 0.0, 0.5;
    const auto v = VectorFunction::polynomial({c0, Vec::Zero(2), c2}, {0, 2});
    EXPECT_LT((v(2.0) - (c0 + 4.0 * c2)).norm(), 1e-15);
    EXPECT_LT((v.deriv(1.0, 2) - 2.0 * c2).norm(), 1e-15);
    EXPECT_TRUE(VectorFunction::zero(3).is_zero());
}
