#include <gtest/gtest.h>

#include "symode/linalg.hpp"
#include "test_util.hpp"

using namespace symode;
using namespace symode::testing;

namespace {
const ToleranceConfig cfg{};
}

TEST(Commutator, SlTwoRelations) {
    EXPECT_LT((commutator(S1(), S2()) + 2.0 * S1()).norm(), 1e-15);
    EXPECT_LT((commutator(S2(), S3()) + 2.0 * S3()).norm(), 1e-15);
    EXPECT_LT((commutator(S1(), S3()) + S2()).norm(), 1e-15);
}

TEST(Commutator, SelfAndAntisymmetry) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const Mat a = random_mat(3, rng), b = random_mat(3, rng);
        EXPECT_EQ(commutator(a, a).norm(), 0.0);
        EXPECT_EQ((commutator(a, b) + commutator(b, a)).norm(), 0.0);
    }
}

TEST(Commutator, DimensionMismatchThrows) {
    EXPECT_THROW(commutator(eye(2), eye(3)), std::invalid_argument);
}

TEST(Centralizer, SingleNilpotent) {
    const auto c = centralizer_basis(2, {S1()}, true, cfg);
    ASSERT_EQ(c.dim(), 1);
    EXPECT_TRUE(span_of(2, {S1()}, 1e-12).elems.size() == 1);
    EXPECT_LT(c.distance(S1()), 1e-12);
}

TEST(Centralizer, EmptyListGivesSl) {
    EXPECT_EQ(centralizer_basis(3, {}, true, cfg).dim(), 8);
    EXPECT_EQ(centralizer_basis(3, {}, false, cfg).dim(), 9);
}

TEST(Centralizer, JordanTwoPlusOne) {
    const Mat j = jordan_nilpotent({2, 1});
    EXPECT_EQ(centralizer_basis(3, {j}, true, cfg).dim(), 4);
    EXPECT_EQ(brute_force_centralizer_dim(3, {j}, true), 4);
}

TEST(Centralizer, AgreesWithBruteForceOnRandomSets) {
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> pickn(2, 4), pickk(1, 3), kind(0, 3);
    for (int trial = 0; trial < 200; ++trial) {
        const long n = pickn(rng);
        std::vector<Mat> mats;
        const int count = pickk(rng);
        for (int i = 0; i < count; ++i) {
            // Mix generic draws with structured ones so nontrivial centralizers occur.
            switch (kind(rng)) {
            case 0: mats.push_back(random_mat(n, rng)); break;
            case 1: mats.push_back(jordan_nilpotent({n})); break;
            case 2: {
                Mat d = Mat::Zero(n, n);
                for (long k = 0; k < n; ++k) d(k, k) = double(k % 2);
                mats.push_back(d);
                break;
            }
            default: mats.push_back(eye(n)); break;
            }
        }
        const bool tl = trial % 2 == 0;
        EXPECT_EQ(centralizer_basis(n, mats, tl, cfg).dim(), brute_force_centralizer_dim(n, mats, tl))
            << "trial " << trial;
    }
}

TEST(Normalizer, HandWorkedExamples) {
    const auto s2 = span_of(2, {S2()}, 1e-12, true);
    const auto n2 = normalizer_basis(s2, cfg);
    EXPECT_TRUE(same_span(n2, s2, 1e-9));

    const auto s1 = span_of(2, {S1()}, 1e-12, true);
    const auto n1 = normalizer_basis(s1, cfg);
    EXPECT_TRUE(same_span(n1, span_of(2, {S1(), S2()}, 1e-12, true), 1e-9));

    const auto sl2 = span_of(2, {S1(), S2(), S3()}, 1e-12, true);
    EXPECT_EQ(normalizer_basis(sl2, cfg).dim(), 3);
}

TEST(Normalizer, RejectsNonSubalgebra) {
    const auto s = span_of(2, {S1(), S3()}, 1e-12, true);
    EXPECT_THROW(normalizer_basis(s, cfg), InapplicableError);
}

TEST(DoubleCentralizer, SlTwoSubalgebras) {
    EXPECT_FALSE(double_centralizer_fixed(span_of(2, {S1(), S2()}, 1e-12, true), cfg));
    EXPECT_TRUE(double_centralizer_fixed(span_of(2, {S2()}, 1e-12, true), cfg));
    EXPECT_TRUE(double_centralizer_fixed(span_of(2, {S1()}, 1e-12, true), cfg));
    EXPECT_TRUE(double_centralizer_fixed(span_of(2, {S1() + S3()}, 1e-12, true), cfg));
    EXPECT_TRUE(double_centralizer_fixed(SubspaceBasis{2, true, {}}, cfg));
}

TEST(DoubleCentralizer, ContainsOriginal) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const long n = 2 + trial % 3;
        // Centralizers are always bracket-closed.
        const Mat seed = trial % 2 ? random_mat(n, rng) : jordan_nilpotent({n - 1, 1});
        const auto s = centralizer_basis(n, {seed}, true, cfg);
        const auto cc = centralizer_basis(n, centralizer_basis(n, s.elems, true, cfg).elems, true, cfg);
        for (const auto& m : s.elems) EXPECT_LT(cc.distance(m), 1e-8);
    }
}

TEST(Eigen, DiagonalClusters) {
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 2.0;
    const auto cl = eig_clustered(d, cfg);
    ASSERT_EQ(cl.size(), 2u);
    EXPECT_NEAR(std::abs(cl[0].value), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(cl[1].value - 2.0), 0.0, 1e-12);
    EXPECT_EQ(cl[0].multiplicity, 1);
}

TEST(Eigen, NilpotentBlock) {
    const auto cl = eig_clustered(S1(), cfg);
    ASSERT_EQ(cl.size(), 1u);
    EXPECT_EQ(cl[0].multiplicity, 2);
    const auto jf = jordan_form(S1(), cfg);
    ASSERT_EQ(jf.blocks.size(), 1u);
    EXPECT_EQ(jf.blocks[0].size, 2);
}

TEST(Eigen, ComplexPairFromRealMatrix) {
    const auto cl = eig_clustered(mat2(1, 1, -1, 1), cfg);
    ASSERT_EQ(cl.size(), 2u);
    EXPECT_NEAR(std::abs(cl[0].value - cplx(1, -1)), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(cl[1].value - cplx(1, 1)), 0.0, 1e-12);
}

TEST(Eigen, ConjugatedJordanStructureRecovered) {
    std::mt19937_64 rng(11);
    const std::vector<std::vector<long>> shapes{{3}, {2, 1}, {2, 2}, {3, 1}, {1, 1, 1}};
    for (const auto& shape : shapes) {
        const Mat j = jordan_nilpotent(shape) + 0.5 * eye(jordan_nilpotent(shape).rows());
        const long n = j.rows();
        Mat c = random_mat(n, rng, true) + 3.0 * eye(n);
        const Mat m = c * j * c.inverse();
        const auto jf = jordan_form(m, cfg);
        std::vector<long> sizes;
        for (const auto& b : jf.blocks) sizes.push_back(b.size);
        auto expect = shape;
        std::sort(expect.rbegin(), expect.rend());
        EXPECT_EQ(sizes, expect);
        EXPECT_LT((m * jf.modal - jf.modal * jf.J).norm(), 1e-6 * m.norm());
    }
}

TEST(JordanChevalley, Examples) {
    const auto a = jordan_chevalley(mat2(1, 1, 0, 1), cfg);
    EXPECT_LT((a.semisimple - eye(2)).norm(), 1e-9);
    EXPECT_LT((a.nilpotent - S1()).norm(), 1e-9);
    const auto b = jordan_chevalley(S1(), cfg);
    EXPECT_LT(b.semisimple.norm(), 1e-9);
    const auto c = jordan_chevalley(mat2(2, 1, 0, -1), cfg);
    EXPECT_LT(c.nilpotent.norm(), 1e-9);
}

TEST(JordanChevalley, Properties) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const long n = 2 + trial % 3;
        Mat m;
        if (trial % 2) {
            m = random_mat(n, rng);
        } else {
            const Mat c = random_mat(n, rng, true) + 3.0 * eye(n);
            m = c * (jordan_nilpotent({n - 1, 1}) + eye(n)) * c.inverse();
        }
        const auto jc = jordan_chevalley(m, cfg);
        const double tol = cfg.residual_tol * std::max(1.0, m.norm());
        EXPECT_LT((m - jc.semisimple - jc.nilpotent).norm(), tol);
        EXPECT_LT(commutator(jc.semisimple, jc.nilpotent).norm(), tol);
        Mat p = eye(n);
        for (long i = 0; i < n; ++i) p = p * jc.nilpotent;
        EXPECT_LT(p.norm(), tol);
        // n independent eigenvectors of the semisimple part.
        long total = 0;
        for (const auto& cl : eig_clustered(jc.semisimple, cfg)) {
            Eigen::JacobiSVD<Mat> svd(jc.semisimple - cl.value * eye(n));
            for (long i = 0; i < n; ++i)
                if (svd.singularValues()(i) < 1e-6 * std::max(1.0, m.norm())) ++total;
        }
        EXPECT_EQ(total, n);
    }
}

TEST(MatrixExp, Examples) {
    EXPECT_LT((matrix_exp(Mat::Zero(3, 3)) - eye(3)).norm(), 1e-15);
    EXPECT_LT((matrix_exp(S1()) - eye(2) - S1()).norm(), 1e-14);
    const Mat e = matrix_exp(mat2(0.5, 0, 0, -2));
    EXPECT_NEAR(std::abs(e(0, 0) - std::exp(0.5)), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(e(1, 1) - std::exp(-2.0)), 0.0, 1e-14);
}

TEST(MatrixExp, InverseProperty) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> scale(0.1, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
        Mat m = random_mat(2 + trial % 3, rng);
        m *= scale(rng) / m.norm();
        EXPECT_LT((matrix_exp(m) * matrix_exp(-m) - eye(m.rows())).norm(), cfg.residual_tol);
    }
}

TEST(MatrixExp, OverflowThrows) {
    EXPECT_THROW(matrix_exp(1e6 * eye(2)), NumericalError);
}

TEST(HatCheck, Examples) {
    Mat lam = Mat::Zero(2, 2);
    lam(0, 0) = 2.0;
    std::mt19937_64 rng(9);
    const Mat ups = random_mat(2, rng);
    auto a = hat_check_split(ups, lam, cfg);
    EXPECT_LT(a.hat.norm(), 1e-12);
    EXPECT_LT((a.check - ups).norm(), 1e-12);

    lam(0, 0) = 1.0;
    auto b = hat_check_split(ups, lam, cfg);
    Mat expect = Mat::Zero(2, 2);
    expect(0, 1) = ups(0, 1);
    EXPECT_LT((b.hat - expect).norm(), 1e-12);

    auto c = hat_check_split(Mat::Zero(2, 2), lam, cfg);
    EXPECT_LT(c.hat.norm() + c.check.norm(), 1e-15);

    EXPECT_THROW(hat_check_split(ups, S1(), cfg), InapplicableError);
}

TEST(HatCheck, RaisingRelation) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const long n = 3;
        const Mat c = random_mat(n, rng, true) + 3.0 * eye(n);
        Mat d = Mat::Zero(n, n);
        d(0, 0) = 2.0;
        d(1, 1) = 1.0;
        const Mat lam = c * d * c.inverse();
        const Mat ups = random_mat(n, rng);
        const auto hc = hat_check_split(ups, lam, cfg);
        EXPECT_LT((hc.hat + hc.check - ups).norm(), cfg.residual_tol);
        EXPECT_LT((commutator(lam, hc.hat) - hc.hat).norm(), cfg.residual_tol * (1 + ups.norm()));
        EXPECT_GT(hc.hat.norm(), 1e-3);
    }
}

TEST(AffineSearch, Examples) {
    auto a = invertible_in_affine_space({eye(2)}, Mat::Zero(2, 2), cfg);
    ASSERT_TRUE(a.has_value());
    EXPECT_GT(std::abs(a->determinant()), 1e-6);
    EXPECT_FALSE(invertible_in_affine_space({S1()}, Mat::Zero(2, 2), cfg).has_value());
    auto c = invertible_in_affine_space({S1()}, eye(2), cfg);
    ASSERT_TRUE(c.has_value());
    EXPECT_NEAR(std::abs(c->determinant() - 1.0), 0.0, 1e-12);
}

TEST(Tolerances, Validation) {
    EXPECT_NO_THROW(ToleranceConfig{}.validate());
    ToleranceConfig bad;
    bad.rank_tol = 1e-3;
    bad.eig_cluster_tol = 1e-4;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}
