#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "golden_integrate.hpp"
#include "symode/integrate.hpp"
#include "symode/n2_cases.hpp"
#include "test_util.hpp"

using namespace symode;
using namespace symode::testing;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

const Domain kDom{-1.0, 1.0};

std::vector<Mat> random_coeffs(long n, int degree, std::mt19937_64& rng) {
    std::vector<Mat> c;
    for (int p = 0; p <= degree; ++p) c.push_back(random_traceless(n, rng));
    return c;
}

MatrixFunction random_poly(long n, int degree, std::mt19937_64& rng) {
    return MatrixFunction::polynomial(random_coeffs(n, degree, rng), kDom);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// 1 -----------------------------------------------------------------------
Outcome golden_table() {
    const auto t0 = std::chrono::steady_clock::now();
    const ToleranceConfig cfg;
    std::vector<N2Case> cases = n2_representatives(Field::complex, true);
    std::string bad;
    for (const auto& c : cases) {
        const auto [k, dim] = n2_reference(c.label);
        try {
            const auto rep = classify(c.sys, cfg);
            if (rep.k() != k || rep.dim_ess() != dim || rep.case_label != c.label)
                bad += " " + c.label + "->(" + std::to_string(rep.k()) + "," + std::to_string(rep.dim_ess()) + ")";
        } catch (const Error& e) {
            bad += " " + c.label + ":" + e.what();
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = bad.empty() && secs < 10.0;
    return {ok, std::to_string(cases.size()) + " cases, " + fmt("%.2f s", secs) + (bad.empty() ? "" : ";" + bad)};
}

// 2 -----------------------------------------------------------------------
Outcome dimension_spectrum() {
    const ToleranceConfig cfg;
    std::set<long> dims;
    for (const auto& c : n2_representatives(Field::complex, true)) dims.insert(classify(c.sys, cfg).dim_total);
    dims.insert(classify(System::lprime(MatrixFunction::zero(2, kDom)), cfg).dim_total);
    const std::set<long> want{5, 6, 7, 8, 15};
    std::string got;
    for (long d : dims) got += (got.empty() ? "" : ",") + std::to_string(d);
    return {dims == want, "dim_total values {" + got + "}"};
}

// 3 and 4 share the random suite
struct RandomSuite {
    long draws = 0, lower_hits = 0, bound_violations = 0, max_k = 0, errors = 0;
    long adversarial = 0, adversarial_max_k = 0;
    std::string first_error;
};

RandomSuite run_random_suite() {
    const ToleranceConfig cfg;
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> small(0.05, 0.4);
    RandomSuite s;
    for (int trial = 0; trial < 200; ++trial) {
        const long n = 2 + trial % 2;
        System sys;
        if (trial % 10 == 9) {
            // class L with a constant friction matrix: goes through the A-zero gauge
            sys = System::L(MatrixFunction::constant(small(rng) * random_mat(n, rng), kDom), random_poly(n, 1, rng));
        } else if (trial % 10 == 8) {
            // constant nonzero trace
            auto c = random_coeffs(n, 1 + trial % 3, rng);
            c[0] += cplx(small(rng)) * eye(n);
            sys = System::lprime(MatrixFunction::polynomial(c, kDom));
        } else {
            sys = System::lprime(random_poly(n, 1 + trial % 3, rng));
        }
        ++s.draws;
        try {
            const auto rep = classify(sys, cfg);
            if (rep.singular || rep.dim_total < 2 * n + 1 || rep.dim_total > n * n + 4) ++s.bound_violations;
            if (rep.dim_total == 2 * n + 1) ++s.lower_hits;
            s.max_k = std::max(s.max_k, rep.k());
        } catch (const Error& e) {
            ++s.errors;
            if (s.first_error.empty()) s.first_error = e.what();
        }
    }
    // near-singular: u E plus a small traceless part, and perturbed nilpotents
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double deltas[] = {1e-2, 1e-3};
    for (int trial = 0; trial < 50; ++trial) {
        const long n = 2 + trial % 2;
        const double delta = deltas[trial % 2];
        MatrixFunction V;
        if (trial % 5 < 3) {
            auto c = random_coeffs(n, trial % 3, rng);
            for (auto& m : c) m *= delta;
            c[0] += cplx(u(rng)) * eye(n);
            V = MatrixFunction::polynomial(c, kDom);
        } else {
            Mat J = jordan_nilpotent(n == 2 ? std::vector<long>{2} : std::vector<long>{2, 1});
            V = MatrixFunction::constant(J + delta * random_traceless(n, rng), kDom);
        }
        ++s.adversarial;
        try {
            const auto rep = classify(System::lprime(V), cfg);
            s.adversarial_max_k = std::max(s.adversarial_max_k, rep.k());
        } catch (const Error& e) {
            ++s.errors;
            if (s.first_error.empty()) s.first_error = e.what();
        }
    }
    return s;
}

Outcome bound_sharpness(const RandomSuite& s) {
    const ToleranceConfig cfg;
    const auto r2 = classify(System::lprime(MatrixFunction::constant(jordan_nilpotent({2}), kDom)), cfg);
    const auto r3 = classify(System::lprime(MatrixFunction::constant(jordan_nilpotent({2, 1}), kDom)), cfg);
    const bool sharp = r2.dim_total == 8 && r2.dim_ess() == 4 && r3.dim_total == 13 && r3.dim_ess() == 7;
    const double frac = double(s.lower_hits) / double(s.draws);
    const bool ok = sharp && s.bound_violations == 0 && s.errors == 0 && frac >= 0.9;
    std::ostringstream d;
    d << "J: n=2 (" << r2.dim_total << "," << r2.dim_ess() << "), n=3 (" << r3.dim_total << "," << r3.dim_ess()
      << "); " << s.draws << " draws, " << s.bound_violations << " outside bounds, lower bound on "
      << fmt("%.1f%%", 100 * frac);
    if (s.errors) d << "; " << s.errors << " errors, first: " << s.first_error;
    return {ok, d.str()};
}

Outcome k_three_impossible(const RandomSuite& s) {
    const long worst = std::max(s.max_k, s.adversarial_max_k);
    std::ostringstream d;
    d << s.draws + s.adversarial << " systems (" << s.adversarial << " near-singular), max k = " << worst;
    if (s.errors) d << "; " << s.errors << " errors";
    return {worst < 3 && s.errors == 0, d.str()};
}

// 5 and 6 -----------------------------------------------------------------
struct Run {
    std::string name;
    std::function<Integration(const ToleranceConfig&)> run;
    System sys;
};

std::vector<Run> integration_goldens() {
    std::vector<Run> out;
    const auto sg = singular_golden();
    out.push_back({"singular", [sys = sg.sys](const ToleranceConfig& c) { return integrate_singular(sys, c); }, sg.sys});
    const auto og = one_symmetry_golden();
    out.push_back({"one symmetry",
                   [og](const ToleranceConfig& c) { return integrate_one_symmetry(og.sys, og.q, c); }, og.sys});
    const auto tg = two_symmetry_golden();
    out.push_back({"two symmetries",
                   [tg](const ToleranceConfig& c) { return integrate_two_symmetries(tg.sys, tg.q1, tg.q2, c); },
                   tg.sys});
    return out;
}

Outcome integration_residuals() {
    bool ok = true;
    std::string d;
    for (const auto& g : integration_goldens()) {
        ToleranceConfig fine, coarse;
        coarse.ode_steps = fine.ode_steps / 2;
        try {
            const double rf = residual(g.sys, g.run(fine).solution);
            const double rc = residual(g.sys, g.run(coarse).solution);
            const bool pass = rf < 1e-5 && rc / rf >= 8.0;
            ok = ok && pass;
            d += (d.empty() ? "" : "; ") + g.name + fmt(" %.1e (x%.1f)", rf, rc / rf);
        } catch (const Error& e) {
            ok = false;
            d += (d.empty() ? "" : "; ") + g.name + ": " + e.what();
        }
    }
    return {ok, d};
}

Outcome quadrature_accounting() {
    const ToleranceConfig cfg;
    bool ok = true;
    std::string d;
    auto note = [&](const std::string& name, int used, int bound) {
        ok = ok && used <= bound;
        d += (d.empty() ? "" : "; ") + name + " " + std::to_string(used) + "<=" + std::to_string(bound);
    };
    try {
        const auto sg = singular_golden();
        note("singular", integrate_singular(sg.sys, cfg).solution.quadratures, static_cast<int>(2 * sg.sys.n()));
        const System shrink = System::barL(MatrixFunction::zero(3, Domain{0, 1}),
                                           MatrixFunction::constant(-2.0 * eye(3), Domain{0, 1}),
                                           VectorFunction::constant(Vec::Ones(3), Domain{0, 1}));
        note("singular n=3", integrate_singular(shrink, cfg).solution.quadratures, 6);
        const Domain d0{};
        const System case7 = System::L(MatrixFunction::zero(2, d0), MatrixFunction::constant(S1(), d0));
        const auto q1 = SymmetryField::reduced(ScalarFunction::constant(1.0), Mat::Zero(2, 2));
        const auto q2 = SymmetryField::reduced(ScalarFunction::identity(), mat2(1.5, 0, 0, -0.5));
        for (auto [name, g] : {std::pair{"pulled-back n=2", two_symmetry_golden()},
                               std::pair{"Jordan chain n=3", jordan_two_symmetry_golden()}}) {
            const auto r = integrate_two_symmetries(g.sys, g.q1, g.q2, cfg);
            if (!r.plan.quadrature_bound) {
                ok = false;
                d += std::string("; ") + name + " not eligible";
                continue;
            }
            note(name, r.solution.quadratures, *r.plan.quadrature_bound);
        }
        const auto r7 = integrate_two_symmetries(case7, q1, q2, cfg);
        note("case 7", r7.solution.quadratures, r7.plan.quadrature_bound.value_or(-1));
    } catch (const Error& e) {
        ok = false;
        d += std::string("; ") + e.what();
    }
    return {ok, d};
}

// 7 -----------------------------------------------------------------------
Outcome similarity() {
    const ToleranceConfig cfg;
    std::mt19937_64 rng(777);
    std::uniform_real_distribution<double> ua(0.5, 2.0), ue(0.5, 3.0);
    int recovered = 0, unverified = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Mat ups = random_traceless(2, rng), v0 = random_mat(2, rng);
        Mat g = Mat::Zero(2, 2);
        if (trial % 2 == 1) {
            // one-dimensional s: V(0) and the K-sequence commute with G
            const Mat G = random_traceless(2, rng);
            v0 = cplx(ua(rng)) * eye(2) + cplx(ua(rng), 0.3) * G;
            ups = cplx(ua(rng)) * G;
            g = cplx(ua(rng)) * G;
        }
        const cplx alpha(ua(rng), trial % 3 == 0 ? 0.0 : 0.4);
        const Mat M = random_mat(2, rng);
        const Mat Mi = M.inverse();
        const ShiftInvariantPair a{ups, v0};
        const ShiftInvariantPair b{alpha * M * (ups + g) * Mi, alpha * alpha * M * v0 * Mi};
        const auto v = similar_structured(a, b, cfg, trial);
        if (v.outcome != SimilarityOutcome::similar) continue;
        const double r = symode::detail::witness_residual(a, b, v.alpha, v.M, v.Gamma);
        if (r < 1e-8) ++recovered;
        else ++unverified;
    }
    int rejected = 0;
    for (int trial = 0; trial < 50; ++trial) {
        // eigenvalue ratios of V(0) are invariant under the similarity group
        const Mat P = random_mat(2, rng), Q = random_mat(2, rng);
        const double l1 = ue(rng), l2 = ue(rng);
        double m2 = ue(rng);
        // compare against both orderings of the eigenvalues
        auto close = [&](double m) { return std::abs(l1 / l2 - m) < 0.1 || std::abs(l2 / l1 - m) < 0.1; };
        while (close(m2) || close(1.0 / m2)) m2 = ue(rng);
        Mat va = P * mat2(l1, 0, 0, l2) * P.inverse();
        Mat vb = Q * mat2(1.0, 0, 0, m2) * Q.inverse();
        if (trial % 5 == 0) {
            va = P * S1() * P.inverse();
            vb = Q * S2() * Q.inverse();
        }
        const ShiftInvariantPair a{random_traceless(2, rng), va}, b{random_traceless(2, rng), vb};
        const auto v = similar_structured(a, b, cfg, trial);
        if (v.outcome == SimilarityOutcome::not_similar) ++rejected;
        if (v.outcome == SimilarityOutcome::similar &&
            symode::detail::witness_residual(a, b, v.alpha, v.M, v.Gamma) >= 1e-8)
            ++unverified;
    }
    std::ostringstream d;
    d << recovered << "/100 recovered, " << rejected << "/50 obstructions rejected, " << unverified
      << " unverified similar verdicts";
    return {recovered >= 95 && rejected == 50 && unverified == 0, d.str()};
}

// 8 -----------------------------------------------------------------------
Outcome gauge_invariance() {
    const ToleranceConfig cfg;
    std::vector<System> panel;
    for (const auto& c : n2_representatives(Field::complex, false)) panel.push_back(c.sys);
    panel.push_back(System::L(MatrixFunction::constant(-2.0 * S2(), kDom), MatrixFunction::constant(S1(), kDom)));
    panel.push_back(System::lprime(MatrixFunction::zero(2, kDom)));
    std::mt19937_64 rng(88);
    std::uniform_real_distribution<double> ua(0.5, 2.0), ub(-1.0, 1.0);
    long changed = 0, checks = 0, gauges = 0;
    double worst_gauge = 0;
    std::string first;
    for (size_t p = 0; p < panel.size(); ++p) {
        const auto ref = classify(panel[p], cfg, true);
        if (ref.gauge_residual > 0) ++gauges;
        worst_gauge = std::max(worst_gauge, ref.gauge_residual);
        for (int trial = 0; trial < 50; ++trial) {
            const Mat C = random_mat(2, rng) + 2.0 * E2();
            const auto tr = Transform::point(ScalarFunction::polynomial({ub(rng), ua(rng)}),
                                             MatrixFunction::constant(C, kDom), VectorFunction::zero(2, kDom), kDom);
            ++checks;
            try {
                const System out = apply_equivalence(panel[p], tr, cfg);
                const auto rep = classify(out, cfg, true);
                if (rep.gauge_residual > 0) ++gauges;
                worst_gauge = std::max(worst_gauge, rep.gauge_residual);
                if (rep.k() != ref.k() || rep.dim_s() != ref.dim_s() || rep.dim_ess() != ref.dim_ess() ||
                    rep.singular != ref.singular) {
                    ++changed;
                    if (first.empty()) first = "panel " + std::to_string(p) + " trial " + std::to_string(trial);
                }
            } catch (const Error& e) {
                ++changed;
                if (first.empty()) first = e.what();
            }
        }
    }
    std::ostringstream d;
    d << panel.size() << " systems x 50 transforms, " << changed << " changed; " << gauges
      << " gauges verified, worst residual " << fmt("%.1e", worst_gauge);
    if (!first.empty()) d << "; first: " << first;
    return {changed == 0 && worst_gauge < 1e-6 && checks == 50 * static_cast<long>(panel.size()), d.str()};
}

// 9 -----------------------------------------------------------------------
Outcome oracle_equivalence() {
    const ToleranceConfig cfg;
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> pick(0, 3);
    int disagree = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const long n = 1 + trial % 4;
        const bool traceless = trial % 3 == 0;
        std::vector<Mat> mats;
        const Mat P = random_mat(n, rng) + 2.0 * eye(n);
        const Mat Pi = P.inverse();
        switch (pick(rng)) {
        case 0: mats.push_back(random_mat(n, rng)); break;
        case 1: {
            // repeated eigenvalues and Jordan chains
            std::vector<long> sizes;
            for (long left = n; left > 0;) {
                const long s = 1 + static_cast<long>(rng() % left);
                sizes.push_back(s);
                left -= s;
            }
            const Mat J = jordan_nilpotent(sizes) + cplx(0.7) * eye(n);
            mats.push_back(P * J * Pi);
            break;
        }
        case 2: {
            const Mat X = random_mat(n, rng);
            mats.push_back(X);
            mats.push_back(X * X - 0.5 * X);
            break;
        }
        default:
            mats.push_back(random_mat(n, rng));
            mats.push_back(random_mat(n, rng));
        }
        const long fast = centralizer_basis(n, mats, traceless, cfg).dim();
        const long slow = brute_force_centralizer_dim(n, mats, traceless);
        if (fast != slow) ++disagree;
    }
    std::vector<MatrixFunction> panel{MatrixFunction::constant(S1(), kDom), MatrixFunction::constant(S2(), kDom),
                                      MatrixFunction::polynomial({S3(), -S2(), S1()}, kDom),
                                      MatrixFunction::polynomial({Mat::Zero(2, 2), S1()}, kDom),
                                      MatrixFunction::constant(jordan_nilpotent({2, 1}), kDom),
                                      MatrixFunction::constant(jordan_nilpotent({3}), kDom)};
    for (const auto& c : n2_representatives(Field::complex, true))
        if (c.sys.B.is<MatrixFunction::Polynomial>() || c.sys.B.is<MatrixFunction::Constant>()) panel.push_back(c.sys.B);
    for (int i = 0; i < 12; ++i) panel.push_back(random_poly(2 + i % 2, i % 4, rng));
    int solver_disagree = 0;
    for (const auto& V : panel) {
        const auto e = solve_symmetries_poly(V, cfg);
        const auto s = solve_symmetries_sampled(V.resample(uniform_grid(V.domain(), 256)), cfg);
        if (e.k != s.k || e.dim_s() != s.dim_s()) ++solver_disagree;
    }
    std::ostringstream d;
    d << "centralizer: " << disagree << "/200 disagree; solvers: " << solver_disagree << "/" << panel.size()
      << " disagree";
    return {disagree == 0 && solver_disagree == 0, d.str()};
}

} // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
        std::fflush(stdout);
    };
    report(1, "n=2 golden table", golden_table);
    report(2, "dimension spectrum", dimension_spectrum);
    RandomSuite suite;
    try {
        suite = run_random_suite();
    } catch (const std::exception& e) {
        suite.errors = 1;
        suite.first_error = e.what();
    }
    report(3, "bound sharpness", [&] { return bound_sharpness(suite); });
    report(4, "k=3 impossible", [&] { return k_three_impossible(suite); });
    report(5, "integration residuals", integration_residuals);
    report(6, "quadrature accounting", quadrature_accounting);
    report(7, "similarity", similarity);
    report(8, "gauge invariance", gauge_invariance);
    report(9, "oracle equivalence", oracle_equivalence);
    std::printf("%d failed, %.1f s\n", failed, seconds_since(t0));
    return failed == 0 ? 0 : 1;
}
