#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "symode/io.hpp"
#include "symode/n2_cases.hpp"

using namespace symode;
using json = io::json;

namespace {

enum Exit { ok = 0, schema = 2, inapplicable = 3, numeric = 4, mismatch = 5 };

struct Options {
    double tol = ToleranceConfig{}.residual_tol;
    double rank_tol = ToleranceConfig{}.rank_tol;
    int grid = ToleranceConfig{}.ode_steps;
    std::uint64_t seed = 1;
    std::string field;

    ToleranceConfig config() const {
        ToleranceConfig c;
        c.residual_tol = tol;
        c.rank_tol = rank_tol;
        c.ode_steps = grid;
        c.validate();
        return c;
    }
};

void emit(const json& j, const std::string& out) {
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream f(out);
    if (!f) throw SchemaError(out + ": cannot write");
    f << j.dump(2) << "\n";
}

System load_system(const std::string& path, const Options& o) {
    System s = io::parse_system(io::parse_file(path));
    if (!o.field.empty()) s.field = io::parse_field(json(o.field), "--field");
    return s;
}

int cmd_gauge(const Options& o, const std::string& input, const std::string& target, const std::string& out) {
    const auto cfg = o.config();
    const System src = load_system(input, o);
    TransformedSystem g;
    if (target == "f0") g = gauge_f_zero(src, cfg);
    else if (target == "a0") g = gauge_A_zero(src, cfg);
    else g = gauge_traceless(src, cfg);
    const double res = verify_equivalence(src, g.system, g.transform, cfg, o.seed);
    json j{{"system", io::to_json(g.system)},
           {"transform", io::to_json(g.transform)},
           {"note", g.note},
           {"verify_residual", res},
           {"ode_error", g.ode_error},
           {"tolerances", io::to_json(cfg)}};
    emit(j, out);
    if (res > cfg.residual_tol) {
        std::cerr << "equivalence residual " << res << " exceeds tolerance\n";
        return numeric;
    }
    return ok;
}

std::string render_field(const SymmetryField& q, double t) {
    std::ostringstream s;
    s << std::setprecision(4);
    auto z = [](cplx v) {
        std::ostringstream o;
        o << std::setprecision(4);
        if (std::abs(v.imag()) < 1e-12) o << v.real();
        else o << v;
        return o.str();
    };
    s << "tau(" << t << ") = " << z(q.tau(t)) << ", eta(" << t << ") = [";
    const Mat e = q.eta_at(t, 0);
    for (long r = 0; r < e.rows(); ++r) {
        s << (r ? "; " : "");
        for (long c = 0; c < e.cols(); ++c) s << (c ? " " : "") << z(e(r, c));
    }
    s << "]";
    return s.str();
}

int cmd_classify(const Options& o, const std::string& input, const std::string& format) {
    const auto cfg = o.config();
    const System sys = load_system(input, o);
    const auto rep = classify(sys, cfg, true);
    if (format == "json") {
        json j = io::to_json(rep, sys.domain());
        j["tolerances"] = io::to_json(cfg);
        if (!rep.case_label.empty()) {
            const auto [k, dim] = n2_reference(rep.case_label);
            j["reference"] = {{"case", rep.case_label}, {"k", k}, {"dim_ess", dim}};
        }
        std::cout << j.dump(2) << "\n";
        return ok;
    }
    std::cout << "n = " << rep.n << ", field " << to_string(rep.field) << "\n";
    if (rep.singular) {
        std::cout << "singular class, point-symmetry algebra of dimension " << rep.dim_total << "\n";
        return ok;
    }
    std::cout << "k = " << rep.k() << ", dim s = " << rep.dim_s() << ", dim ess = " << rep.dim_ess()
              << ", dim total = " << rep.dim_total << "\n";
    if (!rep.case_label.empty()) std::cout << "n = 2 table: case " << rep.case_label << "\n";
    const double mid = sys.domain().mid();
    if (rep.algebra) {
        for (const auto& q : rep.algebra->t_part) std::cout << "  t-part: " << render_field(q, mid) << "\n";
        for (const auto& m : rep.algebra->s.elems) {
            std::cout << "  s: " << render_field(SymmetryField::reduced(ScalarFunction::constant(0.0), m), mid)
                      << "\n";
        }
    }
    for (const auto& n : rep.notes) std::cout << "note: " << n << "\n";
    return ok;
}

int cmd_integrate(const Options& o, const std::string& input, const std::string& symfile, const std::string& out,
                  int stride) {
    const auto cfg = o.config();
    const System sys = load_system(input, o);
    Integration r;
    if (singular_class_test(sys, cfg)) {
        r = integrate_singular(sys, cfg);
    } else {
        std::vector<SymmetryField> qs;
        if (!symfile.empty()) qs = io::parse_symmetries(io::parse_file(symfile), sys.n(), sys.domain());
        std::vector<SymmetryField> usable;
        for (const auto& q : qs) {
            bool nonzero = true;
            for (double t : probe_points(sys.domain(), kProbeCount)) nonzero = nonzero && std::abs(q.tau(t)) > 1e-12;
            if (nonzero) usable.push_back(q);
        }
        if (usable.empty())
            throw InapplicableError("regular system: integration needs known point symmetries whose t-components do "
                                    "not vanish on the domain (pass --symmetries)");
        bool done = false;
        std::string why;
        if (usable.size() >= 2) {
            try {
                r = integrate_two_symmetries(sys, usable[0], usable[1], cfg);
                done = true;
            } catch (const InapplicableError& e) {
                why = e.what();
            }
        }
        if (!done) {
            r = integrate_one_symmetry(sys, usable[0], cfg);
            if (!why.empty()) r.solution.notes.push_back("two-symmetry path skipped: " + why);
        }
    }
    const double res = residual(sys, r.solution);
    json j = io::to_json(r, res, out.empty() ? static_cast<size_t>(stride) : 1);
    j["tolerances"] = io::to_json(cfg);
    emit(j, out);
    std::cerr << "procedure " << to_string(r.plan.tag) << ", residual " << res << ", quadratures "
              << r.solution.quadratures << "\n";
    return res < cfg.residual_tol ? ok : numeric;
}

/// Constant-coefficient L or a reduced system with V = eps E + e^{tY} w e^{-tY}.
int cmd_similar(const Options& o, const std::string& a, const std::string& b) {
    const auto cfg = o.config();
    const System sa = load_system(a, o), sb = load_system(b, o);
    if (sa.n() != sb.n()) throw InapplicableError("systems differ in size");
    auto print = [&](const SimilarityVerdict& v) {
        json j = io::to_json(v);
        j["tolerances"] = io::to_json(cfg);
        std::cout << j.dump(2) << "\n";
        return ok;
    };
    // symmetry dimensions are invariant under point transformations
    try {
        const auto ra = classify(sa, cfg), rb = classify(sb, cfg);
        auto dims = [](const ClassificationReport& r) {
            std::ostringstream s;
            s << "(singular " << r.singular << ", k " << r.k() << ", dim s " << r.dim_s() << ", dim ess "
              << r.dim_ess() << ")";
            return s.str();
        };
        if (dims(ra) != dims(rb)) {
            SimilarityVerdict v;
            v.outcome = SimilarityOutcome::not_similar;
            v.reason = "symmetry dimensions differ: " + dims(ra) + " vs " + dims(rb);
            return print(v);
        }
    } catch (const Error&) {
    }
    using MF = MatrixFunction;
    auto constant = [](const MF& f) { return f.is<MF::Constant>(); };
    SimilarityVerdict v;
    if (!sa.primed() && !sb.primed()) {
        if (!(constant(sa.A) && constant(sa.B) && constant(sb.A) && constant(sb.B)) || !sa.f.is_zero() ||
            !sb.f.is_zero())
            throw InapplicableError("similarity of (A, B) systems needs constant homogeneous coefficients");
        v = similar_constant_coeff(sa.A(0.0), sa.B(0.0), sb.A(0.0), sb.B(0.0), cfg, o.seed);
    } else if (sa.primed() && sb.primed()) {
        auto pair = [](const System& s) -> ShiftInvariantPair {
            const long n = s.n();
            if (s.B.is<MF::Constant>()) return {Mat::Zero(n, n), s.B.as<MF::Constant>().m};
            if (s.B.is<MF::ConjExp>()) {
                const auto& c = s.B.as<MF::ConjExp>();
                return {c.ups, c.eps * eye(n) + c.w};
            }
            throw InapplicableError("similarity of reduced systems needs a constant or conj_exp V");
        };
        v = similar_structured(pair(sa), pair(sb), cfg, o.seed);
    } else {
        throw InapplicableError("compare two reduced systems or two (A, B) systems");
    }
    return print(v);
}

int cmd_demo(const Options& o) {
    const auto cfg = o.config();
    const bool real = o.field == "real";
    const auto cases = n2_representatives(real ? Field::real : Field::complex, real);
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::string> bad;
    std::printf("%-5s %-7s %-12s %-12s %s\n", "case", "label", "k (got/ref)", "dim_ess", "status");
    for (const auto& c : cases) {
        const auto [k, dim] = n2_reference(c.label);
        std::string label = "?", status;
        long gk = -1, gd = -1;
        try {
            const auto rep = classify(c.sys, cfg);
            label = rep.case_label;
            gk = rep.k();
            gd = rep.dim_ess();
            status = (gk == k && gd == dim && label == c.label) ? "match" : "MISMATCH";
        } catch (const Error& e) {
            status = std::string("error: ") + e.what();
        }
        if (status != "match") bad.push_back(c.label);
        std::printf("%-5s %-7s %ld/%-10ld %ld/%-10ld %s\n", c.label.c_str(), label.c_str(), gk, k, gd, dim,
                    status.c_str());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%zu rows, %.2f s\n", cases.size(), secs);
    if (!bad.empty()) {
        std::string list;
        for (const auto& l : bad) list += (list.empty() ? "" : ", ") + l;
        std::fprintf(stderr, "mismatched cases: %s\n", list.c_str());
        return mismatch;
    }
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"symode: gauge, classify and integrate linear second-order ODE systems"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--tol", o.tol, "residual tolerance")->envname("SYMODE_TOL")->check(CLI::PositiveNumber);
    app.add_option("--rank-tol", o.rank_tol, "relative singular-value cutoff")
        ->envname("SYMODE_RANK_TOL")
        ->check(CLI::PositiveNumber);
    app.add_option("--grid", o.grid, "RK4 steps across the domain")->envname("SYMODE_GRID");
    app.add_option("--seed", o.seed, "seed for witness searches")->envname("SYMODE_SEED");
    app.add_option("--field", o.field, "override the field tag")
        ->envname("SYMODE_FIELD")
        ->check(CLI::IsMember({"real", "complex"}));

    std::string input, input2, out, target = "a0", format = "json", symfile;
    int stride = 64;

    auto* gauge = app.add_subcommand("gauge", "apply one gauge of the normalization chain");
    gauge->add_option("input", input, "system document")->required();
    gauge->add_option("--target", target, "f0, a0 or traceless")->check(CLI::IsMember({"f0", "a0", "traceless"}));
    gauge->add_option("--out", out, "write the report here instead of stdout");

    auto* cls = app.add_subcommand("classify", "essential symmetry algebra and n = 2 case label");
    cls->add_option("input", input, "system document")->required();
    cls->add_option("--format", format, "json or text")->check(CLI::IsMember({"json", "text"}));

    auto* integ = app.add_subcommand("integrate", "integrate using the singular class or known symmetries");
    integ->add_option("input", input, "system document")->required();
    integ->add_option("--symmetries", symfile, "JSON list of symmetry fields");
    integ->add_option("--out", out, "write the full solution grid here");
    integ->add_option("--stride", stride, "grid stride of the stdout dump")->check(CLI::PositiveNumber);

    auto* sim = app.add_subcommand("similar", "point-transformation similarity of two systems");
    sim->add_option("a", input, "first system")->required();
    sim->add_option("b", input2, "second system")->required();

    auto* demo = app.add_subcommand("demo-n2", "classify one representative per n = 2 case");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : schema;
    }

    try {
        if (*gauge) return cmd_gauge(o, input, target, out);
        if (*cls) return cmd_classify(o, input, format);
        if (*integ) return cmd_integrate(o, input, symfile, out, stride);
        if (*sim) return cmd_similar(o, input, input2);
        if (*demo) return cmd_demo(o);
    } catch (const SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return schema;
    } catch (const InapplicableError& e) {
        std::cerr << "inapplicable: " << e.what() << "\n";
        return inapplicable;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return numeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return schema;
    }
    return ok;
}
