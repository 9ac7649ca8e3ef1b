#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "symode/integrate.hpp"

namespace symode::io {

using json = nlohmann::json;

namespace detail {

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
    throw SchemaError((where.empty() ? std::string("/") : where) + ": " + what);
}

inline const json& field(const json& j, const std::string& key, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) fail(where, "missing \"" + key + "\"");
    return *it;
}

inline double real_number(const json& j, const std::string& where) {
    if (!j.is_number()) fail(where, "expected a number");
    return j.get<double>();
}

inline int small_int(const json& j, const std::string& where) {
    if (!j.is_number_integer()) fail(where, "expected an integer");
    return j.get<int>();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Scalars, vectors, matrices

inline cplx parse_complex(const json& j, const std::string& where) {
    if (j.is_number()) return j.get<double>();
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
        return {j[0].get<double>(), j[1].get<double>()};
    detail::fail(where, "expected a number or [re, im]");
}

inline json to_json(cplx z) {
    if (z.imag() == 0.0) return z.real();
    return json::array({z.real(), z.imag()});
}

inline Mat parse_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) detail::fail(where, "expected a non-empty array of rows");
    const long rows = static_cast<long>(j.size());
    if (!j[0].is_array() || j[0].empty()) detail::fail(where + "/0", "expected a non-empty row");
    const long cols = static_cast<long>(j[0].size());
    Mat m(rows, cols);
    for (long r = 0; r < rows; ++r) {
        const std::string wr = where + "/" + std::to_string(r);
        if (!j[r].is_array() || static_cast<long>(j[r].size()) != cols) detail::fail(wr, "ragged row");
        for (long c = 0; c < cols; ++c) m(r, c) = parse_complex(j[r][c], wr + "/" + std::to_string(c));
    }
    return m;
}

inline Mat parse_square(const json& j, long n, const std::string& where) {
    Mat m = parse_matrix(j, where);
    if (m.rows() != n || m.cols() != n)
        detail::fail(where, "expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
    return m;
}

inline json to_json(const Mat& m) {
    json out = json::array();
    for (long r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (long c = 0; c < m.cols(); ++c) row.push_back(to_json(m(r, c)));
        out.push_back(row);
    }
    return out;
}

inline Vec parse_vector(const json& j, long n, const std::string& where) {
    if (!j.is_array() || static_cast<long>(j.size()) != n)
        detail::fail(where, "expected an array of length " + std::to_string(n));
    Vec v(n);
    for (long i = 0; i < n; ++i) v(i) = parse_complex(j[i], where + "/" + std::to_string(i));
    return v;
}

inline json to_json(const Vec& v) {
    json out = json::array();
    for (long i = 0; i < v.size(); ++i) out.push_back(to_json(v(i)));
    return out;
}

inline std::vector<double> parse_grid(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() < 2) detail::fail(where, "expected at least two sample times");
    std::vector<double> t;
    for (size_t i = 0; i < j.size(); ++i) t.push_back(detail::real_number(j[i], where + "/" + std::to_string(i)));
    for (size_t i = 1; i < t.size(); ++i)
        if (!(t[i] > t[i - 1])) detail::fail(where, "sample times must increase");
    return t;
}

inline Domain parse_domain(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2) detail::fail(where, "expected [t_lo, t_hi]");
    const Domain d{detail::real_number(j[0], where + "/0"), detail::real_number(j[1], where + "/1")};
    if (!(d.hi > d.lo)) detail::fail(where, "t_hi must exceed t_lo");
    return d;
}

// ---------------------------------------------------------------------------
// Functions of t

inline MatrixFunction parse_matrix_function(const json& j, long n, const Domain& d, const std::string& where) {
    const std::string kind = [&] {
        const json& k = detail::field(j, "kind", where);
        if (!k.is_string()) detail::fail(where + "/kind", "expected a string");
        return k.get<std::string>();
    }();
    if (kind == "constant") return MatrixFunction::constant(parse_square(detail::field(j, "m", where), n, where + "/m"), d);
    if (kind == "polynomial") {
        const json& c = detail::field(j, "coeffs", where);
        if (!c.is_array() || c.empty()) detail::fail(where + "/coeffs", "expected a non-empty array of matrices");
        std::vector<Mat> cs;
        for (size_t i = 0; i < c.size(); ++i) cs.push_back(parse_square(c[i], n, where + "/coeffs/" + std::to_string(i)));
        return MatrixFunction::polynomial(cs, d);
    }
    if (kind == "conj_exp") {
        const cplx eps = j.contains("epsilon") ? parse_complex(j["epsilon"], where + "/epsilon") : cplx(0.0);
        return MatrixFunction::conj_exp(eps, parse_square(detail::field(j, "upsilon", where), n, where + "/upsilon"),
                                        parse_square(detail::field(j, "w", where), n, where + "/w"), d);
    }
    if (kind == "exponential")
        return MatrixFunction::exponential(parse_square(detail::field(j, "gen", where), n, where + "/gen"),
                                           parse_square(detail::field(j, "right", where), n, where + "/right"), d);
    if (kind == "sampled") {
        const auto t = parse_grid(detail::field(j, "t", where), where + "/t");
        const json& v = detail::field(j, "values", where);
        if (!v.is_array() || v.size() != t.size()) detail::fail(where + "/values", "expected one matrix per sample");
        std::vector<Mat> vs, ds;
        for (size_t i = 0; i < v.size(); ++i) vs.push_back(parse_square(v[i], n, where + "/values/" + std::to_string(i)));
        if (j.contains("derivs")) {
            const json& dj = j["derivs"];
            if (!dj.is_array() || dj.size() != t.size())
                detail::fail(where + "/derivs", "expected one matrix per sample");
            for (size_t i = 0; i < dj.size(); ++i)
                ds.push_back(parse_square(dj[i], n, where + "/derivs/" + std::to_string(i)));
        }
        return MatrixFunction::sampled(t, vs, ds);
    }
    detail::fail(where + "/kind", "unknown kind \"" + kind + "\"");
}

inline json to_json(const MatrixFunction& f, int samples = 256) {
    using MF = MatrixFunction;
    if (f.is<MF::Constant>()) return {{"kind", "constant"}, {"m", to_json(f.as<MF::Constant>().m)}};
    if (f.is<MF::Polynomial>()) {
        json c = json::array();
        for (const auto& m : f.as<MF::Polynomial>().c) c.push_back(to_json(m));
        return {{"kind", "polynomial"}, {"coeffs", c}};
    }
    if (f.is<MF::ConjExp>()) {
        const auto& c = f.as<MF::ConjExp>();
        return {{"kind", "conj_exp"}, {"epsilon", to_json(c.eps)}, {"upsilon", to_json(c.ups)}, {"w", to_json(c.w)}};
    }
    if (f.is<MF::Exponential>()) {
        const auto& e = f.as<MF::Exponential>();
        return {{"kind", "exponential"}, {"gen", to_json(e.gen)}, {"right", to_json(e.right)}};
    }
    std::vector<double> t;
    std::vector<Mat> v, d;
    if (f.is<MF::Sampled>()) {
        const auto& s = f.as<MF::Sampled>();
        t = s.t;
        v = s.v;
        d = s.d;
    } else {
        t = uniform_grid(f.domain(), samples);
        for (double s : t) {
            v.push_back(f.deriv(s, 0));
            d.push_back(f.deriv_unchecked(s, 1));
        }
    }
    json vs = json::array(), ds = json::array();
    for (size_t i = 0; i < t.size(); ++i) {
        vs.push_back(to_json(v[i]));
        ds.push_back(to_json(d[i]));
    }
    return {{"kind", "sampled"}, {"t", t}, {"values", vs}, {"derivs", ds}};
}

inline VectorFunction parse_vector_function(const json& j, long n, const Domain& d, const std::string& where) {
    const json& k = detail::field(j, "kind", where);
    if (!k.is_string()) detail::fail(where + "/kind", "expected a string");
    const std::string kind = k.get<std::string>();
    if (kind == "constant") return VectorFunction::constant(parse_vector(detail::field(j, "v", where), n, where + "/v"), d);
    if (kind == "polynomial") {
        const json& c = detail::field(j, "coeffs", where);
        if (!c.is_array() || c.empty()) detail::fail(where + "/coeffs", "expected a non-empty array of vectors");
        std::vector<Vec> cs;
        for (size_t i = 0; i < c.size(); ++i) cs.push_back(parse_vector(c[i], n, where + "/coeffs/" + std::to_string(i)));
        return VectorFunction::polynomial(cs, d);
    }
    if (kind == "sampled") {
        const auto t = parse_grid(detail::field(j, "t", where), where + "/t");
        const json& v = detail::field(j, "values", where);
        if (!v.is_array() || v.size() != t.size()) detail::fail(where + "/values", "expected one vector per sample");
        std::vector<Vec> vs;
        for (size_t i = 0; i < v.size(); ++i) vs.push_back(parse_vector(v[i], n, where + "/values/" + std::to_string(i)));
        return VectorFunction::sampled(t, vs);
    }
    detail::fail(where + "/kind", "unknown kind \"" + kind + "\"");
}

inline json to_json(const VectorFunction& f, int samples = 256) {
    using VF = VectorFunction;
    if (auto c = std::get_if<VF::Constant>(&f.rep())) return {{"kind", "constant"}, {"v", to_json(c->v)}};
    if (auto p = std::get_if<VF::Polynomial>(&f.rep())) {
        json cs = json::array();
        for (const auto& v : p->c) cs.push_back(to_json(v));
        return {{"kind", "polynomial"}, {"coeffs", cs}};
    }
    std::vector<double> t = uniform_grid(f.domain(), samples);
    if (auto s = std::get_if<VF::Sampled>(&f.rep())) t = s->t;
    json vs = json::array();
    for (double s : t) vs.push_back(to_json(Vec(f(s))));
    return {{"kind", "sampled"}, {"t", t}, {"values", vs}};
}

inline ScalarFunction parse_scalar_function(const json& j, const std::string& where) {
    if (j.is_number() || j.is_array()) return ScalarFunction::constant(parse_complex(j, where));
    const json& k = detail::field(j, "kind", where);
    if (!k.is_string()) detail::fail(where + "/kind", "expected a string");
    const std::string kind = k.get<std::string>();
    auto list = [&](const char* key) {
        const json& c = detail::field(j, key, where);
        if (!c.is_array() || c.empty()) detail::fail(where + "/" + key, "expected a non-empty array");
        std::vector<cplx> out;
        for (size_t i = 0; i < c.size(); ++i)
            out.push_back(parse_complex(c[i], where + "/" + key + "/" + std::to_string(i)));
        return out;
    };
    if (kind == "constant") return ScalarFunction::constant(parse_complex(detail::field(j, "value", where), where + "/value"));
    if (kind == "polynomial") return ScalarFunction::polynomial(list("coeffs"));
    if (kind == "exp_sum") {
        auto coef = list("coef"), rate = list("rate");
        if (coef.size() != rate.size()) detail::fail(where, "coef and rate differ in length");
        return ScalarFunction::exp_sum(coef, rate);
    }
    if (kind == "sampled") {
        const auto t = parse_grid(detail::field(j, "t", where), where + "/t");
        auto v = list("values");
        if (v.size() != t.size()) detail::fail(where + "/values", "expected one value per sample");
        return ScalarFunction::sampled(t, v);
    }
    detail::fail(where + "/kind", "unknown kind \"" + kind + "\"");
}

inline json to_json(const ScalarFunction& f, const Domain& d, int samples = 256) {
    auto list = [](const std::vector<cplx>& v) {
        json out = json::array();
        for (cplx z : v) out.push_back(to_json(z));
        return out;
    };
    if (f.is_polynomial()) return {{"kind", "polynomial"}, {"coeffs", list(f.poly().c)}};
    if (f.is_exp_sum()) return {{"kind", "exp_sum"}, {"coef", list(f.exps().coef)}, {"rate", list(f.exps().rate)}};
    std::vector<double> t = f.is_sampled() ? f.samples().t : uniform_grid(d, samples);
    std::vector<cplx> v;
    for (double s : t) v.push_back(f(s));
    return {{"kind", "sampled"}, {"t", t}, {"values", list(v)}};
}

// ---------------------------------------------------------------------------
// Systems

inline Field parse_field(const json& j, const std::string& where) {
    if (j == "real") return Field::real;
    if (j == "complex") return Field::complex;
    detail::fail(where, "field must be \"real\" or \"complex\"");
}

inline SystemClass parse_class(const json& j, const std::string& where) {
    if (j == "barL") return SystemClass::BarL;
    if (j == "L") return SystemClass::L;
    if (j == "Lprime") return SystemClass::Lprime;
    if (j == "Ldoubleprime") return SystemClass::Ldoubleprime;
    detail::fail(where, "class must be one of barL, L, Lprime, Ldoubleprime");
}

inline System parse_system(const json& j) {
    if (!j.is_object()) detail::fail("", "expected a system object");
    const long n = detail::small_int(detail::field(j, "n", ""), "/n");
    if (n < 1) detail::fail("/n", "n must be positive");
    const Field field = j.contains("field") ? parse_field(j["field"], "/field") : Field::complex;
    const Domain d = j.contains("domain") ? parse_domain(j["domain"], "/domain") : Domain{};
    SystemClass cls = j.contains("class") ? parse_class(j["class"], "/class")
                                          : (j.contains("V") ? SystemClass::Lprime : SystemClass::BarL);
    auto mf = [&](const char* key) {
        return j.contains(key) ? parse_matrix_function(j[key], n, d, std::string("/") + key) : MatrixFunction::zero(n, d);
    };
    try {
        if (cls == SystemClass::Lprime || cls == SystemClass::Ldoubleprime) {
            if (j.contains("A")) detail::fail("/A", "reduced classes carry no A");
            if (j.contains("f")) detail::fail("/f", "reduced classes carry no f");
            const auto V = j.contains("V") ? mf("V") : mf("B");
            return System::make(cls, MatrixFunction::zero(n, d), V, VectorFunction::zero(n, d), field, d);
        }
        if (j.contains("V")) detail::fail("/V", "V belongs to the reduced classes; use B");
        const auto f = j.contains("f") ? parse_vector_function(j["f"], n, d, "/f") : VectorFunction::zero(n, d);
        if (cls == SystemClass::L && !f.is_zero()) detail::fail("/f", "class L is homogeneous");
        return System::make(cls, mf("A"), mf("B"), f, field, d);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("/: ") + e.what());
    }
}

inline json to_json(const System& s) {
    json j{{"n", s.n()}, {"field", to_string(s.field)}, {"class", to_string(s.cls)},
           {"domain", {s.domain().lo, s.domain().hi}}};
    if (s.primed()) {
        j["V"] = to_json(s.B);
        return j;
    }
    j["A"] = to_json(s.A);
    j["B"] = to_json(s.B);
    if (!s.f.is_zero()) j["f"] = to_json(s.f);
    return j;
}

inline json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": byte " + std::to_string(e.byte) + ": malformed JSON");
    }
}

// ---------------------------------------------------------------------------
// Symmetry fields

/// {"tau": scalar, "gamma": matrix} for reduced fields, {"tau": scalar, "eta": matrix function} otherwise.
inline SymmetryField parse_symmetry(const json& j, long n, const Domain& d, const std::string& where) {
    const auto tau = parse_scalar_function(detail::field(j, "tau", where), where + "/tau");
    if (j.contains("eta")) return SymmetryField::general(tau, parse_matrix_function(j["eta"], n, d, where + "/eta"));
    const Mat gamma = j.contains("gamma") ? parse_square(j["gamma"], n, where + "/gamma") : Mat(Mat::Zero(n, n));
    return SymmetryField::reduced(tau, gamma);
}

inline std::vector<SymmetryField> parse_symmetries(const json& j, long n, const Domain& d) {
    const json& list = j.is_object() ? detail::field(j, "symmetries", "") : j;
    const std::string base = j.is_object() ? "/symmetries" : "";
    if (!list.is_array()) detail::fail(base, "expected an array of symmetry fields");
    std::vector<SymmetryField> out;
    for (size_t i = 0; i < list.size(); ++i) out.push_back(parse_symmetry(list[i], n, d, base + "/" + std::to_string(i)));
    return out;
}

inline json to_json(const SymmetryField& q, const Domain& d) {
    json j{{"tau", to_json(q.tau, d)}};
    if (q.eta) j["eta"] = to_json(*q.eta);
    else j["gamma"] = to_json(q.gamma);
    return j;
}

// ---------------------------------------------------------------------------
// Reports

inline json to_json(const ToleranceConfig& c) {
    return {{"rank_tol", c.rank_tol}, {"eig_cluster_tol", c.eig_cluster_tol}, {"residual_tol", c.residual_tol},
            {"ode_steps", c.ode_steps}};
}

inline json to_json(const Transform& tr) {
    json j{{"T", to_json(tr.T, tr.source)}, {"H", to_json(tr.H)}, {"source", {tr.source.lo, tr.source.hi}}};
    if (!tr.h.is_zero()) j["h"] = to_json(tr.h);
    if (tr.C) j["C"] = to_json(*tr.C);
    if (!tr.note.empty()) j["note"] = tr.note;
    return j;
}

inline json to_json(const ClassificationReport& r, const Domain& d) {
    json j{{"n", r.n},           {"field", to_string(r.field)}, {"singular", r.singular},
           {"dim_total", r.dim_total}, {"k", r.k()},            {"dim_s", r.dim_s()},
           {"dim_ess", r.dim_ess()},   {"path", r.path},        {"notes", r.notes}};
    if (!r.case_label.empty()) j["case"] = r.case_label;
    if (r.gauge_residual > 0) j["gauge_residual"] = r.gauge_residual;
    if (r.algebra) {
        const auto& a = *r.algebra;
        json tp = json::array();
        for (const auto& q : a.t_part) tp.push_back(to_json(q, d));
        json s = json::array();
        for (const auto& m : a.s.elems) s.push_back(to_json(m));
        j["algebra"] = {{"t_part", tp},           {"s", s},
                        {"normalized", a.normalized}, {"improper_shift", a.improper_shift},
                        {"inconclusive", a.inconclusive}, {"gap", std::isfinite(a.gap) ? json(a.gap) : json(nullptr)},
                        {"notes", a.notes}};
    }
    return j;
}

inline json to_json(const SimilarityVerdict& v) {
    json j{{"outcome", to_string(v.outcome)}, {"reason", v.reason}};
    if (v.outcome == SimilarityOutcome::similar) {
        j["alpha"] = to_json(v.alpha);
        j["M"] = to_json(v.M);
        j["Gamma"] = to_json(v.Gamma);
        j["residual"] = v.residual;
    }
    return j;
}

/// Solution dump; every `stride`-th grid node.
inline json to_json(const Integration& r, double res, size_t stride = 1) {
    const auto& s = r.solution;
    json nodes = json::array();
    for (size_t i = 0; i < s.t.size(); i += std::max<size_t>(1, stride)) {
        json node{{"t", s.t[i]}, {"x", to_json(s.x[i])}, {"xt", to_json(s.xt[i])}};
        if (s.xp) node["xp"] = to_json((*s.xp)[i]);
        nodes.push_back(node);
    }
    json plan{{"procedure", to_string(r.plan.tag)}, {"constancy", r.plan.constancy}};
    if (r.plan.A_const.size()) {
        plan["A_const"] = to_json(r.plan.A_const);
        plan["B_const"] = to_json(r.plan.B_const);
    }
    if (r.plan.Lambda.size()) {
        plan["Lambda"] = to_json(r.plan.Lambda);
        plan["block_sizes"] = r.plan.block_sizes;
        plan["chain_sizes"] = r.plan.chain_sizes;
        plan["block_residual"] = r.plan.block_residual;
    }
    if (r.plan.quadrature_bound) plan["quadrature_bound"] = *r.plan.quadrature_bound;
    return {{"method", s.method},
            {"residual", res},
            {"quadratures", s.quadratures},
            {"domain", {s.dom.lo, s.dom.hi}},
            {"min_wronskian", s.min_wronskian()},
            {"notes", s.notes},
            {"plan", plan},
            {"grid", nodes}};
}

} // namespace symode::io
