#include "arratia/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "arratia/chaos.hpp"
#include "arratia/coalescing_flow.hpp"
#include "arratia/domain.hpp"
#include "arratia/expansion.hpp"
#include "arratia/girsanov.hpp"
#include "arratia/numerics.hpp"
#include "arratia/parallel.hpp"
#include "arratia/report.hpp"
#include "arratia/rho_weights.hpp"
#include "arratia/stats.hpp"
#include "arratia/survival.hpp"

namespace arratia {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Names

namespace {

const std::vector<std::pair<Suite, std::string>>& suite_table() {
    static const std::vector<std::pair<Suite, std::string>> t{
        {Suite::SurvivalTriangle, "survival-triangle"},
        {Suite::PdeOrder, "pde-order"},
        {Suite::CoalescenceLaw, "coalescence-law"},
        {Suite::JIsometry, "j-isometry"},
        {Suite::JOrthogonality, "j-orthogonality"},
        {Suite::GirsanovTransport, "girsanov-transport"},
        {Suite::ClarkIdentity, "clark-identity"},
        {Suite::ConditionalMartingale, "conditional-martingale"},
        {Suite::GBracket, "g-bracket"},
        {Suite::AIsometry, "a-isometry"},
        {Suite::ExpansionRoundTrip, "expansion-roundtrip"},
        {Suite::NaiveFlowDemo, "naive-flow-demo"},
        {Suite::PhiPsiRoundTrip, "phi-psi-roundtrip"},
        {Suite::RecursiveProjection, "recursive-projection"},
        {Suite::ZeroKernel, "zero-kernel"},
    };
    return t;
}

}  // namespace

std::string to_string(Suite s) {
    for (const auto& [k, v] : suite_table())
        if (k == s) return v;
    return "unknown";
}

std::vector<std::string> suite_names() {
    std::vector<std::string> out;
    for (const auto& e : suite_table()) out.push_back(e.second);
    return out;
}

Suite suite_from_string(const std::string& name) {
    for (const auto& [k, v] : suite_table())
        if (v == name) return k;
    std::string known;
    for (const auto& n : suite_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown suite '" + name + "' (known: " + known + ")");
}

std::vector<std::string> suite_param_keys(Suite s) {
    switch (s) {
        case Suite::SurvivalTriangle: return {"u", "t", "printed", "printed_tolerance", "km_tolerance"};
        case Suite::PdeOrder: return {"dimensions", "t", "h", "extent", "region", "ratio", "ratio_tolerance"};
        case Suite::CoalescenceLaw: return {"u", "T"};
        case Suite::JIsometry:
        case Suite::JOrthogonality: return {"u", "T", "cases"};
        case Suite::GirsanovTransport: return {"u", "t", "fractions"};
        case Suite::ClarkIdentity: return {"u", "t", "levels"};
        case Suite::ConditionalMartingale: return {"u", "t", "times"};
        case Suite::GBracket: return {"u", "t", "beta_time", "table_h", "table_extent", "mae_factor"};
        case Suite::AIsometry:
            return {"u", "T", "indices", "cross", "boxes", "backend", "s_lo", "s_hi", "s_nodes", "mc_paths"};
        case Suite::ExpansionRoundTrip:
            return {"u", "T", "index_degree", "poly_degree", "max_size", "boxes", "target", "representable",
                    "indicator_t"};
        case Suite::NaiveFlowDemo: return {"u", "T"};
        case Suite::PhiPsiRoundTrip: return {"u", "t", "factor", "fraction"};
        case Suite::RecursiveProjection: return {"u", "T", "inner", "box", "poly_degree"};
        case Suite::ZeroKernel: return {"u", "T"};
    }
    return {};
}

std::string to_string(Check c) {
    switch (c) {
        case Check::Within: return "within";
        case Check::AtLeast: return "at-least";
        case Check::AtMost: return "at-most";
    }
    return "within";
}

Check check_from_string(const std::string& s) {
    if (s == "within") return Check::Within;
    if (s == "at-least") return Check::AtLeast;
    if (s == "at-most") return Check::AtMost;
    throw std::invalid_argument("unknown check '" + s + "'");
}

// ---------------------------------------------------------------------------
// Statistics and verdicts

bool evaluate(const Statistic& s) {
    switch (s.check) {
        case Check::Within: return std::abs(s.observed - s.reference) <= s.threshold;
        case Check::AtLeast: return s.observed >= s.threshold;
        case Check::AtMost: return s.observed <= s.threshold;
    }
    return false;
}

json Statistic::to_json() const {
    return {{"name", name},
            {"observed", json_number(observed)},
            {"reference", json_number(reference)},
            {"stderr", json_number(stderr_)},
            {"threshold", json_number(threshold)},
            {"check", arratia::to_string(check)},
            {"pass", pass}};
}

namespace {

double number_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
}

}  // namespace

Statistic Statistic::from_json(const json& j) {
    Statistic s;
    s.name = j.at("name").get<std::string>();
    s.observed = number_from_json(j.at("observed"));
    s.reference = number_from_json(j.at("reference"));
    s.stderr_ = number_from_json(j.at("stderr"));
    s.threshold = number_from_json(j.at("threshold"));
    s.check = check_from_string(j.at("check").get<std::string>());
    s.pass = j.at("pass").get<bool>();
    return s;
}

json Verdict::to_json() const {
    json j{{"name", name},
           {"suite", arratia::to_string(suite)},
           {"expected_failure", expected_failure},
           {"pass", pass},
           {"status", status},
           {"statistic_name", statistic_name},
           {"statistic", json_number(statistic)},
           {"threshold", json_number(threshold)},
           {"stderr", json_number(stderr_)},
           {"N", N},
           {"M", M},
           {"seed", seed.to_json()},
           {"params", params},
           {"warnings", warnings}};
    auto& arr = j["stats"] = json::array();
    for (const auto& s : stats) arr.push_back(s.to_json());
    return j;
}

namespace {

// 1 at the threshold, above 1 when failing.
double severity(const Statistic& s) {
    const double inf = std::numeric_limits<double>::infinity();
    switch (s.check) {
        case Check::Within: {
            const double d = std::abs(s.observed - s.reference);
            if (std::isnan(d)) return inf;
            return s.threshold > 0.0 ? d / s.threshold : (d > 0.0 ? inf : 0.0);
        }
        case Check::AtLeast:
            if (std::isnan(s.observed)) return inf;
            if (s.observed > 0.0 && s.threshold > 0.0) return s.threshold / s.observed;
            return s.observed >= s.threshold ? 0.0 : inf;
        case Check::AtMost:
            if (std::isnan(s.observed)) return inf;
            if (s.threshold > 0.0) return std::max(0.0, s.observed) / s.threshold;
            return s.observed <= s.threshold ? 0.0 : inf;
    }
    return inf;
}

Statistic within(std::string name, double observed, double reference, double se, double sigmas) {
    return {std::move(name), observed, reference, se, sigmas * se, Check::Within, false};
}
Statistic within_abs(std::string name, double observed, double reference, double tol, double se = 0.0) {
    return {std::move(name), observed, reference, se, tol, Check::Within, false};
}
Statistic at_least(std::string name, double observed, double threshold, double se = 0.0) {
    return {std::move(name), observed, 0.0, se, threshold, Check::AtLeast, false};
}
Statistic at_most(std::string name, double observed, double threshold, double se = 0.0) {
    return {std::move(name), observed, 0.0, se, threshold, Check::AtMost, false};
}

void finalize(Verdict& v) {
    bool all = true;
    double worst = -1.0;
    for (auto& s : v.stats) {
        s.pass = evaluate(s);
        all = all && s.pass;
        const double sev = severity(s);
        if (sev > worst || v.statistic_name.empty()) {
            worst = sev;
            v.statistic_name = s.name;
            v.statistic = s.check == Check::Within ? std::abs(s.observed - s.reference) : s.observed;
            v.threshold = s.threshold;
            v.stderr_ = s.stderr_;
        }
    }
    if (v.stats.empty()) all = false;
    if (v.expected_failure) {
        v.pass = all;
        v.status = all ? "expected-failure confirmed" : "expected-failure not confirmed";
    } else {
        v.pass = all;
        v.status = all ? "pass" : "fail";
    }
}

// ---------------------------------------------------------------------------
// Parameters

double num(const json& p, const char* key, double def) { return p.contains(key) ? p.at(key).get<double>() : def; }
std::size_t count(const json& p, const char* key, std::size_t def) {
    return p.contains(key) ? p.at(key).get<std::size_t>() : def;
}
std::vector<double> vec(const json& p, const char* key, std::vector<double> def) {
    return p.contains(key) ? p.at(key).get<std::vector<double>>() : def;
}
json node(const json& p, const char* key, json def) { return p.contains(key) ? p.at(key) : def; }

std::vector<double> start_point(const json& p, std::vector<double> def) {
    auto u = vec(p, "u", std::move(def));
    for (std::size_t i = 1; i < u.size(); ++i)
        if (!(u[i - 1] < u[i])) throw std::invalid_argument("u must be strictly increasing (a point of S^n)");
    if (u.empty()) throw std::invalid_argument("u must not be empty");
    return u;
}

using Word = std::vector<std::vector<std::size_t>>;  // one multi-index as plain words
using Words = std::vector<Word>;

MultiIndex index_from_json(const json& j) { return MultiIndex::of(j.get<std::vector<std::vector<std::size_t>>>()); }

std::vector<Interval> boxes_from_json(const json& j) {
    std::vector<Interval> out;
    for (const auto& b : j) out.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    return out;
}

std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

// ---------------------------------------------------------------------------
// Per-path rows, filled in parallel and reduced in path order

struct Rows {
    std::size_t width = 0;
    std::vector<double> data;

    const double* row(std::size_t p) const { return data.data() + p * width; }
    std::size_t paths() const { return width ? data.size() / width : 0; }
};

Rows fill_rows(std::size_t N, std::size_t width, std::size_t threads,
               const std::function<void(std::size_t p, double* row)>& body) {
    Rows r{width, std::vector<double>(N * width, std::numeric_limits<double>::quiet_NaN())};
    parallel_for(N, threads, [&](std::size_t p) { body(p, r.data.data() + p * width); });
    return r;
}

// Mean of g(row) over rows whose first entry is not NaN.
MeanAccumulator reduce(const Rows& r, const std::function<double(const double*)>& g) {
    MeanAccumulator acc;
    for (std::size_t p = 0; p < r.paths(); ++p) {
        const double* x = r.row(p);
        if (std::isnan(x[0])) continue;
        acc.add(g(x));
    }
    return acc;
}

MeanAccumulator column(const Rows& r, std::size_t k) {
    return reduce(r, [k](const double* x) { return x[k]; });
}

std::size_t skipped(const Rows& r) {
    std::size_t s = 0;
    for (std::size_t p = 0; p < r.paths(); ++p) s += std::isnan(r.row(p)[0]) ? 1 : 0;
    return s;
}

std::vector<double> column_values(const Rows& r, std::size_t k) {
    std::vector<double> v;
    v.reserve(r.paths());
    for (std::size_t p = 0; p < r.paths(); ++p)
        if (!std::isnan(r.row(p)[0])) v.push_back(r.row(p)[k]);
    return v;
}

struct Ctx {
    const TestSpec& spec;
    const RunContext& run;
    Verdict& v;
    std::size_t threads() const { return run.threads ? run.threads : default_threads(); }
    double sigmas() const { return spec.tol.sigmas; }
    void add(Statistic s) { v.stats.push_back(std::move(s)); }
    void warn(std::string w) { v.warnings.push_back(std::move(w)); }
};

// ---------------------------------------------------------------------------
// Suites

void survival_triangle(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 2.0});
    const double t = num(p, "t", 1.0);
    const double closed = alpha_chamber_closed(t, u);
    if (p.contains("printed"))
        c.add(within_abs("closed form vs printed value", closed, p.at("printed").get<double>(),
                         num(p, "printed_tolerance", 5e-8)));
    const auto km = alpha_karlin_mcgregor(t, u);
    if (!km.ok) c.warn("Karlin-McGregor quadrature: " + km.message);
    c.add(within_abs("Karlin-McGregor vs closed form", km.value, closed, num(p, "km_tolerance", 1e-4), km.error));
    const auto mc = alpha_monte_carlo(DriftField::zero(u.size()), Domain::weyl_chamber(u.size()), u, t, c.spec.N,
                                      c.spec.seed, c.spec.M);
    c.add(within("Monte Carlo vs closed form", mc.value, closed, mc.stderr_, c.sigmas()));
}

void pde_order(Ctx& c) {
    const json& p = c.spec.params;
    const auto dims = p.contains("dimensions") ? p.at("dimensions").get<std::vector<std::size_t>>()
                                               : std::vector<std::size_t>{2, 3};
    const double t = num(p, "t", 1.0);
    const auto hs = vec(p, "h", {0.2, 0.1, 0.05, 0.025});
    const double extent = num(p, "extent", 8.0);
    const auto region = vec(p, "region", {0.4, 3.0});
    const double ratio = num(p, "ratio", 4.0), ratio_tol = num(p, "ratio_tolerance", 0.5);
    if (hs.size() < 2) throw std::invalid_argument("pde-order needs at least two mesh sizes");

    for (std::size_t n : dims) {
        if (n < 2 || n > 4) throw std::invalid_argument("pde-order supports n in {2, 3, 4}");
        const std::size_t d = n - 1;
        const Domain dom = Domain::weyl_chamber(n);
        auto alpha_g = [&](std::span<const double> g, double s) {
            std::vector<double> u(n, 0.0);
            for (std::size_t k = 0; k < d; ++k) {
                if (!(g[k] > 0.0)) return 0.0;
                u[k + 1] = u[k] + g[k];
            }
            return alpha_chamber_closed(s, u);
        };
        // time derivative of the closed form: exact for n = 2, central difference otherwise
        auto dalpha_dt = [&](std::span<const double> g) {
            if (n == 2) return -g[0] / (2.0 * std::sqrt(M_PI) * std::pow(t, 1.5)) * std::exp(-g[0] * g[0] / (4.0 * t));
            const double e = 1e-4;
            return (alpha_g(g, t + e) - alpha_g(g, t - e)) / (2.0 * e);
        };
        // common nodes: multiples of the coarsest step inside the region
        const double h0 = hs.front();
        std::vector<double> axis;
        for (long i = 0;; ++i) {
            const double g = static_cast<double>(i) * h0;
            if (g > region[1] + 1e-9) break;
            if (g >= region[0] - 1e-9) axis.push_back(g);
        }
        std::vector<double> residual;
        for (double h : hs) {
            const PdeMesh mesh{extent, h, t, 0.0, 1};
            const auto Lf = apply_gap_operator(DriftField::zero(n), dom, mesh,
                                               [&](std::span<const double> g) { return alpha_g(g, t); });
            const auto N = static_cast<std::size_t>(std::llround(extent / h)) + 1;
            double worst = 0.0;
            std::vector<std::size_t> it(d, 0);
            std::vector<double> g(d);
            for (;;) {
                std::size_t idx = 0;
                for (std::size_t k = 0; k < d; ++k) {
                    g[k] = axis[it[k]];
                    idx = idx * N + static_cast<std::size_t>(std::llround(g[k] / h));
                }
                worst = std::max(worst, std::abs(Lf[idx] - dalpha_dt(g)));
                std::size_t k = d;
                while (k > 0 && ++it[k - 1] == axis.size()) it[--k] = 0;
                if (k == 0) break;
            }
            residual.push_back(worst);
            c.add(at_least("S^" + std::to_string(n) + " residual at h=" + fmt(h), worst, 0.0));
        }
        for (std::size_t i = 1; i < residual.size(); ++i)
            c.add(within_abs("S^" + std::to_string(n) + " residual ratio h=" + fmt(hs[i - 1]) + "/" + fmt(hs[i]),
                             residual[i - 1] / residual[i], ratio, ratio_tol));
    }
}

void coalescence_law(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    if (u.size() != 2) throw std::invalid_argument("coalescence-law compares the two-point law");
    const double T = num(p, "T", 1.0);
    StageOptions opts;
    opts.grid = make_grid(T, c.spec.M);
    const Rows r = fill_rows(c.spec.N, 2, c.threads(), [&](std::size_t path, double* x) {
        PathRng rng(c.spec.seed, path, 1);
        const auto st = simulate_stage(u, opts, rng);
        x[0] = 0.0;
        x[1] = st.truncated ? std::numeric_limits<double>::infinity() : st.tau;
    });
    auto taus = column_values(r, 1);
    const auto truncated = static_cast<std::size_t>(std::count_if(taus.begin(), taus.end(), [](double x) { return std::isinf(x); }));
    if (truncated) c.warn(std::to_string(truncated) + " motions reached the tail cap; counted as tau = +inf");
    const double gap = u[1] - u[0];
    const auto ks = ks_test(std::move(taus), [gap](double s) {
        if (!(s > 0.0)) return 0.0;
        return std::erfc(gap / (2.0 * std::sqrt(s)));
    });
    c.add(at_least("KS p-value of tau", ks.p_value, c.spec.tol.ks_floor));
    c.add(at_least("KS distance", ks.statistic, 0.0));
}

struct JCase {
    ChaosIndex index;
    SimplexKernel kernel;
    std::string label;
};

std::vector<JCase> j_cases(const json& p, std::size_t n, const json& def) {
    std::vector<JCase> out;
    for (const auto& e : node(p, "cases", def)) {
        JCase jc{ChaosIndex(n, e.at("index").get<std::vector<std::size_t>>()), kernel_from_json(e.at("kernel")), ""};
        if (jc.kernel.arity() != jc.index.degree())
            throw std::invalid_argument("kernel arity does not match index " + jc.index.to_string());
        jc.label = jc.index.to_string() + " " + jc.kernel.description();
        out.push_back(std::move(jc));
    }
    if (out.empty()) throw std::invalid_argument("no kernel/index cases given");
    return out;
}

json box(std::vector<std::pair<double, double>> b) {
    json arr = json::array();
    for (auto [lo, hi] : b) arr.push_back({lo, hi});
    return {{"name", "box"}, {"bounds", arr}};
}

Rows j_rows(Ctx& c, const std::vector<double>& u, double T, const std::vector<JCase>& cases) {
    const std::size_t n = u.size();
    const Domain dom = Domain::weyl_chamber(n);
    auto field = std::make_shared<const ClosedFormField>(dom, true);
    const TimeGrid grid = make_grid(T, c.spec.M);
    std::vector<std::size_t> capped(c.spec.N, 0);
    Rows r = fill_rows(c.spec.N, cases.size(), c.threads(), [&](std::size_t path, double* x) {
        const SamplePath w = sample_brownian(u, grid, c.spec.seed, path);
        StoppedIntegrator J(w, solve_xi(w, DriftField::zero(n), dom), field);
        for (std::size_t k = 0; k < cases.size(); ++k) x[k] = J(cases[k].kernel, cases[k].index);
        capped[path] = J.stats().capped;
    });
    const auto total = std::accumulate(capped.begin(), capped.end(), std::size_t{0});
    if (total) c.warn(std::to_string(total) + " gradient components clipped at the drift cap");
    return r;
}

void j_isometry(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const double T = num(p, "T", 1.0);
    const json def = json::array({
        {{"index", {1}}, {"kernel", box({{0, 1}})}},
        {{"index", {1, 2}}, {"kernel", box({{0, 1}, {0, 1}})}},
        {{"index", {1, 1}}, {"kernel", box({{0, 1}, {0, 1}})}},
        {{"index", {2, 1}}, {"kernel", {{"name", "legendre"}, {"bounds", {{0, 1}, {0, 1}}}, {"degrees", {1, 0}}}}},
    });
    const auto cases = j_cases(p, u.size(), def);
    const Rows r = j_rows(c, u, T, cases);
    const auto weight = survival_weight(std::make_shared<const ClosedFormField>(Domain::weyl_chamber(u.size())), u);
    for (std::size_t k = 0; k < cases.size(); ++k) {
        const auto m = reduce(r, [k](const double* x) { return x[k] * x[k]; });
        const auto q = weighted_gram({ProductKernel::product({cases[k].kernel})}, weight)[0][0];
        c.add(within("E J^2 " + cases[k].label, m.mean(), q.value, std::hypot(m.stderr_(), q.quad_error), c.sigmas()));
    }
}

void j_orthogonality(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const double T = num(p, "T", 1.0);
    json def = json::array();
    for (std::vector<std::size_t> w : {std::vector<std::size_t>{1}, {2}, {1, 1}, {1, 2}, {2, 1}, {2, 2}}) {
        std::vector<std::pair<double, double>> b(w.size(), {0.0, 1.0});
        def.push_back({{"index", w}, {"kernel", box(b)}});
    }
    const auto cases = j_cases(p, u.size(), def);
    const Rows r = j_rows(c, u, T, cases);
    for (std::size_t a = 0; a < cases.size(); ++a)
        for (std::size_t b = a + 1; b < cases.size(); ++b) {
            if (cases[a].index == cases[b].index) continue;
            const auto m = reduce(r, [a, b](const double* x) { return x[a] * x[b]; });
            c.add(within("E J_a J_b " + cases[a].index.to_string() + " x " + cases[b].index.to_string(), m.mean(), 0.0,
                         m.stderr_(), c.sigmas()));
        }
}

void girsanov_transport(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const double t = num(p, "t", 1.0);
    const auto fractions = vec(p, "fractions", {0.25, 0.5, 1.0});
    const std::size_t n = u.size();
    const Domain dom = Domain::weyl_chamber(n);
    const TimeGrid grid = make_grid(t, c.spec.M);
    const auto batch = sample_conditioned(u, t, DriftField::zero(n), dom, grid, c.spec.N, c.spec.seed);
    const ClosedFormField field(dom);
    const std::size_t W = fractions.size() * n;
    const Rows r = fill_rows(batch.paths.size(), W + 1, c.threads(), [&](std::size_t path, double* x) {
        const auto tp = phi_transform(t, batch.paths[path], field, DriftField::zero(n));
        x[0] = tp.valid ? 1.0 : std::numeric_limits<double>::quiet_NaN();
        for (std::size_t f = 0; f < fractions.size(); ++f) {
            const std::size_t j = grid.index_at_or_before(fractions[f] * t + 1e-12);
            for (std::size_t i = 0; i < n; ++i) x[1 + f * n + i] = tp.path.value(i, j);
        }
    });
    if (const auto bad = skipped(r)) c.warn(std::to_string(bad) + " transformed paths flagged invalid");
    c.add(at_least("acceptance", batch.acceptance(), 0.0, batch.acceptance_stderr()));
    for (std::size_t f = 0; f < fractions.size(); ++f) {
        const double s = grid.time(grid.index_at_or_before(fractions[f] * t + 1e-12));
        for (std::size_t i = 0; i < n; ++i) {
            const double mu = u[i], sd = std::sqrt(s);
            const auto ks = ks_test(column_values(r, 1 + f * n + i), [mu, sd](double x) { return normal_cdf((x - mu) / sd); });
            c.add(at_least("KS p-value coordinate " + std::to_string(i + 1) + " at s=" + fmt(s), ks.p_value,
                           c.spec.tol.ks_floor));
        }
    }
}

void clark_identity(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const double t = num(p, "t", 1.0);
    auto levels = p.contains("levels") ? p.at("levels").get<std::vector<std::size_t>>()
                                       : std::vector<std::size_t>{256, 512, 1024};
    std::sort(levels.begin(), levels.end());
    const std::size_t fine = levels.back();
    for (auto L : levels)
        if (L == 0 || fine % L) throw std::invalid_argument("clark-identity levels must divide the finest level");
    const std::size_t n = u.size();
    const Domain dom = Domain::weyl_chamber(n);
    auto field = std::make_shared<const ClosedFormField>(dom, true);
    const auto Q = clark_integrand("survival-indicator", {u, t, 0, field});
    const TimeGrid fine_grid = make_grid(t, fine);
    const std::size_t K = levels.size();
    const Rows r = fill_rows(c.spec.N, K + 1, c.threads(), [&](std::size_t path, double* x) {
        const SamplePath w = sample_brownian(u, fine_grid, c.spec.seed, path);
        const double life = solve_xi(w, DriftField::zero(n), dom).lifetime;
        const double target = life > t ? 1.0 : 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t stride = fine / levels[k];
            SamplePath coarse(make_grid(t, levels[k]), u);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j <= levels[k]; ++j) coarse.value(i, j) = w.value(i, j * stride);
            const double y = clark_reconstruction(Q, coarse, life);
            x[k] = (target - y) * (target - y);
            if (k + 1 == K) x[K] = y - Q.mean;
        }
    });
    for (std::size_t k = 0; k < K; ++k) {
        const auto m = column(r, k);
        c.add(at_least("L2 error M=" + std::to_string(levels[k]), m.mean(), 0.0, m.stderr_()));
    }
    for (std::size_t k = 0; k + 1 < K; ++k) {
        const auto d = reduce(r, [k](const double* x) { return x[k] - x[k + 1]; });
        c.add(at_least("error decrease M=" + std::to_string(levels[k]) + " -> " + std::to_string(levels[k + 1]),
                       d.mean(), 0.0, d.stderr_()));
    }
    // variance of the stochastic term, stderr from the fourth central moment
    const auto y = column(r, K);
    const double mean = y.mean();
    const auto c2 = reduce(r, [&](const double* x) { return (x[K] - mean) * (x[K] - mean); });
    const auto c4 = reduce(r, [&](const double* x) { return std::pow(x[K] - mean, 4); });
    const double var = c2.mean(), nn = static_cast<double>(c2.count());
    const double se = std::sqrt(std::max(0.0, c4.mean() - var * var) / nn);
    const double a = alpha_chamber_closed(t, u);
    c.add(within("variance of the stochastic integral", var, a * (1.0 - a), se, c.sigmas()));
}

void conditional_martingale(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const double t = num(p, "t", 1.0);
    const auto times = vec(p, "times", {0.0, 0.25, 0.5, 0.75, 1.0});
    const std::size_t n = u.size();
    const Domain dom = Domain::weyl_chamber(n);
    const ClosedFormField field(dom);
    const TimeGrid grid = make_grid(t, c.spec.M);
    std::vector<std::size_t> cols;
    for (double s : times) {
        if (s < 0.0 || s > t) throw std::invalid_argument("martingale times must lie in [0, t]");
        const std::size_t j = grid.index_at_or_before(s + 1e-12);
        if (std::abs(grid.time(j) - s) > 1e-9) throw std::invalid_argument("martingale time " + fmt(s) + " is not a grid time");
        cols.push_back(j);
    }
    const Rows r = fill_rows(c.spec.N, times.size(), c.threads(), [&](std::size_t path, double* x) {
        const SamplePath w = sample_brownian(u, grid, c.spec.seed, path);
        const auto xi = solve_xi(w, DriftField::zero(n), dom);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const double s = grid.time(cols[k]);
            if (!(xi.lifetime > s)) {
                x[k] = 0.0;
                continue;
            }
            x[k] = s < t ? field.alpha(t - s, xi.xi.at(cols[k])) : 1.0;
        }
    });
    const double a = field.alpha(t, u);
    for (std::size_t k = 0; k < times.size(); ++k) {
        const auto m = column(r, k);
        c.add({"mean at s=" + fmt(times[k]), m.mean(), a, m.stderr_(), std::max(c.sigmas() * m.stderr_(), 1e-12),
               Check::Within, false});
    }
}

void g_bracket(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0, 2.0});
    if (u.size() != 3) throw std::invalid_argument("g-bracket uses the three-point aleph drift");
    const double t = num(p, "t", 1.0);
    auto table = std::make_shared<const BetaTable>(
        beta_table_harmonic(num(p, "beta_time", 0.5), num(p, "table_h", 0.05), num(p, "table_extent", 8.0)));
    const DriftField aleph = aleph_field(table);
    const Domain dom = Domain::weyl_chamber(3);
    const TimeGrid grid = make_grid(t, c.spec.M);
    // per path: |QV_i - t ^ tau| for i = 1..3, then the three cross covariations
    const Rows r = fill_rows(c.spec.N, 6, c.threads(), [&](std::size_t path, double* x) {
        const SamplePath eta = sample_brownian(u, grid, c.spec.seed, path);
        const auto xi = solve_xi(eta, aleph, dom);
        double life = kNoCollision;
        const SamplePath G = g_transform(xi.xi, aleph, dom, &life);
        const double stop = std::min(t, life);
        const std::size_t steps = grid.count_before(stop);
        double qv[3] = {0, 0, 0}, cv[3] = {0, 0, 0};
        for (std::size_t j = 0; j < steps; ++j) {
            const double d0 = G.increment(0, j), d1 = G.increment(1, j), d2 = G.increment(2, j);
            qv[0] += d0 * d0;
            qv[1] += d1 * d1;
            qv[2] += d2 * d2;
            cv[0] += d0 * d1;
            cv[1] += d0 * d2;
            cv[2] += d1 * d2;
        }
        for (int i = 0; i < 3; ++i) {
            x[i] = std::abs(qv[i] - stop);
            x[3 + i] = cv[i];
        }
    });
    const double bound = num(p, "mae_factor", 5.0) * std::sqrt(grid.dt()) * t;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto m = column(r, i);
        c.add(at_most("MAE of [G_" + std::to_string(i + 1) + "] vs t^tau", m.mean(), bound, m.stderr_()));
    }
    const char* pairs[3] = {"1,2", "1,3", "2,3"};
    for (std::size_t k = 0; k < 3; ++k) {
        const auto m = column(r, 3 + k);
        c.add(within(std::string("[G_") + pairs[k][0] + ", G_" + pairs[k][2] + "]", m.mean(), 0.0, m.stderr_(),
                     c.sigmas()));
    }
}

std::shared_ptr<const RhoWeights> make_weights(const std::vector<double>& u, const json& p, const Ctx& c,
                                               std::size_t M) {
    if (u.size() <= 2) return std::make_shared<const RhoWeights>(u);
    RhoOptions o;
    const std::string backend = p.contains("backend") ? p.at("backend").get<std::string>() : "harmonic";
    if (backend == "harmonic")
        o.backend = BetaBackend::Harmonic;
    else if (backend == "mc")
        o.backend = BetaBackend::MonteCarlo;
    else
        throw std::invalid_argument("unknown beta backend '" + backend + "' (harmonic, mc)");
    o.s_lo = num(p, "s_lo", o.s_lo);
    o.s_hi = num(p, "s_hi", o.s_hi);
    o.s_nodes = count(p, "s_nodes", o.s_nodes);
    o.mc_paths = count(p, "mc_paths", o.mc_paths);
    o.seed = c.spec.seed.substream(99);
    o.stage.grid = make_grid(1.0, M);
    o.cache_dir = c.run.cache_dir;
    return std::make_shared<const RhoWeights>(u, o);
}

StageOptions stage_options(double T, std::size_t M) {
    StageOptions s;
    s.grid = make_grid(T, M);
    return s;
}

void a_isometry(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const std::size_t n = u.size();
    if (n < 2 || n > 3) throw std::invalid_argument("a-isometry covers n = 2 and n = 3");
    const double T = num(p, "T", 1.0);
    json def_idx, def_boxes;
    if (n == 2) {
        def_idx = Words{{{}, {1}}, {{}, {2}}, {{1}, {}}, {{}, {1, 2}}, {{}, {2, 1}}, {{1}, {1}}, {{1}, {2}}, {{1, 1}, {}}};
        def_boxes = {{0, 1}, {0, 1}};
    } else {
        def_idx = Words{{{}, {}, {1}}, {{}, {}, {3}}, {{}, {1}, {}}, {{}, {2}, {}}, {{1}, {}, {}},
                        {{}, {}, {1, 3}}, {{}, {2}, {3}}, {{}, {1}, {1}}, {{1}, {2}, {}}, {{1}, {}, {2}}};
        def_boxes = {{0, 1}, {0.25, 1}, {0, 1}};
    }
    BasisSpec spec;
    spec.part_box = boxes_from_json(node(p, "boxes", def_boxes));
    spec.max_degree = 0;
    spec.max_size = 1;
    if (spec.part_box.size() != n) throw std::invalid_argument("one box per part expected");
    std::vector<MultiIndex> idx;
    std::vector<ProductKernel> ker;
    for (const auto& j : node(p, "indices", def_idx)) {
        idx.push_back(index_from_json(j));
        if (idx.back().level() != n) throw std::invalid_argument("index " + idx.back().to_string() + " has the wrong level");
        ker.push_back(raw_kernels(idx.back(), spec).at(0));
    }
    std::vector<std::pair<std::size_t, std::size_t>> cross;
    if (p.contains("cross")) {
        for (const auto& e : p.at("cross")) cross.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    } else {
        for (std::size_t k = 0; k + 1 < idx.size(); ++k) cross.emplace_back(k, k + 1);
        if (idx.size() > 2) cross.emplace_back(0, idx.size() - 1);
    }
    for (auto [a, b] : cross)
        if (a >= idx.size() || b >= idx.size() || idx[a] == idx[b])
            throw std::invalid_argument("cross pairs must name two distinct listed indices");

    const auto weights = make_weights(u, p, c, c.spec.M);
    for (const auto& w : weights->warnings()) c.warn(w);
    const auto weight = rho_weight(weights);
    const StageOptions stage = stage_options(T, c.spec.M);
    const Rows r = fill_rows(c.spec.N, idx.size(), c.threads(), [&](std::size_t path, double* x) {
        const StagedMotion motion = simulate_staged(u, stage, c.spec.seed, path);
        if (!motion.complete()) return;
        MotionIntegrals mi(motion, weights);
        for (std::size_t k = 0; k < idx.size(); ++k) x[k] = mi(ker[k], idx[k]);
    });
    if (const auto s = skipped(r)) c.warn(std::to_string(s) + " motions hit the tail cap and were excluded");
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto m = reduce(r, [k](const double* x) { return x[k] * x[k]; });
        const auto q = weighted_gram({ker[k]}, weight)[0][0];
        c.add(within("E (A k)^2 " + idx[k].to_string(), m.mean(), q.value,
                     combined_sigma({m.stderr_(), q.quad_error, q.weight_stderr}), c.sigmas()));
    }
    for (auto [a, b] : cross) {
        const auto m = reduce(r, [a = a, b = b](const double* x) { return x[a] * x[b]; });
        c.add(within("E A_a A_b " + idx[a].to_string() + " x " + idx[b].to_string(), m.mean(), 0.0, m.stderr_(),
                     c.sigmas()));
    }
}

MotionFunctional sum_functionals(std::vector<MotionFunctional> fs) {
    return [fs = std::move(fs)](const StagedMotion& m) {
        double s = 0.0;
        for (const auto& f : fs) s += f(m);
        return s;
    };
}

void expansion_roundtrip(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const std::size_t n = u.size();
    const double T = num(p, "T", 1.0);
    BasisSpec spec;
    json def_boxes = json::array();
    for (std::size_t j = 0; j < n; ++j) def_boxes.push_back({0.0, 1.0});
    spec.part_box = boxes_from_json(node(p, "boxes", def_boxes));
    spec.max_degree = static_cast<unsigned>(count(p, "poly_degree", 1));
    spec.max_size = count(p, "max_size", 8);
    const auto weights = make_weights(u, p, c, c.spec.M);
    const auto bases = build_bases(n, count(p, "index_degree", 2), rho_weight(weights), spec);
    double worst_defect = 0.0;
    for (const auto& b : bases) worst_defect = std::max(worst_defect, b.orthonormality_error);
    c.add(at_most("basis orthonormality defect", worst_defect, 1e-6));

    auto find = [&](const json& j) -> const WeightedBasis& {
        const auto mi = index_from_json(j);
        for (const auto& b : bases)
            if (b.index == mi) return b;
        throw std::invalid_argument("index " + mi.to_string() + " is not in the basis set");
    };
    auto unit = [&](const WeightedBasis& b, std::size_t e, double coef) {
        if (e >= b.size()) throw std::invalid_argument("element beyond the basis size of " + b.index.to_string());
        std::vector<double> v(b.size(), 0.0);
        v[e] = coef;
        return basis_functional(b, v, weights);
    };
    ProjectionSetup setup{u, stage_options(T, c.spec.M), weights, c.spec.N, c.spec.seed, c.threads(), "f"};
    auto with_seed = [&](std::uint64_t k, std::string name) {
        ProjectionSetup s = setup;
        s.seed = c.spec.seed.substream(k);
        s.functional = std::move(name);
        return s;
    };

    // (a) a single basis element comes back as a unit vector
    const json target = node(p, "target", {{"index", Word{{1}, {1}}}, {"element", 1}});
    const auto& tb = find(target.at("index"));
    const std::size_t te = target.at("element").get<std::size_t>();
    const auto ta = project(unit(tb, te, 1.0), bases, with_seed(1, "A e_target"));
    if (ta.truncated) c.warn(std::to_string(ta.truncated) + " motions hit the tail cap and were excluded");
    for (const auto& e : ta.entries) {
        const double ref = (e.index == tb.index && e.element == te) ? 1.0 : 0.0;
        c.add(within("unit vector " + e.index.to_string() + "#" + std::to_string(e.element), e.estimate, ref, e.stderr_,
                     c.sigmas()));
    }

    // (b) Parseval for a finite combination
    const json def_rep = json::array({{{"index", Word{{}, {1}}}, {"element", 0}, {"coef", 0.6}},
                                      {{"index", Word{{1}, {2}}}, {"element", 0}, {"coef", -0.5}},
                                      {{"index", Word{{}, {1, 2}}}, {"element", 0}, {"coef", 0.4}}});
    std::vector<MotionFunctional> parts;
    for (const auto& e : node(p, "representable", def_rep))
        parts.push_back(unit(find(e.at("index")), e.at("element").get<std::size_t>(), e.at("coef").get<double>()));
    const auto fb = sum_functionals(std::move(parts));
    const auto tb_table = project(fb, bases, with_seed(2, "representable"));
    const auto pb = parseval_report(tb_table, second_moment(fb, with_seed(12, "representable")));
    c.add(within("Parseval ratio (representable)", pb.levels.back().ratio, 1.0, pb.levels.back().ratio_stderr,
                 c.sigmas()));

    // (c) Bessel behaviour for the survival indicator
    const double ti = num(p, "indicator_t", 0.5);
    const MotionFunctional fc = [ti](const StagedMotion& m) { return m.stages.front().tau > ti ? 1.0 : 0.0; };
    const auto tc = project(fc, bases, with_seed(3, "indicator"));
    const auto pc = parseval_report(tc, second_moment(fc, with_seed(13, "indicator")));
    double min_step = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < pc.levels.size(); ++k)
        min_step = std::min(min_step, pc.levels[k].partial_sum - pc.levels[k - 1].partial_sum);
    if (pc.levels.size() > 1) c.add(at_least("indicator partial sums: smallest increment", min_step, 0.0));
    for (const auto& lv : pc.levels)
        c.add(at_most("indicator Bessel bound degree " + std::to_string(lv.degree), lv.partial_sum,
                      pc.second_moment + 3.0 * std::hypot(lv.partial_stderr, pc.second_moment_stderr),
                      lv.partial_stderr));
}

void naive_flow_demo(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 0.2});
    if (u.size() != 2) throw std::invalid_argument("naive-flow-demo uses two particles");
    const double T = num(p, "T", 1.0);
    const TimeGrid grid = make_grid(T, c.spec.M);
    const auto k1 = SimplexKernel::box({{0.0, T}});
    const auto k2 = SimplexKernel::box({{0.0, T}, {0.0, T}});
    const ChaosIndex i1(2, {1}), i2(2, {1, 2});
    const Rows r = fill_rows(c.spec.N, 1, c.threads(), [&](std::size_t path, double* x) {
        const auto motion = simulate_npoint(u, grid, c.spec.seed, path);
        x[0] = flow_iterated_naive(motion, k1, i1) * flow_iterated_naive(motion, k2, i2);
    });
    const auto m = column(r, 0);
    c.add(at_least("cross moment z-score", std::abs(m.mean()) / m.stderr_(), c.spec.tol.violation_sigmas));
    // after coalescence d<x1,x2> = dt, so the cross moment is (gap/2) int_0^T P(tau <= s) ds
    const double gap = u[1] - u[0];
    const auto rule = composite_gauss(16, 32, 0.0, T);
    double predicted = 0.0;
    for (std::size_t i = 0; i < rule.x.size(); ++i)
        predicted += rule.w[i] * std::erfc(gap / (2.0 * std::sqrt(rule.x[i])));
    predicted *= 0.5 * gap;
    c.add(within("cross moment vs covariation prediction", m.mean(), predicted, m.stderr_(), c.sigmas()));
}

void phi_psi_roundtrip(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    const double t = num(p, "t", 1.0);
    const double factor = num(p, "factor", 5.0), fraction = num(p, "fraction", 0.99);
    const std::size_t n = u.size();
    const Domain dom = Domain::weyl_chamber(n);
    const TimeGrid grid = make_grid(t, c.spec.M);
    const auto batch = sample_conditioned(u, t, DriftField::zero(n), dom, grid, c.spec.N, c.spec.seed);
    const ClosedFormField field(dom);
    std::vector<std::size_t> not_in_range(batch.paths.size(), 0);
    const Rows r = fill_rows(batch.paths.size(), 2, c.threads(), [&](std::size_t path, double* x) {
        const SamplePath& w = batch.paths[path];
        const auto tp = phi_transform(t, w, field, DriftField::zero(n), false);
        const double bound = factor * grid.dt() * std::min(kDriftCap, std::max(1.0, tp.max_drift));
        x[0] = 0.0;
        x[1] = std::numeric_limits<double>::infinity();
        if (!tp.valid) return;
        try {
            const SamplePath back = psi_inverse(t, tp.path, field, DriftField::zero(n));
            double err = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w.columns(); ++j) err = std::max(err, std::abs(back.value(i, j) - w.value(i, j)));
            x[0] = err <= bound ? 1.0 : 0.0;
            x[1] = err;
        } catch (const NotInRangeError&) {
            not_in_range[path] = 1;
        }
    });
    if (const auto s = std::accumulate(not_in_range.begin(), not_in_range.end(), std::size_t{0}))
        c.warn(std::to_string(s) + " inverse paths left the chamber before t");
    const auto ok = column(r, 0);
    c.add(at_least("fraction within 5 dt x drift bound", ok.mean(), fraction, ok.stderr_()));
    auto errs = column_values(r, 1);
    std::sort(errs.begin(), errs.end());
    c.add(at_least("median sup error", errs.empty() ? 0.0 : errs[errs.size() / 2], 0.0));
}

void recursive_projection(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    if (u.size() != 2) throw std::invalid_argument("recursive-projection is implemented for n = 2");
    const double T = num(p, "T", 1.0);
    const auto b = vec(p, "box", {0.0, 1.0});
    BasisSpec post_spec{{{b[0], b[1]}}, static_cast<unsigned>(count(p, "poly_degree", 1)), 8};
    BasisSpec pre_spec{{{b[0], b[1]}, {b[0], b[1]}}, post_spec.max_degree, 8};
    const auto weights = std::make_shared<const RhoWeights>(u);
    const auto post = build_basis(MultiIndex::of({{1}}), unit_weight(), post_spec);
    const auto pre = build_basis(MultiIndex::of({{}, {1}}), rho_weight(weights), pre_spec);
    // f couples both stages: (A e_0 on the last stage) (A e_0 on the pre-collision stage) + a smooth term
    const MotionFunctional f = [&](const StagedMotion& m) {
        StagedMotion last;
        last.stages.push_back(m.stages.back());
        MotionIntegrals ml(last);
        MotionIntegrals mm(m);
        const auto I = post.evaluate(ml);
        const auto J = pre.evaluate(mm);
        return I[0] * J[0] + 0.5 * std::tanh(m.stages.back().path.value(0, m.stages.back().path.columns() - 1));
    };
    ProjectionSetup setup{u, stage_options(T, c.spec.M), weights, c.spec.N, c.spec.seed, c.threads(), "recursive"};
    const auto r = compare_recursive_projection(f, post, pre, setup, count(p, "inner", 4));
    for (std::size_t i = 0; i < r.post_size; ++i)
        for (std::size_t m = 0; m < r.pre_size; ++m) {
            const std::size_t k = i * r.pre_size + m;
            c.add(within("direct vs recursive (" + std::to_string(i) + "," + std::to_string(m) + ")", r.direct[k],
                         r.recursive[k], std::hypot(r.direct_stderr[k], r.recursive_stderr[k]), c.sigmas()));
        }
}

void zero_kernel(Ctx& c) {
    const json& p = c.spec.params;
    const auto u = start_point(p, {0.0, 1.0});
    if (u.size() != 2) throw std::invalid_argument("zero-kernel runs on S^2");
    const double T = num(p, "T", 1.0);
    const TimeGrid grid = make_grid(T, c.spec.M);
    const Domain dom = Domain::weyl_chamber(2);
    auto field = std::make_shared<const ClosedFormField>(dom, true);
    const auto weights = std::make_shared<const RhoWeights>(u);
    const StageOptions stage = stage_options(T, c.spec.M);
    const SimplexKernel z1(1), z2(2);
    const ChaosIndex i1(2, {1}), i2(2, {1, 2});
    const MultiIndex m1 = MultiIndex::of({{}, {1}}), m2 = MultiIndex::of({{1}, {2}});
    const ProductKernel pz1(std::vector<std::size_t>{0, 1}), pz2(std::vector<std::size_t>{1, 1});
    const Rows r = fill_rows(c.spec.N, 6, c.threads(), [&](std::size_t path, double* x) {
        const SamplePath w = sample_brownian(u, grid, c.spec.seed, path);
        StoppedIntegrator J(w, solve_xi(w, DriftField::zero(2), dom), field);
        x[0] = J(z1, i1);
        x[1] = J(z2, i2);
        const auto motion = simulate_npoint(u, grid, c.spec.seed.substream(1), path);
        x[2] = flow_iterated_naive(motion, z1, i1);
        x[3] = flow_iterated_naive(motion, z2, i2);
        const StagedMotion staged = simulate_staged(u, stage, c.spec.seed.substream(2), path);
        MotionIntegrals mi(staged, weights);
        x[4] = staged.complete() ? mi(pz1, m1) : 0.0;
        x[5] = staged.complete() ? mi(pz2, m2) : 0.0;
    });
    const char* names[6] = {"J (1)", "J (1,2)", "naive (1)", "naive (1,2)", "A ((),(1))", "A ((1),(2))"};
    for (std::size_t k = 0; k < 6; ++k) {
        double worst = 0.0;
        for (double v : column_values(r, k)) worst = std::max(worst, std::abs(v));
        c.add(within_abs(std::string("max |") + names[k] + "|", worst, 0.0, 0.0));
    }
    for (std::size_t k = 0; k < 6; ++k) {
        const auto m = column(r, k);
        c.add(within_abs(std::string("mean ") + names[k], m.mean(), 0.0, 0.0, m.stderr_()));
    }
}

bool sampling_suite(Suite s) { return s != Suite::PdeOrder; }

void check_keys(const TestSpec& spec) {
    if (!spec.params.is_object()) throw std::invalid_argument("suite params must be a table");
    const auto keys = suite_param_keys(spec.suite);
    for (const auto& [k, _] : spec.params.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            std::string known;
            for (const auto& x : keys) known += (known.empty() ? "" : ", ") + x;
            throw std::invalid_argument("unknown parameter '" + k + "' for suite " + to_string(spec.suite) +
                                        " (accepted: " + known + ")");
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// Drivers

Verdict run_suite(const TestSpec& spec, const RunContext& ctx) {
    check_keys(spec);
    Verdict v;
    v.name = spec.name.empty() ? to_string(spec.suite) : spec.name;
    v.suite = spec.suite;
    v.expected_failure = spec.expected_failure;
    v.N = spec.N;
    v.M = spec.M;
    v.seed = spec.seed;
    v.params = spec.params;
    if (sampling_suite(spec.suite) && spec.N < 1000)
        v.warnings.push_back("insufficient power: N = " + std::to_string(spec.N) + " is below 1000");
    const auto start = std::chrono::steady_clock::now();
    Ctx c{spec, ctx, v};
    switch (spec.suite) {
        case Suite::SurvivalTriangle: survival_triangle(c); break;
        case Suite::PdeOrder: pde_order(c); break;
        case Suite::CoalescenceLaw: coalescence_law(c); break;
        case Suite::JIsometry: j_isometry(c); break;
        case Suite::JOrthogonality: j_orthogonality(c); break;
        case Suite::GirsanovTransport: girsanov_transport(c); break;
        case Suite::ClarkIdentity: clark_identity(c); break;
        case Suite::ConditionalMartingale: conditional_martingale(c); break;
        case Suite::GBracket: g_bracket(c); break;
        case Suite::AIsometry: a_isometry(c); break;
        case Suite::ExpansionRoundTrip: expansion_roundtrip(c); break;
        case Suite::NaiveFlowDemo: naive_flow_demo(c); break;
        case Suite::PhiPsiRoundTrip: phi_psi_roundtrip(c); break;
        case Suite::RecursiveProjection: recursive_projection(c); break;
        case Suite::ZeroKernel: zero_kernel(c); break;
    }
    finalize(v);
    v.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return v;
}

std::vector<TestSpec> default_suites(std::uint64_t master_seed) {
    std::vector<TestSpec> out;
    std::uint64_t stream = 0;
    auto add = [&](std::string name, Suite s, json params, std::size_t N, std::size_t M, bool expected_failure = false) {
        TestSpec t;
        t.name = std::move(name);
        t.suite = s;
        t.params = std::move(params);
        t.N = N;
        t.M = M;
        t.seed = SeedLedger{master_seed, ++stream, 0};
        t.expected_failure = expected_failure;
        out.push_back(std::move(t));
    };
    add("survival-triangle", Suite::SurvivalTriangle, {{"u", {0.0, 2.0}}, {"t", 1.0}, {"printed", 0.8427008}}, 100000,
        1024);
    add("pde-order", Suite::PdeOrder, json::object(), 0, 0);
    add("coalescence-law", Suite::CoalescenceLaw, {{"u", {0.0, 1.0}}}, 100000, 1024);
    add("j-isometry", Suite::JIsometry, {{"u", {0.0, 1.0}}}, 20000, 512);
    add("j-orthogonality", Suite::JOrthogonality, {{"u", {0.0, 1.0}}}, 20000, 512);
    add("girsanov-transport", Suite::GirsanovTransport, {{"u", {0.0, 1.0}}, {"t", 1.0}}, 10000, 1024);
    add("clark-identity", Suite::ClarkIdentity, {{"u", {0.0, 1.0}}, {"t", 1.0}}, 20000, 1024);
    add("conditional-martingale", Suite::ConditionalMartingale, {{"u", {0.0, 1.0}}, {"t", 1.0}}, 20000, 1024);
    add("g-bracket", Suite::GBracket, {{"u", {0.0, 1.0, 2.0}}, {"t", 1.0}}, 10000, 1024);
    add("a-isometry-n2", Suite::AIsometry, {{"u", {0.0, 1.0}}}, 20000, 256);
    add("a-isometry-n3", Suite::AIsometry, {{"u", {0.0, 1.0, 2.0}}}, 20000, 256);
    add("expansion-roundtrip", Suite::ExpansionRoundTrip, {{"u", {0.0, 1.0}}}, 20000, 256);
    add("naive-flow-demo", Suite::NaiveFlowDemo, {{"u", {0.0, 0.2}}}, 50000, 1024, true);
    add("phi-psi-roundtrip", Suite::PhiPsiRoundTrip, {{"u", {0.0, 1.0}}, {"t", 1.0}}, 1000, 1024);
    add("recursive-projection", Suite::RecursiveProjection, {{"u", {0.0, 1.0}}}, 20000, 256);
    add("zero-kernel", Suite::ZeroKernel, {{"u", {0.0, 1.0}}}, 1000, 256);
    return out;
}

json SummaryReport::to_json(bool with_timing) const {
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["config"] = config;
    j["master_seed"] = master_seed;
    j["pass"] = pass;
    auto& arr = j["suites"] = json::array();
    for (const auto& v : verdicts) arr.push_back(v.to_json());
    if (with_timing) {
        json t = json::object();
        double total = 0.0;
        for (const auto& v : verdicts) {
            t[v.name] = v.runtime;
            total += v.runtime;
        }
        j["timing"] = {{"seconds", t}, {"total_seconds", total}, {"finished", static_cast<std::int64_t>(std::time(nullptr))}};
    }
    return j;
}

void SummaryReport::write_csv(std::ostream& os) const {
    write_csv_row(os, {"suite", "name", "status", "statistic", "observed", "reference", "stderr", "threshold", "check",
                       "pass", "N", "M", "master_seed", "stream_id"});
    for (const auto& v : verdicts)
        for (const auto& s : v.stats)
            write_csv_row(os, {to_string(v.suite), v.name, v.status, s.name, format_double(s.observed),
                               format_double(s.reference), format_double(s.stderr_), format_double(s.threshold),
                               to_string(s.check), s.pass ? "true" : "false", std::to_string(v.N),
                               std::to_string(v.M), std::to_string(v.seed.master_seed),
                               std::to_string(v.seed.stream_id)});
}

SummaryReport run_specs(const std::vector<TestSpec>& specs, const RunContext& ctx, const json& config,
                        std::uint64_t master_seed, std::ostream* progress) {
    SummaryReport rep;
    rep.config = config;
    rep.master_seed = master_seed;
    for (const auto& spec : specs) {
        Verdict v;
        try {
            v = run_suite(spec, ctx);
        } catch (const std::exception& e) {
            v = Verdict{};
            v.name = spec.name.empty() ? to_string(spec.suite) : spec.name;
            v.suite = spec.suite;
            v.expected_failure = spec.expected_failure;
            v.N = spec.N;
            v.M = spec.M;
            v.seed = spec.seed;
            v.params = spec.params;
            v.pass = false;
            v.status = std::string("error: ") + e.what();
        }
        rep.pass = rep.pass && v.pass;
        if (progress) {
            *progress << (v.pass ? "PASS " : "FAIL ") << v.name << " [" << v.status << "] " << v.statistic_name << " = "
                      << v.statistic << " (threshold " << v.threshold << ") " << std::fixed;
            progress->precision(1);
            *progress << v.runtime << "s" << std::defaultfloat << '\n';
            progress->precision(6);
            for (const auto& w : v.warnings) *progress << "  warning: " << w << '\n';
            progress->flush();
        }
        rep.verdicts.push_back(std::move(v));
    }
    return rep;
}

}  // namespace arratia
