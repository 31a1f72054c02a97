// Command-line front end: simulate, alpha, integrate, project, verify.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "arratia/cache.hpp"
#include "arratia/chaos.hpp"
#include "arratia/coalescing_flow.hpp"
#include "arratia/config.hpp"
#include "arratia/expansion.hpp"
#include "arratia/girsanov.hpp"
#include "arratia/parallel.hpp"
#include "arratia/report.hpp"
#include "arratia/rho_weights.hpp"
#include "arratia/stats.hpp"
#include "arratia/survival.hpp"
#include "arratia/verify.hpp"

using namespace arratia;
using nlohmann::json;

namespace {

// Error raised for bad flag values; maps to the usage exit code.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& s, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string(flag) + ": '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw UsageError(std::string(flag) + " must not be empty");
    return out;
}

std::vector<double> start_point(const std::string& s) {
    auto u = parse_list(s, "--u");
    for (std::size_t i = 1; i < u.size(); ++i)
        if (!(u[i - 1] < u[i]))
            throw UsageError("--u must be strictly increasing: the start point must lie in the Weyl chamber S^n");
    return u;
}

std::vector<std::size_t> parse_word(const std::string& s) {
    std::vector<std::size_t> w;
    if (s.empty()) return w;
    for (double x : parse_list(s, "--index")) {
        if (x < 1 || x != std::floor(x)) throw UsageError("--index entries must be positive integers");
        w.push_back(static_cast<std::size_t>(x));
    }
    return w;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

std::ofstream open_out(const std::string& file) {
    if (const auto dir = std::filesystem::path(file).parent_path(); !dir.empty()) std::filesystem::create_directories(dir);
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + file);
    return os;
}

// Options shared by the subcommands; flags override the configuration file.
struct Common {
    std::string config;
    std::string u;
    double T = 0.0;
    std::size_t M = 0, N = 0, threads = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string cache_dir;

    RunConfig load() const {
        RunConfig c = config.empty() ? RunConfig{} : load_config(config);
        if (!u.empty()) c.u = start_point(u);
        if (T > 0.0) c.T = T;
        if (M > 0) c.M = M;
        if (N > 0) c.N = N;
        if (threads > 0) c.threads = threads;
        if (seed_set) c.master_seed = seed;
        if (!cache_dir.empty()) c.cache_dir = cache_dir;
        return c;
    }
};

void add_common(CLI::App* app, Common& c, bool with_grid = true) {
    app->add_option("--config", c.config, "TOML or JSON run configuration");
    app->add_option("--u", c.u, "start point, comma separated and strictly increasing (default 0,1)");
    if (with_grid) {
        app->add_option("--T", c.T, "horizon (default 1)");
        app->add_option("--M", c.M, "grid steps (default 1024)");
    }
    app->add_option("--N", c.N, "Monte Carlo paths (default 20000)");
    app->add_option("--seed", c.seed, "master seed (default 20261017)")->each([&c](const std::string&) { c.seed_set = true; });
    app->add_option("--threads", c.threads, "worker threads (default: logical cores)");
    app->add_option("--cache-dir", c.cache_dir, "field cache directory (ARRATIA_CACHE_DIR overrides)");
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const Common& common, std::size_t n, const std::string& out, const std::string& stats, bool no_bridge) {
    RunConfig cfg = common.load();
    if (n > 0 && common.u.empty()) {
        cfg.u.resize(n);
        for (std::size_t i = 0; i < n; ++i) cfg.u[i] = static_cast<double>(i);
    }
    if (n > 0 && cfg.u.size() != n) throw UsageError("--n does not match the length of --u");
    const TimeGrid grid = make_grid(cfg.T, cfg.M);
    const SeedLedger seed{cfg.master_seed, 1, 0};
    std::vector<CoalescingMotion> motions(cfg.N);
    parallel_for(cfg.N, cfg.threads, [&](std::size_t p) { motions[p] = simulate_npoint(cfg.u, grid, seed, p, !no_bridge); });
    std::vector<SamplePath> paths;
    paths.reserve(cfg.N);
    for (auto& m : motions) paths.push_back(std::move(m.paths));
    write_path_dump(out, paths, seed);

    const std::string stats_file = stats.empty() ? out + ".csv" : stats;
    auto os = open_out(stats_file);
    std::vector<std::string> head{"path"};
    for (std::size_t k = 0; k + 1 < cfg.u.size(); ++k) head.push_back("tau_" + std::to_string(k + 1) + std::to_string(k + 2));
    head.push_back("first_collision");
    write_csv_row(os, head);
    for (std::size_t p = 0; p < motions.size(); ++p) {
        std::vector<std::string> row{std::to_string(p)};
        double first = kNoCollision;
        for (double t : motions[p].adjacent_tau) {
            row.push_back(format_double(t));
            first = std::min(first, t);
        }
        row.push_back(format_double(first));
        write_csv_row(os, row);
    }
    std::cout << "wrote " << cfg.N << " paths to " << out << " and collision times to " << stats_file << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// alpha

int cmd_alpha(const Common& common, const std::string& domain, double t, const std::string& backends) {
    RunConfig cfg = common.load();
    const auto& u = cfg.u;
    if (!domain.empty()) {
        if (domain.size() < 2 || domain[0] != 's') throw UsageError("--domain must be s<n>, e.g. s2");
        std::size_t n = 0;
        try {
            n = std::stoul(domain.substr(1));
        } catch (const std::exception&) {
            throw UsageError("--domain must be s<n>, e.g. s2");
        }
        if (n != u.size()) throw UsageError("--domain " + domain + " does not match the length of --u");
    }
    if (!(t > 0.0)) throw UsageError("--t must be positive");
    const std::size_t n = u.size();
    const Domain dom = Domain::weyl_chamber(n);
    std::ostringstream us;
    for (std::size_t i = 0; i < n; ++i) us << (i ? " " : "") << format_double(u[i]);
    write_csv_row(std::cout, {"t", "u", "backend", "alpha", "stderr"});
    for (const auto& b : split(backends, ',')) {
        double value = 0.0, se = 0.0;
        std::string name;
        if (b == "closed") {
            name = "closed-form";
            value = alpha_chamber_closed(t, u);
        } else if (b == "km") {
            name = "karlin-mcgregor";
            const auto r = alpha_karlin_mcgregor(t, u);
            if (!r.ok) throw BudgetError(r.message);
            value = r.value;
            se = r.error;
        } else if (b == "mc") {
            name = "monte-carlo";
            const auto r = alpha_monte_carlo(DriftField::zero(n), dom, u, t, cfg.N, SeedLedger{cfg.master_seed, 1, 0},
                                             static_cast<std::size_t>(std::ceil(cfg.M * t / cfg.T)));
            value = r.value;
            se = r.stderr_;
        } else if (b == "pde") {
            name = "pde-grid";
            PdeMesh mesh;
            mesh.horizon = t;
            std::string note;
            const auto f = cached_alpha_pde(effective_cache_dir(cfg), DriftField::zero(n), dom, mesh, &note);
            if (!note.empty()) std::cerr << "arratia: warning: " << note << '\n';
            value = f->alpha(t, u);
        } else {
            throw UsageError("unknown backend '" + b + "' (closed, km, mc, pde)");
        }
        write_csv_row(std::cout, {format_double(t), us.str(), name, format_double(value), format_double(se)});
    }
    return 0;
}

// ---------------------------------------------------------------------------
// integrate

int cmd_integrate(const Common& common, const std::string& kernel_spec, const std::string& index_spec,
                  const std::string& mode, const std::string& out) {
    RunConfig cfg = common.load();
    const std::size_t n = cfg.u.size();
    json kj;
    if (kernel_spec.empty()) {
        if (cfg.kernels.empty()) throw UsageError("--kernel or a [[kernel]] table in the configuration is required");
        kj = cfg.kernels.front();
    } else if (kernel_spec.front() == '{') {
        try {
            kj = json::parse(kernel_spec);
        } catch (const json::parse_error& e) {
            throw UsageError(std::string("--kernel: ") + e.what());
        }
    } else {
        std::size_t k = 0;
        try {
            k = std::stoul(kernel_spec);
        } catch (const std::exception&) {
            throw UsageError("--kernel must be inline JSON or the position of a configured [[kernel]]");
        }
        if (k >= cfg.kernels.size()) throw UsageError("--kernel " + kernel_spec + " is beyond the configured kernels");
        kj = cfg.kernels[k];
    }
    SimplexKernel kernel;
    try {
        kernel = kernel_from_json(kj);
    } catch (const std::exception& e) {
        throw UsageError(std::string("--kernel: ") + e.what());
    }
    const ChaosIndex index(n, parse_word(index_spec));
    if (kernel.arity() != index.degree()) throw UsageError("kernel arity does not match --index");
    if (mode != "stopped" && mode != "naive") throw UsageError("--mode must be stopped or naive");

    const TimeGrid grid = make_grid(cfg.T, cfg.M);
    const SeedLedger seed{cfg.master_seed, 1, 0};
    const Domain dom = Domain::weyl_chamber(n);
    auto field = std::make_shared<const ClosedFormField>(dom, true);
    std::vector<double> values(cfg.N);
    parallel_for(cfg.N, cfg.threads, [&](std::size_t p) {
        if (mode == "naive") {
            values[p] = flow_iterated_naive(simulate_npoint(cfg.u, grid, seed, p), kernel, index);
        } else {
            const SamplePath w = sample_brownian(cfg.u, grid, seed, p);
            StoppedIntegrator J(w, solve_xi(w, DriftField::zero(n), dom), field);
            values[p] = J(kernel, index);
        }
    });
    MeanAccumulator m, m2;
    for (double v : values) {
        m.add(v);
        m2.add(v * v);
    }
    if (!out.empty()) {
        auto os = open_out(out);
        write_csv_row(os, {"path", "value"});
        for (std::size_t p = 0; p < values.size(); ++p) write_csv_row(os, {std::to_string(p), format_double(values[p])});
    }
    write_csv_row(std::cout, {"mode", "index", "kernel", "N", "mean", "stderr", "second_moment", "second_moment_stderr"});
    write_csv_row(std::cout, {mode, index.to_string(), kernel.description(), std::to_string(cfg.N), format_double(m.mean()),
                              format_double(m.stderr_()), format_double(m2.mean()), format_double(m2.stderr_())});
    return 0;
}

// ---------------------------------------------------------------------------
// project

MotionFunctional functional_from(const std::string& spec, double T) {
    const auto parts = split(spec, ':');
    if (parts.empty()) throw UsageError("--functional must not be empty");
    if (parts[0] == "indicator") {
        const double t = parts.size() > 1 ? parse_list(parts[1], "--functional")[0] : 0.5 * T;
        return [t](const StagedMotion& m) { return m.stages.front().tau > t ? 1.0 : 0.0; };
    }
    if (parts[0] == "collision-time")
        return [T](const StagedMotion& m) { return std::min(m.stages.front().tau, T); };
    if (parts[0] == "end-position")
        return [](const StagedMotion& m) {
            const auto& p = m.stages.back().path;
            return std::tanh(p.value(0, p.columns() - 1));
        };
    throw UsageError("unknown functional '" + parts[0] + "' (indicator[:t], collision-time, end-position)");
}

int cmd_project(const Common& common, const std::string& functional, std::size_t index_degree, unsigned poly_degree,
                std::size_t max_size, const std::string& out) {
    RunConfig cfg = common.load();
    const auto& u = cfg.u;
    const std::size_t n = u.size();
    if (n < 2 || n > 3) throw UsageError("project supports n = 2 and n = 3");
    const auto f = functional_from(functional, cfg.T);
    StageOptions stage;
    stage.grid = make_grid(cfg.T, cfg.M);
    std::shared_ptr<const RhoWeights> weights;
    BasisSpec spec;
    spec.max_degree = poly_degree;
    spec.max_size = max_size;
    if (n == 2) {
        weights = std::make_shared<const RhoWeights>(u);
        spec.part_box = {{0.0, cfg.T}, {0.0, cfg.T}};
    } else {
        RhoOptions o;
        o.stage = stage;
        o.cache_dir = effective_cache_dir(cfg);
        o.seed = SeedLedger{cfg.master_seed, 2, 0};
        weights = std::make_shared<const RhoWeights>(u, o);
        for (const auto& w : weights->warnings()) std::cerr << "arratia: warning: " << w << '\n';
        spec.part_box = {{0.0, cfg.T}, {o.s_lo, o.s_hi}, {0.0, cfg.T}};
    }
    const auto bases = build_bases(n, index_degree, rho_weight(weights), spec);
    ProjectionSetup setup{u, stage, weights, cfg.N, SeedLedger{cfg.master_seed, 1, 0}, cfg.threads, functional};
    const auto table = project(f, bases, setup);
    ProjectionSetup second = setup;
    second.seed = setup.seed.substream(1);
    const auto parseval = parseval_report(table, second_moment(f, second));
    if (table.truncated) std::cerr << "arratia: warning: " << table.truncated << " motions hit the tail cap and were excluded\n";

    std::filesystem::create_directories(out);
    {
        auto os = open_out((std::filesystem::path(out) / "coefficients.csv").string());
        table.write_csv(os);
    }
    json j{{"schema_version", kReportSchemaVersion},
           {"config", cfg.to_json()},
           {"coefficients", table.to_json()},
           {"parseval", parseval.to_json()}};
    auto os = open_out((std::filesystem::path(out) / "projection.json").string());
    os << j.dump(2) << '\n';
    table.write_csv(std::cout);
    return 0;
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(const Common& common, const std::vector<std::string>& only, const std::string& out,
               const std::string& recheck) {
    if (!recheck.empty()) {
        // re-evaluate every verdict from the persisted statistics alone
        std::ifstream in(recheck);
        if (!in) throw UsageError("cannot open " + recheck);
        const json rep = json::parse(in);
        bool all = true;
        for (const auto& s : rep.at("suites")) {
            bool pass = !s.at("stats").empty();
            for (const auto& st : s.at("stats")) pass = pass && evaluate(Statistic::from_json(st));
            if (s.at("status").get<std::string>().rfind("error", 0) == 0) pass = false;
            all = all && pass;
            std::cout << (pass ? "PASS " : "FAIL ") << s.at("name").get<std::string>() << '\n';
        }
        return all ? 0 : 1;
    }
    RunConfig cfg = common.load();
    if (common.N > 0) cfg.N_override = true;
    auto specs = suites_for(cfg);
    if (!only.empty()) {
        std::vector<TestSpec> keep;
        for (const auto& name : only) {
            bool found = false;
            for (const auto& s : specs)
                if (s.name == name || to_string(s.suite) == name) {
                    keep.push_back(s);
                    found = true;
                }
            if (!found) throw UsageError("--suite " + name + " matches no configured suite");
        }
        specs = keep;
    }
    RunContext ctx{cfg.threads, effective_cache_dir(cfg)};
    const auto rep = run_specs(specs, ctx, cfg.to_json(), cfg.master_seed, &std::cerr);
    const std::string dir = out.empty() ? cfg.output_dir : out;
    std::filesystem::create_directories(dir);
    {
        auto os = open_out((std::filesystem::path(dir) / cfg.json_report).string());
        os << rep.to_json(true).dump(2) << '\n';
    }
    {
        auto os = open_out((std::filesystem::path(dir) / cfg.csv_report).string());
        rep.write_csv(os);
    }
    std::cout << rep.to_json(false).dump(2) << '\n';
    return rep.exit_code();
}

// Module that raised an error, for diagnostics.
std::string provenance(const std::exception& e, const std::string& fallback) {
    if (dynamic_cast<const ConfigError*>(&e)) return "cli-reports";
    if (dynamic_cast<const NotInRangeError*>(&e)) return "girsanov-transform";
    if (dynamic_cast<const SingularityError*>(&e) || dynamic_cast<const BudgetError*>(&e)) return "survival-fields";
    if (dynamic_cast<const TruncatedMotionError*>(&e)) return "chaos-integrals";
    if (dynamic_cast<const IllConditionedError*>(&e)) return "expansion-projection";
    return fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ito-Wiener expansions for the n-point motion of the coalescing Brownian flow"};
    app.require_subcommand(1);
    Common common;

    auto* sim = app.add_subcommand("simulate", "simulate n-point coalescing motions; writes a path dump and a CSV of collision times");
    add_common(sim, common);
    std::size_t n = 0;
    std::string sim_out = "paths.bin", sim_stats;
    bool no_bridge = false;
    sim->add_option("--n", n, "number of particles (default: length of --u)");
    sim->add_option("--out", sim_out, "path dump file")->capture_default_str();
    sim->add_option("--stats", sim_stats, "collision-time CSV (default: <out>.csv)");
    sim->add_flag("--no-bridge", no_bridge, "disable the Brownian-bridge collision correction");

    auto* alpha = app.add_subcommand("alpha", "survival probability alpha(t, u) from several backends, as CSV");
    add_common(alpha, common);
    std::string domain, backends = "closed,km,mc";
    double t = 1.0;
    alpha->add_option("--domain", domain, "chamber s<n>; must match --u");
    alpha->add_option("--t", t, "time")->capture_default_str();
    alpha->add_option("--backend", backends, "comma list of closed, km, mc, pde")->capture_default_str();

    auto* integ = app.add_subcommand("integrate", "stopped or naive iterated integrals of a kernel");
    add_common(integ, common);
    std::string kernel, index = "1", mode = "stopped", integ_out;
    integ->add_option("--kernel", kernel, "inline JSON kernel or position of a configured [[kernel]]");
    integ->add_option("--index", index, "word over {1..n}, comma separated")->capture_default_str();
    integ->add_option("--mode", mode, "stopped or naive")->capture_default_str();
    integ->add_option("--out", integ_out, "per-path CSV");

    auto* proj = app.add_subcommand("project", "Monte Carlo projection on the weighted bases, with a Parseval report");
    add_common(proj, common);
    std::string functional = "indicator:0.5", proj_out = "projection";
    std::size_t index_degree = 2, max_size = 8;
    unsigned poly_degree = 1;
    proj->add_option("--functional", functional, "indicator[:t], collision-time or end-position")->capture_default_str();
    proj->add_option("--index-degree", index_degree, "largest total index degree")->capture_default_str();
    proj->add_option("--poly-degree", poly_degree, "largest kernel polynomial degree")->capture_default_str();
    proj->add_option("--max-size", max_size, "raw kernels kept per multi-index")->capture_default_str();
    proj->add_option("--out", proj_out, "output directory")->capture_default_str();

    auto* ver = app.add_subcommand("verify", "run the verification suites; exit 1 when any suite fails");
    add_common(ver, common, false);
    std::vector<std::string> only;
    std::string ver_out, recheck;
    ver->add_option("--suite", only, "run only these suites (repeatable)");
    ver->add_option("--out", ver_out, "report directory (default from [output])");
    ver->add_option("--recheck", recheck, "re-evaluate the verdicts of a JSON report from its statistics");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::string module = "cli-reports";
    try {
        if (*sim) {
            module = "coalescing-flow";
            return cmd_simulate(common, n, sim_out, sim_stats, no_bridge);
        }
        if (*alpha) {
            module = "survival-fields";
            return cmd_alpha(common, domain, t, backends);
        }
        if (*integ) {
            module = "chaos-integrals";
            return cmd_integrate(common, kernel, index, mode, integ_out);
        }
        if (*proj) {
            module = "expansion-projection";
            return cmd_project(common, functional, index_degree, poly_degree, max_size, proj_out);
        }
        if (*ver) {
            module = "verify-harness";
            return cmd_verify(common, only, ver_out, recheck);
        }
    } catch (const UsageError& e) {
        std::cerr << "arratia: usage error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "arratia: configuration error [cli-reports]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "arratia: error [" << provenance(e, module) << "]: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
