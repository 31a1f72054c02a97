#include "arratia/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <toml.hpp>

#include "arratia/chaos.hpp"

namespace arratia {

using nlohmann::json;

namespace {

using Lines = std::map<std::string, long>;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

json from_toml(const toml::node& n, const std::string& path, Lines& lines, const std::string& source) {
    lines[path] = static_cast<long>(n.source().begin.line);
    if (const auto* t = n.as_table()) {
        json o = json::object();
        for (auto&& [k, v] : *t) {
            const std::string key(k.str());
            o[key] = from_toml(v, join(path, key), lines, source);
        }
        return o;
    }
    if (const auto* a = n.as_array()) {
        json arr = json::array();
        std::size_t i = 0;
        for (auto&& v : *a) arr.push_back(from_toml(v, path + "[" + std::to_string(i++) + "]", lines, source));
        return arr;
    }
    if (const auto* v = n.as_integer()) return v->get();
    if (const auto* v = n.as_floating_point()) return v->get();
    if (const auto* v = n.as_boolean()) return v->get();
    if (const auto* v = n.as_string()) return v->get();
    throw ConfigError(source + ":" + std::to_string(n.source().begin.line) + ": unsupported value type for '" + path +
                      "' (dates and times are not accepted)");
}

class Reader {
public:
    Reader(std::string source, Lines lines) : source_(std::move(source)), lines_(std::move(lines)) {}

    std::string where(const std::string& path) const {
        // nearest recorded ancestor carries the line
        std::string p = path;
        for (;;) {
            const auto it = lines_.find(p);
            if (it != lines_.end() && it->second > 0) return source_ + ":" + std::to_string(it->second) + ": ";
            const auto cut = p.find_last_of(".[");
            if (cut == std::string::npos) return source_ + ": ";
            p = p.substr(0, cut);
        }
    }

    [[noreturn]] void fail(const std::string& path, const std::string& msg) const { throw ConfigError(where(path) + msg); }

    void keys(const json& t, const std::string& path, const std::vector<std::string>& allowed) const {
        if (!t.is_object()) fail(path, "'" + path + "' must be a table");
        for (const auto& [k, _] : t.items())
            if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
                std::string list;
                for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
                fail(join(path, k), "unknown key '" + k + "'" + (path.empty() ? "" : " in [" + path + "]") +
                                        " (accepted: " + list + ")");
            }
    }

    template <class T>
    T get(const json& t, const std::string& path, const std::string& key, T def) const {
        if (!t.contains(key)) return def;
        const json& v = t.at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw std::invalid_argument("number");
            } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                if (!v.is_number_integer() || v.get<long long>() < 0) throw std::invalid_argument("non-negative integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::invalid_argument("boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw std::invalid_argument("string");
            }
            return v.get<T>();
        } catch (const std::invalid_argument& e) {
            fail(join(path, key), "'" + join(path, key) + "' must be a " + e.what());
        } catch (const json::exception&) {
            fail(join(path, key), "'" + join(path, key) + "' has the wrong type");
        }
    }

    std::vector<double> start_point(const json& v, const std::string& path) const {
        if (!v.is_array() || v.empty()) fail(path, "'" + path + "' must be a non-empty array of numbers");
        std::vector<double> u;
        for (const auto& x : v) {
            if (!x.is_number()) fail(path, "'" + path + "' must contain numbers only");
            u.push_back(x.get<double>());
        }
        for (std::size_t i = 1; i < u.size(); ++i)
            if (!(u[i - 1] < u[i]))
                fail(path, "'" + path + "' must be strictly increasing: the start point must lie in the Weyl chamber "
                                        "S^n = {u_1 < ... < u_n}");
        return u;
    }

private:
    std::string source_;
    Lines lines_;
};

RunConfig from_tree(const json& tree, const Reader& r) {
    RunConfig c;
    r.keys(tree, "", {"threads", "cache_dir", "seed", "grid", "mc", "domain", "output", "tolerance", "kernel", "suite"});
    c.threads = r.get<std::size_t>(tree, "", "threads", c.threads);
    c.cache_dir = r.get<std::string>(tree, "", "cache_dir", c.cache_dir);
    if (tree.contains("seed")) {
        const auto& t = tree.at("seed");
        r.keys(t, "seed", {"master"});
        c.master_seed = r.get<std::uint64_t>(t, "seed", "master", c.master_seed);
    }
    if (tree.contains("grid")) {
        const auto& t = tree.at("grid");
        r.keys(t, "grid", {"T", "M"});
        c.T = r.get<double>(t, "grid", "T", c.T);
        c.M = r.get<std::size_t>(t, "grid", "M", c.M);
        if (!(c.T > 0.0)) r.fail("grid.T", "'grid.T' must be positive");
        if (c.M == 0) r.fail("grid.M", "'grid.M' must be at least 1");
    }
    if (tree.contains("mc")) {
        const auto& t = tree.at("mc");
        r.keys(t, "mc", {"N"});
        c.N = r.get<std::size_t>(t, "mc", "N", c.N);
        c.N_override = t.contains("N");
        if (c.N == 0) r.fail("mc.N", "'mc.N' must be at least 1");
    }
    if (tree.contains("domain")) {
        const auto& t = tree.at("domain");
        r.keys(t, "domain", {"kind", "u"});
        const auto kind = r.get<std::string>(t, "domain", "kind", "weyl-chamber");
        if (kind != "weyl-chamber") r.fail("domain.kind", "'domain.kind' must be \"weyl-chamber\"");
        if (t.contains("u")) c.u = r.start_point(t.at("u"), "domain.u");
    }
    if (tree.contains("output")) {
        const auto& t = tree.at("output");
        r.keys(t, "output", {"dir", "json", "csv"});
        c.output_dir = r.get<std::string>(t, "output", "dir", c.output_dir);
        c.json_report = r.get<std::string>(t, "output", "json", c.json_report);
        c.csv_report = r.get<std::string>(t, "output", "csv", c.csv_report);
    }
    if (tree.contains("tolerance")) {
        const auto& t = tree.at("tolerance");
        r.keys(t, "tolerance", {"sigmas", "ks_floor", "violation_sigmas"});
        c.tol.sigmas = r.get<double>(t, "tolerance", "sigmas", c.tol.sigmas);
        c.tol.ks_floor = r.get<double>(t, "tolerance", "ks_floor", c.tol.ks_floor);
        c.tol.violation_sigmas = r.get<double>(t, "tolerance", "violation_sigmas", c.tol.violation_sigmas);
        if (!(c.tol.sigmas > 0.0)) r.fail("tolerance.sigmas", "'tolerance.sigmas' must be positive");
        if (!(c.tol.ks_floor > 0.0 && c.tol.ks_floor < 1.0))
            r.fail("tolerance.ks_floor", "'tolerance.ks_floor' must lie in (0, 1)");
    }
    if (tree.contains("kernel")) {
        const auto& arr = tree.at("kernel");
        if (!arr.is_array()) r.fail("kernel", "'kernel' must be an array of tables ([[kernel]])");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "kernel[" + std::to_string(i) + "]";
            r.keys(arr[i], path, {"name", "bounds", "degrees", "value", "coef"});
            try {
                (void)kernel_from_json(arr[i]);
            } catch (const std::exception& e) {
                r.fail(path, std::string("invalid kernel: ") + e.what());
            }
            c.kernels.push_back(arr[i]);
        }
    }
    if (tree.contains("suite")) {
        const auto& arr = tree.at("suite");
        if (!arr.is_array()) r.fail("suite", "'suite' must be an array of tables ([[suite]])");
        const auto defaults = default_suites(c.master_seed);
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "suite[" + std::to_string(i) + "]";
            const auto& t = arr[i];
            r.keys(t, path, {"suite", "name", "N", "M", "stream", "expected_failure", "params"});
            if (!t.contains("suite")) r.fail(path, "'" + path + ".suite' is required (known: " + [] {
                std::string s;
                for (const auto& n : suite_names()) s += (s.empty() ? "" : ", ") + n;
                return s;
            }() + ")");
            TestSpec spec;
            try {
                spec.suite = suite_from_string(r.get<std::string>(t, path, "suite", ""));
            } catch (const std::invalid_argument& e) {
                r.fail(join(path, "suite"), e.what());
            }
            spec.name = r.get<std::string>(t, path, "name", to_string(spec.suite));
            // start from the preregistered entry of the same name (or kind)
            const TestSpec* base = nullptr;
            for (const auto& d : defaults)
                if (d.name == spec.name) base = &d;
            if (!base)
                for (const auto& d : defaults)
                    if (d.suite == spec.suite && !base) base = &d;
            spec.N = base ? base->N : c.N;
            spec.M = base ? base->M : c.M;
            spec.params = base ? base->params : json::object();
            spec.expected_failure = base ? base->expected_failure : false;
            const std::uint64_t stream = base && base->name == spec.name ? base->seed.stream_id : 100 + i;
            spec.N = r.get<std::size_t>(t, path, "N", spec.N);
            spec.M = r.get<std::size_t>(t, path, "M", spec.M);
            spec.expected_failure = r.get<bool>(t, path, "expected_failure", spec.expected_failure);
            spec.seed = SeedLedger{c.master_seed, r.get<std::uint64_t>(t, path, "stream", stream), 0};
            if (t.contains("params")) {
                const std::string pp = join(path, "params");
                const auto& params = t.at("params");
                auto accepted = suite_param_keys(spec.suite);
                r.keys(params, pp, accepted);
                for (const auto& [k, v] : params.items()) {
                    if (k == "u") (void)r.start_point(v, join(pp, "u"));
                    spec.params[k] = v;
                }
            }
            c.suites.push_back(std::move(spec));
        }
    }
    return c;
}

}  // namespace

json RunConfig::to_json() const {
    json j;
    j["threads"] = threads;
    j["cache_dir"] = cache_dir;
    j["seed"] = {{"master", master_seed}};
    j["grid"] = {{"T", T}, {"M", M}};
    j["mc"] = {{"N", N}, {"override", N_override}};
    j["domain"] = {{"kind", "weyl-chamber"}, {"u", u}};
    j["output"] = {{"dir", output_dir}, {"json", json_report}, {"csv", csv_report}};
    j["tolerance"] = {{"sigmas", tol.sigmas}, {"ks_floor", tol.ks_floor}, {"violation_sigmas", tol.violation_sigmas}};
    j["kernel"] = kernels;
    auto& arr = j["suite"] = json::array();
    for (const auto& s : suites)
        arr.push_back({{"suite", to_string(s.suite)},
                       {"name", s.name},
                       {"N", s.N},
                       {"M", s.M},
                       {"stream", s.seed.stream_id},
                       {"expected_failure", s.expected_failure},
                       {"params", s.params}});
    return j;
}

RunConfig parse_config_toml(std::string_view text, const std::string& source) {
    toml::table tbl;
    try {
        tbl = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
    }
    Lines lines;
    const json tree = from_toml(tbl, "", lines, source);
    return from_tree(tree, Reader(source, std::move(lines)));
}

RunConfig parse_config_json(std::string_view text, const std::string& source) {
    json tree;
    try {
        tree = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return from_tree(tree, Reader(source, {}));
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open configuration file");
    std::stringstream ss;
    ss << in.rdbuf();
    const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
    return is_json ? parse_config_json(ss.str(), path) : parse_config_toml(ss.str(), path);
}

std::vector<TestSpec> suites_for(const RunConfig& cfg) {
    auto specs = cfg.suites.empty() ? default_suites(cfg.master_seed) : cfg.suites;
    for (auto& s : specs) {
        s.tol = cfg.tol;
        if (cfg.N_override) s.N = cfg.N;
    }
    return specs;
}

std::string effective_cache_dir(const RunConfig& cfg) {
    if (const char* env = std::getenv("ARRATIA_CACHE_DIR"); env && *env) return env;
    return cfg.cache_dir;
}

}  // namespace arratia
