#include "arratia/cache.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace arratia {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "cache files are written in host order");

namespace {

constexpr int kCacheFormat = 1;

std::string hex_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

std::string cache_file(const std::string& dir, const json& key) {
    const std::string backend = key.value("backend", std::string("field"));
    return (std::filesystem::path(dir) / (backend + "-" + hex_hash(key.dump()) + ".arfc")).string();
}

std::optional<CachedTable> cache_load(const std::string& dir, const json& key) {
    const std::string file = cache_file(dir, key);
    std::ifstream in(file, std::ios::binary);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(file + ": missing cache header");
    CachedTable t;
    try {
        t.header = json::parse(line);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(file + ": corrupt cache header: " + e.what());
    }
    if (t.header.value("format", 0) != kCacheFormat) throw std::runtime_error(file + ": unsupported cache format");
    if (t.header.at("key") != key) return std::nullopt;
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in) throw std::runtime_error(file + ": truncated cache file");
    t.data.resize(count);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error(file + ": truncated cache table");
    return t;
}

void cache_store(const std::string& dir, const json& key, const json& summary, std::span<const double> data) {
    std::filesystem::create_directories(dir);
    const std::string file = cache_file(dir, key);
    const std::string tmp = file + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(tmp + ": cannot write cache file");
        out << json{{"format", kCacheFormat}, {"key", key}, {"summary", summary}}.dump() << '\n';
        const std::uint64_t count = data.size();
        out.write(reinterpret_cast<const char*>(&count), sizeof count);
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!out) throw std::runtime_error(tmp + ": write failed");
    }
    std::filesystem::rename(tmp, file);
}

// ---------------------------------------------------------------------------
// Beta tables

json beta_table_key(const std::string& backend, double s, double h, double extent, const SeedLedger* seed,
                    std::size_t mc_paths) {
    json k{{"backend", backend}, {"domain", "S^3"}, {"s", s}, {"h", h}, {"extent", extent}};
    if (seed) {
        k["seed"] = seed->to_json();
        k["mc_paths"] = mc_paths;
    }
    return k;
}

std::vector<double> pack(const BetaTable& t) {
    std::vector<double> d;
    d.reserve(4 * t.value.size());
    for (const auto* v : {&t.value, &t.d1, &t.d2, &t.stderr_}) d.insert(d.end(), v->begin(), v->end());
    return d;
}

BetaTable unpack_beta_table(const json& header, std::span<const double> data) {
    BetaTable t;
    const auto& key = header.at("key");
    t.s = key.at("s").get<double>();
    t.h = key.at("h").get<double>();
    t.nodes = header.at("summary").at("nodes").get<std::size_t>();
    const std::size_t n = t.nodes * t.nodes;
    if (data.size() != 4 * n) throw std::runtime_error("beta table cache has the wrong size");
    t.value.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n));
    t.d1.assign(data.begin() + static_cast<std::ptrdiff_t>(n), data.begin() + static_cast<std::ptrdiff_t>(2 * n));
    t.d2.assign(data.begin() + static_cast<std::ptrdiff_t>(2 * n), data.begin() + static_cast<std::ptrdiff_t>(3 * n));
    t.stderr_.assign(data.begin() + static_cast<std::ptrdiff_t>(3 * n), data.end());
    return t;
}

// ---------------------------------------------------------------------------
// PDE snapshots

json pde_field_key(const DriftField& drift, const Domain& domain, const PdeMesh& mesh) {
    return {{"backend", "pde-grid"},
            {"domain", domain.describe()},
            {"drift_hash", drift.hash()},
            {"drift", drift.description()},
            {"mesh",
             {{"gap_extent", mesh.gap_extent},
              {"h", mesh.h},
              {"horizon", mesh.horizon},
              {"dt", mesh.dt},
              {"max_snapshots", mesh.max_snapshots}}}};
}

std::vector<double> pack(const PdeGridField& f) {
    std::vector<double> d(f.times());
    for (const auto& s : f.snapshots()) d.insert(d.end(), s.begin(), s.end());
    return d;
}

std::shared_ptr<PdeGridField> unpack_pde_field(const json& header, std::span<const double> data,
                                               const DriftField& drift, const Domain& domain) {
    const auto& sum = header.at("summary");
    const auto times = sum.at("times").get<std::size_t>();
    const auto nodes = sum.at("nodes_per_axis").get<std::size_t>();
    const auto total = sum.at("nodes_total").get<std::size_t>();
    if (data.size() != times * (1 + total)) throw std::runtime_error("PDE cache has the wrong size");
    const auto& m = header.at("key").at("mesh");
    PdeMesh mesh{m.at("gap_extent").get<double>(), m.at("h").get<double>(), m.at("horizon").get<double>(),
                 m.at("dt").get<double>(), m.at("max_snapshots").get<std::size_t>()};
    mesh.gap_extent = sum.at("gap_extent").get<double>();
    std::vector<double> t(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(times));
    std::vector<std::vector<double>> snaps(times);
    for (std::size_t k = 0; k < times; ++k) {
        const auto* p = data.data() + times + k * total;
        snaps[k].assign(p, p + total);
    }
    return std::make_shared<PdeGridField>(domain, drift, mesh, std::move(t), std::move(snaps), nodes);
}

std::shared_ptr<PdeGridField> cached_alpha_pde(const std::string& dir, const DriftField& drift, const Domain& domain,
                                               const PdeMesh& mesh, std::string* warning) {
    if (dir.empty()) return alpha_pde(drift, domain, mesh);
    const json key = pde_field_key(drift, domain, mesh);
    if (auto hit = cache_load(dir, key)) return unpack_pde_field(hit->header, hit->data, drift, domain);
    if (warning) *warning = "field cache miss (" + cache_file(dir, key) + "); built on the fly";
    auto f = alpha_pde(drift, domain, mesh);
    const std::size_t total = f->snapshots().empty() ? 0 : f->snapshots().front().size();
    cache_store(dir, key,
                {{"times", f->times().size()},
                 {"nodes_per_axis", f->nodes_per_axis()},
                 {"nodes_total", total},
                 {"gap_extent", f->mesh().gap_extent},
                 {"stderr", 0.0}},
                pack(*f));
    return f;
}

}  // namespace arratia
