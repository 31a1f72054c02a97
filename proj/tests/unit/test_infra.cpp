#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "arratia/cache.hpp"
#include "arratia/config.hpp"
#include "arratia/girsanov.hpp"
#include "arratia/rho_weights.hpp"
#include "arratia/verify.hpp"

using namespace arratia;

namespace {

std::string config_error(const std::string& text) {
    try {
        parse_config_toml(text, "test.toml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST_CASE("an empty configuration yields the defaults") {
    const auto c = parse_config_toml("", "empty.toml");
    CHECK(c.master_seed == kDefaultMasterSeed);
    CHECK(c.M == 1024);
    CHECK(c.u == std::vector<double>{0.0, 1.0});
    CHECK_FALSE(c.N_override);
    CHECK(suites_for(c).size() == default_suites(kDefaultMasterSeed).size());
}

TEST_CASE("configuration values are read from TOML and JSON alike") {
    const auto t = parse_config_toml("[seed]\nmaster = 5\n[grid]\nM = 256\n[mc]\nN = 300\n[domain]\nu = [0.0, 0.5, 2.0]\n");
    CHECK(t.master_seed == 5);
    CHECK(t.M == 256);
    CHECK(t.N_override);
    CHECK(t.u.size() == 3);
    for (const auto& s : suites_for(t)) CHECK(s.N == 300);
    const auto j = parse_config_json(R"({"seed": {"master": 5}, "grid": {"M": 256}})");
    CHECK(j.master_seed == 5);
    CHECK(j.M == 256);
}

TEST_CASE("configuration errors name the file, line and key") {
    const auto unknown = config_error("threads = 1\nfoo = 2\n");
    CHECK(unknown.find("test.toml:2") != std::string::npos);
    CHECK(unknown.find("'foo'") != std::string::npos);
    const auto nested = config_error("[grid]\nT = 1.0\nsteps = 3\n");
    CHECK(nested.find("test.toml:3") != std::string::npos);
    CHECK(nested.find("steps") != std::string::npos);
    const auto order = config_error("[domain]\nu = [1.0, 0.0]\n");
    CHECK(order.find("S^n") != std::string::npos);
    CHECK_FALSE(config_error("[[suite]]\nsuite = \"no-such-suite\"\n").empty());
    CHECK_FALSE(config_error("[[suite]]\nsuite = \"zero-kernel\"\n[suite.params]\nbogus = 1\n").empty());
    CHECK_FALSE(config_error("[grid]\nM = \"many\"\n").empty());
    CHECK_FALSE(config_error("[[kernel]]\nname = \"box\"\n").empty());
}

// ---------------------------------------------------------------------------
// Field cache

TEST_CASE("field cache round trip and key isolation") {
    const auto dir = (std::filesystem::temp_directory_path() / "arratia_unit_cache").string();
    std::filesystem::remove_all(dir);
    const auto table = beta_table_harmonic(0.5, 0.25, 2.0);
    const auto key = beta_table_key("beta-harmonic", 0.5, 0.25, 2.0, nullptr, 0);
    CHECK_FALSE(cache_load(dir, key).has_value());
    cache_store(dir, key, {{"nodes", table.nodes}}, pack(table));
    const auto hit = cache_load(dir, key);
    REQUIRE(hit.has_value());
    const auto back = unpack_beta_table(hit->header, hit->data);
    CHECK(back.nodes == table.nodes);
    CHECK(back.value == table.value);
    CHECK(back.d1 == table.d1);
    CHECK(back.d2 == table.d2);
    CHECK_FALSE(cache_load(dir, beta_table_key("beta-harmonic", 0.6, 0.25, 2.0, nullptr, 0)).has_value());

    const PdeMesh mesh{3.0, 0.1, 0.5, 0.0, 16};
    std::string warning;
    const auto built = cached_alpha_pde(dir, DriftField::zero(2), Domain::weyl_chamber(2), mesh, &warning);
    CHECK(warning.find("cache miss") != std::string::npos);
    warning.clear();
    const auto loaded = cached_alpha_pde(dir, DriftField::zero(2), Domain::weyl_chamber(2), mesh, &warning);
    CHECK(warning.empty());
    const std::vector<double> u{0.0, 0.7};
    CHECK(loaded->alpha(0.33, u) == built->alpha(0.33, u));
    std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Girsanov maps

TEST_CASE("the G map and the xi solver agree on the lifetime") {
    auto table = std::make_shared<const BetaTable>(beta_table_harmonic(0.5, 0.05, 6.0));
    const auto aleph = aleph_field(table);
    const auto domain = Domain::weyl_chamber(3);
    const auto grid = make_grid(1.0, 256);
    const std::vector<double> u{0.0, 0.6, 1.5};
    for (std::size_t p = 0; p < 20; ++p) {
        const auto omega = sample_brownian(u, grid, SeedLedger{31, 1, 0}, p);
        const auto xi = solve_xi(omega, aleph, domain);
        double life = 0.0;
        const auto eta = g_transform(xi.xi, aleph, domain, &life);
        CHECK(life == xi.lifetime);
        // G inverts the Euler scheme before the exit
        for (std::size_t j = 0; j < grid.steps() && grid.time(j + 1) < xi.lifetime; ++j)
            for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(eta.value(i, j + 1) - omega.value(i, j + 1)) < 1e-12);
    }
}

TEST_CASE("psi inverts phi on conditioned paths") {
    const auto domain = Domain::weyl_chamber(2);
    const ClosedFormField field(domain);
    const auto grid = make_grid(1.0, 256);
    const std::vector<double> u{0.0, 1.0};
    const auto batch = sample_conditioned(u, 1.0, DriftField::zero(2), domain, grid, 20, SeedLedger{32, 1, 0});
    REQUIRE(batch.paths.size() == 20);
    CHECK(batch.attempts >= 20);
    for (const auto& omega : batch.paths) {
        const auto eta = phi_transform(1.0, omega, field, DriftField::zero(2), false);
        REQUIRE(eta.valid);
        const auto back = psi_inverse(1.0, eta.path, field, DriftField::zero(2));
        double err = 0.0;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j <= grid.steps(); ++j) err = std::max(err, std::abs(back.value(i, j) - omega.value(i, j)));
        CHECK(err < 1e-9);
    }
}

// ---------------------------------------------------------------------------
// Verification harness

TEST_CASE("persisted statistics re-evaluate to the same verdict") {
    Statistic s{"moment", 0.51, 0.5, 0.004, 0.012, Check::Within, true};
    CHECK(evaluate(s));
    auto back = Statistic::from_json(s.to_json());
    CHECK(back.name == "moment");
    CHECK(back.observed == s.observed);
    CHECK(evaluate(back) == back.pass);
    back.observed = 0.52;
    CHECK_FALSE(evaluate(back));
    Statistic nan{"broken", std::nan(""), 0.0, 0.0, 1.0, Check::AtMost, false};
    const auto nb = Statistic::from_json(nan.to_json());
    CHECK(std::isnan(nb.observed));
    CHECK_FALSE(evaluate(nb));
    CHECK(evaluate(Statistic{"floor", 0.2, 0.0, 0.0, 0.01, Check::AtLeast, true}));
    CHECK(check_from_string(to_string(Check::AtLeast)) == Check::AtLeast);
}

TEST_CASE("preregistered suites have distinct streams and known names") {
    const auto specs = default_suites(7);
    CHECK(specs.size() == 16);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        CHECK(specs[i].seed.master_seed == 7);
        for (std::size_t j = 0; j < i; ++j) CHECK(specs[i].seed.stream_id != specs[j].seed.stream_id);
        CHECK(suite_from_string(to_string(specs[i].suite)) == specs[i].suite);
    }
    CHECK_THROWS(suite_from_string("nonexistent"));
}

TEST_CASE("a small suite runs deterministically and reports power warnings") {
    TestSpec spec;
    spec.name = "zero";
    spec.suite = Suite::ZeroKernel;
    spec.N = 200;
    spec.M = 64;
    spec.seed = SeedLedger{40, 1, 0};
    const auto a = run_suite(spec);
    const auto b = run_suite(spec);
    CHECK(a.pass);
    CHECK(a.status == "pass");
    CHECK(a.to_json() == b.to_json());
    bool warned = false;
    for (const auto& w : a.warnings) warned |= w.find("insufficient power") != std::string::npos;
    CHECK(warned);
    spec.params = {{"no_such_param", 1}};
    CHECK_THROWS(run_suite(spec));
}
