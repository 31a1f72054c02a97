#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "arratia/coalescing_flow.hpp"
#include "arratia/domain.hpp"
#include "arratia/rng_paths.hpp"
#include "arratia/stats.hpp"

using namespace arratia;

TEST_CASE("time grid indexing") {
    const auto g = make_grid(2.0, 8);
    CHECK(g.dt() == 0.25);
    CHECK(g.time(3) == 0.75);
    CHECK(g.index_at_or_before(0.8) == 3);
    CHECK(g.index_at_or_before(5.0) == 8);
    CHECK(g.count_before(0.75) == 3);
    CHECK(g.count_before(10.0) == 8);
    const auto t = g.tail(6);
    CHECK(t.steps() == 2);
    CHECK(t.horizon() == doctest::Approx(0.5));
}

TEST_CASE("same seed ledger gives identical paths; different path indices differ") {
    const SeedLedger s{42, 7, 0};
    const auto g = make_grid(1.0, 64);
    const std::vector<double> u{0.0, 1.0, 2.0};
    const auto a = sample_brownian(u, g, s, 3);
    const auto b = sample_brownian(u, g, s, 3);
    const auto c = sample_brownian(u, g, s, 4);
    CHECK(a.raw() == b.raw());
    CHECK(a.uniforms() == b.uniforms());
    CHECK(a.raw() != c.raw());
    CHECK(SeedLedger::from_json(s.to_json()).master_seed == 42);
    CHECK(SeedLedger::from_json(s.to_json()).stream_id == 7);
}

TEST_CASE("Brownian increments have variance dt") {
    const auto g = make_grid(1.0, 100);
    MeanAccumulator m;
    const std::vector<double> u{0.0};
    for (std::size_t p = 0; p < 200; ++p) {
        const auto path = sample_brownian(u, g, SeedLedger{1, 1, 0}, p);
        for (std::size_t j = 0; j < g.steps(); ++j) m.add(path.increment(0, j) * path.increment(0, j) / g.dt());
    }
    CHECK(std::abs(m.mean() - 1.0) < 4 * m.stderr_());
}

TEST_CASE("bridge crossing probability formula") {
    CHECK(bridge_crossing_probability(1.0, 1.0, 1.0, 1.0) == doctest::Approx(std::exp(-2.0)));
    CHECK(bridge_crossing_probability(0.5, 2.0, 0.1, 2.0) == doctest::Approx(std::exp(-10.0)));
}

TEST_CASE("Weyl chamber membership and boundary distance") {
    const auto d = Domain::weyl_chamber(3);
    const std::vector<double> in{0.0, 0.5, 2.0}, out{0.0, 2.0, 1.0};
    CHECK(d.contains(in));
    CHECK_FALSE(d.contains(out));
    CHECK(d.boundary_distance(in) == doctest::Approx(0.5));
    CHECK(d.slots() == 2);
}

TEST_CASE("coalesced particles move together after meeting, and never cross") {
    const auto g = make_grid(4.0, 512);
    const std::vector<double> u{0.0, 0.3, 0.6};
    for (std::size_t p = 0; p < 50; ++p) {
        const auto m = simulate_npoint(u, g, SeedLedger{5, 2, 0}, p);
        for (std::size_t j = 0; j <= g.steps(); ++j) {
            for (std::size_t k = 0; k + 1 < 3; ++k) {
                CHECK(m.paths.value(k, j) <= m.paths.value(k + 1, j));
                if (g.time(j) > m.adjacent_tau[k]) CHECK(m.paths.value(k, j) == m.paths.value(k + 1, j));
            }
        }
        CHECK(m.pairwise_tau(0, 2) == std::max(m.adjacent_tau[0], m.adjacent_tau[1]));
    }
}

TEST_CASE("staged motions end with one particle, carrying the previous stage's end point") {
    StageOptions opts;
    opts.grid = make_grid(1.0, 128);
    const std::vector<double> u{0.0, 0.5, 1.5};
    for (std::size_t p = 0; p < 20; ++p) {
        const auto sm = simulate_staged(u, opts, SeedLedger{9, 1, 0}, p);
        REQUIRE(sm.stages.size() == 3);
        CHECK(sm.stages.back().particles() == 1);
        if (!sm.complete()) continue;
        for (std::size_t s = 0; s + 1 < sm.stages.size(); ++s) {
            CHECK(sm.stages[s].next_start.size() == sm.stages[s].particles() - 1);
            CHECK(sm.stages[s + 1].path.start() == sm.stages[s].next_start);
            CHECK(std::isfinite(sm.stages[s].tau));
        }
    }
}

TEST_CASE("path dump round trip") {
    const auto g = make_grid(1.0, 16);
    const std::vector<double> u{0.0, 1.0};
    const SeedLedger s{3, 4, 0};
    std::vector<SamplePath> paths{sample_brownian(u, g, s, 0), sample_brownian(u, g, s, 1)};
    const auto file = (std::filesystem::temp_directory_path() / "arratia_unit_dump.bin").string();
    write_path_dump(file, paths, s);
    const auto d = read_path_dump(file);
    CHECK(d.n == 2);
    CHECK(d.grid.steps() == 16);
    CHECK(d.seed.master_seed == 3);
    REQUIRE(d.values.size() == 2);
    CHECK(d.values[1] == paths[1].raw());
    std::filesystem::remove(file);
}
