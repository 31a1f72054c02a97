#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "arratia/rho_weights.hpp"
#include "arratia/survival.hpp"

using namespace arratia;

namespace {

// Driftless three-point survival from the pairwise erf terms (independent of the library's Pfaffian code).
double alpha3_reference(double t, double a, double b, double c) {
    auto p = [t](double d) { return std::erf(d / (2.0 * std::sqrt(t))); };
    return p(b - a) + p(c - b) - p(c - a);
}

}  // namespace

TEST_CASE("two-point survival closed form at u = (0, 2), t = 1 is erf(1)") {
    const std::vector<double> u{0.0, 2.0};
    CHECK(alpha_s2_closed(1.0, u) == doctest::Approx(0.8427007929497149).epsilon(1e-15));
    CHECK(alpha_chamber_closed(1.0, u) == doctest::Approx(0.8427007929497149).epsilon(1e-15));
    CHECK(alpha_s2_closed(0.0, u) == 1.0);
}

TEST_CASE("Pfaffian survival for three points matches the pairwise erf formula") {
    for (double t : {0.1, 1.0, 3.0}) {
        const std::vector<double> u{-0.2, 0.5, 1.7};
        CHECK(alpha_chamber_closed(t, u) == doctest::Approx(alpha3_reference(t, -0.2, 0.5, 1.7)).epsilon(1e-13));
    }
}

TEST_CASE("Karlin-McGregor quadrature agrees with the closed forms") {
    const std::vector<double> u2{0.0, 2.0};
    const auto r2 = alpha_karlin_mcgregor(1.0, u2);
    CHECK(r2.ok);
    CHECK(std::abs(r2.value - 0.8427007929497149) < 1e-8);
    const std::vector<double> u3{0.0, 0.7, 1.5};
    const auto r3 = alpha_karlin_mcgregor(0.8, u3);
    CHECK(r3.ok);
    CHECK(std::abs(r3.value - alpha3_reference(0.8, 0.0, 0.7, 1.5)) < 1e-6);
}

TEST_CASE("Monte Carlo survival is within three binomial stderr of the closed form") {
    const std::vector<double> u{0.0, 1.0};
    const auto est = alpha_monte_carlo(DriftField::zero(2), Domain::weyl_chamber(2), u, 1.0, 20000, SeedLedger{11, 1, 0},
                                       256);
    CHECK(std::abs(est.value - std::erf(0.5)) < 3 * est.stderr_);
    const std::vector<double> h{0.0};
    const auto half = alpha_monte_carlo(DriftField::zero(1), Domain::half_line(1.0), h, 1.0, 20000,
                                        SeedLedger{11, 2, 0}, 256);
    // reflection principle: P(max_{s<=1} B_s < 1) = erf(1 / sqrt 2)
    CHECK(std::abs(half.value - std::erf(1.0 / std::sqrt(2.0))) < 3 * half.stderr_);
}

TEST_CASE("analytic log-gradient matches central differences of the closed form") {
    const ClosedFormField f(Domain::weyl_chamber(3));
    const std::vector<double> u{0.0, 0.4, 1.3};
    const double t = 0.7, h = 1e-6;
    std::vector<double> g(3);
    f.grad_log(t, u, g);
    for (std::size_t i = 0; i < 3; ++i) {
        auto up = u, dn = u;
        up[i] += h;
        dn[i] -= h;
        const double fd = (std::log(alpha3_reference(t, up[0], up[1], up[2])) -
                           std::log(alpha3_reference(t, dn[0], dn[1], dn[2]))) /
                          (2 * h);
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
    }
    CHECK_THROWS_AS(grad_log_alpha(f, 1.0, std::vector<double>{0.0, 1e-14, 1.0}), SingularityError);
}

TEST_CASE("gap operator is exact on quadratics in the interior") {
    const PdeMesh mesh{4.0, 0.25, 1.0, 0.0, 64};
    // two points: 1/2 Laplacian in u of g^2, g = u2 - u1, equals 2
    const auto d2 = Domain::weyl_chamber(2);
    const auto v2 = apply_gap_operator(DriftField::zero(2), d2, mesh, [](std::span<const double> g) { return g[0] * g[0]; });
    const std::size_t n = v2.size();
    for (std::size_t i = 1; i + 1 < n; ++i) CHECK(v2[i] == doctest::Approx(2.0));
    // three points: 1/2 Laplacian of g1 g2 is -1, of g1^2 is 2
    const auto d3 = Domain::weyl_chamber(3);
    const auto v3 = apply_gap_operator(DriftField::zero(3), d3, mesh, [](std::span<const double> g) { return g[0] * g[1]; });
    const auto w3 = apply_gap_operator(DriftField::zero(3), d3, mesh, [](std::span<const double> g) { return g[0] * g[0]; });
    const std::size_t m = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(v3.size()))));
    REQUIRE(m * m == v3.size());
    for (std::size_t i = 1; i + 1 < m; ++i)
        for (std::size_t j = 1; j + 1 < m; ++j) {
            CHECK(v3[i * m + j] == doctest::Approx(-1.0));
            CHECK(w3[i * m + j] == doctest::Approx(2.0));
        }
}

TEST_CASE("driftless grid PDE approaches the closed form") {
    const PdeMesh mesh{8.0, 0.05, 1.0, 0.0, 64};
    const auto f = alpha_pde(DriftField::zero(2), Domain::weyl_chamber(2), mesh);
    for (double gap : {0.3, 1.0, 2.0}) {
        const std::vector<double> u{0.0, gap};
        CHECK(std::abs(f->alpha(1.0, u) - std::erf(gap / 2.0)) < 2e-3);
    }
    const auto f3 = alpha_pde(DriftField::zero(3), Domain::weyl_chamber(3), PdeMesh{6.0, 0.1, 0.5, 0.0, 64});
    const std::vector<double> u3{0.0, 0.6, 1.4};
    CHECK(std::abs(f3->alpha(0.5, u3) - alpha3_reference(0.5, 0.0, 0.6, 1.4)) < 1e-2);
}

TEST_CASE("harmonic beta matches high-accuracy reference values") {
    struct Case {
        double s, g1, g2, value, d0, d1, d2;
    };
    // adaptive quadrature of the wedge harmonic measure, computed offline
    const Case cases[] = {
        {0.5, 0.5, 0.5, 0.6167401139606212, -0.4000842809434211, 0.0, 0.40008428094342097},
        {1.0, 0.3, 1.0, 0.6000579452260791, -0.2499288517716798, -0.0971307239054187, 0.3470595756770985},
        {0.25, 2.0, 0.3, 0.9851411329181607, -0.030301960916069806, 0.04927380178211964, -0.018971840866049833},
    };
    for (const auto& c : cases) {
        const std::vector<double> u{0.0, c.g1, c.g1 + c.g2};
        const auto b = beta3_harmonic(c.s, u);
        CHECK(b.value == doctest::Approx(c.value).epsilon(1e-8));
        CHECK(std::abs(b.grad[0] - c.d0) < 1e-7);
        CHECK(std::abs(b.grad[1] - c.d1) < 1e-7);
        CHECK(std::abs(b.grad[2] - c.d2) < 1e-7);
        // translation invariance
        const std::vector<double> shifted{3.0, 3.0 + c.g1, 3.0 + c.g1 + c.g2};
        CHECK(beta3_harmonic(c.s, shifted).value == doctest::Approx(b.value).epsilon(1e-12));
    }
}

TEST_CASE("harmonic beta agrees with nested simulation") {
    StageOptions stage;
    stage.grid = make_grid(1.0, 512);
    const std::vector<double> u{0.0, 0.5, 1.0};
    const auto mc = beta_monte_carlo(0.5, u, 4000, SeedLedger{13, 1, 0}, stage);
    CHECK(std::abs(mc.value - 0.6167401139606212) < 3 * mc.stderr_ + 2e-3);
}

TEST_CASE("three-point weight: drift route and driftless route agree") {
    RhoOptions opts;
    opts.s_nodes = 3;
    opts.s_lo = 0.25;
    opts.s_hi = 0.75;
    opts.pde = PdeMesh{5.0, 0.05, 0.75, 0.0, 256};
    const RhoWeights w({0.0, 0.5, 1.25}, opts);
    CHECK(w.rho(0.0) == 1.0);
    for (double s2 : {0.3, 0.6})
        for (double s3 : {0.2, 0.5}) {
            const double a = w.rho(s2, s3), b = w.rho_driftless(s2, s3);
            CHECK(a > 0.0);
            CHECK(a <= w.rho(s2) + 1e-9);
            CHECK(std::abs(a - b) < 1e-2);
        }
    // two points: rho is the closed-form survival
    const RhoWeights w2({0.0, 1.0});
    CHECK(w2.rho(0.8) == doctest::Approx(std::erf(1.0 / (2.0 * std::sqrt(0.8)))));
}
