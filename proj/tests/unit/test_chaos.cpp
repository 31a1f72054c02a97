#include <doctest.h>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "arratia/chaos.hpp"
#include "arratia/expansion.hpp"

using namespace arratia;

TEST_CASE("multi-index enumeration counts words over growing alphabets") {
    // level 2: words over {1} and {1,2}; degree <= 1 gives (),() + (1),() + (),(1) + (),(2)
    CHECK(enumerate_indices(2, 0).size() == 1);
    CHECK(enumerate_indices(2, 1).size() == 4);
    // degree 2 adds (1,1),() ; (1),(1) ; (1),(2) ; and 4 words of length 2 over {1,2}
    CHECK(enumerate_indices(2, 2).size() == 11);
    const auto idx = MultiIndex::of({{1}, {2, 1}});
    CHECK(idx.total_degree() == 3);
    CHECK(idx.part(1).alphabet() == 2);
    CHECK_THROWS(MultiIndex::of({{2}, {}}));
}

TEST_CASE("kernel registry builds the named kernels and rejects unknown ones") {
    const auto k = kernel_from_json({{"name", "box"}, {"bounds", {{0.0, 1.0}, {0.5, 2.0}}}});
    CHECK(k.arity() == 2);
    const std::vector<double> inside{0.2, 0.7}, unordered{0.7, 0.6};
    CHECK(k(inside) == 1.0);
    CHECK(k(unordered) == 0.0);
    const auto l = kernel_from_json({{"name", "legendre"}, {"bounds", {{0.0, 1.0}}}, {"degrees", {1}}});
    const std::vector<double> t{0.75};
    CHECK(l(t) == doctest::Approx(0.5));
    CHECK(kernel_from_json({{"name", "constant"}, {"value", 2.5}}).scalar() == 2.5);
    CHECK_THROWS_AS(kernel_from_json({{"name", "wavelet"}}), std::invalid_argument);
}

TEST_CASE("iterated sums reduce to increments and their symmetric square") {
    const auto g = make_grid(1.0, 64);
    const std::vector<double> u{0.0, 1.0};
    const auto p = sample_brownian(u, g, SeedLedger{21, 1, 0}, 0);
    const auto k1 = SimplexKernel::box({{0.0, 1.0}});
    CHECK(ito_iterated(p, k1, ChaosIndex(2, {2})) == doctest::Approx(p.value(1, 64) - p.value(1, 0)));
    double sum = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < 64; ++j) {
        sum += p.increment(0, j);
        sq += p.increment(0, j) * p.increment(0, j);
    }
    const auto k2 = SimplexKernel::box({{0.0, 1.0}, {0.0, 1.0}});
    CHECK(ito_iterated(p, k2, ChaosIndex(2, {1, 1})) == doctest::Approx(0.5 * (sum * sum - sq)));
}

TEST_CASE("iterated integrals and the A operators are linear in the kernel") {
    const auto g = make_grid(1.0, 128);
    const std::vector<double> u{0.0, 0.5};
    const auto p = sample_brownian(u, g, SeedLedger{22, 1, 0}, 0);
    const auto a = SimplexKernel::legendre_box({{0.0, 1.0}, {0.0, 1.0}}, {1, 0});
    const auto b = SimplexKernel::box({{0.2, 0.6}, {0.3, 0.9}}, -0.7);
    const ChaosIndex idx(2, {1, 2});
    CHECK(ito_iterated(p, a + 2.0 * b, idx) ==
          doctest::Approx(ito_iterated(p, a, idx) + 2.0 * ito_iterated(p, b, idx)));

    StageOptions opts;
    opts.grid = make_grid(1.0, 128);
    const auto motion = simulate_staged(u, opts, SeedLedger{22, 2, 0}, 0);
    const auto index = MultiIndex::of({{1}, {2}});
    const auto ka = ProductKernel::product({SimplexKernel::box({{0.0, 1.0}}), SimplexKernel::box({{0.0, 1.0}})});
    const auto kb = ProductKernel::product(
        {SimplexKernel::legendre_box({{0.0, 1.0}}, {1}), SimplexKernel::legendre_box({{0.0, 1.0}}, {1})});
    MotionIntegrals A(motion);
    REQUIRE_FALSE(A.truncated());
    CHECK(A(ka + 3.0 * kb, index) == doctest::Approx(A(ka, index) + 3.0 * A(kb, index)));
    CHECK(A(ProductKernel(std::vector<std::size_t>{1, 1}), index) == 0.0);
}

TEST_CASE("weighted kernel norms match one-dimensional quadrature of the survival weight") {
    // int_0^1 k(t)^2 erf(1 / (2 sqrt t)) dt; references from adaptive quadrature at 20 digits
    auto field = std::make_shared<const ClosedFormField>(Domain::weyl_chamber(2));
    const auto w = survival_weight(field, {0.0, 1.0});
    auto check = [&](const ProductKernel& k, const MultiIndex& idx, double reference) {
        const auto v = weighted_kernel_norm(k, idx, w);
        CHECK(v.quad_error < 1e-6);
        CHECK(std::abs(v.value - reference) <= 2.0 * v.quad_error + 1e-12);
    };
    check(ProductKernel::product({SimplexKernel::box({{0.0, 1.0}})}), MultiIndex::of({{1}}), 0.7201411061872922);
    check(ProductKernel::product({SimplexKernel::legendre_box({{0.0, 1.0}}, {1})}), MultiIndex::of({{1}}),
          0.2488397179704497);
    // arity 2: the first coordinate integrates to the simplex slice length t
    check(ProductKernel::product({SimplexKernel::box({{0.0, 1.0}, {0.0, 1.0}})}), MultiIndex::of({{1, 1}}),
          0.3168450514532899);
}

TEST_CASE("raw kernels come in order of nondecreasing polynomial degree") {
    BasisSpec spec{{{0.0, 1.0}, {0.0, 1.0}}, 2, 16};
    const auto raw = raw_kernels(MultiIndex::of({{1}, {2}}), spec);
    REQUIRE(raw.size() == 6);  // (0,0), (1,0), (0,1), (2,0), (1,1), (0,2)
    unsigned prev = 0;
    for (const auto& k : raw) {
        unsigned d = 0;
        for (const auto& part : k.terms().at(0).parts)
            for (const auto& f : part.terms().at(0).factors) d += f.degree;
        CHECK(d >= prev);
        prev = d;
    }
    spec.max_size = 4;
    CHECK(raw_kernels(MultiIndex::of({{1}, {2}}), spec).size() == 4);
}

TEST_CASE("weighted bases are orthonormal under an independent quadrature") {
    auto weights = std::make_shared<const RhoWeights>(std::vector<double>{0.0, 1.0});
    const auto w = rho_weight(weights);
    const BasisSpec spec{{{0.0, 1.0}, {0.0, 1.0}}, 2, 8};
    const auto basis = build_basis(MultiIndex::of({{1}, {2}}), w, spec);
    CHECK(basis.orthonormality_error < 1e-10);
    CHECK(orthonormality_defect(basis, w, QuadratureOptions{12, 0.0625, 6}) < 1e-6);
    // E G E^T = I means the Gram matrix of the elements is the identity
    const auto gram = weighted_gram(basis.elements, w);
    for (std::size_t i = 0; i < basis.size(); ++i)
        for (std::size_t j = 0; j < basis.size(); ++j) CHECK(std::abs(gram[i][j].value - (i == j ? 1.0 : 0.0)) < 1e-8);
}

TEST_CASE("projection of the constant functional") {
    auto weights = std::make_shared<const RhoWeights>(std::vector<double>{0.0, 1.0});
    const auto bases = build_bases(2, 1, rho_weight(weights), BasisSpec{{{0.0, 1.0}, {0.0, 1.0}}, 1, 4});
    ProjectionSetup setup;
    setup.u = {0.0, 1.0};
    setup.stage.grid = make_grid(1.0, 128);
    setup.N = 2000;
    setup.seed = SeedLedger{23, 1, 0};
    const auto table = project([](const StagedMotion&) { return 1.0; }, bases, setup);
    REQUIRE_FALSE(table.entries.empty());
    for (const auto& e : table.entries) {
        if (e.index.total_degree() == 0) {
            // the trivial index carries the constant element 1
            CHECK(e.estimate == doctest::Approx(1.0));
            CHECK(e.stderr_ == doctest::Approx(0.0));
        } else {
            CHECK(std::abs(e.estimate) <= 4.0 * e.stderr_);
        }
    }
    const auto rep = parseval_report(table, McEstimate{1.0, 0.0, setup.N});
    CHECK(rep.monotone);
    CHECK(rep.levels.front().ratio == doctest::Approx(1.0));
}

TEST_CASE("Clark integrands") {
    ClarkParams p;
    p.u = {0.0, 1.0};
    p.t = 1.0;
    p.coordinate = 1;
    CHECK_THROWS_AS(clark_integrand("running-maximum", p), std::logic_error);
    const auto q = clark_integrand("coordinate-at-T", p);
    const auto g = make_grid(1.0, 64);
    const auto path = sample_brownian(p.u, g, SeedLedger{24, 1, 0}, 0);
    CHECK(clark_reconstruction(q, path, kNoCollision) == doctest::Approx(path.value(1, 64)));
    const auto s = clark_integrand("survival-indicator", p);
    CHECK(s.mean == doctest::Approx(std::erf(0.5)));
}
