#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "arratia/numerics.hpp"
#include "arratia/report.hpp"
#include "arratia/stats.hpp"

using namespace arratia;

TEST_CASE("Gauss-Legendre integrates polynomials up to degree 2m-1 exactly") {
    const auto r = gauss_legendre(5, 0.0, 2.0);
    for (int k = 0; k <= 9; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < r.x.size(); ++i) s += r.w[i] * std::pow(r.x[i], k);
        CHECK(s == doctest::Approx(std::pow(2.0, k + 1) / (k + 1)).epsilon(1e-13));
    }
    const auto c = composite_gauss(4, 10, 0.0, M_PI);
    double s = 0.0;
    for (std::size_t i = 0; i < c.x.size(); ++i) s += c.w[i] * std::sin(c.x[i]);
    CHECK(s == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("Legendre polynomials match their explicit forms") {
    for (double x : {-0.9, -0.3, 0.0, 0.5, 1.0}) {
        CHECK(legendre(0, x) == 1.0);
        CHECK(legendre(1, x) == doctest::Approx(x));
        CHECK(legendre(2, x) == doctest::Approx(0.5 * (3 * x * x - 1)));
        CHECK(legendre(3, x) == doctest::Approx(0.5 * (5 * x * x * x - 3 * x)));
    }
}

TEST_CASE("tabulated erf and Gaussian agree with the library functions") {
    for (double x = 0.0; x <= 7.0; x += 0.0137) {
        CHECK(std::abs(fast::erf(x) - std::erf(x)) < 1e-10);
        CHECK(std::abs(fast::erf(-x) + std::erf(x)) < 1e-10);
        CHECK(std::abs(fast::gauss(x) - std::exp(-x * x)) < 1e-10);
    }
    CHECK(fast::gauss_over_erf_times_x(0.0) == doctest::Approx(std::sqrt(M_PI) / 2));
    CHECK(fast::gauss_over_erf_times_x(1.0) == doctest::Approx(std::exp(-1.0) / std::erf(1.0)));
}

TEST_CASE("Chebyshev interpolation reproduces polynomials and its weights sum to one") {
    const ChebyshevInterpolant p(0.25, 1.0, 8);
    std::vector<double> vals;
    for (double x : p.nodes()) vals.push_back(x * x * x - 2 * x);
    for (double x : {0.25, 0.3, 0.61, 0.99}) CHECK(p(x, vals) == doctest::Approx(x * x * x - 2 * x).epsilon(1e-12));
    std::vector<double> w;
    p.weights(0.4, w);
    double s = 0.0;
    for (double v : w) s += v;
    CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("running mean and variance match the two-pass formulas; merge is exact") {
    const std::vector<double> xs{1.5, -2.0, 3.25, 0.0, 7.0, 2.5, -1.0};
    MeanAccumulator a, b, all;
    double mean = 0.0;
    for (double x : xs) mean += x / xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean) / (xs.size() - 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        (i < 3 ? a : b).add(xs[i]);
        all.add(xs[i]);
    }
    a.merge(b);
    CHECK(all.mean() == doctest::Approx(mean));
    CHECK(all.variance() == doctest::Approx(var));
    CHECK(a.mean() == doctest::Approx(mean));
    CHECK(a.variance() == doctest::Approx(var));
    CHECK(all.stderr_() == doctest::Approx(std::sqrt(var / xs.size())));
}

TEST_CASE("Kolmogorov tail and normal cdf reference values") {
    // standard tables: P(K > 1.358) = 0.05, P(K > 1) = 0.26999967
    CHECK(kolmogorov_tail(1.0) == doctest::Approx(0.26999967).epsilon(1e-6));
    CHECK(kolmogorov_tail(1.358) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975));
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(combined_sigma({3.0, 4.0}) == doctest::Approx(5.0));
}

TEST_CASE("KS statistic of evenly spread quantiles is 1/(2n); shifted samples are rejected") {
    std::vector<double> q;
    const std::size_t n = 200;
    for (std::size_t i = 0; i < n; ++i) q.push_back((i + 0.5) / n);
    const auto r = ks_test(q, [](double x) { return std::clamp(x, 0.0, 1.0); });
    CHECK(r.statistic == doctest::Approx(0.5 / n));
    CHECK(r.p_value > 0.99);
    std::vector<double> shifted;
    for (double x : q) shifted.push_back(x * 0.8);
    CHECK(ks_test(shifted, [](double x) { return std::clamp(x, 0.0, 1.0); }).p_value < 1e-3);
    CHECK(ks_two_sample(q, q).statistic == doctest::Approx(0.0));
}

TEST_CASE("CSV fields are quoted only when needed; doubles round-trip") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"x\"") == "\"say \"\"x\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
    std::ostringstream os;
    write_csv_row(os, {"a", "b,c", ""});
    CHECK(os.str() == "a,\"b,c\",\r\n");
    for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789}) CHECK(std::stod(format_double(x)) == x);
    CHECK(format_double(std::nan("")) == "nan");
    CHECK(format_double(INFINITY) == "inf");
    CHECK(format_double(-INFINITY) == "-inf");
    CHECK(json_number(INFINITY).is_string());
    CHECK(json_number(2.0).is_number());
}
