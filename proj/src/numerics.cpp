#include "arratia/numerics.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace arratia {

QuadratureRule gauss_legendre(std::size_t m, double a, double b) {
    if (m == 0) throw std::invalid_argument("quadrature needs at least one node");
    QuadratureRule r;
    r.x.resize(m);
    r.w.resize(m);
    for (std::size_t i = 0; i < (m + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(m) + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (std::size_t k = 2; k <= m; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / static_cast<double>(k);
                p0 = p1;
                p1 = p2;
            }
            dp = static_cast<double>(m) * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.x[i] = -z;
        r.x[m - 1 - i] = z;
        r.w[i] = r.w[m - 1 - i] = w;
    }
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    for (std::size_t i = 0; i < m; ++i) {
        r.x[i] = c + h * r.x[i];
        r.w[i] *= h;
    }
    return r;
}

QuadratureRule composite_gauss(std::size_t m, std::size_t panels, double a, double b) {
    if (panels == 0) throw std::invalid_argument("composite rule needs a panel");
    QuadratureRule r;
    const QuadratureRule base = gauss_legendre(m);
    const double w = (b - a) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
        const double lo = a + w * static_cast<double>(p);
        for (std::size_t i = 0; i < m; ++i) {
            r.x.push_back(lo + 0.5 * w * (base.x[i] + 1.0));
            r.w.push_back(0.5 * w * base.w[i]);
        }
    }
    return r;
}

double legendre(unsigned n, double x) {
    double p0 = 1.0, p1 = x;
    if (n == 0) return p0;
    for (unsigned k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

namespace fast {
namespace {

constexpr double kMax = 6.0;
constexpr std::size_t kCells = 6 * 512;
constexpr double kH = kMax / kCells;

struct Table {
    std::array<double, kCells + 1> f{}, df{};
};

template <class F, class D>
Table build(F f, D d) {
    Table t;
    for (std::size_t i = 0; i <= kCells; ++i) {
        const double x = kH * static_cast<double>(i);
        t.f[i] = f(x);
        t.df[i] = d(x);
    }
    return t;
}

inline double hermite(const Table& t, double x) {
    const double s = x / kH;
    auto i = static_cast<std::size_t>(s);
    if (i >= kCells) i = kCells - 1;
    const double u = s - static_cast<double>(i);
    const double u2 = u * u, u3 = u2 * u;
    const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u, h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
    return h00 * t.f[i] + h10 * kH * t.df[i] + h01 * t.f[i + 1] + h11 * kH * t.df[i + 1];
}

const double kTwoOverSqrtPi = 2.0 / std::sqrt(std::numbers::pi);

const Table& erf_table() {
    static const Table t = build([](double x) { return std::erf(x); },
                                [](double x) { return kTwoOverSqrtPi * std::exp(-x * x); });
    return t;
}

const Table& gauss_table() {
    static const Table t = build([](double x) { return std::exp(-x * x); },
                                [](double x) { return -2.0 * x * std::exp(-x * x); });
    return t;
}

// r(x) = x e^{-x^2} / erf(x)
double r_exact(double x) {
    if (x < 1e-4) return std::sqrt(std::numbers::pi) / 2.0 * (1.0 - 2.0 * x * x / 3.0);
    return x * std::exp(-x * x) / std::erf(x);
}

double r_deriv(double x) {
    if (x < 1e-4) return -2.0 * std::sqrt(std::numbers::pi) / 3.0 * x;
    const double e = std::exp(-x * x), er = std::erf(x);
    return (e * (1.0 - 2.0 * x * x) * er - x * e * kTwoOverSqrtPi * e) / (er * er);
}

const Table& ratio_table() {
    static const Table t = build(r_exact, r_deriv);
    return t;
}

}  // namespace

double erf(double x) {
    const double a = std::abs(x);
    const double v = a >= kMax ? 1.0 : hermite(erf_table(), a);
    return x < 0 ? -v : v;
}

double gauss(double x) {
    const double a = std::abs(x);
    return a >= kMax ? 0.0 : hermite(gauss_table(), a);
}

double gauss_over_erf_times_x(double x) {
    if (x < 0) throw std::domain_error("ratio table defined for x >= 0");
    return x >= kMax ? 0.0 : hermite(ratio_table(), x);
}

}  // namespace fast

ChebyshevInterpolant::ChebyshevInterpolant(double a, double b, std::size_t count)
    : a_(a), b_(b), nodes_(nodes(a, b, count)), bary_(count) {
    for (std::size_t i = 0; i < count; ++i) {
        double w = (i % 2 == 0) ? 1.0 : -1.0;
        if (i == 0 || i + 1 == count) w *= 0.5;
        bary_[i] = w;
    }
}

std::vector<double> ChebyshevInterpolant::nodes(double a, double b, std::size_t count) {
    if (count == 0) throw std::invalid_argument("interpolant needs nodes");
    std::vector<double> x(count);
    if (count == 1) {
        x[0] = 0.5 * (a + b);
        return x;
    }
    for (std::size_t i = 0; i < count; ++i) {
        const double c = std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1));
        x[count - 1 - i] = 0.5 * (a + b) + 0.5 * (b - a) * c;
    }
    return x;
}

void ChebyshevInterpolant::weights(double x, std::vector<double>& out) const {
    const std::size_t n = nodes_.size();
    out.assign(n, 0.0);
    if (n == 1) {
        out[0] = 1.0;
        return;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x - nodes_[i];
        if (d == 0.0) {
            out.assign(n, 0.0);
            out[i] = 1.0;
            return;
        }
        // reversed node order flips every weight sign at most; normalization absorbs it
        out[i] = bary_[i] / d;
        s += out[i];
    }
    for (auto& v : out) v /= s;
}

double ChebyshevInterpolant::operator()(double x, const std::vector<double>& values) const {
    std::vector<double> w;
    weights(x, w);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * values[i];
    return s;
}

}  // namespace arratia
