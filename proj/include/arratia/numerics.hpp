#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace arratia {

struct QuadratureRule {
    std::vector<double> x;
    std::vector<double> w;
};

/// m-point Gauss-Legendre rule on [a, b].
QuadratureRule gauss_legendre(std::size_t m, double a = -1.0, double b = 1.0);
/// Composite rule: `panels` equal panels of m-point Gauss-Legendre on [a, b].
QuadratureRule composite_gauss(std::size_t m, std::size_t panels, double a, double b);

/// Legendre polynomial P_n on [-1, 1].
double legendre(unsigned n, double x);

/// erf and the Gaussian e^{-x^2} from a cubic Hermite table on [0, 6].
namespace fast {
double erf(double x);
double gauss(double x);  // e^{-x^2}
/// e^{-x^2} / erf(x) * x for x >= 0; finite at 0 (limit sqrt(pi)/2).
double gauss_over_erf_times_x(double x);
}  // namespace fast

/// Barycentric interpolation through Chebyshev points of the second kind on [a, b].
class ChebyshevInterpolant {
public:
    ChebyshevInterpolant() = default;
    ChebyshevInterpolant(double a, double b, std::size_t count);

    static std::vector<double> nodes(double a, double b, std::size_t count);
    const std::vector<double>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    double lower() const { return a_; }
    double upper() const { return b_; }

    /// Barycentric weights for evaluation at x; sums to one.
    void weights(double x, std::vector<double>& out) const;
    double operator()(double x, const std::vector<double>& values) const;

private:
    double a_ = 0.0, b_ = 1.0;
    std::vector<double> nodes_;
    std::vector<double> bary_;
};

}  // namespace arratia
