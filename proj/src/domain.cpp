#include "arratia/domain.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace arratia {

Domain Domain::weyl_chamber(std::size_t n) {
    if (n == 0) throw std::invalid_argument("chamber dimension must be at least 1");
    Domain d;
    d.kind_ = Kind::WeylChamber;
    d.n_ = n;
    return d;
}

Domain Domain::half_line(double level) {
    if (!std::isfinite(level)) throw std::invalid_argument("half-line level must be finite");
    Domain d;
    d.kind_ = Kind::HalfLine;
    d.n_ = 1;
    d.level_ = level;
    return d;
}

std::string Domain::describe() const {
    if (kind_ == Kind::WeylChamber) return "S" + std::to_string(n_);
    return "halfline(" + std::to_string(level_) + ")";
}

bool Domain::contains(std::span<const double> u) const {
    if (u.size() != n_) return false;
    return boundary_distance(u) > 0.0;
}

double Domain::boundary_distance(std::span<const double> u) const {
    if (kind_ == Kind::HalfLine) return level_ - u[0];
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < u.size(); ++k) g = std::min(g, u[k + 1] - u[k]);
    return g;
}

double bridge_crossing_probability(double d0, double d1, double dt, double var) {
    if (d0 <= 0.0 || d1 <= 0.0) return 1.0;
    if (!(dt > 0.0)) return 0.0;
    return std::exp(-2.0 * d0 * d1 / (var * dt));
}

}  // namespace arratia
