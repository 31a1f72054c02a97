#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

namespace arratia {

/// Open domain G: the Weyl chamber {u_1 < ... < u_n} or the half-line {x < level}.
class Domain {
public:
    enum class Kind { WeylChamber, HalfLine };

    static Domain weyl_chamber(std::size_t n);
    static Domain half_line(double level);

    Kind kind() const { return kind_; }
    std::size_t dimension() const { return n_; }
    double level() const { return level_; }
    std::string describe() const;

    bool contains(std::span<const double> u) const;
    /// Smallest adjacent gap (chamber) or distance to the level (half-line).
    double boundary_distance(std::span<const double> u) const;
    /// Number of bridge slots: adjacent pairs for the chamber, 1 for the half-line.
    std::size_t slots() const { return kind_ == Kind::WeylChamber ? (n_ > 0 ? n_ - 1 : 0) : 1; }

    struct Exit {
        double fraction;   // position of the exit inside the step, in [0,1]
        std::size_t slot;  // adjacent pair index (chamber) or 0
    };

    /// Exit test for one step x0 -> x1 of length dt. The slot-s bridge test fires when
    /// uniform(s) < crossing probability given both endpoints inside.
    template <class UniformFn>
    std::optional<Exit> step_exit(std::span<const double> x0, std::span<const double> x1, double dt, bool bridge,
                                  UniformFn&& uniform) const;

private:
    Kind kind_ = Kind::WeylChamber;
    std::size_t n_ = 0;
    double level_ = 0.0;
};

/// Crossing probability of a Brownian bridge with per-unit-time variance `var`
/// between positive distances d0, d1 over time dt: exp(-2 d0 d1 / (var dt)).
double bridge_crossing_probability(double d0, double d1, double dt, double var);

template <class UniformFn>
std::optional<Domain::Exit> Domain::step_exit(std::span<const double> x0, std::span<const double> x1, double dt,
                                              bool bridge, UniformFn&& uniform) const {
    std::optional<Exit> best;
    auto consider = [&](double d0, double d1, double var, std::size_t slot) {
        double frac = -1.0;
        if (d0 <= 0.0) {
            frac = 0.0;
        } else if (d1 <= 0.0) {
            frac = d0 / (d0 - d1);
        } else if (bridge && uniform(slot) < bridge_crossing_probability(d0, d1, dt, var)) {
            frac = 0.5;
        }
        if (frac >= 0.0 && (!best || frac < best->fraction)) best = Exit{frac, slot};
    };
    if (kind_ == Kind::WeylChamber) {
        for (std::size_t k = 0; k + 1 < n_; ++k) consider(x0[k + 1] - x0[k], x1[k + 1] - x1[k], 2.0, k);
    } else {
        consider(level_ - x0[0], level_ - x1[0], 1.0, 0);
    }
    return best;
}

}  // namespace arratia
