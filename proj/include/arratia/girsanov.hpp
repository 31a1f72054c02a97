#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "arratia/coalescing_flow.hpp"
#include "arratia/domain.hpp"
#include "arratia/rng_paths.hpp"
#include "arratia/survival.hpp"

namespace arratia {

class NotInRangeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kDriftCap = 1e4;

/// Euler solution of xi = omega + int aleph(xi) dr, stopped at the exit from G.
struct XiSolution {
    SamplePath xi;                 // frozen after the exit step
    double lifetime = kNoCollision;
    std::size_t exit_step = 0;     // step containing the exit (meaningful when finite)

    bool alive_at(double t) const { return lifetime > t; }
    /// Number of steps j < M with t_j < lifetime.
    std::size_t live_steps() const;
};

XiSolution solve_xi(const SamplePath& omega, const DriftField& drift, const Domain& domain, bool bridge = true);

struct TransformedPath {
    double anchor = 0.0;
    SamplePath path;
    bool valid = false;
    std::size_t capped_steps = 0;
    std::size_t corrected_steps = 0;
    double max_drift = 0.0;  // largest applied |grad log alpha| component
};

/// phi(t, omega)(r) = omega(r) - sum_{t_i < r ^ t} grad log alpha(t - t_i, xi(t_i)) dt.
/// Throws std::invalid_argument when the lifetime does not exceed t.
TransformedPath phi_transform(double t, const SamplePath& omega, const SurvivalField& field,
                              const DriftField& drift, bool bridge = true);
TransformedPath phi_transform(double t, const SamplePath& omega, const XiSolution& xi, const SurvivalField& field);

/// Forward recursion inverting phi; NotInRangeError when the reconstructed xi leaves G before t.
SamplePath psi_inverse(double t, const SamplePath& eta, const SurvivalField& field, const DriftField& drift);

/// omega(. ^ tau) - int_0^{. ^ tau} aleph(omega(r)) dr on the grid, left-point sums.
SamplePath g_transform(const SamplePath& omega, const DriftField& drift, const Domain& domain,
                       double* lifetime = nullptr);

struct ConditionedBatch {
    std::vector<SamplePath> paths;
    std::size_t attempts = 0;
    double acceptance() const { return attempts ? static_cast<double>(paths.size()) / attempts : 0.0; }
    double acceptance_stderr() const;
};

/// Rejection sampler of the law conditioned on lifetime > t (driftless paths, lifetime from solve_xi).
ConditionedBatch sample_conditioned(std::span<const double> u, double t, const DriftField& drift,
                                    const Domain& domain, const TimeGrid& grid, std::size_t N,
                                    const SeedLedger& seed, double min_acceptance = 1e-3);

}  // namespace arratia
