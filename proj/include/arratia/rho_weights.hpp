#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "arratia/coalescing_flow.hpp"
#include "arratia/numerics.hpp"
#include "arratia/survival.hpp"

namespace arratia {

struct BetaValue {
    double value = 1.0;
    std::array<double, 3> grad{};  // d beta / d u
};

/// beta_s(u) = E^u erf(gap(p^2) / (2 sqrt s)) for three particles, from the harmonic
/// measure of the pi/3 wedge mapped to the half-plane by z -> z^3.
BetaValue beta3_harmonic(double s, std::span<const double> u, bool with_gradient = true);

/// Nested simulation: mean of erf(gap(p^2)/(2 sqrt s)) over staged three-point motions run to collision.
McEstimate beta_monte_carlo(double s, std::span<const double> u, std::size_t N, const SeedLedger& seed,
                            const StageOptions& stage);

/// beta_s and its gap gradient on the grid g_k = i_k h, k = 1, 2.
struct BetaTable {
    double s = 0.0;
    double h = 0.05;
    std::size_t nodes = 0;
    std::vector<double> value, d1, d2, stderr_;  // d1, d2: derivatives in g1, g2

    double beta(std::span<const double> g) const;
    /// Gradient of log beta in u coordinates (three components).
    void grad_log_u(std::span<const double> u, std::span<double> out) const;
    double max_stderr() const;
};

BetaTable beta_table_harmonic(double s, double h, double extent);
/// Common-random-number table; gradients by central differences of the table.
BetaTable beta_table_mc(double s, double h, double extent, std::size_t N, const SeedLedger& seed,
                        const StageOptions& stage);

/// aleph = grad log beta as a translation-invariant drift on S^3.
DriftField aleph_field(std::shared_ptr<const BetaTable> table);

enum class BetaBackend { Harmonic, MonteCarlo };

struct RhoOptions {
    BetaBackend backend = BetaBackend::Harmonic;
    double s_lo = 0.25, s_hi = 1.0;  // range of the stage-2 last time
    std::size_t s_nodes = 8;         // Chebyshev nodes in that range
    double table_h = 0.05;
    double table_extent = 8.0;
    PdeMesh pde{6.0, 0.05, 1.0, 0.0, 512};  // alpha for the aleph drift; horizon = largest stage-3 time
    std::size_t mc_paths = 2000;
    SeedLedger seed{};
    StageOptions stage{};
    std::string cache_dir;  // beta tables and aleph-survival snapshots; empty disables the cache
};

/// Weights rho_{t2}, rho_{t2,t3}, beta and aleph for n <= 3 at a fixed start u.
class RhoWeights {
public:
    /// n = 1 or 2: closed forms only.
    explicit RhoWeights(std::vector<double> u);
    /// n = 3 with per-node beta tables, aleph drifts and aleph-survival fields.
    RhoWeights(std::vector<double> u, const RhoOptions& opts);

    std::size_t level() const { return u_.size(); }
    const std::vector<double>& start() const { return u_; }

    /// n = 2: alpha_{S2}(s2, u). n = 3: beta_{s2}(u). 1 for s2 <= 0.
    double rho(double s2) const;
    /// n = 3: rho_{s2,s3}(u) = beta_{s2}(u) alpha_{aleph_{s2}, S3}(s3, u).
    double rho(double s2, double s3) const;
    /// Driftless route for the same weight: heat flow of beta_{s2} killed at the walls.
    double rho_driftless(double s2, double s3) const;
    /// MC standard error attached to rho (zero for exact routes).
    double rho_stderr(double s2, double s3) const;

    const ChebyshevInterpolant& nodes() const { return nodes_; }
    const DriftField& aleph(std::size_t k) const { return alephs_.at(k); }
    const BetaTable& beta_table(std::size_t k) const { return *tables_.at(k); }
    std::shared_ptr<const SurvivalField> aleph_survival(std::size_t k) const { return fields_.at(k); }
    const RhoOptions& options() const { return opts_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    std::vector<double> u_;
    RhoOptions opts_;
    ChebyshevInterpolant nodes_;
    std::vector<std::shared_ptr<const BetaTable>> tables_;
    std::vector<DriftField> alephs_;
    std::vector<std::shared_ptr<const SurvivalField>> fields_;
    mutable std::vector<std::shared_ptr<const SurvivalField>> driftless_;
    std::vector<double> beta_at_u_, beta_se_at_u_;
    std::vector<std::string> warnings_;
};

/// Point evaluation of the recursion at u: times = (t2) gives beta and aleph, (t2, t3) adds rho.
struct RhoEstimate {
    double rho = 1.0, rho_stderr = 0.0;
    double beta = 1.0, beta_stderr = 0.0;
    std::vector<double> aleph;
    std::size_t samples = 0;
    std::vector<std::string> warnings;
};

RhoEstimate rho_beta_recursion(const std::vector<double>& times, std::span<const double> u, std::size_t N,
                               const SeedLedger& seed);

}  // namespace arratia
