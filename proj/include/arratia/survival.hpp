#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "arratia/domain.hpp"
#include "arratia/rng_paths.hpp"

namespace arratia {

/// Raised when log alpha is requested where alpha is below the floor.
class SingularityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kAlphaFloor = 1e-12;

class DriftField {
public:
    using Eval = std::function<void(std::span<const double> u, std::span<double> out)>;

    DriftField() = default;
    DriftField(std::size_t n, Eval f, bool translation_invariant, std::string description, bool smooth = true);

    static DriftField zero(std::size_t n);
    static DriftField constant(std::vector<double> c);

    std::size_t dimension() const { return n_; }
    bool is_zero() const { return !f_; }
    bool translation_invariant() const { return translation_invariant_; }
    bool smooth() const { return smooth_; }
    const std::string& description() const { return description_; }
    std::uint64_t hash() const;

    void operator()(std::span<const double> u, std::span<double> out) const;

private:
    std::size_t n_ = 0;
    Eval f_;
    bool translation_invariant_ = true;
    bool smooth_ = true;
    std::string description_ = "zero";
};

enum class Backend { ClosedForm, KarlinMcGregor, PdeGrid, McTable };
std::string to_string(Backend b);

/// alpha(t, u) = P^u(lifetime > t) of the drift-aleph diffusion in G, with its log-gradient.
class SurvivalField {
public:
    SurvivalField(Domain domain, DriftField drift) : domain_(std::move(domain)), drift_(std::move(drift)) {}
    virtual ~SurvivalField() = default;

    virtual double alpha(double t, std::span<const double> u) const = 0;
    /// Gradient of log alpha; default is central differences with step 1e-4 * boundary distance.
    virtual void grad_log(double t, std::span<const double> u, std::span<double> out) const;
    virtual Backend backend() const = 0;

    const Domain& domain() const { return domain_; }
    const DriftField& drift() const { return drift_; }
    std::size_t dimension() const { return domain_.dimension(); }

protected:
    Domain domain_;
    DriftField drift_;
};

/// Checked gradient of log alpha: zero for t <= 0, SingularityError below the floor.
std::vector<double> grad_log_alpha(const SurvivalField& field, double t, std::span<const double> u);

double alpha_s2_closed(double t, std::span<const double> u);
/// Driftless chamber survival from the Pfaffian of erf((u_j - u_i) / (2 sqrt t)).
double alpha_chamber_closed(double t, std::span<const double> u);

/// Driftless closed forms: S^n through the Pfaffian, or the half-line.
class ClosedFormField final : public SurvivalField {
public:
    /// `tabulated` switches erf and the Gaussian to the cubic tables (about 1e-11 absolute).
    explicit ClosedFormField(Domain domain, bool tabulated = false);

    double alpha(double t, std::span<const double> u) const override;
    void grad_log(double t, std::span<const double> u, std::span<double> out) const override;
    Backend backend() const override { return Backend::ClosedForm; }

private:
    bool tabulated_;
};

struct QuadratureSpec {
    std::size_t order = 8;       // Gauss-Legendre nodes per panel
    double panel_width = 0.5;    // in units of sqrt(t)
    double truncation = 8.0;     // half-width of the integration box in units of sqrt(t)
    std::size_t budget = 20'000'000;  // max integrand evaluations
};

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;
    std::size_t evaluations = 0;
    bool ok = true;
    std::string message;
};

/// Karlin-McGregor integral of det[p_t(u_i, y_j)] over ordered y; error from two panel orders.
QuadratureResult alpha_karlin_mcgregor(double t, std::span<const double> u, const QuadratureSpec& q = {});

class KarlinMcGregorField final : public SurvivalField {
public:
    explicit KarlinMcGregorField(std::size_t n, QuadratureSpec q = {});
    double alpha(double t, std::span<const double> u) const override;
    Backend backend() const override { return Backend::KarlinMcGregor; }

private:
    QuadratureSpec q_;
};

struct PdeMesh {
    double gap_extent = 8.0;  // far-field boundary for every gap
    double h = 0.1;           // spatial step in gap coordinates
    double horizon = 1.0;     // final time
    double dt = 0.0;          // 0 picks 0.9 of the stability bound
    std::size_t max_snapshots = 512;
};

/// Grid solution of d/dt alpha = 1/2 Lap alpha + (aleph, grad alpha) in gap coordinates
/// g_k = u_{k+1} - u_k; absorbing at g_k = 0, reflecting at the far field.
class PdeGridField final : public SurvivalField {
public:
    PdeGridField(Domain domain, DriftField drift, PdeMesh mesh, std::vector<double> times,
                 std::vector<std::vector<double>> snapshots, std::size_t nodes_per_axis);

    double alpha(double t, std::span<const double> u) const override;
    Backend backend() const override { return Backend::PdeGrid; }

    const PdeMesh& mesh() const { return mesh_; }
    std::size_t nodes_per_axis() const { return nodes_; }
    const std::vector<double>& times() const { return times_; }
    const std::vector<std::vector<double>>& snapshots() const { return snapshots_; }
    /// Multilinear interpolation of a snapshot at gap vector g.
    double interpolate(std::size_t snapshot, std::span<const double> g) const;

private:
    PdeMesh mesh_;
    std::vector<double> times_;
    std::vector<std::vector<double>> snapshots_;
    std::size_t nodes_;
};

/// Explicit finite differences; requires translation-invariant drift on S^n with n in {2,3,4}.
std::shared_ptr<PdeGridField> alpha_pde(const DriftField& drift, const Domain& domain, const PdeMesh& mesh);
/// Same scheme from an arbitrary initial gap table (alpha at t = 0 replaced by `initial`).
/// Discrete spatial operator of the scheme applied to f sampled on the mesh nodes (zero on the walls).
/// Node order: gap index of g_1 varies slowest.
std::vector<double> apply_gap_operator(const DriftField& drift, const Domain& domain, const PdeMesh& mesh,
                                       const std::function<double(std::span<const double> g)>& f);
std::shared_ptr<PdeGridField> solve_gap_pde(const DriftField& drift, const Domain& domain, const PdeMesh& mesh,
                                            const std::function<double(std::span<const double> g)>& initial);

struct McEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;
};

/// Fraction of simulated xi-paths alive at t, with binomial stderr. Steps default to 1024 per unit time.
McEstimate alpha_monte_carlo(const DriftField& drift, const Domain& domain, std::span<const double> u, double t,
                             std::size_t N, const SeedLedger& seed, std::size_t steps = 0);

/// Survival table from Monte Carlo on a gap grid with common random numbers (S^2 or S^3).
class McTableField final : public SurvivalField {
public:
    McTableField(Domain domain, DriftField drift, PdeMesh mesh, std::size_t N, const SeedLedger& seed,
                 std::size_t steps_per_unit = 256);
    double alpha(double t, std::span<const double> u) const override;
    Backend backend() const override { return Backend::McTable; }
    double max_stderr() const { return max_stderr_; }

private:
    PdeMesh mesh_;
    std::size_t nodes_;
    std::vector<double> times_;
    std::vector<std::vector<double>> table_;
    std::shared_ptr<PdeGridField> view_;
    double max_stderr_ = 0.0;
};

/// Gap vector of a point of S^n.
std::vector<double> gaps_of(std::span<const double> u);

}  // namespace arratia
