#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arratia/coalescing_flow.hpp"
#include "arratia/girsanov.hpp"
#include "arratia/rho_weights.hpp"
#include "arratia/survival.hpp"

namespace arratia {

/// A word k = (k_1, ..., k_d) over {1, ..., alphabet}; entries are 1-based.
class ChaosIndex {
public:
    ChaosIndex() = default;
    ChaosIndex(std::size_t alphabet, std::vector<std::size_t> seq);

    std::size_t alphabet() const { return alphabet_; }
    std::size_t degree() const { return seq_.size(); }
    bool empty() const { return seq_.empty(); }
    const std::vector<std::size_t>& seq() const { return seq_; }
    std::size_t operator[](std::size_t m) const { return seq_[m]; }
    std::string to_string() const;

    bool operator==(const ChaosIndex&) const = default;

private:
    std::size_t alphabet_ = 1;
    std::vector<std::size_t> seq_;
};

/// (k^1, ..., k^n) with component j a word over {1, ..., j}.
class MultiIndex {
public:
    MultiIndex() = default;
    explicit MultiIndex(std::vector<ChaosIndex> parts);
    /// From plain words; part j gets alphabet j + 1.
    static MultiIndex of(std::vector<std::vector<std::size_t>> words);

    std::size_t level() const { return parts_.size(); }
    const ChaosIndex& part(std::size_t j) const { return parts_.at(j); }
    const std::vector<ChaosIndex>& parts() const { return parts_; }
    std::size_t total_degree() const;
    std::string to_string() const;

    bool operator==(const MultiIndex&) const = default;

private:
    std::vector<ChaosIndex> parts_;
};

/// All multi-indices of level n with total degree <= max_degree, ordered by degree.
std::vector<MultiIndex> enumerate_indices(std::size_t n, std::size_t max_degree);

// ---------------------------------------------------------------------------
// Kernels

struct Interval {
    double lo = 0.0, hi = 0.0;
    bool contains(double t) const { return t >= lo && t < hi; }
};

/// Legendre polynomial of `degree` on `box` times the box indicator, optionally times a modulation g(t).
struct Factor {
    Interval box;
    unsigned degree = 0;
    std::shared_ptr<const std::function<double(double)>> modulation;

    double operator()(double t) const;
};

struct SeparableTerm {
    double coef = 1.0;
    std::vector<Factor> factors;  // one per coordinate t_1 < ... < t_d
};

/// Kernel on the ordered simplex {0 < t_1 < ... < t_d}: a finite sum of separable terms.
class SimplexKernel {
public:
    SimplexKernel() = default;
    /// Zero kernel of the given arity.
    explicit SimplexKernel(std::size_t arity) : arity_(arity) {}

    static SimplexKernel constant(double c);
    static SimplexKernel box(std::vector<Interval> boxes, double coef = 1.0);
    static SimplexKernel legendre_box(std::vector<Interval> boxes, std::vector<unsigned> degrees, double coef = 1.0);

    std::size_t arity() const { return arity_; }
    const std::vector<SeparableTerm>& terms() const { return terms_; }
    bool is_zero() const;
    /// Value of an arity-0 kernel.
    double scalar() const;
    /// Right end of the support over all coordinates.
    double support_end() const;
    std::vector<double> breakpoints() const;
    std::string description() const;

    /// Zero outside the simplex.
    double operator()(std::span<const double> t) const;

    SimplexKernel& operator+=(const SimplexKernel& other);
    SimplexKernel& operator*=(double c);
    /// Multiply the last-coordinate factor of every term by g (arity >= 1).
    SimplexKernel modulate_last(std::function<double(double)> g) const;

    void add_term(SeparableTerm term);

private:
    std::size_t arity_ = 0;
    std::vector<SeparableTerm> terms_;
};

SimplexKernel operator+(SimplexKernel a, const SimplexKernel& b);
SimplexKernel operator*(double c, SimplexKernel a);

struct ProductTerm {
    double coef = 1.0;
    std::vector<SimplexKernel> parts;  // part j lives on the simplex of stage j+1
};

/// Kernel on S^{d_1} x ... x S^{d_n}: a finite sum of products of simplex kernels.
class ProductKernel {
public:
    ProductKernel() = default;
    /// Zero kernel with the given part arities.
    explicit ProductKernel(std::vector<std::size_t> arities) : arities_(std::move(arities)) {}

    static ProductKernel product(std::vector<SimplexKernel> parts, double coef = 1.0);
    static ProductKernel constant(std::size_t level, double c);

    std::size_t level() const { return arities_.size(); }
    const std::vector<std::size_t>& arities() const { return arities_; }
    const std::vector<ProductTerm>& terms() const { return terms_; }
    bool is_zero() const;
    std::string description() const;
    bool matches(const MultiIndex& index) const;

    /// times[j] holds the |k^j| times of part j.
    double operator()(const std::vector<std::vector<double>>& times) const;

    ProductKernel& operator+=(const ProductKernel& other);
    ProductKernel& operator*=(double c);

private:
    std::vector<std::size_t> arities_;
    std::vector<ProductTerm> terms_;
};

ProductKernel operator+(ProductKernel a, const ProductKernel& b);
ProductKernel operator*(double c, ProductKernel a);

/// Kernel registry: "box" {bounds: [[lo,hi],...]}, "legendre" {bounds, degrees}, "constant" {value}.
SimplexKernel kernel_from_json(const nlohmann::json& spec);
std::vector<std::string> registered_kernels();

// ---------------------------------------------------------------------------
// Iterated integrals

/// Left-point iterated Ito sum of the kernel against the path increments of the indexed coordinates.
double ito_iterated(const SamplePath& path, const SimplexKernel& kernel, const ChaosIndex& index);
/// Same sums driven by the coalescing coordinates x(u_i, .).
double flow_iterated_naive(const CoalescingMotion& motion, const SimplexKernel& kernel, const ChaosIndex& index);

struct JStats {
    std::size_t capped = 0;       // gradient components clipped at the drift cap
    std::size_t evaluations = 0;  // gradient evaluations
};

/// Stopped iterated integrals on one path. The inner (d-1)-fold integral for the outer time t_j runs
/// along phi(t_j, omega), i.e. with increments d omega - grad log alpha(t_j - t_i, xi(t_i)) dt.
/// Gradient rows are cached, so many kernels and indices on the same path share the cost.
class StoppedIntegrator {
public:
    StoppedIntegrator(const SamplePath& omega, XiSolution xi, std::shared_ptr<const SurvivalField> field);

    double operator()(const SimplexKernel& kernel, const ChaosIndex& index);
    double lifetime() const { return xi_.lifetime; }
    std::size_t live_steps() const { return live_; }
    const JStats& stats() const { return stats_; }

private:
    const std::vector<double>& row(std::size_t j);

    const SamplePath& omega_;
    XiSolution xi_;
    std::shared_ptr<const SurvivalField> field_;
    std::size_t live_ = 0;
    std::vector<std::vector<double>> rows_;
    std::vector<char> have_row_;
    std::vector<std::vector<double>> dw_;
    bool pair_closed_form_ = false;
    std::vector<double> inv_two_sqrt_lag_;
    JStats stats_;
};

double j_integral(const SamplePath& omega, const SimplexKernel& kernel, const ChaosIndex& index,
                  std::shared_ptr<const SurvivalField> field, const DriftField& drift, JStats* stats = nullptr);

/// Raised when a motion did not coalesce fully, so the recursion has no lower stages.
class TruncatedMotionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operators A^u_{k^1..k^n} on one staged motion, for n <= 3.
/// n = 3 with k^2 and k^3 both nonempty needs `weights` (aleph drifts) and |k^3| = 1.
class MotionIntegrals {
public:
    MotionIntegrals(const StagedMotion& motion, std::shared_ptr<const RhoWeights> weights = nullptr);

    bool truncated() const { return truncated_; }
    double operator()(const ProductKernel& kernel, const MultiIndex& index);

private:
    double product_term(const ProductTerm& term, const MultiIndex& index);
    StoppedIntegrator& stopped(std::size_t particles);
    std::vector<double> aleph_corrected(const SimplexKernel& a3, std::size_t coordinate);

    const StagedMotion& motion_;
    std::shared_ptr<const RhoWeights> weights_;
    bool truncated_ = false;
    std::vector<std::unique_ptr<StoppedIntegrator>> stopped_;  // by particle count
    std::vector<std::vector<double>> aleph_rows_;                // per Chebyshev node: aleph along stage 3
};

double a_operator(const StagedMotion& motion, const ProductKernel& kernel, const MultiIndex& index,
                  std::shared_ptr<const RhoWeights> weights = nullptr);

// ---------------------------------------------------------------------------
// Weighted kernel norms

/// Density of the last times of the parts; last[j] is NaN when part j is empty.
struct LastTimeWeight {
    std::function<double(std::span<const double> last)> density;
    std::function<double(std::span<const double> last)> stderr_;  // optional Monte Carlo error
    std::string description;
};

LastTimeWeight unit_weight();
/// Single part: alpha(t_d, u); one for the empty word.
LastTimeWeight survival_weight(std::shared_ptr<const SurvivalField> field, std::vector<double> u);
/// rho_{t^2_{|k^2|}, ..., t^n_{|k^n|}}(u) from the weights object (n <= 3).
LastTimeWeight rho_weight(std::shared_ptr<const RhoWeights> weights);

struct QuadratureOptions {
    std::size_t order = 8;       // Gauss-Legendre nodes per panel
    double panel = 0.125;        // largest panel width
    std::size_t max_dimension = 6;
};

struct WeightedValue {
    double value = 0.0;
    double quad_error = 0.0;     // difference between the rule and its doubled-order companion
    double weight_stderr = 0.0;  // propagated Monte Carlo error of the weight
};

/// Gram matrix G_ij = int k_i k_j w dt of kernels with a common arity pattern.
std::vector<std::vector<WeightedValue>> weighted_gram(const std::vector<ProductKernel>& kernels,
                                                      const LastTimeWeight& weight, const QuadratureOptions& q = {});
WeightedValue weighted_inner(const ProductKernel& a, const ProductKernel& b, const LastTimeWeight& weight,
                             const QuadratureOptions& q = {});
WeightedValue weighted_kernel_norm(const ProductKernel& a, const MultiIndex& index, const LastTimeWeight& weight,
                                   const QuadratureOptions& q = {});

}  // namespace arratia
