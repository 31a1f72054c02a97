#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "arratia/chaos.hpp"
#include "arratia/coalescing_flow.hpp"
#include "arratia/rho_weights.hpp"
#include "arratia/survival.hpp"

namespace arratia {

// ---------------------------------------------------------------------------
// Weighted orthonormal bases

/// Raw family for one multi-index: products over parts of Legendre polynomials times a box indicator,
/// all coordinates of part j sharing the box part_box[j].
struct BasisSpec {
    std::vector<Interval> part_box;
    unsigned max_degree = 1;      // total polynomial degree over all coordinates
    std::size_t max_size = 8;     // truncation: raw kernels kept per multi-index
};

class IllConditionedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raw kernels in order of increasing polynomial degree, at most spec.max_size of them.
std::vector<ProductKernel> raw_kernels(const MultiIndex& index, const BasisSpec& spec);

struct WeightedBasis {
    MultiIndex index;
    std::vector<ProductKernel> raw;
    Eigen::MatrixXd gram;        // raw Gram matrix under the weight
    Eigen::MatrixXd gram_error;  // quadrature plus weight error per entry
    Eigen::MatrixXd transform;   // L^{-1}: element i = sum_j transform(i, j) raw_j
    std::vector<ProductKernel> elements;
    double condition = 1.0;
    double orthonormality_error = 0.0;  // max |E G E^T - I| under the building quadrature
    std::string weight;

    std::size_t size() const { return raw.size(); }
    /// Element values from raw values on one sample.
    std::vector<double> combine(std::span<const double> raw_values) const;
    /// A applied to every element on one motion.
    std::vector<double> evaluate(MotionIntegrals& integrals) const;
};

/// Gram-Schmidt through the Cholesky factor of the Gram matrix.
/// Throws IllConditionedError when the condition number reaches 1e8.
WeightedBasis build_basis(const MultiIndex& index, const LastTimeWeight& weight, const BasisSpec& spec,
                          const QuadratureOptions& q = {});
/// max |E G' E^T - I| with G' recomputed under another quadrature.
double orthonormality_defect(const WeightedBasis& basis, const LastTimeWeight& weight, const QuadratureOptions& q);

/// One basis per multi-index of level n and total degree <= max_degree; n = 3 indices outside the
/// reach of MotionIntegrals (k^2 nonempty with |k^3| > 1) are skipped.
std::vector<WeightedBasis> build_bases(std::size_t n, std::size_t max_degree, const LastTimeWeight& weight,
                                       const BasisSpec& spec, const QuadratureOptions& q = {});

// ---------------------------------------------------------------------------
// Monte Carlo projection

using MotionFunctional = std::function<double(const StagedMotion&)>;

struct ProjectionSetup {
    std::vector<double> u;
    StageOptions stage;
    std::shared_ptr<const RhoWeights> weights;  // needed for n = 3 mixed indices
    std::size_t N = 1000;
    SeedLedger seed{};
    std::size_t threads = 0;
    std::string functional = "f";
};

struct CoefficientEntry {
    MultiIndex index;
    std::size_t element = 0;
    double estimate = 0.0;
    double stderr_ = 0.0;
};

struct CoefficientTable {
    std::vector<CoefficientEntry> entries;
    std::size_t samples = 0;    // motions used
    std::size_t truncated = 0;  // motions discarded because a stage hit the tail cap
    std::string functional;
    SeedLedger seed;
    Eigen::MatrixXd covariance;  // covariance of the coefficient estimates

    void write_csv(std::ostream& os) const;
    nlohmann::json to_json() const;
};

/// c_i = mean of f * A e_i over staged motions, with the covariance of the estimates.
CoefficientTable project(const MotionFunctional& f, const std::vector<WeightedBasis>& bases,
                         const ProjectionSetup& setup);

/// E f^2 on the given setup (callers pass a seed independent of the projection).
McEstimate second_moment(const MotionFunctional& f, const ProjectionSetup& setup);

struct ParsevalLevel {
    std::size_t degree = 0;  // partial sum over indices of total degree <= degree
    std::size_t terms = 0;
    double partial_sum = 0.0, partial_stderr = 0.0;
    double ratio = 0.0, ratio_stderr = 0.0;
    bool bessel = true;  // partial_sum <= E f^2 + 3 combined stderr
};

struct ParsevalReport {
    std::vector<ParsevalLevel> levels;
    double second_moment = 0.0, second_moment_stderr = 0.0;
    bool monotone = true;
    bool bessel = true;

    nlohmann::json to_json() const;
};

ParsevalReport parseval_report(const CoefficientTable& table, const McEstimate& f_second_moment);

/// Two-stage projection for n = 2: coefficients of f(., w2) on the post-collision basis by an inner average
/// over fresh post-collision stages, then projected on the pre-collision basis. Entry (i, m) pairs element i
/// of `post` (level 1) with element m of `pre` (level 2, empty first word).
struct RecursiveProjection {
    std::size_t post_size = 0, pre_size = 0;
    std::vector<double> direct, direct_stderr;
    std::vector<double> recursive, recursive_stderr;
};

RecursiveProjection compare_recursive_projection(const MotionFunctional& f, const WeightedBasis& post,
                                                 const WeightedBasis& pre, const ProjectionSetup& setup,
                                                 std::size_t inner);

/// f = A(sum_i coef_i e_i) over the elements of one basis.
MotionFunctional basis_functional(const WeightedBasis& basis, std::vector<double> coef,
                                  std::shared_ptr<const RhoWeights> weights = nullptr);

// ---------------------------------------------------------------------------
// Clark integrands with closed forms

struct ClarkParams {
    std::vector<double> u;
    double t = 1.0;              // time T of the coordinate, or t of the indicator
    std::size_t coordinate = 0;  // coordinate j for "coordinate-at-T"
    std::shared_ptr<const SurvivalField> field;  // survival field for "survival-indicator"
};

struct ClarkIntegrand {
    std::string tag;
    double mean = 0.0;
    double horizon = 0.0;  // the integrand vanishes from here on
    /// Integrand at time s and position x, one component per coordinate.
    std::function<void(double s, std::span<const double> x, std::span<double> out)> value;
};

/// Supported tags: "coordinate-at-T" and "survival-indicator"; others throw std::logic_error.
ClarkIntegrand clark_integrand(const std::string& tag, const ClarkParams& params);
std::vector<std::string> clark_tags();

/// mean + sum over t_j < min(horizon, lifetime) of Q(t_j, x_j) . dx_j
double clark_reconstruction(const ClarkIntegrand& q, const SamplePath& path, double lifetime);

}  // namespace arratia
