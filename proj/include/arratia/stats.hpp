#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

namespace arratia {

/// Running mean and variance (Welford).
class MeanAccumulator {
public:
    void add(double x);
    void merge(const MeanAccumulator& other);

    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const;  // unbiased
    double stderr_() const;

private:
    std::size_t n_ = 0;
    double mean_ = 0.0, m2_ = 0.0;
};

/// Kolmogorov distribution tail P(K > lambda).
double kolmogorov_tail(double lambda);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

/// One-sample test against a continuous cdf.
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

double normal_cdf(double z);

/// |observed - expected| <= k * sigma, with sigma combining independent error sources in quadrature.
double combined_sigma(std::initializer_list<double> parts);

}  // namespace arratia
