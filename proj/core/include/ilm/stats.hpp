#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ilm {

double mean(std::span<const double> xs);
// Sample variance with the n-1 denominator.
double variance(std::span<const double> xs);
double stddev(std::span<const double> xs);

// Type-7 quantile (linear interpolation of order statistics), q in [0,1].
double quantile(std::vector<double> xs, double q);

struct Interval {
    double lo;
    double hi;
};

// Equal-tailed credible interval from draws, mass in (0,1).
Interval credible_interval(std::vector<double> draws, double mass);

double lower_regularized_gamma(double a, double x);
double upper_regularized_gamma(double a, double x);

// Survival function of the chi-square distribution with k degrees of freedom.
double chi2_sf(double x, double k);

// Pearson chi-square test of uniformity over equal-width bins. Values are
// counts per bin; returns the p-value.
double chi2_uniformity_pvalue(std::span<const std::size_t> counts);

// One-sample Kolmogorov-Smirnov p-value against U(0,1), asymptotic form.
double ks_uniform_pvalue(std::vector<double> xs);

double normal_cdf(double x);

} // namespace ilm
