#pragma once

#include "ilm/epidemic.hpp"
#include "ilm/npe.hpp"
#include "ilm/population.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ilm {

// draws is row-major n x dim; returns the per-coordinate median.
std::vector<double> posterior_median(std::span<const double> draws, std::size_t dim);

// estimates and truths are row-major n_test x dim; returns per-coordinate
// mean absolute error.
std::vector<double> mean_absolute_error(std::span<const double> estimates,
                                        std::span<const double> truths, std::size_t dim);

struct IntervalStats {
    std::vector<double> coverage;
    std::vector<double> mean_width;
};

// Equal-tailed credible intervals of the given mass, one draw matrix per
// test case; coverage is the fraction of cases whose truth lands inside.
IntervalStats interval_summary(std::span<const std::vector<double>> draws_per_test,
                               std::span<const double> truths, std::size_t dim,
                               double mass = 0.95);

struct SbcResult {
    // ranks[d][t] counts posterior draws below the truth in coordinate d
    // for test case t; n_draws[t] is that case's sample count S, so ranks
    // lie in 0..S and are uniform when the posterior is calibrated.
    std::vector<std::vector<std::size_t>> ranks;
    std::vector<std::size_t> n_draws;
    std::vector<double> p_values;
};

// Simulation-based calibration: rank statistics binned into `bins`
// equal-probability cells, tested per coordinate with a chi-square
// uniformity test. Exactly uniform bins need (S+1) divisible by bins.
SbcResult sbc_ranks(std::span<const std::vector<double>> draws_per_test,
                    std::span<const double> truths, std::size_t dim, std::size_t bins = 20);

struct PpcBand {
    std::vector<double> lo;
    std::vector<double> med;
    std::vector<double> hi;
    std::vector<int> observed;
};

// Posterior predictive check on the incidence curve: re-simulates the
// epidemic on the same population with the observation's own seed set,
// parameters resampled from the draw matrix, and pointwise type-7 quantile
// bands over the replicated curves. The Partial scenario thins each
// replicate with its drawn rho. Scenario, horizon, and seeds come from the
// observation; removal settings come from sim.
PpcBand posterior_predictive(const ObservedEpidemic& obs, const Population& pop,
                             std::span<const double> draws, std::size_t dim,
                             const SimStudyConfig& sim, std::size_t n_reps, std::uint64_t seed,
                             double lo_q = 0.025, double hi_q = 0.975);

} // namespace ilm
