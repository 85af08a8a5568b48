#pragma once

#include "ilm/epidemic.hpp"
#include "ilm/population.hpp"
#include "ilm/rng.hpp"

#include <span>
#include <vector>

namespace ilm {

// Hyperparameters of the interpretable prior. Gamma distributions are
// (shape, scale). The intensity alpha is never given a direct prior: it is
// derived as alpha = R0 / (mu * lambda0_bar(beta)) where mu is the mean
// infectious period of the scenario's removal model and lambda0_bar is the
// mean initial pressure exerted by the seed set.
struct PriorSpec {
    double beta_shape = 6.0;
    double beta_scale = 0.25;
    double r0_shape = 10.0;
    double r0_scale = 0.25;
    double mu_fix = 3.0;
    // LogNormal on the mean infectious duration, centred so E[mu_I] = 3.
    double mu_i_sigma = 0.27;
    double mu_i_logmean = 1.0621622886681098; // log 3 - 0.27^2/2
    double eps_rate = 1000.0;
    double gamma_e_shape = 10.0;
    double gamma_e_scale = 0.02;
    double seir_mean_ip = 3.2;
};

// Scenario-tagged draw in the pinned parameter order. Stochastic removals
// redraw mu_I until it exceeds 1 so gamma = -log(1 - 1/mu_I) stays finite.
std::vector<double> sample_prior(const PriorSpec& spec, Scenario scenario, const Population& pop,
                                 std::span<const std::uint32_t> seeds, RngStream& rng);

// Unnormalised log density of the induced prior on the natural parameters,
// -inf outside support. Works in (R0, beta) coordinates internally.
double log_prior(std::span<const double> params, const PriorSpec& spec, Scenario scenario,
                 const Population& pop, std::span<const std::uint32_t> seeds);

bool in_support(std::span<const double> params, const PriorSpec& spec, Scenario scenario);

// Densities shared with tests; all log scale, normalised.
double gamma_logpdf(double x, double shape, double scale);
double lognormal_logpdf(double x, double logmean, double sigma);
double exponential_logpdf(double x, double rate);

} // namespace ilm
