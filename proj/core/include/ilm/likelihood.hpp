#pragma once

#include "ilm/epidemic.hpp"
#include "ilm/population.hpp"
#include "ilm/priors.hpp"

#include <span>
#include <vector>

namespace ilm {

// One transition step. susceptible_pressure[j] is the kernel pressure on the
// j-th susceptible at time t; infected_flag[j] marks the ones infected at
// t+1. Infections contribute log(1 - e^{-alpha p - eps}), survivors the exact
// exponent -(alpha p + eps).
double one_step_loglik(std::span<const double> susceptible_pressure,
                       std::span<const std::uint8_t> infected_flag, double alpha, double eps = 0.0);

// Complete-data log-likelihood under deterministic removal after fixed_len
// steps. Throws if the trajectory is inconsistent with that removal rule.
double full_loglik_fixed(const Trajectory& traj, const Population& pop, double alpha, double beta,
                         int fixed_len = 3);

// Complete-data log-likelihood with geometric infectious periods. Durations
// of individuals still infectious at T are right-censored: they contribute
// survival through their T - tau trials and no success factor.
double full_loglik_stochastic(const Trajectory& traj, const Population& pop, double alpha,
                              double beta, double gamma);

// Complete-data SEIR log-likelihood: exposure terms (with spark eps), the
// geometric E->I latent periods (seeds exempt), and culling-pmf duration
// terms with a tail factor for periods censored at T.
double seir_loglik(const Trajectory& traj, const Population& pop, double alpha, double beta,
                   double eps, double gamma_e, std::span<const double> culling_pmf);

// Binomial thinning of non-seed infections. Throws if the observed record
// is not a subset of the trajectory's infections with matching times.
double obs_loglik(const Trajectory& traj, const ObservedEpidemic& obs, double rho);

struct LikelihoodContext {
    const Population* pop = nullptr;
    Scenario scenario = Scenario::Full;
    PriorSpec prior;
    std::vector<std::uint32_t> seeds;
    int fixed_len = 3;
    std::vector<double> culling_pmf;
};

// Scenario dispatch: complete-data log-likelihood, plus the observation
// factor for Partial (obs may be null otherwise), plus the unnormalised
// log-prior. Out-of-support parameters give -inf rather than an error.
double log_posterior(std::span<const double> params, const Trajectory& traj,
                     const ObservedEpidemic* obs, const LikelihoodContext& ctx);

} // namespace ilm
