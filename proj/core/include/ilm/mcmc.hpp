#pragma once

#include "ilm/epidemic.hpp"
#include "ilm/likelihood.hpp"
#include "ilm/population.hpp"
#include "ilm/priors.hpp"
#include "ilm/rng.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ilm {

struct McmcConfig {
    int n_chains = 3;
    long iters = 50000;
    long burnin = 20000;
    int thin = 30;
    double target_accept = 0.234;
    // Partial: single-site infection toggles per iteration.
    int n_infection_props = 10;
    // SEIR: candidate exposure window before an observed infection time.
    int exposure_window = 15;
    int fixed_len = 3;
    std::vector<double> culling_pmf = {0.05, 0.15, 0.35, 0.45};
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

struct McmcResult {
    std::vector<std::string> param_names;
    // draws[c] holds chain c row-major, n_draws x dim.
    std::vector<std::vector<double>> draws;
    std::size_t n_draws = 0;
    std::vector<double> theta_accept;
    std::vector<double> aug_accept;
    std::vector<double> rhat;
    double wall_seconds = 0.0;

    std::size_t dim() const { return param_names.size(); }
    // All chains pooled, row-major n_chains*n_draws x dim.
    std::vector<double> pooled() const;
    bool converged(double threshold = 1.1) const;
};

// Scenario-specific data-augmented sampler. Latent structure per scenario:
// Full has none (fixed removal reconstructed from observed infections),
// Stoch augments removal times (joint geometric proposal), Partial augments
// unobserved infection times (single-site toggles) and Gibbs-samples rho,
// SEIR augments exposure times (exact categorical Gibbs). SEIR conditions
// on the culling schedule, so it needs the removal times from `truth`.
McmcResult run_chains(const ObservedEpidemic& obs, const Population& pop, const PriorSpec& prior,
                      const McmcConfig& cfg, const Trajectory* truth = nullptr);

// Potential scale reduction factor. NaN when fewer than two chains or all
// chains are degenerate.
double gelman_rubin(std::span<const std::vector<double>> chains);

// Conjugate Beta(1+k, 1+n-k) draw for the observation probability.
double gibbs_rho(std::size_t k, std::size_t n, RngStream& rng);

// Adaptive random-walk Metropolis proposal state: Robbins-Monro step-scale
// tuning toward the target acceptance rate plus a running empirical
// covariance, diagonal until enough history accumulates. Freeze after
// burn-in to preserve ergodicity.
class AdaptiveMh {
public:
    AdaptiveMh(std::size_t dim, double target_accept);

    std::vector<double> propose(std::span<const double> x, RngStream& rng);
    void learn(std::span<const double> x, double accept_prob);
    void freeze() { frozen_ = true; }
    double scale() const { return std::exp(log_scale_); }

private:
    std::size_t dim_;
    double target_;
    double log_scale_;
    long n_ = 0;
    bool frozen_ = false;
    std::vector<double> mean_;
    std::vector<double> cov_;
    std::vector<double> chol_;
    bool chol_valid_ = false;

    void refresh_chol();
};

// One systematic-scan resampling sweep over latent exposure times at fixed
// parameters; exact categorical Gibbs (exposed farms never transmit, so
// full conditionals need no acceptance step). Mutates traj. Returns the
// number of farms whose exposure state changed.
int exposure_gibbs_sweep(Trajectory& traj, const ObservedEpidemic& obs, const Population& pop,
                         std::span<const double> params, std::span<const double> culling_pmf,
                         int window, RngStream& rng);

} // namespace ilm
