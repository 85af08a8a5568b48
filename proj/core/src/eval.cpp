#include "ilm/eval.hpp"

#include "ilm/errors.hpp"
#include "ilm/stats.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace ilm {

namespace {

constexpr std::uint64_t kPpcTag = 0x707063ull;

std::vector<double> column(std::span<const double> rows, std::size_t dim, std::size_t d) {
    if (dim == 0 || rows.size() % dim != 0) {
        throw ConfigError("eval: draw matrix size is not a multiple of dim");
    }
    std::vector<double> out;
    out.reserve(rows.size() / dim);
    for (std::size_t r = 0; r < rows.size() / dim; ++r) out.push_back(rows[r * dim + d]);
    return out;
}

} // namespace

std::vector<double> posterior_median(std::span<const double> draws, std::size_t dim) {
    if (draws.empty()) throw ConfigError("posterior_median: empty draw matrix");
    std::vector<double> med(dim);
    for (std::size_t d = 0; d < dim; ++d) med[d] = quantile(column(draws, dim, d), 0.5);
    return med;
}

std::vector<double> mean_absolute_error(std::span<const double> estimates,
                                        std::span<const double> truths, std::size_t dim) {
    if (estimates.size() != truths.size() || estimates.empty()) {
        throw ConfigError("mean_absolute_error: estimate and truth matrices must match");
    }
    const std::size_t n = estimates.size() / dim;
    if (n * dim != estimates.size()) {
        throw ConfigError("mean_absolute_error: matrix size is not a multiple of dim");
    }
    std::vector<double> mae(dim, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t d = 0; d < dim; ++d) {
            mae[d] += std::fabs(estimates[r * dim + d] - truths[r * dim + d]);
        }
    }
    for (double& v : mae) v /= static_cast<double>(n);
    return mae;
}

IntervalStats interval_summary(std::span<const std::vector<double>> draws_per_test,
                               std::span<const double> truths, std::size_t dim, double mass) {
    const std::size_t n = draws_per_test.size();
    if (n == 0 || truths.size() != n * dim) {
        throw ConfigError("interval_summary: truth matrix must be n_test x dim");
    }
    if (!(mass > 0.0 && mass < 1.0)) throw ConfigError("interval_summary: mass must lie in (0,1)");
    IntervalStats stats;
    stats.coverage.assign(dim, 0.0);
    stats.mean_width.assign(dim, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t d = 0; d < dim; ++d) {
            const Interval ci = credible_interval(column(draws_per_test[t], dim, d), mass);
            const double truth = truths[t * dim + d];
            if (truth >= ci.lo && truth <= ci.hi) stats.coverage[d] += 1.0;
            stats.mean_width[d] += ci.hi - ci.lo;
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        stats.coverage[d] /= static_cast<double>(n);
        stats.mean_width[d] /= static_cast<double>(n);
    }
    return stats;
}

SbcResult sbc_ranks(std::span<const std::vector<double>> draws_per_test,
                    std::span<const double> truths, std::size_t dim, std::size_t bins) {
    const std::size_t n = draws_per_test.size();
    if (n == 0 || truths.size() != n * dim) {
        throw ConfigError("sbc_ranks: truth matrix must be n_test x dim");
    }
    if (bins < 2) throw ConfigError("sbc_ranks: need at least two bins");
    SbcResult result;
    result.ranks.assign(dim, std::vector<std::size_t>(n, 0));
    result.n_draws.assign(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
        const std::vector<double>& draws = draws_per_test[t];
        if (draws.empty() || draws.size() % dim != 0) {
            throw ConfigError("sbc_ranks: bad draw matrix for test case " + std::to_string(t));
        }
        const std::size_t s = draws.size() / dim;
        result.n_draws[t] = s;
        for (std::size_t d = 0; d < dim; ++d) {
            std::size_t rank = 0;
            for (std::size_t r = 0; r < s; ++r) {
                if (draws[r * dim + d] < truths[t * dim + d]) ++rank;
            }
            result.ranks[d][t] = rank;
        }
    }
    result.p_values.assign(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
        std::vector<std::size_t> counts(bins, 0);
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t bin = result.ranks[d][t] * bins / (result.n_draws[t] + 1);
            counts[std::min(bin, bins - 1)] += 1;
        }
        result.p_values[d] = chi2_uniformity_pvalue(counts);
    }
    return result;
}

PpcBand posterior_predictive(const ObservedEpidemic& obs, const Population& pop,
                             std::span<const double> draws, std::size_t dim,
                             const SimStudyConfig& sim, std::size_t n_reps, std::uint64_t seed,
                             double lo_q, double hi_q) {
    if (dim != scenario_dim(obs.scenario)) {
        throw ConfigError("posterior_predictive: draw dim does not match the scenario");
    }
    if (draws.empty() || draws.size() % dim != 0) {
        throw ConfigError("posterior_predictive: bad draw matrix");
    }
    if (n_reps == 0) throw ConfigError("posterior_predictive: n_reps must be positive");
    if (!(lo_q > 0.0 && lo_q < hi_q && hi_q < 1.0)) {
        throw ConfigError("posterior_predictive: quantiles must satisfy 0 < lo < hi < 1");
    }
    if (obs.seeds.empty()) throw ConfigError("posterior_predictive: observation has no seeds");
    const std::size_t n_draws = draws.size() / dim;
    const std::size_t t_len = static_cast<std::size_t>(obs.T);

    std::vector<std::vector<double>> curves(t_len);
    for (auto& c : curves) c.reserve(n_reps);

    RngStream rng(seed, derive_stream(kPpcTag, 0));
    std::vector<double> theta(dim);
    for (std::size_t rep = 0; rep < n_reps; ++rep) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            const std::size_t row = rng.uniform_int(n_draws);
            for (std::size_t d = 0; d < dim; ++d) theta[d] = draws[row * dim + d];
            ok = params_in_domain(obs.scenario, theta);
        }
        if (!ok) throw NumericalError("posterior_predictive: no in-domain draw after 100 tries");

        Trajectory traj;
        if (obs.scenario == Scenario::Seir) {
            traj = simulate_seir(pop, theta[0], theta[1], theta[2], theta[3], sim.culling_pmf,
                                 obs.seeds, obs.T, rng);
        } else {
            const RemovalModel removal = obs.scenario == Scenario::Stoch
                                             ? RemovalModel::geometric(theta[2])
                                             : RemovalModel::fixed(sim.fixed_len);
            traj = simulate_sir(pop, theta[0], theta[1], removal, obs.seeds, obs.T, rng);
        }
        const double rho = obs.scenario == Scenario::Partial ? theta[2] : 0.0;
        const ObservedEpidemic rep_obs = observe(traj, obs.scenario, rho, rng);
        for (std::size_t t = 0; t < t_len; ++t) {
            curves[t].push_back(static_cast<double>(rep_obs.incidence[t]));
        }
    }

    PpcBand band;
    band.lo.resize(t_len);
    band.med.resize(t_len);
    band.hi.resize(t_len);
    band.observed = obs.incidence;
    for (std::size_t t = 0; t < t_len; ++t) {
        band.lo[t] = quantile(curves[t], lo_q);
        band.med[t] = quantile(curves[t], 0.5);
        band.hi[t] = quantile(curves[t], hi_q);
    }
    return band;
}

} // namespace ilm
