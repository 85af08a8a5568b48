#include "ilm/likelihood.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ilm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_event_prob(double exponent) {
    // log(1 - e^{-exponent}) for exponent >= 0; -inf at 0 is the honest value.
    return std::log(-std::expm1(-exponent));
}

} // namespace

double one_step_loglik(std::span<const double> susceptible_pressure,
                       std::span<const std::uint8_t> infected_flag, double alpha, double eps) {
    if (susceptible_pressure.size() != infected_flag.size()) {
        throw std::invalid_argument("one_step_loglik: pressure/flag length mismatch");
    }
    if (!(alpha > 0.0) || eps < 0.0) throw std::invalid_argument("one_step_loglik: need alpha > 0, eps >= 0");
    double total = 0.0;
    for (std::size_t j = 0; j < susceptible_pressure.size(); ++j) {
        const double p = susceptible_pressure[j];
        if (p < 0.0) throw std::invalid_argument("one_step_loglik: negative pressure");
        const double exponent = alpha * p + eps;
        total += infected_flag[j] ? log_event_prob(exponent) : -exponent;
    }
    return total;
}

namespace {

void add_row(std::vector<double>& pressure, const std::vector<double>& kernel, std::size_t m,
             std::size_t j, double sign) {
    const double* row = kernel.data() + j * m;
    for (std::size_t i = 0; i < m; ++i) pressure[i] += sign * row[i];
}

// Shared S-to-next-compartment factor. entry_time is infection time for SIR
// and exposure time for SEIR.
double s_exit_loglik(const Trajectory& traj, const Population& pop, std::span<const int> entry_time,
                     double alpha, double beta, double eps) {
    const std::size_t m = pop.size();
    const int T = traj.T;
    const std::vector<double> kernel = pairwise_kernel(pop, beta);
    std::vector<double> pressure(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (traj.infectious_at(i, 0)) add_row(pressure, kernel, m, i, +1.0);
    }
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < m; ++i) {
            const int e = entry_time[i];
            if (e != kNever && e <= t) continue;
            const double exponent = alpha * pressure[i] + eps;
            if (e == t + 1) {
                total += log_event_prob(exponent);
                if (total == kNegInf) return kNegInf;
            } else {
                total -= exponent;
            }
        }
        if (t + 1 < T) {
            for (std::size_t i = 0; i < m; ++i) {
                if (traj.removal_time[i] == t + 1) add_row(pressure, kernel, m, i, -1.0);
                if (traj.infection_time[i] == t + 1) add_row(pressure, kernel, m, i, +1.0);
            }
        }
    }
    return total;
}

void check_sir_trajectory(const Trajectory& traj) {
    if (!traj.exposure_time.empty()) {
        throw std::invalid_argument("loglik: SIR likelihood given an SEIR trajectory");
    }
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const int tau = traj.infection_time[i];
        const int r = traj.removal_time[i];
        if (tau == kNever) {
            if (r != kNever) throw std::invalid_argument("loglik: removal without infection");
            continue;
        }
        if (tau < 0 || tau > traj.T) throw std::invalid_argument("loglik: infection time outside 0..T");
        if (r != kNever && r <= tau) throw std::invalid_argument("loglik: removal not after infection");
        if (r != kNever && r > traj.T) throw std::invalid_argument("loglik: removal beyond horizon");
    }
}

} // namespace

double full_loglik_fixed(const Trajectory& traj, const Population& pop, double alpha, double beta,
                         int fixed_len) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("full_loglik_fixed: alpha, beta must be positive");
    if (fixed_len < 1) throw std::invalid_argument("full_loglik_fixed: fixed_len must be positive");
    check_sir_trajectory(traj);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const int tau = traj.infection_time[i];
        if (tau == kNever) continue;
        const int want = tau + fixed_len <= traj.T ? tau + fixed_len : kNever;
        if (traj.removal_time[i] != want) {
            throw std::invalid_argument("full_loglik_fixed: trajectory inconsistent with fixed removal");
        }
    }
    return s_exit_loglik(traj, pop, traj.infection_time, alpha, beta, 0.0);
}

double full_loglik_stochastic(const Trajectory& traj, const Population& pop, double alpha,
                              double beta, double gamma) {
    if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0)) {
        throw std::invalid_argument("full_loglik_stochastic: parameters must be positive");
    }
    check_sir_trajectory(traj);
    double total = s_exit_loglik(traj, pop, traj.infection_time, alpha, beta, 0.0);
    if (total == kNegInf) return kNegInf;
    const double log_rem = log_event_prob(gamma);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const int tau = traj.infection_time[i];
        if (tau == kNever) continue;
        const int r = traj.removal_time[i];
        if (r == kNever) {
            total -= gamma * static_cast<double>(traj.T - tau);
        } else {
            total += -gamma * static_cast<double>(r - tau - 1) + log_rem;
        }
    }
    return total;
}

double seir_loglik(const Trajectory& traj, const Population& pop, double alpha, double beta,
                   double eps, double gamma_e, std::span<const double> culling_pmf) {
    if (!(alpha > 0.0) || !(beta > 0.0) || eps < 0.0 || !(gamma_e > 0.0)) {
        throw std::invalid_argument("seir_loglik: bad parameters");
    }
    if (traj.exposure_time.empty()) throw std::invalid_argument("seir_loglik: trajectory lacks exposure times");
    if (culling_pmf.empty()) throw std::invalid_argument("seir_loglik: empty culling pmf");

    for (std::size_t i = 0; i < traj.size(); ++i) {
        const int e = traj.exposure_time[i];
        const int tau = traj.infection_time[i];
        const int r = traj.removal_time[i];
        if (tau != kNever && (e == kNever || e > tau)) {
            throw std::invalid_argument("seir_loglik: infection without prior exposure");
        }
        if (r != kNever && (tau == kNever || r <= tau)) {
            throw std::invalid_argument("seir_loglik: removal inconsistent with infection");
        }
        if (tau == 0 && e != 0) throw std::invalid_argument("seir_loglik: seed must have exposure 0");
    }

    double total = s_exit_loglik(traj, pop, traj.exposure_time, alpha, beta, eps);
    if (total == kNegInf) return kNegInf;

    const double log_ei = log_event_prob(gamma_e);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const int e = traj.exposure_time[i];
        if (e == kNever) continue;
        const int tau = traj.infection_time[i];
        if (tau == 0) {
            // Seeds are placed infectious at t=0 by the initial condition.
        } else if (tau == kNever) {
            total += -gamma_e * static_cast<double>(traj.T - e);
        } else {
            total += -gamma_e * static_cast<double>(tau - e - 1) + log_ei;
        }
        if (tau == kNever) continue;
        const int r = traj.removal_time[i];
        if (r == kNever) {
            // Still infectious at T: duration exceeds T - tau.
            double tail = 0.0;
            for (std::size_t g = static_cast<std::size_t>(traj.T - tau); g < culling_pmf.size(); ++g) {
                tail += culling_pmf[g];
            }
            if (tail <= 0.0) return kNegInf;
            total += std::log(tail);
        } else {
            const int g = r - tau;
            if (g < 1 || static_cast<std::size_t>(g) > culling_pmf.size()) return kNegInf;
            const double p = culling_pmf[static_cast<std::size_t>(g - 1)];
            if (p <= 0.0) return kNegInf;
            total += std::log(p);
        }
    }
    return total;
}

double obs_loglik(const Trajectory& traj, const ObservedEpidemic& obs, double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("obs_loglik: rho outside [0,1]");
    if (obs.node_observed.size() != traj.size()) {
        throw std::invalid_argument("obs_loglik: observation record size mismatch");
    }
    std::vector<std::uint8_t> is_seed(traj.size(), 0);
    for (std::uint32_t s : traj.seeds) is_seed[s] = 1;
    std::size_t n = 0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < traj.size(); ++i) {
        if (obs.node_observed[i]) {
            if (traj.infection_time[i] == kNever || traj.infection_time[i] != obs.node_obs_time[i]) {
                throw std::invalid_argument("obs_loglik: observed infection absent from trajectory");
            }
        }
        if (is_seed[i] || traj.infection_time[i] == kNever) continue;
        ++n;
        if (obs.node_observed[i]) ++k;
    }
    double total = 0.0;
    if (k > 0) {
        if (rho == 0.0) return kNegInf;
        total += static_cast<double>(k) * std::log(rho);
    }
    if (n > k) {
        if (rho == 1.0) return kNegInf;
        total += static_cast<double>(n - k) * std::log1p(-rho);
    }
    return total;
}

double log_posterior(std::span<const double> params, const Trajectory& traj,
                     const ObservedEpidemic* obs, const LikelihoodContext& ctx) {
    if (ctx.pop == nullptr) throw std::invalid_argument("log_posterior: missing population");
    if (!params_in_domain(ctx.scenario, params)) return kNegInf;
    const double lp = log_prior(params, ctx.prior, ctx.scenario, *ctx.pop, ctx.seeds);
    if (lp == kNegInf) return kNegInf;
    double ll = 0.0;
    switch (ctx.scenario) {
        case Scenario::Full:
            ll = full_loglik_fixed(traj, *ctx.pop, params[0], params[1], ctx.fixed_len);
            break;
        case Scenario::Stoch:
            ll = full_loglik_stochastic(traj, *ctx.pop, params[0], params[1], params[2]);
            break;
        case Scenario::Partial: {
            if (obs == nullptr) throw std::invalid_argument("log_posterior: Partial scenario needs observations");
            ll = full_loglik_fixed(traj, *ctx.pop, params[0], params[1], ctx.fixed_len);
            if (ll != kNegInf) ll += obs_loglik(traj, *obs, params[2]);
            break;
        }
        case Scenario::Seir:
            ll = seir_loglik(traj, *ctx.pop, params[0], params[1], params[2], params[3], ctx.culling_pmf);
            break;
    }
    if (ll == kNegInf) return kNegInf;
    return ll + lp;
}

} // namespace ilm
