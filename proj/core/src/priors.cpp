#include "ilm/priors.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ilm {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double gamma_logpdf(double x, double shape, double scale) {
    if (!(x > 0.0)) return kNegInf;
    return (shape - 1.0) * std::log(x) - x / scale - shape * std::log(scale) - std::lgamma(shape);
}

double lognormal_logpdf(double x, double logmean, double sigma) {
    if (!(x > 0.0)) return kNegInf;
    const double z = (std::log(x) - logmean) / sigma;
    return -std::log(x) - std::log(sigma) - 0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
}

double exponential_logpdf(double x, double rate) {
    if (x < 0.0) return kNegInf;
    return std::log(rate) - rate * x;
}

std::vector<double> sample_prior(const PriorSpec& spec, Scenario scenario, const Population& pop,
                                 std::span<const std::uint32_t> seeds, RngStream& rng) {
    const double beta = rng.gamma(spec.beta_shape, spec.beta_scale);
    const double r0 = rng.gamma(spec.r0_shape, spec.r0_scale);
    const double lambda0 = mean_initial_pressure(pop, seeds, beta);
    if (!(lambda0 > 0.0)) throw std::invalid_argument("sample_prior: zero initial pressure");

    switch (scenario) {
        case Scenario::Full: {
            return {r0 / (spec.mu_fix * lambda0), beta};
        }
        case Scenario::Stoch: {
            double mu_i = rng.lognormal(spec.mu_i_logmean, spec.mu_i_sigma);
            while (!(mu_i > 1.0)) mu_i = rng.lognormal(spec.mu_i_logmean, spec.mu_i_sigma);
            const double gamma = -std::log1p(-1.0 / mu_i);
            return {r0 / (mu_i * lambda0), beta, gamma};
        }
        case Scenario::Partial: {
            const double rho = rng.uniform01();
            return {r0 / (spec.mu_fix * lambda0), beta, rho};
        }
        case Scenario::Seir: {
            const double eps = rng.exponential(spec.eps_rate);
            const double gamma_e = rng.gamma(spec.gamma_e_shape, spec.gamma_e_scale);
            return {r0 / (spec.seir_mean_ip * lambda0), beta, eps, gamma_e};
        }
    }
    throw std::logic_error("sample_prior: bad scenario");
}

bool in_support(std::span<const double> params, const PriorSpec&, Scenario scenario) {
    return params_in_domain(scenario, params);
}

double log_prior(std::span<const double> params, const PriorSpec& spec, Scenario scenario,
                 const Population& pop, std::span<const std::uint32_t> seeds) {
    if (!params_in_domain(scenario, params)) return kNegInf;
    const double alpha = params[0];
    const double beta = params[1];
    const double lambda0 = mean_initial_pressure(pop, seeds, beta);
    if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) return kNegInf;

    // Change of variables (R0, beta) -> (alpha, beta) at fixed mu:
    // R0 = alpha * mu * lambda0(beta), |dR0/dalpha| = mu * lambda0(beta).
    auto base = [&](double mu) {
        const double r0 = alpha * mu * lambda0;
        return gamma_logpdf(r0, spec.r0_shape, spec.r0_scale) + std::log(mu * lambda0) +
               gamma_logpdf(beta, spec.beta_shape, spec.beta_scale);
    };

    switch (scenario) {
        case Scenario::Full:
            return base(spec.mu_fix);
        case Scenario::Partial:
            // rho ~ Uniform(0,1) adds zero inside support.
            return base(spec.mu_fix);
        case Scenario::Stoch: {
            const double gamma = params[2];
            // mu_I = 1/(1 - e^{-gamma}); gamma > 0 maps to mu_I > 1.
            const double mu_i = -1.0 / std::expm1(-gamma);
            // p(gamma) = p_muI(mu_I(gamma)) * |dmu_I/dgamma|, dmu_I/dgamma = e^{-gamma} mu_I^2.
            const double log_jac = -gamma + 2.0 * std::log(mu_i);
            return base(mu_i) + lognormal_logpdf(mu_i, spec.mu_i_logmean, spec.mu_i_sigma) + log_jac;
        }
        case Scenario::Seir: {
            const double eps = params[2];
            const double gamma_e = params[3];
            return base(spec.seir_mean_ip) + exponential_logpdf(eps, spec.eps_rate) +
                   gamma_logpdf(gamma_e, spec.gamma_e_shape, spec.gamma_e_scale);
        }
    }
    throw std::logic_error("log_prior: bad scenario");
}

} // namespace ilm
