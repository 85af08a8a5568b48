#include "ilm/mcmc.hpp"

#include "ilm/errors.hpp"
#include "ilm/threads.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ilm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_event_prob(double exponent) {
    return std::log(-std::expm1(-exponent));
}

// Pressure-from-infectious matrix, row t holding the kernel pressure exerted
// on every node by I_t.
std::vector<double> build_pressure(const Trajectory& traj, const std::vector<double>& kernel,
                                   std::size_t m) {
    const int T = traj.T;
    std::vector<double> P(static_cast<std::size_t>(T) * m, 0.0);
    auto add_row = [&](double* dst, std::size_t j, double sign) {
        const double* row = kernel.data() + j * m;
        for (std::size_t i = 0; i < m; ++i) dst[i] += sign * row[i];
    };
    for (std::size_t i = 0; i < m; ++i) {
        if (traj.infectious_at(i, 0)) add_row(P.data(), i, +1.0);
    }
    for (int t = 1; t < T; ++t) {
        double* cur = P.data() + static_cast<std::size_t>(t) * m;
        std::memcpy(cur, P.data() + static_cast<std::size_t>(t - 1) * m, m * sizeof(double));
        for (std::size_t i = 0; i < m; ++i) {
            if (traj.removal_time[i] == t) add_row(cur, i, -1.0);
            if (traj.infection_time[i] == t) add_row(cur, i, +1.0);
        }
    }
    return P;
}

} // namespace

double gibbs_rho(std::size_t k, std::size_t n, RngStream& rng) {
    if (k > n) throw std::invalid_argument("gibbs_rho: observed count exceeds total");
    return rng.beta(1.0 + static_cast<double>(k), 1.0 + static_cast<double>(n - k));
}

double gelman_rubin(std::span<const std::vector<double>> chains) {
    const std::size_t m = chains.size();
    if (m < 2) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = chains[0].size();
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    for (const auto& c : chains) {
        if (c.size() != n) throw std::invalid_argument("gelman_rubin: unequal chain lengths");
    }
    std::vector<double> means(m);
    double w = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (double x : chains[j]) s += x;
        means[j] = s / static_cast<double>(n);
        double v = 0.0;
        for (double x : chains[j]) v += (x - means[j]) * (x - means[j]);
        w += v / static_cast<double>(n - 1);
    }
    w /= static_cast<double>(m);
    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= static_cast<double>(m);
    double b_over_n = 0.0;
    for (double mu : means) b_over_n += (mu - grand) * (mu - grand);
    b_over_n /= static_cast<double>(m - 1);
    if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double nn = static_cast<double>(n);
    const double vhat = (nn - 1.0) / nn * w + (1.0 + 1.0 / static_cast<double>(m)) * b_over_n;
    return std::sqrt(vhat / w);
}

AdaptiveMh::AdaptiveMh(std::size_t dim, double target_accept)
    : dim_(dim),
      target_(target_accept),
      log_scale_(std::log(2.38 / std::sqrt(static_cast<double>(dim)))),
      mean_(dim, 0.0),
      cov_(dim * dim, 0.0),
      chol_(dim * dim, 0.0) {}

void AdaptiveMh::refresh_chol() {
    // Proposal covariance: empirical once history is long enough, a small
    // diagonal before that. Cholesky with a diagonal fallback.
    std::vector<double> c(dim_ * dim_, 0.0);
    if (n_ < 50) {
        for (std::size_t i = 0; i < dim_; ++i) c[i * dim_ + i] = 0.01;
    } else {
        c = cov_;
        double tr = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) tr += c[i * dim_ + i];
        const double ridge = 1e-10 + 1e-8 * tr / static_cast<double>(dim_);
        for (std::size_t i = 0; i < dim_; ++i) c[i * dim_ + i] += ridge;
    }
    std::fill(chol_.begin(), chol_.end(), 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < dim_ && ok; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = c[i * dim_ + j];
            for (std::size_t k = 0; k < j; ++k) s -= chol_[i * dim_ + k] * chol_[j * dim_ + k];
            if (i == j) {
                if (s <= 0.0) {
                    ok = false;
                    break;
                }
                chol_[i * dim_ + i] = std::sqrt(s);
            } else {
                chol_[i * dim_ + j] = s / chol_[j * dim_ + j];
            }
        }
    }
    if (!ok) {
        std::fill(chol_.begin(), chol_.end(), 0.0);
        for (std::size_t i = 0; i < dim_; ++i) {
            chol_[i * dim_ + i] = std::sqrt(std::max(c[i * dim_ + i], 1e-12));
        }
    }
    chol_valid_ = true;
}

std::vector<double> AdaptiveMh::propose(std::span<const double> x, RngStream& rng) {
    if (x.size() != dim_) throw std::invalid_argument("AdaptiveMh::propose: dimension mismatch");
    if (!chol_valid_) refresh_chol();
    std::vector<double> z(dim_);
    for (auto& v : z) v = rng.normal();
    std::vector<double> out(x.begin(), x.end());
    const double s = std::exp(log_scale_);
    for (std::size_t i = 0; i < dim_; ++i) {
        double step = 0.0;
        for (std::size_t j = 0; j <= i; ++j) step += chol_[i * dim_ + j] * z[j];
        out[i] += s * step;
    }
    return out;
}

void AdaptiveMh::learn(std::span<const double> x, double accept_prob) {
    if (frozen_) return;
    ++n_;
    const double rate = 1.0 / std::pow(static_cast<double>(n_), 0.6);
    log_scale_ += rate * (accept_prob - target_);
    // Welford update of mean and covariance.
    std::vector<double> delta(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
        delta[i] = x[i] - mean_[i];
        mean_[i] += delta[i] / static_cast<double>(n_);
    }
    const double nn = static_cast<double>(n_);
    for (std::size_t i = 0; i < dim_; ++i) {
        for (std::size_t j = 0; j < dim_; ++j) {
            const double d2 = x[j] - mean_[j];
            cov_[i * dim_ + j] += (delta[i] * d2 - cov_[i * dim_ + j]) / nn;
        }
    }
    chol_valid_ = false;
}

int exposure_gibbs_sweep(Trajectory& traj, const ObservedEpidemic& obs, const Population& pop,
                         std::span<const double> params, std::span<const double> culling_pmf,
                         int window, RngStream& rng) {
    (void)culling_pmf;
    if (traj.exposure_time.empty()) throw std::invalid_argument("exposure_gibbs_sweep: not an SEIR trajectory");
    if (params.size() != 4) throw std::invalid_argument("exposure_gibbs_sweep: need (alpha,beta,eps,gamma_e)");
    if (window < 1) throw std::invalid_argument("exposure_gibbs_sweep: window must be positive");
    const double alpha = params[0];
    const double beta = params[1];
    const double eps = params[2];
    const double gamma_e = params[3];
    const std::size_t m = pop.size();
    const int T = traj.T;

    const std::vector<double> kernel = pairwise_kernel(pop, beta);
    const std::vector<double> P = build_pressure(traj, kernel, m);

    std::vector<std::uint8_t> is_seed(m, 0);
    for (std::uint32_t s : traj.seeds) is_seed[s] = 1;

    int changed = 0;
    std::vector<double> exponent(static_cast<std::size_t>(T));
    std::vector<double> prefix(static_cast<std::size_t>(T) + 1);
    std::vector<double> logw;
    logw.reserve(static_cast<std::size_t>(T) + 1);

    for (std::size_t i = 0; i < m; ++i) {
        if (is_seed[i]) continue;
        for (int t = 0; t < T; ++t) {
            exponent[static_cast<std::size_t>(t)] = alpha * P[static_cast<std::size_t>(t) * m + i] + eps;
        }
        prefix[0] = 0.0;
        for (int t = 0; t < T; ++t) prefix[static_cast<std::size_t>(t) + 1] = prefix[static_cast<std::size_t>(t)] + exponent[static_cast<std::size_t>(t)];

        logw.clear();
        int lo = 0;
        bool unexposed_candidate = false;
        if (obs.node_observed[i]) {
            const int tau = traj.infection_time[i];
            if (tau <= 1) continue;
            lo = std::max(1, tau - window);
            for (int e = lo; e <= tau - 1; ++e) {
                logw.push_back(-prefix[static_cast<std::size_t>(e - 1)] +
                               log_event_prob(exponent[static_cast<std::size_t>(e - 1)]) -
                               gamma_e * static_cast<double>(tau - e - 1));
            }
        } else {
            unexposed_candidate = true;
            lo = 1;
            logw.push_back(-prefix[static_cast<std::size_t>(T)]);
            for (int e = 1; e <= T - 1; ++e) {
                logw.push_back(-prefix[static_cast<std::size_t>(e - 1)] +
                               log_event_prob(exponent[static_cast<std::size_t>(e - 1)]) -
                               gamma_e * static_cast<double>(T - e));
            }
        }

        double best = kNegInf;
        for (double v : logw) best = std::max(best, v);
        if (best == kNegInf) {
            throw NumericalError("exposure_gibbs_sweep: no candidate with positive probability");
        }
        double total = 0.0;
        for (double& v : logw) {
            v = std::exp(v - best);
            total += v;
        }
        const double u = rng.uniform01() * total;
        double acc = 0.0;
        std::size_t pick = logw.size() - 1;
        for (std::size_t c = 0; c < logw.size(); ++c) {
            acc += logw[c];
            if (u < acc) {
                pick = c;
                break;
            }
        }

        int new_e;
        if (unexposed_candidate) {
            new_e = pick == 0 ? kNever : lo + static_cast<int>(pick) - 1;
        } else {
            new_e = lo + static_cast<int>(pick);
        }
        if (new_e != traj.exposure_time[i]) {
            traj.exposure_time[i] = new_e;
            ++changed;
        }
    }
    return changed;
}

std::vector<double> McmcResult::pooled() const {
    std::vector<double> out;
    out.reserve(draws.size() * n_draws * dim());
    for (const auto& c : draws) out.insert(out.end(), c.begin(), c.end());
    return out;
}

bool McmcResult::converged(double threshold) const {
    if (rhat.empty()) return false;
    for (double r : rhat) {
        if (!(r < threshold)) return false;
    }
    return true;
}

namespace {

// Per-chain sampler. Holds the augmented trajectory, a pressure matrix kept
// in sync with it, and cached log-likelihood pieces:
//   ll_inf: S-exit factor (infection or exposure terms)
//   ll_dur: geometric duration factor (Stoch only)
//   ll_obs: binomial thinning factor (Partial only)
// SEIR goes through the module-level seir_loglik instead of the caches since
// its augmentation (exposure Gibbs) does not disturb the pressure matrix.
class ChainEngine {
public:
    ChainEngine(const ObservedEpidemic& obs, const Population& pop, const PriorSpec& prior,
                const McmcConfig& cfg, const Trajectory* truth, std::uint64_t stream)
        : obs_(obs),
          pop_(pop),
          prior_(prior),
          cfg_(cfg),
          rng_(cfg.seed, stream),
          m_(pop.size()),
          scenario_(obs.scenario),
          mh_(block_dim(obs.scenario), cfg.target_accept) {
        init_trajectory(truth);
        theta_ = sample_prior(prior_, scenario_, pop_, obs_.seeds, rng_);
        if (scenario_ == Scenario::Partial) repair_partial_init();
        if (scenario_ == Scenario::Stoch) init_removals();
        if (scenario_ == Scenario::Seir) init_exposures();
        refresh_all();
        if (current_log_target() == kNegInf) {
            throw NumericalError("mcmc: initial state has zero posterior density");
        }
    }

    void iterate(long iter) {
        if (iter > cfg_.burnin) mh_.freeze();
        theta_update(iter);
        switch (scenario_) {
            case Scenario::Full:
                break;
            case Scenario::Stoch:
                augment_removals();
                break;
            case Scenario::Partial:
                augment_infections();
                update_rho();
                break;
            case Scenario::Seir: {
                const int ch = exposure_gibbs_sweep(traj_, obs_, pop_, theta_, cfg_.culling_pmf,
                                                    cfg_.exposure_window, rng_);
                aug_attempts_ += static_cast<long>(m_);
                aug_accepts_ += ch;
                ll_inf_ = seir_loglik(traj_, pop_, theta_[0], theta_[1], theta_[2], theta_[3],
                                      cfg_.culling_pmf);
                break;
            }
        }
#ifndef NDEBUG
        if (iter <= 5 || iter % 500 == 0) check_cache();
#endif
    }

    const std::vector<double>& theta() const { return theta_; }
    double theta_accept_rate() const {
        return theta_attempts_ > 0 ? static_cast<double>(theta_accepts_) / static_cast<double>(theta_attempts_) : 0.0;
    }
    double aug_accept_rate() const {
        return aug_attempts_ > 0 ? static_cast<double>(aug_accepts_) / static_cast<double>(aug_attempts_)
                                 : std::numeric_limits<double>::quiet_NaN();
    }

private:
    const ObservedEpidemic& obs_;
    const Population& pop_;
    const PriorSpec& prior_;
    const McmcConfig& cfg_;
    RngStream rng_;
    std::size_t m_;
    Scenario scenario_;
    AdaptiveMh mh_;

    std::vector<double> theta_;
    Trajectory traj_;
    std::vector<double> kernel_;
    std::vector<double> pressure_;
    double ll_inf_ = 0.0;
    double ll_dur_ = 0.0;
    double ll_obs_ = 0.0;
    double lp_ = 0.0;
    std::size_t k_obs_nonseed_ = 0;
    std::size_t n_inf_nonseed_ = 0;
    std::vector<std::uint32_t> never_observed_;
    std::vector<std::uint8_t> is_seed_;

    long theta_attempts_ = 0;
    long theta_accepts_ = 0;
    long aug_attempts_ = 0;
    long aug_accepts_ = 0;

    static std::size_t block_dim(Scenario s) {
        switch (s) {
            case Scenario::Full: return 2;
            case Scenario::Stoch: return 3;
            case Scenario::Partial: return 2;
            case Scenario::Seir: return 4;
        }
        return 2;
    }

    int fixed_end(int u) const {
        const int r = u + cfg_.fixed_len;
        return r <= traj_.T ? r : kNever;
    }

    void init_trajectory(const Trajectory* truth) {
        traj_.T = obs_.T;
        traj_.infection_time.assign(m_, kNever);
        traj_.removal_time.assign(m_, kNever);
        traj_.seeds = obs_.seeds;
        is_seed_.assign(m_, 0);
        for (std::uint32_t s : obs_.seeds) is_seed_[s] = 1;
        for (std::size_t i = 0; i < m_; ++i) {
            if (!obs_.node_observed[i]) {
                never_observed_.push_back(static_cast<std::uint32_t>(i));
                continue;
            }
            const int t = obs_.node_obs_time[i];
            if (is_seed_[i]) {
                if (t != 0) throw ConfigError("mcmc: seed observed at nonzero time");
            } else if (t < 1 || t > obs_.T) {
                throw ConfigError("mcmc: non-seed observation time outside 1..T");
            }
            traj_.infection_time[i] = t;
        }
        for (std::size_t i = 0; i < m_; ++i) {
            if (traj_.infection_time[i] == kNever) continue;
            ++n_inf_nonseed_;
        }
        n_inf_nonseed_ -= obs_.seeds.size();
        k_obs_nonseed_ = n_inf_nonseed_;

        switch (scenario_) {
            case Scenario::Full:
            case Scenario::Partial:
                for (std::size_t i = 0; i < m_; ++i) {
                    if (traj_.infection_time[i] != kNever) {
                        traj_.removal_time[i] = fixed_end(traj_.infection_time[i]);
                    }
                }
                break;
            case Scenario::Stoch:
                break;
            case Scenario::Seir: {
                if (truth == nullptr) {
                    throw ConfigError("mcmc: SEIR needs the culling schedule (truth trajectory)");
                }
                if (truth->size() != m_) throw ConfigError("mcmc: truth trajectory size mismatch");
                traj_.exposure_time.assign(m_, kNever);
                for (std::size_t i = 0; i < m_; ++i) {
                    if (traj_.infection_time[i] == kNever) continue;
                    if (truth->infection_time[i] != traj_.infection_time[i]) {
                        throw ConfigError("mcmc: truth trajectory disagrees with observations");
                    }
                    traj_.removal_time[i] = truth->removal_time[i];
                }
                break;
            }
        }
    }

    // The paper initialises never-observed individuals as uninfected. When
    // thinning breaks the infection chain (some observed infection has an
    // empty infectious set the step before), that state has zero density, so
    // bridge the gaps greedily with as few augmented infections as possible.
    void repair_partial_init() {
        std::vector<int> times;
        for (std::size_t i = 0; i < m_; ++i) {
            if (traj_.infection_time[i] != kNever) times.push_back(traj_.infection_time[i]);
        }
        std::sort(times.begin(), times.end());
        std::vector<int> observed_times;
        for (int t : times) {
            if (t >= 1) observed_times.push_back(t);
        }
        std::size_t donor = 0;
        auto next_donor = [&]() -> std::uint32_t {
            while (donor < never_observed_.size() &&
                   traj_.infection_time[never_observed_[donor]] != kNever) {
                ++donor;
            }
            if (donor == never_observed_.size()) {
                throw NumericalError("mcmc: cannot bridge observation gaps, no free individuals");
            }
            return never_observed_[donor];
        };
        int cover_end = 0;
        std::size_t idx = 0;
        for (int u : observed_times) {
            while (idx < times.size() && times[idx] < u) {
                cover_end = std::max(cover_end, times[idx] + cfg_.fixed_len);
                ++idx;
            }
            while (u > cover_end) {
                const int s = cover_end;
                const std::uint32_t id = next_donor();
                traj_.infection_time[id] = s;
                traj_.removal_time[id] = fixed_end(s);
                ++n_inf_nonseed_;
                cover_end = s + cfg_.fixed_len;
            }
        }
    }

    void init_removals() {
        const double p_rem = -std::expm1(-theta_[2]);
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (std::size_t i = 0; i < m_; ++i) {
                if (traj_.infection_time[i] == kNever) continue;
                const int g = static_cast<int>(rng_.geometric(p_rem));
                const int r = traj_.infection_time[i] + g;
                traj_.removal_time[i] = r <= traj_.T ? r : kNever;
            }
            kernel_ = pairwise_kernel(pop_, theta_[1]);
            pressure_ = build_pressure(traj_, kernel_, m_);
            if (infection_loglik(traj_, pressure_, theta_[0]) != kNegInf) return;
        }
        // Keeping everyone infectious to the horizon is always feasible.
        for (std::size_t i = 0; i < m_; ++i) {
            if (traj_.infection_time[i] != kNever) traj_.removal_time[i] = kNever;
        }
    }

    void init_exposures() {
        for (std::size_t i = 0; i < m_; ++i) {
            if (is_seed_[i]) {
                traj_.exposure_time[i] = 0;
                continue;
            }
            const int tau = traj_.infection_time[i];
            if (tau == kNever) continue;
            if (tau < 2) throw ConfigError("mcmc: non-seed SEIR infection before step 2");
            traj_.exposure_time[i] = tau - 1;
        }
        exposure_gibbs_sweep(traj_, obs_, pop_, theta_, cfg_.culling_pmf, cfg_.exposure_window, rng_);
    }

    // Infection (or exposure, for SEIR) factor from the pressure matrix.
    double infection_loglik(const Trajectory& traj, const std::vector<double>& P, double alpha,
                            double eps = 0.0) const {
        const int T = traj.T;
        double total = 0.0;
        const std::vector<int>& entry = traj.exposure_time.empty() ? traj.infection_time : traj.exposure_time;
        for (int t = 0; t < T; ++t) {
            const double* row = P.data() + static_cast<std::size_t>(t) * m_;
            for (std::size_t i = 0; i < m_; ++i) {
                const int e = entry[i];
                if (e != kNever && e <= t) continue;
                const double exponent = alpha * row[i] + eps;
                if (e == t + 1) {
                    total += log_event_prob(exponent);
                    if (total == kNegInf) return kNegInf;
                } else {
                    total -= exponent;
                }
            }
        }
        return total;
    }

    double duration_loglik(const Trajectory& traj, double gamma) const {
        const double log_rem = log_event_prob(gamma);
        double total = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
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

    double obs_factor(double rho) const {
        double total = 0.0;
        if (k_obs_nonseed_ > 0) total += static_cast<double>(k_obs_nonseed_) * std::log(rho);
        if (n_inf_nonseed_ > k_obs_nonseed_) {
            total += static_cast<double>(n_inf_nonseed_ - k_obs_nonseed_) * std::log1p(-rho);
        }
        return total;
    }

    void refresh_all() {
        lp_ = log_prior(theta_, prior_, scenario_, pop_, obs_.seeds);
        if (scenario_ == Scenario::Seir) {
            ll_inf_ = seir_loglik(traj_, pop_, theta_[0], theta_[1], theta_[2], theta_[3],
                                  cfg_.culling_pmf);
            ll_dur_ = 0.0;
            ll_obs_ = 0.0;
            return;
        }
        kernel_ = pairwise_kernel(pop_, theta_[1]);
        pressure_ = build_pressure(traj_, kernel_, m_);
        ll_inf_ = infection_loglik(traj_, pressure_, theta_[0]);
        ll_dur_ = scenario_ == Scenario::Stoch ? duration_loglik(traj_, theta_[2]) : 0.0;
        ll_obs_ = scenario_ == Scenario::Partial ? obs_factor(theta_[2]) : 0.0;
    }

    double current_log_target() const { return ll_inf_ + ll_dur_ + ll_obs_ + lp_; }

    std::vector<double> to_transformed() const {
        switch (scenario_) {
            case Scenario::Full:
            case Scenario::Partial:
                return {std::log(theta_[0]), theta_[1]};
            case Scenario::Stoch:
                return {std::log(theta_[0]), theta_[1], std::log(theta_[2])};
            case Scenario::Seir:
                return {std::log(theta_[0]), theta_[1], std::log(theta_[2]), std::log(theta_[3])};
        }
        return {};
    }

    std::vector<double> from_transformed(const std::vector<double>& x) const {
        std::vector<double> th = theta_;
        th[0] = std::exp(x[0]);
        th[1] = x[1];
        switch (scenario_) {
            case Scenario::Stoch:
                th[2] = std::exp(x[2]);
                break;
            case Scenario::Seir:
                th[2] = std::exp(x[2]);
                th[3] = std::exp(x[3]);
                break;
            default:
                break;
        }
        return th;
    }

    double log_jacobian(const std::vector<double>& x) const {
        switch (scenario_) {
            case Scenario::Full:
            case Scenario::Partial:
                return x[0];
            case Scenario::Stoch:
                return x[0] + x[2];
            case Scenario::Seir:
                return x[0] + x[2] + x[3];
        }
        return 0.0;
    }

    void theta_update(long) {
        ++theta_attempts_;
        const std::vector<double> x = to_transformed();
        const std::vector<double> xp = mh_.propose(x, rng_);
        const std::vector<double> thp = from_transformed(xp);

        double accept_prob = 0.0;
        bool accepted = false;
        if (params_in_domain(scenario_, thp)) {
            const double lpp = log_prior(thp, prior_, scenario_, pop_, obs_.seeds);
            if (lpp != kNegInf) {
                double llp_inf;
                double llp_dur = 0.0;
                std::vector<double> kp;
                std::vector<double> pp;
                if (scenario_ == Scenario::Seir) {
                    llp_inf = seir_loglik(traj_, pop_, thp[0], thp[1], thp[2], thp[3], cfg_.culling_pmf);
                } else {
                    kp = pairwise_kernel(pop_, thp[1]);
                    pp = build_pressure(traj_, kp, m_);
                    llp_inf = infection_loglik(traj_, pp, thp[0]);
                    if (scenario_ == Scenario::Stoch) llp_dur = duration_loglik(traj_, thp[2]);
                }
                const double cur = ll_inf_ + ll_dur_ + lp_ + log_jacobian(x);
                const double prop = llp_inf + llp_dur + lpp + log_jacobian(xp);
                const double logr = prop - cur;
                accept_prob = logr >= 0.0 ? 1.0 : std::exp(logr);
                if (logr >= 0.0 || rng_.uniform01() < accept_prob) {
                    accepted = true;
                    theta_ = thp;
                    lp_ = lpp;
                    ll_inf_ = llp_inf;
                    ll_dur_ = llp_dur;
                    if (scenario_ != Scenario::Seir) {
                        kernel_ = std::move(kp);
                        pressure_ = std::move(pp);
                    }
                }
            }
        }
        if (accepted) ++theta_accepts_;
        mh_.learn(accepted ? xp : x, accept_prob);
    }

    void augment_removals() {
        ++aug_attempts_;
        const double p_rem = -std::expm1(-theta_[2]);
        Trajectory cand = traj_;
        for (std::size_t i = 0; i < m_; ++i) {
            if (cand.infection_time[i] == kNever) continue;
            const int g = static_cast<int>(rng_.geometric(p_rem));
            const int r = cand.infection_time[i] + g;
            cand.removal_time[i] = r <= cand.T ? r : kNever;
        }
        std::vector<double> pp = build_pressure(cand, kernel_, m_);
        const double llp_inf = infection_loglik(cand, pp, theta_[0]);
        const double logr = llp_inf - ll_inf_;
        if (logr >= 0.0 || rng_.uniform01() < std::exp(logr)) {
            ++aug_accepts_;
            traj_ = std::move(cand);
            pressure_ = std::move(pp);
            ll_inf_ = llp_inf;
            ll_dur_ = duration_loglik(traj_, theta_[2]);
        }
    }

    // Single-site toggles: pick up to n_infection_props distinct
    // never-observed individuals, choose insert/delete with probability 1/2
    // each, and accept with the likelihood ratio times the observation odds
    // and the proposal asymmetry (T-1 candidate insertion times).
    void augment_infections() {
        const std::size_t n_sel = std::min<std::size_t>(static_cast<std::size_t>(cfg_.n_infection_props),
                                                        never_observed_.size());
        if (n_sel == 0) return;
        std::vector<std::uint32_t> pool = never_observed_;
        for (std::size_t i = 0; i < n_sel; ++i) {
            const std::size_t j = i + rng_.uniform_int(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        const double rho = theta_[2];
        const int T = traj_.T;
        for (std::size_t s = 0; s < n_sel; ++s) {
            const std::uint32_t i = pool[s];
            const bool coin_add = rng_.bernoulli(0.5);
            const bool infected = traj_.infection_time[i] != kNever;
            if (coin_add == infected) continue;
            ++aug_attempts_;
            if (coin_add) {
                const int u = 1 + static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(T - 1)));
                const double delta = toggle_delta_add(i, u);
                const double logr = delta + std::log1p(-rho) + std::log(static_cast<double>(T - 1));
                if (logr >= 0.0 || rng_.uniform01() < std::exp(logr)) {
                    ++aug_accepts_;
                    apply_add(i, u, delta);
                }
            } else {
                const int u = traj_.infection_time[i];
                const double delta = toggle_delta_remove(i, u);
                const double logr = delta - std::log1p(-rho) - std::log(static_cast<double>(T - 1));
                if (logr >= 0.0 || rng_.uniform01() < std::exp(logr)) {
                    ++aug_accepts_;
                    apply_remove(i, u, delta);
                }
            }
        }
    }

    // Clamped at zero: repeated toggle updates can leave tiny negative dust.
    double pres(int t, std::size_t i) const {
        return std::max(0.0, pressure_[static_cast<std::size_t>(t) * m_ + i]);
    }

    double toggle_delta_add(std::size_t i, int u) const {
        const double alpha = theta_[0];
        const int T = traj_.T;
        double delta = log_event_prob(alpha * pres(u - 1, i));
        if (delta == kNegInf) return kNegInf;
        for (int t = u - 1; t < T; ++t) delta += alpha * pres(t, i);
        const int end = std::min(u + cfg_.fixed_len, T);
        const double* krow = kernel_.data() + i * m_;
        for (int t = u; t < end; ++t) {
            for (std::size_t j = 0; j < m_; ++j) {
                if (j == i) continue;
                const int ej = traj_.infection_time[j];
                if (ej != kNever && ej <= t) continue;
                if (ej == t + 1) {
                    delta += log_event_prob(alpha * (pres(t, j) + krow[j])) -
                             log_event_prob(alpha * pres(t, j));
                } else {
                    delta -= alpha * krow[j];
                }
            }
        }
        return delta;
    }

    double toggle_delta_remove(std::size_t i, int u) const {
        const double alpha = theta_[0];
        const int T = traj_.T;
        double delta = -log_event_prob(alpha * pres(u - 1, i));
        for (int t = u - 1; t < T; ++t) delta -= alpha * pres(t, i);
        const int end = std::min(u + cfg_.fixed_len, T);
        const double* krow = kernel_.data() + i * m_;
        for (int t = u; t < end; ++t) {
            for (std::size_t j = 0; j < m_; ++j) {
                if (j == i) continue;
                const int ej = traj_.infection_time[j];
                if (ej != kNever && ej <= t) continue;
                if (ej == t + 1) {
                    const double reduced = pres(t, j) - krow[j];
                    const double lo = log_event_prob(alpha * std::max(reduced, 0.0));
                    if (lo == kNegInf) return kNegInf;
                    delta += lo - log_event_prob(alpha * pres(t, j));
                } else {
                    delta += alpha * krow[j];
                }
            }
        }
        return delta;
    }

    void shift_pressure(std::size_t i, int u, double sign) {
        const int end = std::min(u + cfg_.fixed_len, traj_.T);
        const double* krow = kernel_.data() + i * m_;
        for (int t = u; t < end; ++t) {
            double* row = pressure_.data() + static_cast<std::size_t>(t) * m_;
            for (std::size_t j = 0; j < m_; ++j) row[j] += sign * krow[j];
        }
    }

    void apply_add(std::size_t i, int u, double delta) {
        traj_.infection_time[i] = u;
        traj_.removal_time[i] = fixed_end(u);
        shift_pressure(i, u, +1.0);
        ll_inf_ += delta;
        ++n_inf_nonseed_;
        ll_obs_ = obs_factor(theta_[2]);
    }

    void apply_remove(std::size_t i, int u, double delta) {
        traj_.infection_time[i] = kNever;
        traj_.removal_time[i] = kNever;
        shift_pressure(i, u, -1.0);
        ll_inf_ += delta;
        --n_inf_nonseed_;
        ll_obs_ = obs_factor(theta_[2]);
    }

    void update_rho() {
        theta_[2] = gibbs_rho(k_obs_nonseed_, n_inf_nonseed_, rng_);
        ll_obs_ = obs_factor(theta_[2]);
    }

    void check_cache() {
        double fresh_inf;
        if (scenario_ == Scenario::Seir) {
            fresh_inf = seir_loglik(traj_, pop_, theta_[0], theta_[1], theta_[2], theta_[3],
                                    cfg_.culling_pmf);
        } else {
            const std::vector<double> k = pairwise_kernel(pop_, theta_[1]);
            const std::vector<double> p = build_pressure(traj_, k, m_);
            fresh_inf = infection_loglik(traj_, p, theta_[0]);
        }
        if (std::isfinite(fresh_inf) && std::fabs(fresh_inf - ll_inf_) > 1e-9 * std::max(1.0, std::fabs(fresh_inf))) {
            throw std::logic_error("mcmc: cached log-likelihood drifted from recomputation");
        }
    }
};

} // namespace

McmcResult run_chains(const ObservedEpidemic& obs, const Population& pop, const PriorSpec& prior,
                      const McmcConfig& cfg, const Trajectory* truth) {
    if (cfg.n_chains < 1) throw ConfigError("mcmc: n_chains must be at least 1");
    if (cfg.burnin < 0 || cfg.iters <= cfg.burnin) throw ConfigError("mcmc: need iters > burnin >= 0");
    if (cfg.thin < 1) throw ConfigError("mcmc: thin must be at least 1");
    const long n_draws = (cfg.iters - cfg.burnin) / cfg.thin;
    if (n_draws < 1) throw ConfigError("mcmc: no retained draws with this iters/burnin/thin");
    if (obs.node_observed.size() != pop.size()) throw ConfigError("mcmc: population and epidemic sizes differ");

    const auto t0 = std::chrono::steady_clock::now();

    McmcResult res;
    res.param_names = scenario_param_names(obs.scenario);
    const std::size_t dim = res.param_names.size();
    res.n_draws = static_cast<std::size_t>(n_draws);
    res.draws.assign(static_cast<std::size_t>(cfg.n_chains), {});
    res.theta_accept.assign(static_cast<std::size_t>(cfg.n_chains), 0.0);
    res.aug_accept.assign(static_cast<std::size_t>(cfg.n_chains), 0.0);

    parallel_for(static_cast<std::size_t>(cfg.n_chains), [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            ChainEngine engine(obs, pop, prior, cfg, truth, derive_stream(0x6D636D63ull, c));
            auto& out = res.draws[c];
            out.reserve(static_cast<std::size_t>(n_draws) * dim);
            for (long iter = 1; iter <= cfg.iters; ++iter) {
                engine.iterate(iter);
                if (iter > cfg.burnin && (iter - cfg.burnin) % cfg.thin == 0) {
                    const auto& th = engine.theta();
                    out.insert(out.end(), th.begin(), th.end());
                }
            }
            res.theta_accept[c] = engine.theta_accept_rate();
            res.aug_accept[c] = engine.aug_accept_rate();
        }
    }, cfg.threads);

    res.rhat.assign(dim, std::numeric_limits<double>::quiet_NaN());
    if (cfg.n_chains >= 2) {
        for (std::size_t p = 0; p < dim; ++p) {
            std::vector<std::vector<double>> per_chain(static_cast<std::size_t>(cfg.n_chains));
            for (std::size_t c = 0; c < per_chain.size(); ++c) {
                per_chain[c].resize(static_cast<std::size_t>(n_draws));
                for (long d = 0; d < n_draws; ++d) {
                    per_chain[c][static_cast<std::size_t>(d)] = res.draws[c][static_cast<std::size_t>(d) * dim + p];
                }
            }
            res.rhat[p] = gelman_rubin(per_chain);
        }
    }
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace ilm
