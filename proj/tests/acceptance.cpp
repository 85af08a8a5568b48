// Acceptance gate: one pass/fail line per criterion, tolerances pinned
// in code. Criteria can be selected by number on the command line;
// criterion 9 compares stage fingerprints against the --golden file and
// regenerates it when ILMNPE_REGEN_GOLDEN=1.

#include "ilm/config.hpp"
#include "ilm/embed.hpp"
#include "ilm/epidemic.hpp"
#include "ilm/errors.hpp"
#include "ilm/eval.hpp"
#include "ilm/flow.hpp"
#include "ilm/io.hpp"
#include "ilm/likelihood.hpp"
#include "ilm/mcmc.hpp"
#include "ilm/npe.hpp"
#include "ilm/population.hpp"
#include "ilm/priors.hpp"
#include "ilm/rng.hpp"
#include "ilm/stats.hpp"
#include "ilm/tensor.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

using namespace ilm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

// --- shared: the 3-individual instance --------------------------------

Population three_pop() {
    return Population::from_coords({0.0, 1.0, 0.5}, {0.0, 0.0, 1.0},
                                   Region{.xmin = 0, .xmax = 2, .ymin = 0, .ymax = 2});
}

Trajectory three_traj(int t1, int t2) {
    Trajectory tr;
    tr.T = 2;
    tr.infection_time = {0, t1, t2};
    tr.removal_time = {kNever, kNever, kNever};
    tr.seeds = {0};
    return tr;
}

// --- shared: flow helpers ----------------------------------------------

void perturb_flow(SplineFlow& flow, std::uint64_t seed, double scale) {
    std::vector<ad::Parameter*> params;
    flow.collect(params);
    RngStream rng(seed, 71);
    for (ad::Parameter* p : params) {
        for (double& v : p->value) v += scale * rng.normal();
    }
}

// --- shared: sampling and coverage over a test set ---------------------

struct CalibrationStats {
    std::vector<double> coverage;
    std::vector<double> mae;
    std::vector<double> sbc_p;
    bool all_complete = true;
};

CalibrationStats calibrate(const PosteriorEstimator& est, const TrainingSet& tests,
                           const Population& pop, std::size_t n_draws, std::uint64_t seed,
                           std::size_t sbc_bins) {
    const std::size_t dim = est.dim();
    const SpatialGraph graph = est.embed_config().kind == EmbedConfig::Kind::Gnn
                                   ? knn_graph(pop, static_cast<int>(est.embed_config().knn_k))
                                   : SpatialGraph{};
    const SpatialGraph* gptr =
        est.embed_config().kind == EmbedConfig::Kind::Gnn ? &graph : nullptr;

    CalibrationStats out;
    std::vector<std::vector<double>> draws(tests.n());
    std::vector<double> truths(tests.n() * dim);
    std::vector<double> medians(tests.n() * dim);
    for (std::size_t t = 0; t < tests.n(); ++t) {
        RngStream rng(seed, derive_stream(0xACCE, t));
        const SampleResult s = posterior_sample(est, tests.pairs[t].obs, pop, n_draws, rng, gptr);
        if (!s.complete()) out.all_complete = false;
        draws[t] = s.draws;
        const std::vector<double> med = posterior_median(s.draws, dim);
        for (std::size_t d = 0; d < dim; ++d) {
            truths[t * dim + d] = tests.pairs[t].theta[d];
            medians[t * dim + d] = med[d];
        }
    }
    out.coverage = interval_summary(draws, truths, dim, 0.95).coverage;
    out.mae = mean_absolute_error(medians, truths, dim);
    out.sbc_p = sbc_ranks(draws, truths, dim, sbc_bins).p_values;
    return out;
}

// --- criterion 1: likelihood normalisation and simulator agreement -----

Outcome criterion1() {
    Population pop = three_pop();
    const int times[3] = {1, 2, kNever};

    double worst = 0.0;
    for (auto [a, b] : {std::pair{0.5, 1.0}, std::pair{1.2, 2.0}, std::pair{2.0, 0.5}}) {
        double total = 0.0;
        for (int t1 : times) {
            for (int t2 : times) {
                total += std::exp(full_loglik_fixed(three_traj(t1, t2), pop, a, b, 3));
            }
        }
        worst = std::max(worst, std::abs(total - 1.0));
    }
    if (worst > 1e-10) {
        return {false, "trajectory enumeration mass off by " + fmt(worst)};
    }

    const double alpha = 0.8, beta = 1.2;
    std::map<std::pair<int, int>, double> exact;
    for (int t1 : times) {
        for (int t2 : times) {
            exact[{t1, t2}] = std::exp(full_loglik_fixed(three_traj(t1, t2), pop, alpha, beta, 3));
        }
    }
    const long n = 100000;
    std::map<std::pair<int, int>, long> counts;
    RngStream rng(4242, 0);
    const std::vector<std::uint32_t> seeds{0};
    for (long i = 0; i < n; ++i) {
        const Trajectory tr = simulate_sir(pop, alpha, beta, RemovalModel::fixed(3), seeds, 2, rng);
        counts[{tr.infection_time[1], tr.infection_time[2]}]++;
    }
    double tv = 0.0;
    for (const auto& [cell, p] : exact) {
        const double freq = counts.count(cell) ? double(counts[cell]) / n : 0.0;
        tv += std::abs(freq - p);
    }
    tv *= 0.5;
    if (tv >= 0.01) return {false, "simulator TV " + fmt(tv) + " >= 0.01"};
    return {true, "mass error " + fmt(worst) + ", simulator TV " + fmt(tv)};
}

// --- criterion 2: flow round trip, normalisation, log-determinants -----

Outcome criterion2() {
    {
        FlowConfig fc;
        fc.dim = 2;
        fc.context_dim = 4;
        fc.layers = 4;
        fc.bins = 8;
        fc.hidden = 16;
        RngStream init(201, 0);
        SplineFlow flow(fc, init);
        perturb_flow(flow, 202, 0.15);

        RngStream rng(203, 0);
        double worst_pt = 0.0, worst_ld = 0.0;
        std::vector<double> theta(2), z(2), back(2), ctx(4);
        for (int i = 0; i < 1000; ++i) {
            for (double& v : theta) v = 2.5 * rng.normal();
            for (double& v : ctx) v = rng.normal();
            double ldf = 0.0, ldb = 0.0;
            flow.to_base(theta, ctx, z, ldf);
            flow.to_data(z, ctx, back, ldb);
            for (int d = 0; d < 2; ++d) worst_pt = std::max(worst_pt, std::abs(theta[d] - back[d]));
            worst_ld = std::max(worst_ld, std::abs(ldf + ldb));
        }
        if (worst_pt >= 1e-8 || worst_ld >= 1e-8) {
            return {false, "round trip " + fmt(worst_pt) + ", logdet sum " + fmt(worst_ld)};
        }
    }

    FlowConfig fc1;
    fc1.dim = 1;
    fc1.context_dim = 3;
    fc1.layers = 4;
    fc1.bins = 8;
    fc1.hidden = 16;
    RngStream init1(204, 0);
    SplineFlow flow1(fc1, init1);
    perturb_flow(flow1, 205, 0.15);
    RngStream crng(206, 0);
    std::vector<double> ctx1(3);
    for (double& v : ctx1) v = crng.normal();

    double integral = 0.0;
    const int nq = 16000;
    const double lo = -9.0, hi = 9.0, dx = (hi - lo) / nq;
    for (int i = 0; i <= nq; ++i) {
        const double x = lo + i * dx;
        const std::vector<double> pt{x};
        const double w = (i == 0 || i == nq) ? 0.5 : 1.0;
        integral += w * std::exp(flow1.log_prob(pt, ctx1)) * dx;
    }
    if (std::abs(integral - 1.0) > 0.01) {
        return {false, "density integral " + fmt(integral)};
    }

    double worst_rel = 0.0;
    const double h = 1e-6;
    for (int i = 0; i < 1000; ++i) {
        const double x = -6.0 + 12.0 * (i + 0.5) / 1000.0;
        std::vector<double> z(1);
        double ld = 0.0;
        flow1.to_base(std::vector<double>{x}, ctx1, z, ld);
        const double analytic = std::exp(ld);
        std::vector<double> zp(1), zm(1);
        double dummy = 0.0;
        flow1.to_base(std::vector<double>{x + h}, ctx1, zp, dummy);
        flow1.to_base(std::vector<double>{x - h}, ctx1, zm, dummy);
        const double fd = (zp[0] - zm[0]) / (2.0 * h);
        worst_rel = std::max(worst_rel, std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-12));
    }
    if (worst_rel >= 1e-5) return {false, "logdet vs FD rel err " + fmt(worst_rel)};
    return {true, "integral " + fmt(integral) + ", logdet rel err " + fmt(worst_rel)};
}

// --- criterion 3: composed loss gradients vs finite differences --------

Outcome criterion3() {
    Population pop = Population::generate_uniform(30, 10.0, 301);
    SimStudyConfig study;
    study.scenario = Scenario::Full;
    study.T = 20;
    study.seeds = {0, 1};
    const TrainingSet set = generate_training_set(study, pop, 10, 302, 1);

    std::vector<double> mean(2, 0.0), sd(2, 0.0);
    for (const TrainingPair& p : set.pairs) {
        mean[0] += p.theta[0];
        mean[1] += p.theta[1];
    }
    for (double& v : mean) v /= double(set.n());
    for (const TrainingPair& p : set.pairs) {
        sd[0] += (p.theta[0] - mean[0]) * (p.theta[0] - mean[0]);
        sd[1] += (p.theta[1] - mean[1]) * (p.theta[1] - mean[1]);
    }
    for (double& v : sd) v = std::sqrt(v / double(set.n() - 1));

    double worst_overall = 0.0;
    for (auto kind : {EmbedConfig::Kind::Cnn, EmbedConfig::Kind::Gnn}) {
        EmbedConfig ec;
        ec.kind = kind;
        ec.k_emb = 8;
        ec.channels = {6, 6};
        ec.kernel = 3;
        ec.pooled_len = 4;
        ec.knn_k = 4;
        ec.sage_layers = 2;
        ec.width = 8;
        FlowConfig flc;
        flc.dim = 2;
        flc.context_dim = 8;
        flc.layers = 2;
        flc.bins = 4;
        flc.hidden = 8;
        RngStream rng(303, 0);
        PosteriorEstimator est(Scenario::Full, ec, flc, rng);
        const SpatialGraph graph = knn_graph(pop, 4);
        const SpatialGraph* gptr = kind == EmbedConfig::Kind::Gnn ? &graph : nullptr;

        std::vector<ad::Parameter*> params;
        est.collect(params);

        std::vector<double> theta_std;
        for (const TrainingPair& p : set.pairs) {
            theta_std.push_back((p.theta[0] - mean[0]) / sd[0]);
            theta_std.push_back((p.theta[1] - mean[1]) / sd[1]);
        }

        for (ad::Parameter* p : params) p->zero_grad();
        {
            ad::Graph g;
            std::vector<ad::Var> rows;
            for (const TrainingPair& p : set.pairs) {
                rows.push_back(est.embed_graph(g, p.obs, pop, gptr));
            }
            const ad::Var ctx = ad::concat_rows(g, rows);
            const ad::Var theta = g.constant({set.n(), 2}, theta_std);
            const ad::Var lp = est.flow().log_prob_graph(g, theta, ctx);
            const ad::Var loss = ad::affine(g, ad::mean(g, lp), -1.0, 0.0);
            g.backward(loss);
        }

        const auto loss_numeric = [&]() {
            double total = 0.0;
            for (std::size_t i = 0; i < set.n(); ++i) {
                const std::vector<double> ctx = est.embed(set.pairs[i].obs, pop, gptr);
                const std::vector<double> th{theta_std[i * 2], theta_std[i * 2 + 1]};
                total -= est.flow().log_prob(th, ctx);
            }
            return total / double(set.n());
        };

        const double h = 1e-4;
        double worst = 0.0;
        for (ad::Parameter* p : params) {
            for (std::size_t k = 0; k < p->size(); ++k) {
                const double keep = p->value[k];
                p->value[k] = keep + h;
                const double up = loss_numeric();
                p->value[k] = keep - h;
                const double dn = loss_numeric();
                p->value[k] = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double an = p->grad[k];
                worst = std::max(worst,
                                 std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5}));
            }
        }
        if (worst >= 1e-3) {
            return {false, std::string(to_string(kind)) + " grad rel err " + fmt(worst)};
        }
        worst_overall = std::max(worst_overall, worst);
    }
    return {true, "worst grad rel err " + fmt(worst_overall)};
}

// --- criterion 4: posterior vs grid enumeration ------------------------

Outcome criterion4() {
    Population pop = three_pop();
    const Trajectory truth = three_traj(1, 2);
    const PriorSpec spec;
    const std::vector<std::uint32_t> seeds{0};

    const std::vector<double> a_edges{0.35, 0.45, 0.55, 0.70};
    const std::vector<double> b_edges{1.0, 1.4, 1.8, 2.4};
    const auto cell_of = [](double v, const std::vector<double>& edges) {
        return std::size_t(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    };
    std::array<double, 25> exact{};
    {
        const int na = 1600, nb = 1600;
        const double amax = 8.0, bmax = 8.0;
        const double da = amax / na, db = bmax / nb;
        double total = 0.0;
        for (int i = 0; i < na; ++i) {
            const double a = (i + 0.5) * da;
            for (int j = 0; j < nb; ++j) {
                const double b = (j + 0.5) * db;
                const double params[2] = {a, b};
                const double lp = log_prior(params, spec, Scenario::Full, pop, seeds);
                if (!std::isfinite(lp)) continue;
                const double w = std::exp(lp + full_loglik_fixed(truth, pop, a, b, 3));
                exact[cell_of(a, a_edges) * 5 + cell_of(b, b_edges)] += w;
                total += w;
            }
        }
        for (double& v : exact) v /= total;
    }

    RngStream orng(401, 0);
    const ObservedEpidemic obs = observe(truth, Scenario::Full, 1.0, orng);
    McmcConfig mc;
    mc.n_chains = 2;
    mc.iters = 520000;
    mc.burnin = 20000;
    mc.thin = 10;
    mc.seed = 909;
    mc.threads = 1;
    const McmcResult res = run_chains(obs, pop, spec, mc);
    const std::vector<double> pooled = res.pooled();
    const std::size_t n = pooled.size() / 2;
    if (n != 100000) return {false, "expected 1e5 retained draws, got " + std::to_string(n)};

    std::array<double, 25> mcmc{};
    for (std::size_t r = 0; r < n; ++r) {
        mcmc[cell_of(pooled[r * 2], a_edges) * 5 + cell_of(pooled[r * 2 + 1], b_edges)] += 1.0;
    }
    double tv = 0.0;
    for (int c = 0; c < 25; ++c) tv += std::abs(mcmc[c] / double(n) - exact[c]);
    tv *= 0.5;
    if (tv >= 0.05) return {false, "TV " + fmt(tv) + " >= 0.05 over the coarse grid"};
    return {true, "TV " + fmt(tv) + " over 25 cells, rhat " + fmt(res.rhat[0]) + "/" +
                      fmt(res.rhat[1])};
}

// --- criterion 5: desk-scale calibration, both embeddings --------------

Outcome criterion5() {
    RunConfig cfg = parse_run_config(R"({"scenario": "full", "master_seed": 5001})");
    const Population pop = resolve_population(cfg);
    const SimStudyConfig study = study_config(cfg, pop);
    const TrainingSet train = generate_training_set(study, pop, 2000, 5002, 0);
    const TrainingSet tests = generate_training_set(study, pop, 200, 5003, 0);

    OptConfig opt = cfg.opt;
    opt.seed = 5004;

    std::map<EmbedConfig::Kind, CalibrationStats> stats;
    for (auto kind : {EmbedConfig::Kind::Cnn, EmbedConfig::Kind::Gnn}) {
        EmbedConfig ec = cfg.embed;
        ec.kind = kind;
        const TrainResult tr = train_estimator(train, pop, ec, cfg.flow, opt);
        stats[kind] = calibrate(tr.estimator, tests, pop, 499, 5005, 10);
    }

    std::ostringstream detail;
    bool pass = true;
    for (auto kind : {EmbedConfig::Kind::Cnn, EmbedConfig::Kind::Gnn}) {
        const CalibrationStats& s = stats[kind];
        detail << to_string(kind) << " cov(" << fmt(s.coverage[0]) << "," << fmt(s.coverage[1])
               << ") mae(" << fmt(s.mae[0]) << "," << fmt(s.mae[1]) << ") sbc("
               << fmt(s.sbc_p[0]) << "," << fmt(s.sbc_p[1]) << "); ";
        for (int d = 0; d < 2; ++d) {
            if (s.coverage[d] < 0.88 || s.coverage[d] > 0.99) pass = false;
            if (s.sbc_p[d] <= 0.001) pass = false;
        }
    }
    const double mae_beta_cnn = stats[EmbedConfig::Kind::Cnn].mae[1];
    const double mae_beta_gnn = stats[EmbedConfig::Kind::Gnn].mae[1];
    if (mae_beta_gnn > mae_beta_cnn) pass = false;
    detail << "mae(beta) gnn " << fmt(mae_beta_gnn) << " vs cnn " << fmt(mae_beta_cnn);
    return {pass, detail.str()};
}

// --- criterion 6: partial-observation coverage, NPE vs MCMC ------------

Outcome criterion6() {
    RunConfig cfg = parse_run_config(R"({"scenario": "partial", "master_seed": 6001})");
    const Population pop = resolve_population(cfg);
    const SimStudyConfig study = study_config(cfg, pop);
    const TrainingSet train = generate_training_set(study, pop, 2000, 6002, 0);
    const TrainingSet reps = generate_training_set(study, pop, 20, 6003, 0);

    OptConfig opt = cfg.opt;
    opt.seed = 6004;
    EmbedConfig ec = cfg.embed;
    ec.kind = EmbedConfig::Kind::Cnn;
    const TrainResult tr = train_estimator(train, pop, ec, cfg.flow, opt);

    long npe_a = 0, npe_b = 0, mcmc_a = 0, mcmc_b = 0;
    for (std::size_t r = 0; r < reps.n(); ++r) {
        const TrainingPair& rep = reps.pairs[r];
        RngStream srng(6005, derive_stream(0x6E70, r));
        const SampleResult s = posterior_sample(tr.estimator, rep.obs, pop, 499, srng);
        const auto ci_covers = [&](std::span<const double> draws, std::size_t dim, std::size_t d,
                                   double truth) {
            std::vector<double> coord;
            for (std::size_t i = 0; i < draws.size() / dim; ++i) coord.push_back(draws[i * dim + d]);
            const auto [lo, hi] = credible_interval(coord, 0.95);
            return truth >= lo && truth <= hi;
        };
        if (ci_covers(s.draws, 3, 0, rep.theta[0])) ++npe_a;
        if (ci_covers(s.draws, 3, 1, rep.theta[1])) ++npe_b;

        McmcConfig mc;
        mc.n_chains = 3;
        mc.iters = 10000;
        mc.burnin = 4000;
        mc.thin = 30;
        mc.n_infection_props = 10;
        mc.seed = derive_stream(6006, r);
        mc.threads = 1;
        const McmcResult res = run_chains(rep.obs, pop, cfg.prior, mc);
        const std::vector<double> pooled = res.pooled();
        if (ci_covers(pooled, 3, 0, rep.theta[0])) ++mcmc_a;
        if (ci_covers(pooled, 3, 1, rep.theta[1])) ++mcmc_b;
    }

    const double n = double(reps.n());
    std::ostringstream detail;
    detail << "npe cov(" << fmt(npe_a / n) << "," << fmt(npe_b / n) << ") mcmc cov("
           << fmt(mcmc_a / n) << "," << fmt(mcmc_b / n) << ")";
    const bool pass =
        npe_a / n >= 0.85 && (mcmc_a < npe_a || mcmc_b < npe_b);
    return {pass, detail.str()};
}

// --- criterion 7: amortisation speed at M=500 --------------------------

Outcome criterion7() {
    RunConfig cfg = parse_run_config(
        R"({"scenario": "full", "population": {"m": 500}, "master_seed": 7001})");
    const Population pop = resolve_population(cfg);
    const SimStudyConfig study = study_config(cfg, pop);
    const TrainingSet train = generate_training_set(study, pop, 300, 7002, 0);
    const TrainingSet probe = generate_training_set(study, pop, 1, 7003, 0);
    const ObservedEpidemic& obs = probe.pairs.front().obs;

    OptConfig opt = cfg.opt;
    opt.batch = 64;
    opt.max_epochs = 5;
    opt.patience = 5;
    opt.seed = 7004;

    double worst_npe = 0.0;
    std::ostringstream detail;
    for (auto kind : {EmbedConfig::Kind::Cnn, EmbedConfig::Kind::Gnn}) {
        EmbedConfig ec = cfg.embed;
        ec.kind = kind;
        const TrainResult tr = train_estimator(train, pop, ec, cfg.flow, opt);
        const SpatialGraph graph = kind == EmbedConfig::Kind::Gnn
                                       ? knn_graph(pop, static_cast<int>(ec.knn_k))
                                       : SpatialGraph{};
        const SpatialGraph* gptr = kind == EmbedConfig::Kind::Gnn ? &graph : nullptr;
        {
            RngStream warm(7005, 0);
            posterior_sample(tr.estimator, obs, pop, 3000, warm, gptr);
        }
        double mean_t = 0.0;
        for (int r = 0; r < 3; ++r) {
            RngStream rng(7006, std::uint64_t(r));
            const double t0 = now_seconds();
            const SampleResult s = posterior_sample(tr.estimator, obs, pop, 3000, rng, gptr);
            mean_t += (now_seconds() - t0) / 3.0;
            if (s.n() == 0) return {false, "no in-domain draws at M=500"};
        }
        detail << to_string(kind) << " " << fmt(mean_t) << " s; ";
        worst_npe = std::max(worst_npe, mean_t);
    }
    if (worst_npe >= 1.0) return {false, detail.str() + "inference not under 1 s"};

    McmcConfig mc;
    mc.n_chains = 1;
    mc.iters = 50000;
    mc.burnin = 20000;
    mc.thin = 30;
    mc.seed = 7007;
    mc.threads = 1;
    const double t0 = now_seconds();
    const McmcResult res = run_chains(obs, pop, cfg.prior, mc);
    const double mcmc_t = now_seconds() - t0;
    (void)res;
    const double ratio = mcmc_t / worst_npe;
    detail << "mcmc " << fmt(mcmc_t) << " s, ratio " << fmt(ratio) << "x";
    return {ratio >= 100.0, detail.str()};
}

// --- criterion 8: SEIR durations, exposure Gibbs, end-to-end NPE --------

Outcome criterion8() {
    const std::vector<double> pmf{0.05, 0.15, 0.35, 0.45};
    {
        Population pop = Population::generate_uniform(60, 1.0, 801);
        RngStream rng(802, 0);
        std::vector<double> durations;
        durations.reserve(110000);
        const int T = 12;
        while (durations.size() < 100000) {
            const Trajectory tr = simulate_seir(pop, 6.0, 1.3, 0.01, 0.5, pmf, 5, 10, T, rng);
            for (std::size_t i = 0; i < tr.size(); ++i) {
                if (tr.infection_time[i] == kNever || tr.infection_time[i] > T - 4) continue;
                durations.push_back(double(tr.removal_time[i] - tr.infection_time[i]));
            }
        }
        durations.resize(100000);
        const double m = mean(durations);
        if (std::abs(m - 3.2) > 0.01) {
            return {false, "mean infectious period " + fmt(m)};
        }
    }

    {
        Population pop =
            Population::from_coords({0.0, 1.0, 0.5, 1.5, 0.7}, {0.0, 0.0, 0.9, 0.4, 1.6},
                                    Region{.xmin = 0, .xmax = 2, .ymin = 0, .ymax = 2});
        const double alpha = 1.2, beta = 1.3, eps = 0.08, gamma_e = 0.3;
        const std::vector<double> params{alpha, beta, eps, gamma_e};
        Trajectory traj;
        traj.T = 5;
        traj.exposure_time = {0, 1, 2, 3, kNever};
        traj.infection_time = {0, 2, 3, 4, kNever};
        traj.removal_time = {3, 5, 5, kNever, kNever};
        traj.seeds = {0};
        RngStream orng(803, 0);
        const ObservedEpidemic obs = observe(traj, Scenario::Seir, 1.0, orng);

        std::vector<std::array<int, 3>> states;
        std::vector<double> logw;
        for (int e2 : {1, 2}) {
            for (int e3 : {1, 2, 3}) {
                for (int s4 : {kNever, 1, 2, 3, 4}) {
                    Trajectory t2 = traj;
                    t2.exposure_time = {0, 1, e2, e3, s4};
                    states.push_back({e2, e3, s4});
                    logw.push_back(seir_loglik(t2, pop, alpha, beta, eps, gamma_e, pmf));
                }
            }
        }
        double best = -1e300;
        for (double v : logw) best = std::max(best, v);
        double total = 0.0;
        std::vector<double> p(logw.size());
        for (std::size_t k = 0; k < logw.size(); ++k) {
            p[k] = std::exp(logw[k] - best);
            total += p[k];
        }
        for (double& v : p) v /= total;

        const long n = 100000;
        std::map<std::array<int, 3>, long> counts;
        RngStream rng(804, 0);
        Trajectory cur = traj;
        for (long it = 0; it < n; ++it) {
            exposure_gibbs_sweep(cur, obs, pop, params, pmf, 5, rng);
            counts[{cur.exposure_time[2], cur.exposure_time[3], cur.exposure_time[4]}]++;
        }
        long seen = 0;
        for (const auto& [state, c] : counts) seen += c;
        if (seen != n) return {false, "gibbs sweep left the enumerated support"};

        // Pool cells below 10 expected counts to keep the chi-square valid.
        double chi2 = 0.0, pool_p = 0.0;
        long pool_o = 0;
        std::size_t bins = 0;
        for (std::size_t k = 0; k < states.size(); ++k) {
            const long o = counts.count(states[k]) ? counts[states[k]] : 0;
            if (n * p[k] < 10.0) {
                pool_p += p[k];
                pool_o += o;
                continue;
            }
            const double e = n * p[k];
            chi2 += (o - e) * (o - e) / e;
            ++bins;
        }
        if (pool_p > 0.0) {
            const double e = n * pool_p;
            chi2 += (pool_o - e) * (pool_o - e) / e;
            ++bins;
        }
        const double pval = chi2_sf(chi2, double(bins - 1));
        if (pval <= 0.01) return {false, "exposure gibbs chi2 p " + fmt(pval)};
    }

    RunConfig cfg = parse_run_config(
        R"({"scenario": "seir", "population": {"m": 300}, "master_seed": 8001})");
    const Population pop = resolve_population(cfg);
    const SimStudyConfig study = study_config(cfg, pop);
    const TrainingSet train = generate_training_set(study, pop, 2000, 8002, 0);
    const TrainingSet tests = generate_training_set(study, pop, 100, 8003, 0);
    OptConfig opt = cfg.opt;
    opt.seed = 8004;
    EmbedConfig ec = cfg.embed;
    ec.kind = EmbedConfig::Kind::Cnn;
    const TrainResult tr = train_estimator(train, pop, ec, cfg.flow, opt);
    const CalibrationStats s = calibrate(tr.estimator, tests, pop, 499, 8005, 10);
    std::ostringstream detail;
    detail << "seir cov(";
    bool pass = true;
    for (std::size_t d = 0; d < 4; ++d) {
        detail << (d ? "," : "") << fmt(s.coverage[d]);
        if (s.coverage[d] < 0.85) pass = false;
    }
    detail << ")";
    return {pass, "duration mean ok, gibbs ok, " + detail.str()};
}

// --- criterion 9: stage fingerprints against the golden file -----------

std::uint64_t hash_doubles(std::span<const double> v, std::uint64_t h0 = 0) {
    std::string bytes(sizeof(std::uint64_t), '\0');
    std::memcpy(bytes.data(), &h0, sizeof h0);
    bytes.resize(sizeof h0 + v.size() * sizeof(double));
    std::memcpy(bytes.data() + sizeof h0, v.data(), v.size() * sizeof(double));
    return fnv1a64(bytes);
}

std::uint64_t hash_ints(std::span<const int> v, std::uint64_t h0 = 0) {
    std::vector<double> d(v.begin(), v.end());
    return hash_doubles(d, h0);
}

std::map<std::string, std::uint64_t> run_stages(const std::string& scenario_name) {
    std::map<std::string, std::uint64_t> fp;
    const std::string cfg_text = std::string(R"({"scenario": ")") + scenario_name + R"(",
        "population": {"m": 25, "side": 1.0},
        "t_horizon": 10,
        "i0": 2,
        "embed": {"kind": "cnn", "k_emb": 8, "channels": [6, 6], "kernel": 3, "pooled_len": 4},
        "flow": {"layers": 2, "bins": 4, "hidden": 8},
        "opt": {"batch": 8, "max_epochs": 2, "patience": 2, "lr": 0.001},
        "mcmc": {"chains": 2, "iters": 300, "burnin": 100, "thin": 5},
        "n_train": 8,
        "master_seed": 90210})";
    const RunConfig cfg = parse_run_config(cfg_text);
    const Population pop = resolve_population(cfg);
    {
        std::vector<double> coords;
        for (std::size_t i = 0; i < pop.size(); ++i) {
            coords.push_back(pop.x(i));
            coords.push_back(pop.y(i));
        }
        fp["population"] = hash_doubles(coords);
    }
    const SimStudyConfig study = study_config(cfg, pop);

    // One ground-truth epidemic, drawn the same way `simulate` does.
    std::vector<double> theta;
    Trajectory traj;
    {
        RngStream rng(cfg.master_seed, derive_stream(cfg.master_seed, 0x51));
        if (cfg.scenario == Scenario::Seir) {
            const std::vector<double> th =
                sample_prior(study.prior, cfg.scenario, pop, {}, rng);
            theta = th;
            traj = simulate_seir(pop, th[0], th[1], th[2], th[3], study.culling_pmf,
                                 study.seir_seed_lo, study.seir_seed_hi, study.T, rng);
        } else {
            theta = sample_prior(study.prior, cfg.scenario, pop, study.seeds, rng);
            const RemovalModel removal = cfg.scenario == Scenario::Stoch
                                             ? RemovalModel::geometric(theta[2])
                                             : RemovalModel::fixed(study.fixed_len);
            traj = simulate_sir(pop, theta[0], theta[1], removal, study.seeds, study.T, rng);
        }
        std::uint64_t h = hash_doubles(theta);
        h = hash_ints(traj.infection_time, h);
        h = hash_ints(traj.removal_time, h);
        if (!traj.exposure_time.empty()) h = hash_ints(traj.exposure_time, h);
        fp["simulate"] = h;
    }
    RngStream obs_rng(cfg.master_seed, derive_stream(cfg.master_seed, 0x52));
    const double rho_true = cfg.scenario == Scenario::Partial ? theta[2] : 1.0;
    const ObservedEpidemic obs = observe(traj, cfg.scenario, rho_true, obs_rng);

    const TrainingSet set = generate_training_set(study, pop, cfg.n_train, 90301, 1);
    {
        std::uint64_t h = 0;
        for (const TrainingPair& p : set.pairs) {
            h = hash_doubles(p.theta, h);
            h = hash_ints(p.obs.incidence, h);
            h = hash_ints(p.obs.node_obs_time, h);
        }
        fp["trainset"] = h;
    }

    OptConfig opt = cfg.opt;
    opt.seed = 90302;
    TrainResult tr = train_estimator(set, pop, cfg.embed, cfg.flow, opt);
    {
        std::vector<ad::Parameter*> params;
        tr.estimator.collect(params);
        std::uint64_t h = 0;
        for (ad::Parameter* p : params) h = hash_doubles(p->value, h);
        h = hash_doubles(tr.train_loss, h);
        h = hash_doubles(tr.val_loss, h);
        fp["train"] = h;
    }

    {
        RngStream rng(90303, 0);
        const SampleResult s = posterior_sample(tr.estimator, obs, pop, 64, rng);
        std::uint64_t h = hash_doubles(s.draws);
        h = hash_doubles(std::vector<double>{double(s.attempted)}, h);
        fp["posterior"] = h;
    }

    {
        McmcConfig mc = cfg.mcmc;
        mc.seed = 90304;
        mc.threads = 1;
        const Trajectory* truth = cfg.scenario == Scenario::Seir ? &traj : nullptr;
        const McmcResult res = run_chains(obs, pop, cfg.prior, mc, truth);
        fp["mcmc"] = hash_doubles(res.pooled());
    }
    return fp;
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Outcome criterion9(const std::string& golden_path) {
    const std::vector<std::string> scenarios{"full", "stoch", "partial", "seir"};
    nlohmann::json computed;
    for (const std::string& sc : scenarios) {
        const auto first = run_stages(sc);
        const auto second = run_stages(sc);
        if (first != second) {
            return {false, sc + ": repeated single-threaded run changed a stage fingerprint"};
        }
        for (const auto& [stage, h] : first) computed[sc][stage] = hex64(h);
    }

    const char* regen = std::getenv("ILMNPE_REGEN_GOLDEN");
    if (regen != nullptr && std::string(regen) == "1") {
        nlohmann::json out;
        out["fingerprints"] = computed;
        std::ofstream f(golden_path);
        if (!f) return {false, "cannot write golden file " + golden_path};
        f << out.dump(2) << "\n";
        return {true, "regenerated " + golden_path};
    }

    std::ifstream f(golden_path);
    if (!f) {
        return {false, "golden file missing: " + golden_path +
                           " (run with ILMNPE_REGEN_GOLDEN=1 to create it)"};
    }
    const nlohmann::json golden = nlohmann::json::parse(f);
    std::vector<std::string> diffs;
    for (const std::string& sc : scenarios) {
        for (const auto& [stage, h] : computed[sc].items()) {
            const std::string want = golden.at("fingerprints").at(sc).at(stage).get<std::string>();
            if (want != h.get<std::string>()) diffs.push_back(sc + "/" + stage);
        }
    }
    if (!diffs.empty()) {
        std::string d = "stage fingerprints differ from golden:";
        for (const std::string& s : diffs) d += " " + s;
        return {false, d};
    }
    return {true, "reruns bit-identical; 24 stage fingerprints match golden"};
}

} // namespace

int main(int argc, char** argv) {
    std::string golden_path = "tests/golden/stages.json";
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--golden" && i + 1 < argc) {
            golden_path = argv[++i];
        } else if (!arg.empty() && arg.find_first_not_of("0123456789") == std::string::npos) {
            selected.insert(std::atoi(arg.c_str()));
        } else {
            std::fprintf(stderr, "usage: acceptance [--golden path] [criterion numbers]\n");
            return 2;
        }
    }
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

    struct Entry {
        int id;
        const char* name;
        double budget;
        std::function<Outcome()> run;
    };
    const std::vector<Entry> entries{
        {1, "likelihood enumeration and simulator agreement", 60, criterion1},
        {2, "flow round trip, normalisation, log-determinants", 60, criterion2},
        {3, "composed loss gradients vs finite differences", 300, criterion3},
        {4, "mcmc posterior vs grid enumeration", 600, criterion4},
        {5, "desk-scale calibration for both embeddings", 7200, criterion5},
        {6, "partial-observation coverage, npe vs mcmc", 14400, criterion6},
        {7, "amortised inference speed at M=500", 0, criterion7},
        {8, "seir durations, exposure gibbs, end-to-end coverage", 10800, criterion8},
        {9, "stage determinism against golden fingerprints", 0,
         [&golden_path] { return criterion9(golden_path); }},
    };

    bool all_pass = true;
    for (const Entry& e : entries) {
        if (!selected.count(e.id)) continue;
        const double t0 = now_seconds();
        Outcome out;
        try {
            out = e.run();
        } catch (const std::exception& ex) {
            out = {false, std::string("exception: ") + ex.what()};
        }
        const double elapsed = now_seconds() - t0;
        if (e.budget > 0 && elapsed >= e.budget) {
            out.pass = false;
            out.detail += "; over budget " + fmt(e.budget) + " s";
        }
        std::printf("criterion %d (%s): %s; %s [%.1f s]\n", e.id, e.name,
                    out.pass ? "PASS" : "FAIL", out.detail.c_str(), elapsed);
        std::fflush(stdout);
        if (!out.pass) all_pass = false;
    }
    return all_pass ? 0 : 1;
}
