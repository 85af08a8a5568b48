#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ilm/config.hpp"
#include "ilm/errors.hpp"
#include "ilm/eval.hpp"
#include "ilm/npe.hpp"
#include "ilm/population.hpp"
#include "ilm/priors.hpp"
#include "ilm/rng.hpp"
#include "ilm/stats.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace ilm;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ilmnpe_test_npe" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SimStudyConfig full_study(int t_horizon) {
    SimStudyConfig cfg;
    cfg.scenario = Scenario::Full;
    cfg.T = t_horizon;
    cfg.seeds = {0, 1, 2};
    return cfg;
}

bool obs_equal(const ObservedEpidemic& a, const ObservedEpidemic& b) {
    return a.scenario == b.scenario && a.T == b.T && a.M == b.M && a.incidence == b.incidence &&
           a.node_observed == b.node_observed && a.node_obs_time == b.node_obs_time &&
           a.seeds == b.seeds;
}

bool params_bit_equal(PosteriorEstimator& a, PosteriorEstimator& b) {
    std::vector<ad::Parameter*> pa, pb;
    a.collect(pa);
    b.collect(pb);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->value.size() != pb[i]->value.size()) return false;
        if (std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                        pa[i]->value.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

EmbedConfig small_cnn() {
    EmbedConfig e;
    e.kind = EmbedConfig::Kind::Cnn;
    e.k_emb = 12;
    e.channels = {8, 8};
    e.kernel = 5;
    e.pooled_len = 6;
    return e;
}

FlowConfig small_flow() {
    FlowConfig f;
    f.layers = 3;
    f.bins = 5;
    f.hidden = 16;
    return f;
}

} // namespace

TEST_CASE("training-set generation is deterministic and thread-invariant") {
    Population pop = Population::generate_uniform(50, 10.0, 42);
    const SimStudyConfig cfg = full_study(30);

    const TrainingSet a = generate_training_set(cfg, pop, 24, 7, 1);
    const TrainingSet b = generate_training_set(cfg, pop, 24, 7, 2);
    const TrainingSet c = generate_training_set(cfg, pop, 24, 8, 1);

    REQUIRE(a.n() == 24);
    CHECK(a.scenario == Scenario::Full);
    CHECK(a.T == 30);
    CHECK(a.seed == 7);
    CHECK(a.dim() == 2);

    for (std::size_t i = 0; i < a.n(); ++i) {
        CHECK(a.pairs[i].theta == b.pairs[i].theta);
        CHECK(obs_equal(a.pairs[i].obs, b.pairs[i].obs));
        CHECK(a.pairs[i].obs.seeds == std::vector<std::uint32_t>{0, 1, 2});
        CHECK(a.pairs[i].obs.T == 30);
        for (double v : a.pairs[i].theta) CHECK(v > 0.0);
    }
    bool any_diff = false;
    for (std::size_t i = 0; i < a.n(); ++i) {
        if (a.pairs[i].theta != c.pairs[i].theta) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("seir generation draws a fresh seed set per pair within bounds") {
    Population pop = Population::generate_uniform(60, 10.0, 43);
    SimStudyConfig cfg;
    cfg.scenario = Scenario::Seir;
    cfg.T = 25;
    cfg.seir_seed_lo = 5;
    cfg.seir_seed_hi = 10;

    const TrainingSet set = generate_training_set(cfg, pop, 30, 11, 1);
    REQUIRE(set.n() == 30);
    CHECK(set.dim() == 4);
    bool sizes_vary = false;
    std::size_t first = set.pairs[0].obs.seeds.size();
    for (const TrainingPair& pair : set.pairs) {
        const auto& seeds = pair.obs.seeds;
        CHECK(seeds.size() >= 5);
        CHECK(seeds.size() <= 10);
        CHECK(std::is_sorted(seeds.begin(), seeds.end()));
        CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
        for (auto s : seeds) CHECK(s < 60);
        if (seeds.size() != first) sizes_vary = true;
    }
    CHECK(sizes_vary);
}

TEST_CASE("training set round-trips through its directory layout") {
    Population pop = Population::generate_uniform(40, 10.0, 44);
    const TrainingSet set = generate_training_set(full_study(20), pop, 9, 13, 1);

    const fs::path dir = tmp_dir("trainset");
    save_training_set(set, dir);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "thetas.csv"));
    CHECK(fs::exists(dir / "pairs" / "000000"));

    const TrainingSet back = load_training_set(dir);
    CHECK(back.scenario == set.scenario);
    CHECK(back.T == set.T);
    CHECK(back.seed == set.seed);
    REQUIRE(back.n() == set.n());
    for (std::size_t i = 0; i < set.n(); ++i) {
        CHECK(back.pairs[i].theta == set.pairs[i].theta);
        CHECK(obs_equal(back.pairs[i].obs, set.pairs[i].obs));
    }

    CHECK_THROWS_AS(load_training_set(dir / "nowhere"), InputError);
}

TEST_CASE("estimator checkpoints round-trip bit-exactly") {
    for (auto kind : {EmbedConfig::Kind::Cnn, EmbedConfig::Kind::Gnn}) {
        CAPTURE(to_string(kind));
        EmbedConfig ec = small_cnn();
        ec.kind = kind;
        ec.knn_k = 4;
        ec.sage_layers = 2;
        ec.width = 10;
        FlowConfig flc = small_flow();
        flc.dim = 3;
        flc.context_dim = ec.k_emb;

        RngStream rng(55, 0);
        PosteriorEstimator est(Scenario::Partial, ec, flc, rng);
        est.set_standardisation({1.5, -0.25, 0.5}, {0.4, 2.0, 0.2});
        est.set_fingerprint(0xDEADBEEFCAFEULL);

        const fs::path path = tmp_dir("ckpt") / (to_string(kind) + ".bin");
        est.save(path);
        PosteriorEstimator back = PosteriorEstimator::load(path);

        CHECK(back.scenario() == Scenario::Partial);
        CHECK(back.embed_config().kind == kind);
        CHECK(back.embed_config().k_emb == ec.k_emb);
        CHECK(back.embed_config().channels == ec.channels);
        CHECK(back.flow_config().layers == flc.layers);
        CHECK(back.flow_config().bins == flc.bins);
        CHECK(back.dim() == 3);
        CHECK(back.fingerprint() == 0xDEADBEEFCAFEULL);
        CHECK(std::vector<double>(back.theta_mean().begin(), back.theta_mean().end()) ==
              std::vector<double>{1.5, -0.25, 0.5});
        CHECK(std::vector<double>(back.theta_sd().begin(), back.theta_sd().end()) ==
              std::vector<double>{0.4, 2.0, 0.2});
        CHECK(params_bit_equal(est, back));
    }

    RngStream rng(56, 0);
    FlowConfig flc = small_flow();
    flc.dim = 2;
    flc.context_dim = 12;
    PosteriorEstimator est(Scenario::Full, small_cnn(), flc, rng);
    CHECK_THROWS_AS(est.set_standardisation({1.0}, {1.0}), ConfigError);
    CHECK_THROWS_AS(est.set_standardisation({1.0, 1.0}, {1.0, 0.0}), ConfigError);

    const fs::path dir = tmp_dir("ckpt_bad");
    CHECK_THROWS_AS(PosteriorEstimator::load(dir / "missing.bin"), InputError);
    est.save(dir / "whole.bin");
    {
        std::ifstream in(dir / "whole.bin", std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(dir / "cut.bin", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(PosteriorEstimator::load(dir / "cut.bin"), ConfigError);
}

TEST_CASE("training is deterministic in seed and data") {
    Population pop = Population::generate_uniform(40, 10.0, 45);
    const TrainingSet set = generate_training_set(full_study(20), pop, 64, 17, 0);

    OptConfig opt;
    opt.batch = 32;
    opt.max_epochs = 3;
    opt.patience = 10;
    opt.lr = 1e-3;
    opt.seed = 99;

    TrainResult r1 = train_estimator(set, pop, small_cnn(), small_flow(), opt, 123);
    TrainResult r2 = train_estimator(set, pop, small_cnn(), small_flow(), opt, 123);
    CHECK(r1.train_loss == r2.train_loss);
    CHECK(r1.val_loss == r2.val_loss);
    CHECK(r1.best_epoch == r2.best_epoch);
    CHECK(params_bit_equal(r1.estimator, r2.estimator));
    CHECK(r1.estimator.fingerprint() == 123);
    CHECK(r1.estimator.dim() == 2);
    CHECK(r1.estimator.flow_config().context_dim == small_cnn().k_emb);

    OptConfig other = opt;
    other.seed = 100;
    TrainResult r3 = train_estimator(set, pop, small_cnn(), small_flow(), other, 123);
    CHECK(!params_bit_equal(r1.estimator, r3.estimator));

    // Checkpoint of a trained estimator reproduces its behaviour exactly.
    const fs::path path = tmp_dir("trained") / "est.bin";
    r1.estimator.save(path);
    PosteriorEstimator back = PosteriorEstimator::load(path);
    const auto& probe = set.pairs.front().obs;
    const auto e1 = r1.estimator.embed(probe, pop);
    const auto e2 = back.embed(probe, pop);
    REQUIRE(e1.size() == e2.size());
    CHECK(std::memcmp(e1.data(), e2.data(), e1.size() * sizeof(double)) == 0);
}

TEST_CASE("training rejects malformed inputs") {
    Population pop = Population::generate_uniform(30, 10.0, 46);
    TrainingSet set = generate_training_set(full_study(15), pop, 8, 19, 0);

    OptConfig opt;
    opt.batch = 4;
    opt.max_epochs = 1;

    TrainingSet tiny = set;
    tiny.pairs.resize(1);
    CHECK_THROWS_AS(train_estimator(tiny, pop, small_cnn(), small_flow(), opt), ConfigError);

    TrainingSet broken = set;
    broken.pairs[3].theta.push_back(1.0);
    CHECK_THROWS_AS(train_estimator(broken, pop, small_cnn(), small_flow(), opt), ConfigError);

    OptConfig bad = opt;
    bad.batch = 0;
    CHECK_THROWS_AS(train_estimator(set, pop, small_cnn(), small_flow(), bad), ConfigError);
    bad = opt;
    bad.val_frac = 1.0;
    CHECK_THROWS_AS(train_estimator(set, pop, small_cnn(), small_flow(), bad), ConfigError);
}

TEST_CASE("tiny training set triggers early stopping") {
    Population pop = Population::generate_uniform(40, 10.0, 47);
    const TrainingSet set = generate_training_set(full_study(20), pop, 32, 23, 0);

    OptConfig opt;
    opt.batch = 16;
    opt.max_epochs = 200;
    opt.patience = 5;
    opt.lr = 5e-3;
    opt.seed = 3;

    TrainResult r = train_estimator(set, pop, small_cnn(), small_flow(), opt);
    CHECK(r.train_loss.size() == r.val_loss.size());
    CHECK(r.train_loss.size() < opt.max_epochs);
    CHECK(r.train_loss.size() <= r.best_epoch + opt.patience + 1);
    CHECK(r.best_epoch < r.train_loss.size());
}

TEST_CASE("training bites into the loss on a full-information study") {
    Population pop = Population::generate_uniform(50, 10.0, 48);
    const TrainingSet set = generate_training_set(full_study(30), pop, 2000, 29, 0);

    EmbedConfig ec = small_cnn();
    ec.k_emb = 16;
    ec.channels = {16, 16};

    OptConfig opt;
    opt.batch = 128;
    opt.max_epochs = 40;
    opt.patience = 40;
    opt.lr = 1e-3;
    opt.seed = 5;

    TrainResult r = train_estimator(set, pop, ec, small_flow(), opt);
    // The untrained flow is the identity, so the starting loss is the
    // standard-normal NLL of the standardised parameters, about
    // dim/2 * log(2*pi) + dim/2 = 2.84 nats for two coordinates.
    const double best = *std::min_element(r.val_loss.begin(), r.val_loss.end());
    CHECK(best <= 2.84 - 0.5);

    // The trained posterior concentrates near the truth on a fresh case.
    const TrainingSet probe = generate_training_set(full_study(30), pop, 40, 31, 0);
    RngStream srng(32, 0);
    double mae_alpha = 0.0, mae_beta = 0.0, prior_alpha = 0.0, prior_beta = 0.0;
    const PriorSpec spec;
    RngStream prng(33, 0);
    for (const TrainingPair& pair : probe.pairs) {
        SampleResult s = posterior_sample(r.estimator, pair.obs, pop, 400, srng);
        REQUIRE(s.complete());
        const auto med = posterior_median(s.draws, 2);
        mae_alpha += std::abs(med[0] - pair.theta[0]);
        mae_beta += std::abs(med[1] - pair.theta[1]);
        const auto ref = sample_prior(spec, Scenario::Full, pop, probe.pairs[0].obs.seeds, prng);
        prior_alpha += std::abs(ref[0] - pair.theta[0]);
        prior_beta += std::abs(ref[1] - pair.theta[1]);
    }
    CHECK(mae_alpha < prior_alpha);
    CHECK(mae_beta < prior_beta);
}

TEST_CASE("posterior sampling rejects out-of-domain rows deterministically") {
    RngStream rng(60, 0);
    FlowConfig flc = small_flow();
    flc.dim = 2;
    flc.context_dim = 12;
    PosteriorEstimator est(Scenario::Full, small_cnn(), flc, rng);

    Population pop = Population::generate_uniform(30, 10.0, 61);
    const TrainingSet set = generate_training_set(full_study(15), pop, 1, 37, 0);
    const ObservedEpidemic& obs = set.pairs.front().obs;

    est.set_standardisation({1.5, 1.5}, {0.3, 0.3});
    RngStream s1(62, 0), s2(62, 0), s3(63, 0);
    SampleResult a = posterior_sample(est, obs, pop, 500, s1);
    SampleResult b = posterior_sample(est, obs, pop, 500, s2);
    SampleResult c = posterior_sample(est, obs, pop, 500, s3);
    CHECK(a.complete());
    CHECK(a.n() == 500);
    CHECK(a.dim == 2);
    CHECK(a.acceptance() <= 1.0);
    CHECK(a.draws == b.draws);
    CHECK(a.attempted == b.attempted);
    CHECK(a.draws != c.draws);
    for (std::size_t i = 0; i < a.n(); ++i) {
        CHECK(a.draws[i * 2] > 0.0);
        CHECK(a.draws[i * 2 + 1] > 0.0);
    }

    // A standardisation far in the negative quadrant rejects everything.
    est.set_standardisation({-50.0, -50.0}, {0.01, 0.01});
    RngStream s4(64, 0);
    SampleResult none = posterior_sample(est, obs, pop, 50, s4);
    CHECK(none.n() == 0);
    CHECK(!none.complete());
    CHECK(none.acceptance() == 0.0);
    CHECK(none.attempted == 20 * 50);

    RngStream s5(65, 0);
    CHECK_THROWS_AS(posterior_sample(est, obs, pop, 0, s5), ConfigError);
}

TEST_CASE("posterior median and mean absolute error oracles") {
    // Rows (1,10), (3,30), (2,20): per-coordinate medians are 2 and 20.
    const std::vector<double> draws{1, 10, 3, 30, 2, 20};
    CHECK(posterior_median(draws, 2) == std::vector<double>{2.0, 20.0});
    const std::vector<double> even{1, 2, 3, 4};
    CHECK(posterior_median(even, 1) == std::vector<double>{2.5});

    const std::vector<double> est{1.0, 2.0, 2.2, 3.0};
    const std::vector<double> tru{1.2, 2.0, 2.0, 3.0};
    const auto mae = mean_absolute_error(est, tru, 2);
    CHECK(mae[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(mae[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("interval summary coverage and width oracles") {
    RngStream rng(70, 0);
    std::vector<double> uniform(100000);
    for (double& v : uniform) v = rng.uniform01();

    {
        const std::vector<std::vector<double>> draws{uniform};
        const auto s = interval_summary(draws, std::vector<double>{0.5}, 1);
        CHECK(s.coverage[0] == 1.0);
        CHECK(s.mean_width[0] == doctest::Approx(0.95).epsilon(0.01));
    }
    {
        const std::vector<std::vector<double>> draws{std::vector<double>(50, 0.7)};
        const auto s = interval_summary(draws, std::vector<double>{0.7}, 1);
        CHECK(s.coverage[0] == 1.0);
        CHECK(s.mean_width[0] == 0.0);
    }
    {
        const std::vector<std::vector<double>> draws{uniform};
        const auto s = interval_summary(draws, std::vector<double>{2.0}, 1);
        CHECK(s.coverage[0] == 0.0);
    }
    {
        // Two coordinates separate cleanly: the first covers, the second not.
        std::vector<double> two(2000);
        RngStream r2(71, 0);
        for (std::size_t i = 0; i < 1000; ++i) {
            two[i * 2] = r2.uniform01();
            two[i * 2 + 1] = r2.uniform01();
        }
        const std::vector<std::vector<double>> draws{two};
        const auto s = interval_summary(draws, std::vector<double>{0.5, -1.0}, 2);
        CHECK(s.coverage == std::vector<double>{1.0, 0.0});
    }
}

TEST_CASE("sbc ranks count draws below the truth and detect calibration") {
    {
        const std::vector<std::vector<double>> draws{{0.1, 0.5, 0.9}};
        const auto r = sbc_ranks(draws, std::vector<double>{0.6}, 1, 2);
        CHECK(r.ranks[0][0] == 2);
        CHECK(r.n_draws[0] == 3);
    }

    const std::size_t n_test = 1500, S = 19;
    RngStream rng(72, 0);
    std::vector<std::vector<double>> draws(n_test);
    std::vector<double> truths(n_test * 2);
    for (std::size_t t = 0; t < n_test; ++t) {
        draws[t].resize(S * 2);
        for (double& v : draws[t]) v = rng.uniform01();
        truths[t * 2] = rng.uniform01();
        truths[t * 2 + 1] = rng.uniform01();
    }
    const auto calibrated = sbc_ranks(draws, truths, 2, 20);
    REQUIRE(calibrated.p_values.size() == 2);
    CHECK(calibrated.p_values[0] > 0.001);
    CHECK(calibrated.p_values[1] > 0.001);

    std::vector<double> high(truths);
    for (double& v : high) v = 1.5;
    const auto broken = sbc_ranks(draws, high, 2, 20);
    CHECK(broken.p_values[0] < 1e-6);
    for (std::size_t t = 0; t < n_test; ++t) CHECK(broken.ranks[0][t] == S);
}

TEST_CASE("posterior predictive bands wrap the generating curve") {
    Population pop = Population::generate_uniform(60, 10.0, 80);
    RngStream rng(81, 0);
    const std::vector<std::uint32_t> seeds{0, 1};
    Trajectory traj = simulate_sir(pop, 6.0, 1.3, RemovalModel::fixed(3), seeds, 25, rng);
    RngStream orng(82, 0);
    ObservedEpidemic obs = observe(traj, Scenario::Full, 1.0, orng);

    SimStudyConfig sim = full_study(25);
    sim.seeds = seeds;

    std::vector<double> truth_rows;
    for (int i = 0; i < 200; ++i) {
        truth_rows.push_back(6.0);
        truth_rows.push_back(1.3);
    }
    const PpcBand band = posterior_predictive(obs, pop, truth_rows, 2, sim, 400, 7);
    REQUIRE(band.lo.size() == obs.incidence.size());
    REQUIRE(band.med.size() == obs.incidence.size());
    REQUIRE(band.hi.size() == obs.incidence.size());
    REQUIRE(band.observed.size() == obs.incidence.size());

    std::size_t inside = 0;
    for (std::size_t t = 0; t < band.lo.size(); ++t) {
        CHECK(band.lo[t] <= band.med[t]);
        CHECK(band.med[t] <= band.hi[t]);
        CHECK(band.observed[t] == obs.incidence[t]);
        if (band.observed[t] >= band.lo[t] - 1e-12 && band.observed[t] <= band.hi[t] + 1e-12) {
            ++inside;
        }
    }
    CHECK(static_cast<double>(inside) >= 0.85 * static_cast<double>(band.lo.size()));

    const PpcBand again = posterior_predictive(obs, pop, truth_rows, 2, sim, 400, 7);
    CHECK(again.lo == band.lo);
    CHECK(again.med == band.med);
    CHECK(again.hi == band.hi);

    // A far smaller transmission rate pulls the predictive band down.
    std::vector<double> weak_rows;
    for (int i = 0; i < 200; ++i) {
        weak_rows.push_back(0.5);
        weak_rows.push_back(1.3);
    }
    const PpcBand weak = posterior_predictive(obs, pop, weak_rows, 2, sim, 400, 7);
    double band_sum = 0.0, weak_sum = 0.0;
    for (std::size_t t = 0; t < band.med.size(); ++t) {
        band_sum += band.med[t];
        weak_sum += weak.med[t];
    }
    CHECK(weak_sum < band_sum);

    const std::vector<double> one_row{6.0, 1.3};
    const PpcBand single = posterior_predictive(obs, pop, one_row, 2, sim, 100, 9);
    for (std::size_t t = 0; t < single.lo.size(); ++t) {
        CHECK(single.lo[t] <= single.hi[t]);
        CHECK(std::isfinite(single.med[t]));
    }
}

TEST_CASE("posterior predictive thins replicates in the partial scenario") {
    Population pop = Population::generate_uniform(60, 10.0, 85);
    RngStream rng(86, 0);
    const std::vector<std::uint32_t> seeds{0, 1};
    Trajectory traj = simulate_sir(pop, 6.0, 1.3, RemovalModel::fixed(3), seeds, 25, rng);
    RngStream orng(87, 0);
    ObservedEpidemic obs = observe(traj, Scenario::Partial, 0.7, orng);

    SimStudyConfig sim = full_study(25);
    sim.scenario = Scenario::Partial;
    sim.seeds = seeds;

    std::vector<double> rows;
    for (int i = 0; i < 200; ++i) {
        rows.push_back(6.0);
        rows.push_back(1.3);
        rows.push_back(0.7);
    }
    const PpcBand band = posterior_predictive(obs, pop, rows, 3, sim, 400, 10);
    std::size_t inside = 0;
    for (std::size_t t = 0; t < band.lo.size(); ++t) {
        CHECK(band.lo[t] <= band.med[t]);
        CHECK(band.med[t] <= band.hi[t]);
        if (band.observed[t] >= band.lo[t] - 1e-12 && band.observed[t] <= band.hi[t] + 1e-12) {
            ++inside;
        }
    }
    CHECK(static_cast<double>(inside) >= 0.75 * static_cast<double>(band.lo.size()));
}

TEST_CASE("run config parses defaults, overrides, and rejects unknown keys") {
    const RunConfig d = parse_run_config("{}");
    CHECK(d.scenario == Scenario::Full);
    CHECK(d.population.m == 100);
    CHECK(d.population.kind == "uniform");
    CHECK(d.t_horizon == 40);
    CHECK(d.i0 == 3);
    CHECK(d.fixed_len == 3);
    CHECK(d.culling_pmf == std::vector<double>{0.05, 0.15, 0.35, 0.45});
    CHECK(d.n_train == 20000);
    CHECK(d.opt.batch == 128);
    CHECK(d.opt.lr == 5e-4);
    CHECK(d.mcmc.n_chains == 3);
    CHECK(d.mcmc.iters == 50000);
    CHECK(d.mcmc.burnin == 20000);
    CHECK(d.mcmc.thin == 30);
    CHECK(d.master_seed == 1);

    const RunConfig o = parse_run_config(R"({
        "scenario": "seir",
        "population": {"m": 200, "kind": "clustered", "n_clusters": 4, "spread": 0.05},
        "t_horizon": 60,
        "prior": {"beta_shape": 7.0},
        "embed": {"kind": "gnn", "width": 48},
        "flow": {"layers": 4},
        "opt": {"batch": 64},
        "mcmc": {"iters": 1000, "burnin": 200, "thin": 5},
        "n_train": 500,
        "master_seed": 9
    })");
    CHECK(o.scenario == Scenario::Seir);
    CHECK(o.population.m == 200);
    CHECK(o.population.kind == "clustered");
    CHECK(o.t_horizon == 60);
    CHECK(o.prior.beta_shape == 7.0);
    CHECK(o.embed.kind == EmbedConfig::Kind::Gnn);
    CHECK(o.embed.width == 48);
    CHECK(o.flow.layers == 4);
    CHECK(o.opt.batch == 64);
    CHECK(o.mcmc.iters == 1000);
    CHECK(o.n_train == 500);
    CHECK(o.master_seed == 9);

    CHECK_THROWS_AS(parse_run_config("{\"bogus\": 1}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"population\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"prior\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"embed\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"flow\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"opt\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"mcmc\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"scenario\": \"sis\"}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"population\": {\"kind\": \"grid\"}}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{\"t_horizon\": \"many\"}"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("not json"), ConfigError);
}

TEST_CASE("config fingerprints depend on content, not formatting") {
    const RunConfig a = parse_run_config("{\"t_horizon\": 50, \"n_train\": 123}");
    const RunConfig b = parse_run_config("{\n  \"n_train\": 123,\n  \"t_horizon\":   50\n}");
    CHECK(config_fingerprint(a) == config_fingerprint(b));
    CHECK(canonical_json(a) == canonical_json(b));

    const RunConfig c = parse_run_config("{\"t_horizon\": 51, \"n_train\": 123}");
    CHECK(config_fingerprint(a) != config_fingerprint(c));

    const RunConfig d = parse_run_config("{}");
    CHECK(config_fingerprint(d) == config_fingerprint(parse_run_config(canonical_json(d))));
}

TEST_CASE("population and seed resolution follow the config") {
    RunConfig cfg = parse_run_config("{\"population\": {\"m\": 30, \"side\": 5.0}}");
    Population uni = resolve_population(cfg);
    CHECK(uni.size() == 30);
    Population uni2 = resolve_population(cfg);
    CHECK(uni.x(7) == uni2.x(7));

    RunConfig clu = parse_run_config(
        "{\"population\": {\"m\": 40, \"kind\": \"clustered\", \"n_clusters\": 5, \"spread\": 0.1}}");
    CHECK(resolve_population(clu).size() == 40);

    const fs::path dir = tmp_dir("popcsv");
    uni.save_csv(dir / "pop.csv");
    RunConfig viacsv = parse_run_config("{\"population\": {\"csv\": \"" +
                                        (dir / "pop.csv").string() + "\"}}");
    Population loaded = resolve_population(viacsv);
    REQUIRE(loaded.size() == 30);
    CHECK(loaded.x(11) == uni.x(11));
    CHECK(loaded.y(11) == uni.y(11));

    RunConfig ids = parse_run_config("{\"seed_ids\": [7, 2]}");
    CHECK(resolve_seed_ids(ids, 100) == std::vector<std::uint32_t>{2, 7});
    CHECK_THROWS_AS(resolve_seed_ids(ids, 5), ConfigError);
    RunConfig dup = parse_run_config("{\"seed_ids\": [3, 3]}");
    CHECK_THROWS_AS(resolve_seed_ids(dup, 100), ConfigError);

    RunConfig drawn = parse_run_config("{\"i0\": 4}");
    const auto s1 = resolve_seed_ids(drawn, 50);
    const auto s2 = resolve_seed_ids(drawn, 50);
    REQUIRE(s1.size() == 4);
    CHECK(s1 == s2);
    for (auto v : s1) CHECK(v < 50);
    std::vector<std::uint32_t> sorted = s1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    RunConfig drawn2 = parse_run_config("{\"i0\": 4, \"master_seed\": 2}");
    CHECK(resolve_seed_ids(drawn2, 50) != s1);

    RunConfig study = parse_run_config("{\"scenario\": \"partial\", \"i0\": 2, \"t_horizon\": 33}");
    Population pop = resolve_population(study);
    const SimStudyConfig sc = study_config(study, pop);
    CHECK(sc.scenario == Scenario::Partial);
    CHECK(sc.T == 33);
    CHECK(sc.seeds == resolve_seed_ids(study, pop.size()));
    CHECK(sc.fixed_len == study.fixed_len);
    CHECK(sc.culling_pmf == study.culling_pmf);

    RunConfig seir = parse_run_config("{\"scenario\": \"seir\"}");
    const SimStudyConfig seirsc = study_config(seir, resolve_population(seir));
    CHECK(seirsc.seeds.empty());
    CHECK(seirsc.seir_seed_lo == 5);
    CHECK(seirsc.seir_seed_hi == 10);
}

TEST_CASE("manifests record command, fingerprint, and extras") {
    const fs::path dir = tmp_dir("manifest");
    write_manifest(dir / "manifest.json", "simulate", 0xABCD, 42, 1.5,
                   {{"n_pairs", "2000"}, {"note", "smoke"}});
    std::ifstream in(dir / "manifest.json");
    REQUIRE(in.good());
    const nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j.at("command").get<std::string>() == "simulate");
    CHECK(j.at("fingerprint").get<std::uint64_t>() == 0xABCD);
    CHECK(j.at("seed").get<std::uint64_t>() == 42);
    CHECK(j.at("wall_seconds").get<double>() == 1.5);
    CHECK(j.at("n_pairs").get<std::string>() == "2000");
    CHECK(j.at("note").get<std::string>() == "smoke");
}
