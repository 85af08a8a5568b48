#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ilm/embed.hpp"
#include "ilm/epidemic.hpp"
#include "ilm/population.hpp"
#include "ilm/rng.hpp"
#include "ilm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <vector>

using namespace ilm;

namespace {

// Deterministic medium-sized observation for encoder tests.
struct Fixture {
    Population pop;
    ObservedEpidemic obs;
    SpatialGraph graph;
};

Fixture make_fixture(uint64_t seed, Scenario sc, double rho) {
    Population pop = Population::generate_uniform(40, 10.0, seed);
    RngStream rng(seed, 17);
    const std::vector<std::uint32_t> seeds{0, 1};
    Trajectory traj = simulate_sir(pop, 8.0, 1.0, RemovalModel::fixed(3), seeds, 20, rng);
    RngStream orng(seed, 18);
    ObservedEpidemic obs = observe(traj, sc, rho, orng);
    SpatialGraph graph = knn_graph(pop, 5);
    return Fixture{std::move(pop), std::move(obs), std::move(graph)};
}

} // namespace

TEST_CASE("embedding kind strings round-trip") {
    CHECK(embed_kind_from_string("cnn") == EmbedConfig::Kind::Cnn);
    CHECK(embed_kind_from_string("gnn") == EmbedConfig::Kind::Gnn);
    CHECK(to_string(EmbedConfig::Kind::Cnn) == "cnn");
    CHECK(to_string(EmbedConfig::Kind::Gnn) == "gnn");
    CHECK_THROWS_AS(embed_kind_from_string("mlp"), std::invalid_argument);
}

TEST_CASE("preprocess_incidence standardises the log curve") {
    const std::vector<int> inc{0, 1, 9};
    const auto out = preprocess_incidence(inc);
    std::vector<double> logs{0.0, std::log1p(1.0), std::log1p(9.0)};
    const double mu = (logs[0] + logs[1] + logs[2]) / 3.0;
    double var = 0.0;
    for (double v : logs) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / 3.0);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(out[t] == doctest::Approx((logs[t] - mu) / sd).epsilon(1e-14));
    }
    const double mean_out = std::accumulate(out.begin(), out.end(), 0.0) / 3.0;
    CHECK(mean_out == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

    CHECK(preprocess_incidence(std::vector<int>{5, 5, 5, 5}) ==
          std::vector<double>{0.0, 0.0, 0.0, 0.0});
    CHECK(preprocess_incidence(std::vector<int>{0, 0, 0}) == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("node_features encodes observation state and scaled coordinates") {
    Population pop = Population::from_coords({0.0, 2.0}, {1.0, 0.5},
                                             Region{.xmin = 0.0, .xmax = 2.0, .ymin = 0.0, .ymax = 2.0});
    ObservedEpidemic obs;
    obs.scenario = Scenario::Partial;
    obs.T = 10;
    obs.M = 2;
    obs.incidence.assign(11, 0);
    obs.node_observed = {1, 0};
    obs.node_obs_time = {4, kNever};
    obs.seeds = {0};

    const auto feats = node_features(obs, pop);
    REQUIRE(feats.size() == 8);
    const double side = pop.region().side();
    CHECK(feats[0] == 1.0);
    CHECK(feats[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(feats[2] == doctest::Approx(0.0 / side).epsilon(1e-15));
    CHECK(feats[3] == doctest::Approx(1.0 / side).epsilon(1e-15));
    CHECK(feats[4] == 0.0);
    CHECK(feats[5] == 0.0);
    CHECK(feats[6] == doctest::Approx(2.0 / side).epsilon(1e-15));
    CHECK(feats[7] == doctest::Approx(0.5 / side).epsilon(1e-15));

    ObservedEpidemic bad = obs;
    bad.M = 3;
    bad.node_observed = {1, 0, 1};
    bad.node_obs_time = {4, kNever, 2};
    CHECK_THROWS_AS(node_features(bad, pop), std::invalid_argument);
}

TEST_CASE("cnn graph and numeric paths match bit for bit") {
    auto f = make_fixture(21, Scenario::Full, 1.0);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Cnn;
    cfg.k_emb = 16;
    cfg.channels = {8, 12};
    cfg.kernel = 5;
    cfg.pooled_len = 6;
    RngStream rng(22, 0);
    CnnEmbedding emb(cfg, rng);
    CHECK(emb.out_dim() == 16);

    const auto numeric = emb.forward(f.obs);
    REQUIRE(numeric.size() == 16);

    ad::Graph g;
    ad::Var v = emb.forward_graph(g, f.obs);
    REQUIRE(g.numel(v) == 16);
    auto tape = g.val(v);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        CHECK(std::memcmp(&tape[i], &numeric[i], sizeof(double)) == 0);
    }
}

TEST_CASE("cnn embedding reacts to a five-step shift of the curve") {
    auto f = make_fixture(23, Scenario::Full, 1.0);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Cnn;
    cfg.k_emb = 16;
    cfg.channels = {8, 12};
    cfg.pooled_len = 6;
    RngStream rng(24, 0);
    CnnEmbedding emb(cfg, rng);

    ObservedEpidemic shifted = f.obs;
    const std::size_t n = shifted.incidence.size();
    REQUIRE(n > 10);
    std::vector<int> moved(n, 0);
    for (std::size_t t = 0; t + 5 < n; ++t) moved[t + 5] = f.obs.incidence[t];
    shifted.incidence = moved;

    const auto a = emb.forward(f.obs);
    const auto b = emb.forward(shifted);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-3);
}

TEST_CASE("cnn embedding is finite across scenarios and gradients check out") {
    for (auto sc : {Scenario::Full, Scenario::Stoch, Scenario::Partial}) {
        auto f = make_fixture(31 + static_cast<uint64_t>(sc), sc, 0.6);
        EmbedConfig cfg;
        cfg.kind = EmbedConfig::Kind::Cnn;
        cfg.k_emb = 8;
        cfg.channels = {6};
        cfg.pooled_len = 4;
        RngStream rng(40, 0);
        CnnEmbedding emb(cfg, rng);
        for (double v : emb.forward(f.obs)) CHECK(std::isfinite(v));
    }

    auto f = make_fixture(50, Scenario::Full, 1.0);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Cnn;
    cfg.k_emb = 4;
    cfg.channels = {3};
    cfg.kernel = 3;
    cfg.pooled_len = 3;
    RngStream rng(51, 0);
    CnnEmbedding emb(cfg, rng);

    std::vector<ad::Parameter*> params;
    emb.collect(params);
    REQUIRE(!params.empty());

    auto build = [&](ad::Graph& g) {
        ad::Var v = emb.forward_graph(g, f.obs);
        return ad::sum(g, ad::mul(g, v, v));
    };
    for (ad::Parameter* p : params) p->zero_grad();
    ad::Graph g;
    g.backward(build(g));
    const double h = 1e-5;
    for (ad::Parameter* p : params) {
        for (std::size_t j = 0; j < p->size(); ++j) {
            const double keep = p->value[j];
            p->value[j] = keep + h;
            ad::Graph ghi;
            const double hi = ghi.val(build(ghi))[0];
            p->value[j] = keep - h;
            ad::Graph glo;
            const double lo = glo.val(build(glo))[0];
            p->value[j] = keep;
            const double fd = (hi - lo) / (2.0 * h);
            const double a = p->grad[j];
            CHECK(std::abs(a - fd) <= 1e-5 * std::max(1.0, std::abs(a) + std::abs(fd)));
        }
    }
}

TEST_CASE("gnn graph and numeric paths match bit for bit") {
    auto f = make_fixture(61, Scenario::Partial, 0.7);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Gnn;
    cfg.k_emb = 12;
    cfg.knn_k = 5;
    cfg.sage_layers = 2;
    cfg.width = 10;
    RngStream rng(62, 0);
    GnnEmbedding emb(cfg, rng);
    CHECK(emb.out_dim() == 12);

    const auto numeric = emb.forward(f.obs, f.pop, f.graph);
    REQUIRE(numeric.size() == 12);

    ad::Graph g;
    ad::Var v = emb.forward_graph(g, f.obs, f.pop, f.graph);
    REQUIRE(g.numel(v) == 12);
    auto tape = g.val(v);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        CHECK(std::memcmp(&tape[i], &numeric[i], sizeof(double)) == 0);
    }

    SpatialGraph wrong = knn_graph(Population::generate_uniform(12, 5.0, 9), 3);
    CHECK_THROWS_AS(emb.forward(f.obs, f.pop, wrong), std::invalid_argument);
}

TEST_CASE("gnn embedding is invariant to node relabelling") {
    auto f = make_fixture(71, Scenario::Partial, 0.8);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Gnn;
    cfg.k_emb = 12;
    cfg.knn_k = 4;
    cfg.sage_layers = 3;
    cfg.width = 16;
    RngStream rng(72, 0);
    GnnEmbedding emb(cfg, rng);

    const auto base = emb.forward(f.obs, f.pop, knn_graph(f.pop, 4));

    // Relabel nodes with a fixed permutation: new index i holds old p[i].
    const std::size_t m = f.pop.size();
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream prng(73, 0);
    for (std::size_t i = m; i-- > 1;) {
        std::swap(perm[i], perm[prng.uniform_int(i + 1)]);
    }
    std::vector<std::size_t> inv(m);
    for (std::size_t i = 0; i < m; ++i) inv[perm[i]] = i;

    std::vector<double> xs(m), ys(m);
    for (std::size_t i = 0; i < m; ++i) {
        xs[i] = f.pop.x(perm[i]);
        ys[i] = f.pop.y(perm[i]);
    }
    Population relab = Population::from_coords(xs, ys, f.pop.region());

    ObservedEpidemic pobs = f.obs;
    for (std::size_t i = 0; i < m; ++i) {
        pobs.node_observed[i] = f.obs.node_observed[perm[i]];
        pobs.node_obs_time[i] = f.obs.node_obs_time[perm[i]];
    }
    for (auto& s : pobs.seeds) s = static_cast<std::uint32_t>(inv[s]);

    const auto moved = emb.forward(pobs, relab, knn_graph(relab, 4));
    REQUIRE(moved.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(std::abs(moved[i] - base[i]) < 1e-9);
    }
}

TEST_CASE("gnn gradients match finite differences") {
    auto f = make_fixture(81, Scenario::Partial, 0.6);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Gnn;
    cfg.k_emb = 4;
    cfg.knn_k = 3;
    cfg.sage_layers = 2;
    cfg.width = 6;
    RngStream rng(82, 0);
    GnnEmbedding emb(cfg, rng);
    SpatialGraph graph = knn_graph(f.pop, 3);

    std::vector<ad::Parameter*> params;
    emb.collect(params);
    REQUIRE(!params.empty());
    nn::NamedParams named;
    emb.collect_named("gnn", named);
    CHECK(named.size() == params.size());

    auto build = [&](ad::Graph& g) {
        ad::Var v = emb.forward_graph(g, f.obs, f.pop, graph);
        return ad::sum(g, ad::mul(g, v, v));
    };
    for (ad::Parameter* p : params) p->zero_grad();
    ad::Graph g;
    g.backward(build(g));
    const double h = 1e-5;
    for (ad::Parameter* p : params) {
        for (std::size_t j = 0; j < p->size(); ++j) {
            const double keep = p->value[j];
            p->value[j] = keep + h;
            ad::Graph ghi;
            const double hi = ghi.val(build(ghi))[0];
            p->value[j] = keep - h;
            ad::Graph glo;
            const double lo = glo.val(build(glo))[0];
            p->value[j] = keep;
            const double fd = (hi - lo) / (2.0 * h);
            const double a = p->grad[j];
            CHECK(std::abs(a - fd) <= 1e-5 * std::max(1.0, std::abs(a) + std::abs(fd)));
        }
    }
}

TEST_CASE("gnn embedding responds to the observation pattern") {
    auto f = make_fixture(91, Scenario::Partial, 0.9);
    EmbedConfig cfg;
    cfg.kind = EmbedConfig::Kind::Gnn;
    cfg.k_emb = 8;
    cfg.knn_k = 4;
    cfg.sage_layers = 2;
    cfg.width = 12;
    RngStream rng(92, 0);
    GnnEmbedding emb(cfg, rng);

    const auto base = emb.forward(f.obs, f.pop, f.graph);
    ObservedEpidemic blank = f.obs;
    std::fill(blank.node_observed.begin(), blank.node_observed.end(), std::uint8_t{0});
    std::fill(blank.node_obs_time.begin(), blank.node_obs_time.end(), kNever);
    const auto wiped = emb.forward(blank, f.pop, f.graph);
    double diff = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) diff = std::max(diff, std::abs(base[i] - wiped[i]));
    CHECK(diff > 1e-3);
}
