#pragma once

#include "ilm/embed.hpp"
#include "ilm/epidemic.hpp"
#include "ilm/flow.hpp"
#include "ilm/population.hpp"
#include "ilm/priors.hpp"
#include "ilm/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ilm {

struct OptConfig {
    std::size_t batch = 128;
    double lr = 5e-4;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double val_frac = 0.1;
    std::uint64_t seed = 1;
};

// Simulation protocol for one study. SIR scenarios reuse a fixed seed set
// on a shared population; the SEIR scenario draws a fresh seed set per
// simulation, uniformly sized in [seir_seed_lo, seir_seed_hi].
struct SimStudyConfig {
    Scenario scenario = Scenario::Full;
    int T = 40;
    std::vector<std::uint32_t> seeds;
    int seir_seed_lo = 5;
    int seir_seed_hi = 10;
    PriorSpec prior;
    int fixed_len = 3;
    std::vector<double> culling_pmf = {0.05, 0.15, 0.35, 0.45};
};

struct TrainingPair {
    std::vector<double> theta;
    ObservedEpidemic obs;
};

struct TrainingSet {
    Scenario scenario = Scenario::Full;
    int T = 0;
    std::uint64_t seed = 0;
    std::vector<TrainingPair> pairs;

    std::size_t n() const { return pairs.size(); }
    std::size_t dim() const { return pairs.empty() ? 0 : pairs.front().theta.size(); }
};

// Prior-predictive draws (theta_i, y_i), one independent substream per pair
// so the set is reproducible regardless of worker count.
TrainingSet generate_training_set(const SimStudyConfig& cfg, const Population& pop, std::size_t n,
                                  std::uint64_t master_seed, unsigned threads = 0);

// Directory layout: manifest.json, thetas.csv, and one observation bundle
// per pair under pairs/NNNNNN/.
void save_training_set(const TrainingSet& set, const std::filesystem::path& dir);
TrainingSet load_training_set(const std::filesystem::path& dir);

// Amortised posterior: summary network feeding a conditional spline flow
// that operates on standardised parameters.
class PosteriorEstimator {
public:
    PosteriorEstimator() = default;
    PosteriorEstimator(Scenario scenario, const EmbedConfig& embed_cfg, const FlowConfig& flow_cfg,
                       RngStream& rng);

    Scenario scenario() const { return scenario_; }
    const EmbedConfig& embed_config() const { return embed_cfg_; }
    const FlowConfig& flow_config() const { return flow_cfg_; }
    std::size_t dim() const { return flow_cfg_.dim; }

    void set_standardisation(std::vector<double> mean, std::vector<double> sd);
    std::span<const double> theta_mean() const { return theta_mean_; }
    std::span<const double> theta_sd() const { return theta_sd_; }

    void set_fingerprint(std::uint64_t f) { fingerprint_ = f; }
    std::uint64_t fingerprint() const { return fingerprint_; }

    // Summary vector of length embed_config().k_emb. The GNN path needs a
    // spatial graph; passing null builds the k-NN graph on the fly.
    std::vector<double> embed(const ObservedEpidemic& obs, const Population& pop,
                              const SpatialGraph* graph = nullptr) const;
    ad::Var embed_graph(ad::Graph& g, const ObservedEpidemic& obs, const Population& pop,
                        const SpatialGraph* graph = nullptr);

    SplineFlow& flow() { return flow_; }
    const SplineFlow& flow() const { return flow_; }

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(nn::NamedParams& out);

    void save(const std::filesystem::path& path) const;
    static PosteriorEstimator load(const std::filesystem::path& path);

private:
    Scenario scenario_ = Scenario::Full;
    EmbedConfig embed_cfg_;
    FlowConfig flow_cfg_;
    CnnEmbedding cnn_;
    GnnEmbedding gnn_;
    SplineFlow flow_;
    std::vector<double> theta_mean_;
    std::vector<double> theta_sd_;
    std::uint64_t fingerprint_ = 0;
};

struct TrainResult {
    PosteriorEstimator estimator;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
};

// Minimises the negative mean log-density of standardised parameters under
// the flow. Deterministic given opt.seed; holds back a validation slice and
// restores the weights of the best validation epoch. The flow config's dim
// and context_dim are taken from the data and the embedding, respectively.
TrainResult train_estimator(const TrainingSet& data, const Population& pop,
                            const EmbedConfig& embed_cfg, const FlowConfig& flow_cfg,
                            const OptConfig& opt, std::uint64_t fingerprint = 0);

struct SampleResult {
    std::size_t dim = 0;
    std::size_t requested = 0;
    std::size_t attempted = 0;
    std::vector<double> draws; // row-major accepted x dim

    std::size_t n() const { return dim == 0 ? 0 : draws.size() / dim; }
    double acceptance() const {
        return attempted == 0 ? 1.0 : static_cast<double>(n()) / static_cast<double>(attempted);
    }
    bool complete() const { return n() >= requested; }
};

// Draws from the flow conditioned on the observation's summary, rejecting
// rows outside the parameter domain. Gives up after 20x oversampling, so a
// result can come back short; callers should check complete().
SampleResult posterior_sample(const PosteriorEstimator& est, const ObservedEpidemic& obs,
                              const Population& pop, std::size_t count, RngStream& rng,
                              const SpatialGraph* graph = nullptr);

} // namespace ilm
