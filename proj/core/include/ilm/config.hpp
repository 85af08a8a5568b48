#pragma once

#include "ilm/embed.hpp"
#include "ilm/epidemic.hpp"
#include "ilm/flow.hpp"
#include "ilm/mcmc.hpp"
#include "ilm/npe.hpp"
#include "ilm/population.hpp"
#include "ilm/priors.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ilm {

struct PopulationConfig {
    std::size_t m = 100;
    double side = 1.0;
    std::string kind = "uniform"; // or "clustered"
    std::size_t n_clusters = 10;
    double spread = 0.03;
    std::string csv; // when set, loaded instead of generated
};

// One study end to end. Every field has a default, so a config file only
// names what it changes; unknown keys are rejected.
struct RunConfig {
    Scenario scenario = Scenario::Full;
    PopulationConfig population;
    int t_horizon = 40;
    int i0 = 3;
    std::vector<std::uint32_t> seed_ids; // empty: drawn from master_seed
    int seir_seed_lo = 5;
    int seir_seed_hi = 10;
    int fixed_len = 3;
    std::vector<double> culling_pmf = {0.05, 0.15, 0.35, 0.45};
    PriorSpec prior;
    EmbedConfig embed;
    FlowConfig flow;
    OptConfig opt;
    McmcConfig mcmc;
    std::size_t n_train = 20000;
    std::size_t n_test = 1000;
    std::size_t n_posterior = 3000;
    std::uint64_t master_seed = 1;
    std::string out_dir = "out";
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Sorted-key JSON dump of every field, defaults included, so two configs
// fingerprint equal exactly when they resolve to the same study.
std::string canonical_json(const RunConfig& cfg);
std::uint64_t config_fingerprint(const RunConfig& cfg);

// Loads population.csv when set, otherwise generates deterministically from
// the master seed.
Population resolve_population(const RunConfig& cfg);

// Fixed initial-infective set for the SIR scenarios: the configured ids, or
// i0 ids drawn without replacement from the master seed.
std::vector<std::uint32_t> resolve_seed_ids(const RunConfig& cfg, std::size_t pop_size);

SimStudyConfig study_config(const RunConfig& cfg, const Population& pop);

// Small provenance record written next to every artefact. The fingerprint
// is config_fingerprint(cfg) for config-driven commands and the checkpoint's
// stored fingerprint for `infer`.
void write_manifest(const std::filesystem::path& path, const std::string& command,
                    std::uint64_t fingerprint, std::uint64_t seed, double wall_seconds,
                    const std::vector<std::pair<std::string, std::string>>& extra = {});

} // namespace ilm
