#include "ilm/config.hpp"
#include "ilm/errors.hpp"
#include "ilm/eval.hpp"
#include "ilm/io.hpp"
#include "ilm/mcmc.hpp"
#include "ilm/npe.hpp"
#include "ilm/stats.hpp"
#include "ilm/threads.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ilm;
namespace fs = std::filesystem;

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// (parent, index) pairs for every stream the CLI opens, all hanging off the
// config's master seed so reruns are bit-identical.
constexpr std::uint64_t kSimulateTag = 2;
constexpr std::uint64_t kTrainSetTag = 3;
constexpr std::uint64_t kInferTag = 4;
constexpr std::uint64_t kPpcTag = 5;
constexpr std::uint64_t kBenchTag = 6;
constexpr std::uint64_t kEvalTag = 7;

std::vector<double> parse_param_list(const std::string& csv, Scenario scenario) {
    const std::vector<std::string> parts = split(csv, ',');
    if (parts.size() != scenario_dim(scenario)) {
        throw ConfigError("expected " + std::to_string(scenario_dim(scenario)) +
                          " comma-separated parameters for scenario " +
                          scenario_to_string(scenario));
    }
    std::vector<double> out;
    for (const std::string& p : parts) out.push_back(parse_double(trim(p), "params"));
    return out;
}

Population population_for(const RunConfig& cfg, const std::string& pop_path) {
    if (!pop_path.empty()) return Population::load_csv(pop_path);
    return resolve_population(cfg);
}

void write_draws_csv(const fs::path& path, std::span<const std::string> names,
                     std::span<const double> draws) {
    const std::size_t dim = names.size();
    std::ostringstream out;
    for (std::size_t d = 0; d < dim; ++d) out << (d > 0 ? "," : "") << names[d];
    out << '\n';
    for (std::size_t r = 0; r < draws.size() / dim; ++r) {
        for (std::size_t d = 0; d < dim; ++d) {
            out << (d > 0 ? "," : "") << format_double(draws[r * dim + d]);
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

std::vector<double> read_draws_csv(const fs::path& path, Scenario scenario) {
    const std::vector<std::string> names = scenario_param_names(scenario);
    std::string header;
    for (std::size_t d = 0; d < names.size(); ++d) header += (d > 0 ? "," : "") + names[d];
    const auto rows = read_csv(path, header);
    if (rows.empty()) throw ConfigError(path.string() + ": no draws");
    std::vector<double> draws;
    draws.reserve(rows.size() * names.size());
    for (const auto& row : rows) {
        for (std::size_t d = 0; d < names.size(); ++d) {
            draws.push_back(parse_double(row[d], "draw " + names[d]));
        }
    }
    return draws;
}

// --- subcommand bodies ------------------------------------------------

int cmd_gen_pop(const std::string& config_path, const std::string& out_dir,
                const std::string& gen_uniform, const std::string& gen_clustered,
                const std::string& pop_path, std::uint64_t seed, bool seed_set) {
    Timer timer;
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (seed_set) cfg.master_seed = seed;

    Population pop = [&] {
        if (!pop_path.empty()) return Population::load_csv(pop_path);
        if (!gen_uniform.empty()) {
            const auto parts = split(gen_uniform, ',');
            if (parts.size() != 2) throw ConfigError("--gen-uniform expects M,side");
            cfg.population.kind = "uniform";
            cfg.population.m = static_cast<std::size_t>(parse_int(parts[0], "gen-uniform M"));
            cfg.population.side = parse_double(parts[1], "gen-uniform side");
            return resolve_population(cfg);
        }
        if (!gen_clustered.empty()) {
            const auto parts = split(gen_clustered, ',');
            if (parts.size() != 3) throw ConfigError("--gen-clustered expects M,k,spread");
            cfg.population.kind = "clustered";
            cfg.population.m = static_cast<std::size_t>(parse_int(parts[0], "gen-clustered M"));
            cfg.population.n_clusters =
                static_cast<std::size_t>(parse_int(parts[1], "gen-clustered k"));
            cfg.population.spread = parse_double(parts[2], "gen-clustered spread");
            return resolve_population(cfg);
        }
        if (config_path.empty()) {
            throw ConfigError("gen-pop needs --config, --population, or a --gen-* flag");
        }
        return resolve_population(cfg);
    }();

    ensure_dir(out_dir);
    pop.save_csv(fs::path(out_dir) / "population.csv");
    write_manifest(fs::path(out_dir) / "manifest.json", "gen-pop", config_fingerprint(cfg),
                   cfg.master_seed, timer.seconds(),
                   {{"m", std::to_string(pop.size())}, {"kind", cfg.population.kind}});
    std::cout << "wrote " << (fs::path(out_dir) / "population.csv").string() << " (M="
              << pop.size() << ")\n";
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 const std::string& pop_path, std::uint64_t index) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const Population pop = population_for(cfg, pop_path);
    const SimStudyConfig study = study_config(cfg, pop);

    const std::uint64_t stream = derive_stream(derive_stream(cfg.master_seed, kSimulateTag), index);
    RngStream rng(cfg.master_seed, stream);

    std::vector<double> theta;
    Trajectory traj;
    if (cfg.scenario == Scenario::Seir) {
        std::vector<std::uint32_t> seeds;
        {
            // Same draw order as training-set generation: seeds, theta, path.
            const int span = study.seir_seed_hi - study.seir_seed_lo + 1;
            const int n_seeds =
                study.seir_seed_lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span)));
            std::vector<std::uint32_t> ids(pop.size());
            std::iota(ids.begin(), ids.end(), 0u);
            for (int i = 0; i < n_seeds; ++i) {
                const std::size_t j = static_cast<std::size_t>(i) +
                                      rng.uniform_int(pop.size() - static_cast<std::size_t>(i));
                std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
            }
            seeds.assign(ids.begin(), ids.begin() + n_seeds);
        }
        theta = sample_prior(study.prior, Scenario::Seir, pop, seeds, rng);
        traj = simulate_seir(pop, theta[0], theta[1], theta[2], theta[3], study.culling_pmf, seeds,
                             study.T, rng);
    } else {
        theta = sample_prior(study.prior, cfg.scenario, pop, study.seeds, rng);
        const RemovalModel removal = cfg.scenario == Scenario::Stoch
                                         ? RemovalModel::geometric(theta[2])
                                         : RemovalModel::fixed(study.fixed_len);
        traj = simulate_sir(pop, theta[0], theta[1], removal, study.seeds, study.T, rng);
    }
    const double rho = cfg.scenario == Scenario::Partial ? theta[2] : 0.0;
    const ObservedEpidemic obs = observe(traj, cfg.scenario, rho, rng);

    ensure_dir(out_dir);
    save_observed(obs, out_dir);
    save_trajectory_csv(traj, fs::path(out_dir) / "trajectory.csv");
    const std::vector<std::string> names = scenario_param_names(cfg.scenario);
    write_draws_csv(fs::path(out_dir) / "theta.csv", names, theta);
    int total_observed = 0;
    for (std::uint8_t o : obs.node_observed) total_observed += o;
    write_manifest(fs::path(out_dir) / "manifest.json", "simulate", config_fingerprint(cfg),
                   stream, timer.seconds(),
                   {{"index", std::to_string(index)},
                    {"observed_nodes", std::to_string(total_observed)}});
    std::cout << "simulated epidemic " << index << ": " << total_observed
              << " observed nodes over T=" << obs.T << "\n";
    return 0;
}

int cmd_make_train(const std::string& config_path, const std::string& out_dir,
                   const std::string& pop_path, std::uint64_t n_override, std::uint64_t seed,
                   bool seed_set, unsigned threads) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const Population pop = population_for(cfg, pop_path);
    const SimStudyConfig study = study_config(cfg, pop);
    const std::size_t n = n_override > 0 ? static_cast<std::size_t>(n_override) : cfg.n_train;
    const std::uint64_t set_seed = seed_set ? seed : derive_stream(cfg.master_seed, kTrainSetTag);

    const TrainingSet set = generate_training_set(study, pop, n, set_seed, threads);
    ensure_dir(out_dir);
    save_training_set(set, out_dir);
    write_manifest(fs::path(out_dir) / "run_manifest.json", "make-train", config_fingerprint(cfg),
                   set_seed, timer.seconds(), {{"n", std::to_string(n)}});
    std::cout << "wrote " << n << " training pairs to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& pop_path) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const Population pop = population_for(cfg, pop_path);
    const TrainingSet data = load_training_set(data_dir);
    if (data.scenario != cfg.scenario) {
        throw ConfigError("training set scenario " + scenario_to_string(data.scenario) +
                          " does not match the config's " + scenario_to_string(cfg.scenario));
    }

    OptConfig opt = cfg.opt;
    opt.seed = derive_stream(cfg.master_seed, 0x7472ull);
    const TrainResult result =
        train_estimator(data, pop, cfg.embed, cfg.flow, opt, config_fingerprint(cfg));

    ensure_dir(out_dir);
    result.estimator.save(fs::path(out_dir) / "model.bin");
    std::ostringstream losses;
    losses << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < result.train_loss.size(); ++e) {
        losses << e << ',' << format_double(result.train_loss[e]) << ','
               << format_double(result.val_loss[e]) << '\n';
    }
    write_text_file(fs::path(out_dir) / "losses.csv", losses.str());
    write_manifest(fs::path(out_dir) / "manifest.json", "train", config_fingerprint(cfg),
                   opt.seed, timer.seconds(),
                   {{"data", data_dir},
                    {"embed", to_string(cfg.embed.kind)},
                    {"best_epoch", std::to_string(result.best_epoch)},
                    {"best_val_loss", format_double(result.val_loss[result.best_epoch])},
                    {"train_seconds", format_double(result.wall_seconds)}});
    std::cout << "trained " << to_string(cfg.embed.kind) << " estimator: best epoch "
              << result.best_epoch << ", val loss "
              << format_double(result.val_loss[result.best_epoch]) << "\n";
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& epidemic_dir,
              const std::string& pop_path, const std::string& out_dir, std::uint64_t count,
              std::uint64_t seed, bool seed_set) {
    Timer timer;
    const PosteriorEstimator est = PosteriorEstimator::load(model_path);
    const ObservedEpidemic obs = load_observed(epidemic_dir);
    if (obs.scenario != est.scenario()) {
        throw ConfigError("epidemic scenario " + scenario_to_string(obs.scenario) +
                          " does not match the checkpoint's " +
                          scenario_to_string(est.scenario()));
    }
    if (pop_path.empty()) throw ConfigError("infer needs --population");
    const Population pop = Population::load_csv(pop_path);
    if (pop.size() != obs.M) {
        throw ConfigError("population size does not match the epidemic's M");
    }
    const std::uint64_t stream = seed_set ? seed : derive_stream(est.fingerprint(), kInferTag);
    RngStream rng(stream, 0);

    const SampleResult samples = posterior_sample(est, obs, pop, count, rng);
    ensure_dir(out_dir);
    const std::vector<std::string> names = scenario_param_names(est.scenario());
    write_draws_csv(fs::path(out_dir) / "draws.csv", names, samples.draws);
    write_manifest(fs::path(out_dir) / "manifest.json", "infer", est.fingerprint(), stream,
                   timer.seconds(),
                   {{"epidemic", epidemic_dir},
                    {"requested", std::to_string(samples.requested)},
                    {"accepted", std::to_string(samples.n())},
                    {"acceptance", format_double(samples.acceptance())}});
    if (!samples.complete()) {
        std::cerr << "warning: only " << samples.n() << " of " << samples.requested
                  << " draws inside the parameter domain (acceptance "
                  << format_double(samples.acceptance())
                  << "); observation may be out of distribution\n";
    }
    std::cout << "wrote " << samples.n() << " posterior draws in "
              << format_double(timer.seconds()) << " s\n";
    return 0;
}

int cmd_mcmc(const std::string& scenario_name, const std::string& config_path,
             const std::string& epidemic_dir, const std::string& out_dir,
             const std::string& pop_path, const std::string& truth_path, unsigned threads) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const Scenario scenario = scenario_from_string(scenario_name);
    if (scenario != cfg.scenario) {
        throw ConfigError("--scenario disagrees with the config's scenario");
    }
    const ObservedEpidemic obs = load_observed(epidemic_dir);
    if (obs.scenario != scenario) {
        throw ConfigError("epidemic scenario " + scenario_to_string(obs.scenario) +
                          " does not match --scenario");
    }
    const Population pop = population_for(cfg, pop_path);

    McmcConfig mc = cfg.mcmc;
    mc.threads = threads;
    Trajectory truth;
    const Trajectory* truth_ptr = nullptr;
    fs::path truth_file = truth_path.empty() ? fs::path(epidemic_dir) / "trajectory.csv"
                                             : fs::path(truth_path);
    if (scenario == Scenario::Seir) {
        truth = load_trajectory_csv(truth_file, obs.T);
        truth_ptr = &truth;
    }

    const McmcResult result = run_chains(obs, pop, cfg.prior, mc, truth_ptr);

    ensure_dir(out_dir);
    for (std::size_t c = 0; c < result.draws.size(); ++c) {
        write_draws_csv(fs::path(out_dir) / ("chain_" + std::to_string(c) + ".csv"),
                        result.param_names, result.draws[c]);
    }
    nlohmann::json diag;
    diag["params"] = result.param_names;
    diag["n_chains"] = result.draws.size();
    diag["n_draws_per_chain"] = result.n_draws;
    diag["rhat"] = result.rhat;
    diag["theta_accept"] = result.theta_accept;
    diag["aug_accept"] = result.aug_accept;
    diag["converged"] = result.converged();
    diag["wall_seconds"] = result.wall_seconds;
    write_text_file(fs::path(out_dir) / "diagnostics.json", diag.dump(2) + "\n");
    write_manifest(fs::path(out_dir) / "manifest.json", "mcmc", config_fingerprint(cfg),
                   mc.seed, timer.seconds(), {{"epidemic", epidemic_dir}});
    std::cout << "mcmc finished: " << result.draws.size() << " chains x " << result.n_draws
              << " draws, wall " << format_double(result.wall_seconds) << " s\n";
    for (std::size_t d = 0; d < result.dim(); ++d) {
        std::cout << "  rhat(" << result.param_names[d]
                  << ") = " << format_double(result.rhat.empty() ? 0.0 : result.rhat[d]) << "\n";
    }
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& model_path,
                 const std::string& data_dir, const std::string& out_dir,
                 const std::string& pop_path, std::uint64_t count_override, unsigned threads) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const PosteriorEstimator est = PosteriorEstimator::load(model_path);
    const TrainingSet tests = load_training_set(data_dir);
    if (tests.scenario != est.scenario()) {
        throw ConfigError("test set scenario does not match the checkpoint's");
    }
    const Population pop = population_for(cfg, pop_path);
    const std::size_t count =
        count_override > 0 ? static_cast<std::size_t>(count_override) : cfg.n_posterior;
    const std::size_t dim = est.dim();
    const std::vector<std::string> names = scenario_param_names(est.scenario());

    const SpatialGraph graph = est.embed_config().kind == EmbedConfig::Kind::Gnn
                                   ? knn_graph(pop, static_cast<int>(est.embed_config().knn_k))
                                   : SpatialGraph{};
    const SpatialGraph* graph_ptr =
        est.embed_config().kind == EmbedConfig::Kind::Gnn ? &graph : nullptr;

    const std::uint64_t eval_seed = derive_stream(cfg.master_seed, kEvalTag);
    std::vector<std::vector<double>> draws_per_test(tests.n());
    std::vector<double> truths(tests.n() * dim);
    double inference_seconds = 0.0;
    {
        Timer inf_timer;
        parallel_for(
            tests.n(),
            [&](std::size_t begin, std::size_t end) {
                for (std::size_t t = begin; t < end; ++t) {
                    RngStream rng(eval_seed, derive_stream(kEvalTag, t));
                    draws_per_test[t] =
                        posterior_sample(est, tests.pairs[t].obs, pop, count, rng, graph_ptr)
                            .draws;
                }
            },
            threads);
        inference_seconds = inf_timer.seconds();
    }
    std::vector<double> medians(tests.n() * dim);
    for (std::size_t t = 0; t < tests.n(); ++t) {
        if (draws_per_test[t].empty()) {
            throw NumericalError("evaluate: no in-domain draws for test case " +
                                 std::to_string(t));
        }
        const std::vector<double> med = posterior_median(draws_per_test[t], dim);
        for (std::size_t d = 0; d < dim; ++d) {
            medians[t * dim + d] = med[d];
            truths[t * dim + d] = tests.pairs[t].theta[d];
        }
    }

    const std::vector<double> mae = mean_absolute_error(medians, truths, dim);
    const IntervalStats intervals = interval_summary(draws_per_test, truths, dim, 0.95);
    const SbcResult sbc = sbc_ranks(draws_per_test, truths, dim, 20);

    const std::string method =
        std::string("npe-") + to_string(est.embed_config().kind);
    ensure_dir(out_dir);
    nlohmann::json report;
    report["scenario"] = scenario_to_string(est.scenario());
    report["method"] = method;
    report["n_test"] = tests.n();
    report["n_posterior"] = count;
    report["per_epidemic_seconds"] = inference_seconds / static_cast<double>(tests.n());
    for (std::size_t d = 0; d < dim; ++d) {
        report["params"][names[d]] = {{"mae", mae[d]},
                                      {"coverage", intervals.coverage[d]},
                                      {"mean_width", intervals.mean_width[d]},
                                      {"sbc_p", sbc.p_values[d]}};
    }
    write_text_file(fs::path(out_dir) / "report.json", report.dump(2) + "\n");

    std::ostringstream table;
    table << "scenario,method,parameter,mae,width,coverage\n";
    for (std::size_t d = 0; d < dim; ++d) {
        table << scenario_to_string(est.scenario()) << ',' << method << ',' << names[d] << ','
              << format_double(mae[d]) << ',' << format_double(intervals.mean_width[d]) << ','
              << format_double(intervals.coverage[d]) << '\n';
    }
    write_text_file(fs::path(out_dir) / "table.csv", table.str());
    write_manifest(fs::path(out_dir) / "manifest.json", "evaluate", config_fingerprint(cfg),
                   eval_seed, timer.seconds(),
                   {{"model", model_path}, {"data", data_dir}});
    std::cout << "evaluated " << tests.n() << " test epidemics with " << method << ":\n";
    for (std::size_t d = 0; d < dim; ++d) {
        std::cout << "  " << names[d] << ": mae " << format_double(mae[d]) << ", coverage "
                  << format_double(intervals.coverage[d]) << ", sbc p "
                  << format_double(sbc.p_values[d]) << "\n";
    }
    return 0;
}

int cmd_ppc(const std::string& config_path, const std::string& epidemic_dir,
            const std::string& draws_path, const std::string& out_dir,
            const std::string& pop_path, std::uint64_t reps, std::uint64_t seed, bool seed_set) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const ObservedEpidemic obs = load_observed(epidemic_dir);
    if (obs.scenario != cfg.scenario) {
        throw ConfigError("epidemic scenario does not match the config's");
    }
    const Population pop = population_for(cfg, pop_path);
    const SimStudyConfig study = study_config(cfg, pop);
    const std::vector<double> draws = read_draws_csv(draws_path, cfg.scenario);
    const std::uint64_t ppc_seed = seed_set ? seed : derive_stream(cfg.master_seed, kPpcTag);

    const PpcBand band = posterior_predictive(obs, pop, draws, scenario_dim(cfg.scenario), study,
                                              reps, ppc_seed);

    ensure_dir(out_dir);
    std::ostringstream out;
    out << "t,obs,lo,med,hi\n";
    for (std::size_t t = 0; t < band.observed.size(); ++t) {
        out << (t + 1) << ',' << band.observed[t] << ',' << format_double(band.lo[t]) << ','
            << format_double(band.med[t]) << ',' << format_double(band.hi[t]) << '\n';
    }
    write_text_file(fs::path(out_dir) / "ppc.csv", out.str());
    write_manifest(fs::path(out_dir) / "manifest.json", "ppc", config_fingerprint(cfg), ppc_seed,
                   timer.seconds(), {{"epidemic", epidemic_dir}, {"draws", draws_path}});
    std::cout << "wrote predictive band over " << band.observed.size() << " steps from " << reps
              << " replicates\n";
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& model_path,
              const std::string& out_dir, const std::string& pop_path, std::uint64_t reps,
              std::uint64_t count) {
    Timer timer;
    const RunConfig cfg = load_run_config(config_path);
    const PosteriorEstimator est = PosteriorEstimator::load(model_path);
    if (est.scenario() != cfg.scenario) {
        throw ConfigError("checkpoint scenario does not match the config's");
    }
    const Population pop = population_for(cfg, pop_path);
    const SimStudyConfig study = study_config(cfg, pop);
    const std::uint64_t bench_seed = derive_stream(cfg.master_seed, kBenchTag);

    // Generation throughput.
    Timer gen_timer;
    const std::size_t n_gen = std::max<std::size_t>(reps, 1);
    const TrainingSet sims = generate_training_set(study, pop, n_gen, bench_seed, 1);
    const double gen_seconds = gen_timer.seconds();

    const SpatialGraph graph = est.embed_config().kind == EmbedConfig::Kind::Gnn
                                   ? knn_graph(pop, static_cast<int>(est.embed_config().knn_k))
                                   : SpatialGraph{};
    const SpatialGraph* graph_ptr =
        est.embed_config().kind == EmbedConfig::Kind::Gnn ? &graph : nullptr;

    // Per-epidemic amortised inference, fresh observation each repeat.
    std::vector<double> per_epidemic;
    for (std::size_t r = 0; r < n_gen; ++r) {
        RngStream rng(bench_seed, derive_stream(kBenchTag, r + 1));
        Timer one;
        const SampleResult s =
            posterior_sample(est, sims.pairs[r].obs, pop, count, rng, graph_ptr);
        per_epidemic.push_back(one.seconds());
        if (s.n() == 0) throw NumericalError("bench: no in-domain draws");
    }

    ensure_dir(out_dir);
    nlohmann::json bench;
    bench["scenario"] = scenario_to_string(cfg.scenario);
    bench["method"] = std::string("npe-") + to_string(est.embed_config().kind);
    bench["m"] = pop.size();
    bench["n_posterior"] = count;
    bench["repeats"] = n_gen;
    bench["generation_seconds_per_sim"] = gen_seconds / static_cast<double>(n_gen);
    bench["inference_seconds_mean"] = mean(per_epidemic);
    bench["inference_seconds_max"] = *std::max_element(per_epidemic.begin(), per_epidemic.end());
    bench["inference_seconds"] = per_epidemic;
    write_text_file(fs::path(out_dir) / "bench.json", bench.dump(2) + "\n");
    write_manifest(fs::path(out_dir) / "manifest.json", "bench", config_fingerprint(cfg),
                   bench_seed, timer.seconds(), {{"model", model_path}});
    std::cout << "per-epidemic inference: mean " << format_double(mean(per_epidemic)) << " s over "
              << n_gen << " repeats (M=" << pop.size() << ")\n";
    return 0;
}

int cmd_loglik(const std::string& scenario_name, const std::string& epidemic_dir,
               const std::string& pop_path, const std::string& params_csv,
               const std::string& config_path) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    const Scenario scenario = scenario_from_string(scenario_name);
    const std::vector<double> theta = parse_param_list(params_csv, scenario);
    if (pop_path.empty()) throw ConfigError("loglik needs --population");
    const Population pop = Population::load_csv(pop_path);
    const ObservedEpidemic bundle = load_observed(epidemic_dir);
    const Trajectory traj =
        load_trajectory_csv(fs::path(epidemic_dir) / "trajectory.csv", bundle.T);

    double ll = 0.0;
    switch (scenario) {
    case Scenario::Full:
        ll = full_loglik_fixed(traj, pop, theta[0], theta[1], cfg.fixed_len);
        break;
    case Scenario::Stoch:
        ll = full_loglik_stochastic(traj, pop, theta[0], theta[1], theta[2]);
        break;
    case Scenario::Partial:
        ll = full_loglik_fixed(traj, pop, theta[0], theta[1], cfg.fixed_len) +
             obs_loglik(traj, bundle, theta[2]);
        break;
    case Scenario::Seir:
        ll = seir_loglik(traj, pop, theta[0], theta[1], theta[2], theta[3], cfg.culling_pmf);
        break;
    }
    std::cout << format_double(ll) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial epidemic simulation, amortised neural posterior estimation, and "
                 "data-augmented MCMC"};
    app.require_subcommand(1);

    std::string config_path, out_dir, pop_path, data_dir, model_path, epidemic_dir, draws_path;
    std::string scenario_name, params_csv, gen_uniform, gen_clustered, truth_path;
    std::uint64_t seed = 0, index = 0, n_override = 0, count = 3000, reps = 100;
    unsigned threads = 0;

    auto* gen_pop = app.add_subcommand("gen-pop", "Generate or import a population CSV");
    gen_pop->add_option("--config", config_path, "Run config JSON");
    gen_pop->add_option("--out", out_dir, "Output directory")->required();
    gen_pop->add_option("--gen-uniform", gen_uniform, "M,side for a uniform population");
    gen_pop->add_option("--gen-clustered", gen_clustered, "M,k,spread for a clustered population");
    gen_pop->add_option("--population", pop_path, "Existing population CSV to import");
    auto* gen_pop_seed = gen_pop->add_option("--seed", seed, "Master seed override");

    auto* simulate = app.add_subcommand("simulate", "Simulate one ground-truth epidemic");
    simulate->add_option("--config", config_path, "Run config JSON")->required();
    simulate->add_option("--out", out_dir, "Output directory")->required();
    simulate->add_option("--population", pop_path, "Population CSV (default: config)");
    simulate->add_option("--index", index, "Epidemic index within the config's stream");

    auto* make_train = app.add_subcommand("make-train", "Generate a prior-predictive training set");
    make_train->add_option("--config", config_path, "Run config JSON")->required();
    make_train->add_option("--out", out_dir, "Output directory")->required();
    make_train->add_option("--population", pop_path, "Population CSV (default: config)");
    make_train->add_option("--n", n_override, "Pair count (default: config n_train)");
    auto* make_train_seed = make_train->add_option("--seed", seed, "Set seed override");
    make_train->add_option("--threads", threads, "Worker threads (0 = all cores)");

    auto* train = app.add_subcommand("train", "Train the posterior estimator on a training set");
    train->add_option("--config", config_path, "Run config JSON")->required();
    train->add_option("--data", data_dir, "Training-set directory")->required();
    train->add_option("--out", out_dir, "Output directory")->required();
    train->add_option("--population", pop_path, "Population CSV (default: config)");

    auto* infer = app.add_subcommand("infer", "Sample the amortised posterior for one epidemic");
    infer->add_option("--model", model_path, "Estimator checkpoint")->required();
    infer->add_option("--epidemic", epidemic_dir, "Observation bundle directory")->required();
    infer->add_option("--population", pop_path, "Population CSV")->required();
    infer->add_option("--out", out_dir, "Output directory")->required();
    infer->add_option("--count", count, "Posterior draws (default 3000)");
    auto* infer_seed = infer->add_option("--seed", seed, "Sampling seed override");

    auto* mcmc = app.add_subcommand("mcmc", "Data-augmented MCMC on one epidemic");
    mcmc->add_option("--scenario", scenario_name, "full|stoch|partial|seir")->required();
    mcmc->add_option("--epidemic", epidemic_dir, "Observation bundle directory")->required();
    mcmc->add_option("--config", config_path, "Run config JSON")->required();
    mcmc->add_option("--out", out_dir, "Output directory")->required();
    mcmc->add_option("--population", pop_path, "Population CSV (default: config)");
    mcmc->add_option("--truth", truth_path, "Trajectory CSV with the culling schedule (SEIR)");
    mcmc->add_option("--threads", threads, "Chain threads (0 = all cores)");

    auto* evaluate = app.add_subcommand("evaluate", "Coverage, MAE, and SBC over a test set");
    evaluate->add_option("--config", config_path, "Run config JSON")->required();
    evaluate->add_option("--model", model_path, "Estimator checkpoint")->required();
    evaluate->add_option("--data", data_dir, "Test-set directory")->required();
    evaluate->add_option("--out", out_dir, "Output directory")->required();
    evaluate->add_option("--population", pop_path, "Population CSV (default: config)");
    evaluate->add_option("--count", n_override, "Draws per test case (default: config)");
    evaluate->add_option("--threads", threads, "Worker threads (0 = all cores)");

    auto* ppc = app.add_subcommand("ppc", "Posterior predictive band for one epidemic");
    ppc->add_option("--config", config_path, "Run config JSON")->required();
    ppc->add_option("--epidemic", epidemic_dir, "Observation bundle directory")->required();
    ppc->add_option("--draws", draws_path, "Posterior draws CSV")->required();
    ppc->add_option("--out", out_dir, "Output directory")->required();
    ppc->add_option("--population", pop_path, "Population CSV (default: config)");
    ppc->add_option("--reps", reps, "Replicated simulations (default 100)");
    auto* ppc_seed = ppc->add_option("--seed", seed, "Replication seed override");

    auto* bench = app.add_subcommand("bench", "Time generation and per-epidemic inference");
    bench->add_option("--config", config_path, "Run config JSON")->required();
    bench->add_option("--model", model_path, "Estimator checkpoint")->required();
    bench->add_option("--out", out_dir, "Output directory")->required();
    bench->add_option("--population", pop_path, "Population CSV (default: config)");
    bench->add_option("--reps", reps, "Repeat count (default 100)");
    bench->add_option("--count", count, "Draws per inference (default 3000)");

    auto* loglik = app.add_subcommand("loglik", "Print a complete-data log-likelihood");
    loglik->add_option("--scenario", scenario_name, "full|stoch|partial|seir")->required();
    loglik->add_option("--epidemic", epidemic_dir, "Epidemic directory with trajectory.csv")
        ->required();
    loglik->add_option("--population", pop_path, "Population CSV")->required();
    loglik->add_option("--params", params_csv, "Comma-separated parameter values")->required();
    loglik->add_option("--config", config_path, "Run config JSON (removal settings)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen_pop->parsed()) {
            return cmd_gen_pop(config_path, out_dir, gen_uniform, gen_clustered, pop_path, seed,
                               gen_pop_seed->count() > 0);
        }
        if (simulate->parsed()) return cmd_simulate(config_path, out_dir, pop_path, index);
        if (make_train->parsed()) {
            return cmd_make_train(config_path, out_dir, pop_path, n_override, seed,
                                  make_train_seed->count() > 0, threads);
        }
        if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, pop_path);
        if (infer->parsed()) {
            return cmd_infer(model_path, epidemic_dir, pop_path, out_dir, count, seed,
                             infer_seed->count() > 0);
        }
        if (mcmc->parsed()) {
            return cmd_mcmc(scenario_name, config_path, epidemic_dir, out_dir, pop_path,
                            truth_path, threads);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(config_path, model_path, data_dir, out_dir, pop_path, n_override,
                                threads);
        }
        if (ppc->parsed()) {
            return cmd_ppc(config_path, epidemic_dir, draws_path, out_dir, pop_path, reps, seed,
                           ppc_seed->count() > 0);
        }
        if (bench->parsed()) {
            return cmd_bench(config_path, model_path, out_dir, pop_path, reps, count);
        }
        if (loglik->parsed()) {
            return cmd_loglik(scenario_name, epidemic_dir, pop_path, params_csv, config_path);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        if (!out_dir.empty()) {
            try {
                ensure_dir(out_dir);
                nlohmann::json diag;
                diag["error"] = e.what();
                write_text_file(fs::path(out_dir) / "error.json", diag.dump(2) + "\n");
            } catch (...) {
            }
        }
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
