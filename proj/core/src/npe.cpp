#include "ilm/npe.hpp"

#include "ilm/checkpoint.hpp"
#include "ilm/errors.hpp"
#include "ilm/io.hpp"
#include "ilm/threads.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace ilm {

namespace {

constexpr std::uint64_t kPairTag = 0x747261696Eull;
constexpr std::uint64_t kInitTag = 0x696E6974ull;
constexpr std::uint64_t kSplitTag = 0x73706C6974ull;
constexpr std::uint64_t kShuffleTag = 0x73687566ull;

std::vector<std::uint32_t> draw_seed_set(std::size_t m, int lo, int hi, RngStream& rng) {
    const int n_seeds = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    std::vector<std::uint32_t> ids(m);
    std::iota(ids.begin(), ids.end(), 0u);
    for (int i = 0; i < n_seeds; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) + rng.uniform_int(m - static_cast<std::size_t>(i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }
    return {ids.begin(), ids.begin() + n_seeds};
}

TrainingPair make_pair(const SimStudyConfig& cfg, const Population& pop, RngStream& rng) {
    TrainingPair pair;
    if (cfg.scenario == Scenario::Seir) {
        const std::vector<std::uint32_t> seeds =
            draw_seed_set(pop.size(), cfg.seir_seed_lo, cfg.seir_seed_hi, rng);
        pair.theta = sample_prior(cfg.prior, Scenario::Seir, pop, seeds, rng);
        const Trajectory traj =
            simulate_seir(pop, pair.theta[0], pair.theta[1], pair.theta[2], pair.theta[3],
                          cfg.culling_pmf, seeds, cfg.T, rng);
        pair.obs = observe(traj, Scenario::Seir, 0.0, rng);
        return pair;
    }
    pair.theta = sample_prior(cfg.prior, cfg.scenario, pop, cfg.seeds, rng);
    RemovalModel removal = cfg.scenario == Scenario::Stoch
                               ? RemovalModel::geometric(pair.theta[2])
                               : RemovalModel::fixed(cfg.fixed_len);
    const Trajectory traj =
        simulate_sir(pop, pair.theta[0], pair.theta[1], removal, cfg.seeds, cfg.T, rng);
    const double rho = cfg.scenario == Scenario::Partial ? pair.theta[2] : 0.0;
    pair.obs = observe(traj, cfg.scenario, rho, rng);
    return pair;
}

std::string pair_dir_name(std::size_t i) {
    std::string s = std::to_string(i);
    while (s.size() < 6) s.insert(s.begin(), '0');
    return s;
}

double meta_scalar(const std::unordered_map<std::string, const NamedArray*>& idx,
                   const std::string& name) {
    auto it = idx.find(name);
    if (it == idx.end() || it->second->data.size() != 1) {
        throw ConfigError("training set: missing scalar entry " + name);
    }
    return it->second->data[0];
}

const NamedArray& named(const std::unordered_map<std::string, const NamedArray*>& idx,
                        const std::string& name) {
    auto it = idx.find(name);
    if (it == idx.end()) throw ConfigError("training set: missing entry " + name);
    return *it->second;
}

std::unordered_map<std::string, const NamedArray*> index_arrays(std::span<const NamedArray> arrays) {
    std::unordered_map<std::string, const NamedArray*> idx;
    idx.reserve(arrays.size());
    for (const auto& a : arrays) {
        if (!idx.emplace(a.name, &a).second) {
            throw ConfigError("training set: duplicate entry " + a.name);
        }
    }
    return idx;
}

} // namespace

TrainingSet generate_training_set(const SimStudyConfig& cfg, const Population& pop, std::size_t n,
                                  std::uint64_t master_seed, unsigned threads) {
    if (n == 0) throw ConfigError("generate_training_set: n must be positive");
    if (cfg.T < 1) throw ConfigError("generate_training_set: T must be at least 1");
    if (cfg.scenario != Scenario::Seir) {
        if (cfg.seeds.empty()) throw ConfigError("generate_training_set: SIR scenarios need seed ids");
        for (std::uint32_t s : cfg.seeds) {
            if (s >= pop.size()) throw ConfigError("generate_training_set: seed id out of range");
        }
    } else if (cfg.seir_seed_lo < 1 || cfg.seir_seed_hi < cfg.seir_seed_lo ||
               static_cast<std::size_t>(cfg.seir_seed_hi) > pop.size()) {
        throw ConfigError("generate_training_set: bad SEIR seed-count range");
    }

    TrainingSet set;
    set.scenario = cfg.scenario;
    set.T = cfg.T;
    set.seed = master_seed;
    set.pairs.resize(n);
    parallel_for(
        n,
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                RngStream rng(master_seed, derive_stream(kPairTag, i));
                set.pairs[i] = make_pair(cfg, pop, rng);
            }
        },
        threads);
    return set;
}

void save_training_set(const TrainingSet& set, const std::filesystem::path& dir) {
    if (set.pairs.empty()) throw ConfigError("save_training_set: empty set");
    ensure_dir(dir / "pairs");
    const std::vector<std::string> names = scenario_param_names(set.scenario);
    std::ostringstream thetas;
    thetas << "index";
    for (const std::string& name : names) thetas << ',' << name;
    thetas << '\n';
    for (std::size_t i = 0; i < set.n(); ++i) {
        const TrainingPair& p = set.pairs[i];
        if (p.obs.scenario != set.scenario || p.obs.T != set.T || p.theta.size() != names.size()) {
            throw ConfigError("save_training_set: pair " + std::to_string(i) +
                              " disagrees with the set header");
        }
        save_observed(p.obs, dir / "pairs" / pair_dir_name(i));
        thetas << i;
        for (double v : p.theta) thetas << ',' << format_double(v);
        thetas << '\n';
    }
    write_text_file(dir / "thetas.csv", thetas.str());
    nlohmann::json manifest;
    manifest["scenario"] = scenario_to_string(set.scenario);
    manifest["T"] = set.T;
    manifest["n"] = set.n();
    manifest["seed"] = set.seed;
    manifest["params"] = names;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

TrainingSet load_training_set(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
    }
    TrainingSet set;
    std::size_t n = 0;
    try {
        set.scenario = scenario_from_string(manifest.at("scenario").get<std::string>());
        set.T = manifest.at("T").get<int>();
        set.seed = manifest.at("seed").get<std::uint64_t>();
        n = manifest.at("n").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (n == 0) throw ConfigError((dir / "manifest.json").string() + ": empty set");

    const std::vector<std::string> names = scenario_param_names(set.scenario);
    std::string header = "index";
    for (const std::string& name : names) header += "," + name;
    const auto rows = read_csv(dir / "thetas.csv", header);
    if (rows.size() != n) {
        throw ConfigError((dir / "thetas.csv").string() + ": expected " + std::to_string(n) +
                          " rows");
    }
    set.pairs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (parse_int(rows[i][0], "thetas index") != static_cast<long long>(i)) {
            throw ConfigError((dir / "thetas.csv").string() + ": index column must run 0..n-1");
        }
        TrainingPair& p = set.pairs[i];
        p.theta.resize(names.size());
        for (std::size_t d = 0; d < names.size(); ++d) {
            p.theta[d] = parse_double(rows[i][d + 1], "thetas " + names[d]);
        }
        p.obs = load_observed(dir / "pairs" / pair_dir_name(i));
        if (p.obs.scenario != set.scenario || p.obs.T != set.T) {
            throw ConfigError("training set: pair " + std::to_string(i) +
                              " disagrees with the manifest");
        }
    }
    return set;
}

PosteriorEstimator::PosteriorEstimator(Scenario scenario, const EmbedConfig& embed_cfg,
                                       const FlowConfig& flow_cfg, RngStream& rng)
    : scenario_(scenario), embed_cfg_(embed_cfg), flow_cfg_(flow_cfg) {
    if (flow_cfg_.dim != scenario_dim(scenario)) {
        throw ConfigError("estimator: flow dim does not match the scenario's parameter count");
    }
    if (flow_cfg_.context_dim != embed_cfg_.k_emb) {
        throw ConfigError("estimator: flow context_dim does not match the embedding size");
    }
    if (embed_cfg_.kind == EmbedConfig::Kind::Cnn) {
        cnn_ = CnnEmbedding(embed_cfg_, rng);
    } else {
        gnn_ = GnnEmbedding(embed_cfg_, rng);
    }
    flow_ = SplineFlow(flow_cfg_, rng);
    theta_mean_.assign(flow_cfg_.dim, 0.0);
    theta_sd_.assign(flow_cfg_.dim, 1.0);
}

void PosteriorEstimator::set_standardisation(std::vector<double> mean, std::vector<double> sd) {
    if (mean.size() != flow_cfg_.dim || sd.size() != flow_cfg_.dim) {
        throw ConfigError("estimator: standardisation size mismatch");
    }
    for (double s : sd) {
        if (!(s > 0.0)) throw ConfigError("estimator: standardisation sd must be positive");
    }
    theta_mean_ = std::move(mean);
    theta_sd_ = std::move(sd);
}

std::vector<double> PosteriorEstimator::embed(const ObservedEpidemic& obs, const Population& pop,
                                              const SpatialGraph* graph) const {
    if (embed_cfg_.kind == EmbedConfig::Kind::Cnn) return cnn_.forward(obs);
    if (graph != nullptr) return gnn_.forward(obs, pop, *graph);
    const SpatialGraph local = knn_graph(pop, static_cast<int>(embed_cfg_.knn_k));
    return gnn_.forward(obs, pop, local);
}

ad::Var PosteriorEstimator::embed_graph(ad::Graph& g, const ObservedEpidemic& obs,
                                        const Population& pop, const SpatialGraph* graph) {
    if (embed_cfg_.kind == EmbedConfig::Kind::Cnn) return cnn_.forward_graph(g, obs);
    if (graph != nullptr) return gnn_.forward_graph(g, obs, pop, *graph);
    const SpatialGraph local = knn_graph(pop, static_cast<int>(embed_cfg_.knn_k));
    return gnn_.forward_graph(g, obs, pop, local);
}

void PosteriorEstimator::collect(std::vector<ad::Parameter*>& out) {
    if (embed_cfg_.kind == EmbedConfig::Kind::Cnn) {
        cnn_.collect(out);
    } else {
        gnn_.collect(out);
    }
    flow_.collect(out);
}

void PosteriorEstimator::collect_named(nn::NamedParams& out) {
    if (embed_cfg_.kind == EmbedConfig::Kind::Cnn) {
        cnn_.collect_named("embed", out);
    } else {
        gnn_.collect_named("embed", out);
    }
    flow_.collect_named("flow", out);
}

void PosteriorEstimator::save(const std::filesystem::path& path) const {
    std::vector<NamedArray> arrays;
    auto scalar = [&](const std::string& name, double v) {
        arrays.push_back({name, {1}, {v}});
    };
    scalar("meta.scenario", static_cast<double>(static_cast<int>(scenario_)));
    scalar("meta.embed.kind", embed_cfg_.kind == EmbedConfig::Kind::Cnn ? 0.0 : 1.0);
    scalar("meta.embed.k_emb", static_cast<double>(embed_cfg_.k_emb));
    scalar("meta.embed.kernel", static_cast<double>(embed_cfg_.kernel));
    scalar("meta.embed.pooled_len", static_cast<double>(embed_cfg_.pooled_len));
    scalar("meta.embed.knn_k", static_cast<double>(embed_cfg_.knn_k));
    scalar("meta.embed.sage_layers", static_cast<double>(embed_cfg_.sage_layers));
    scalar("meta.embed.width", static_cast<double>(embed_cfg_.width));
    NamedArray channels{"meta.embed.channels", {embed_cfg_.channels.size()}, {}};
    for (std::size_t c : embed_cfg_.channels) channels.data.push_back(static_cast<double>(c));
    arrays.push_back(std::move(channels));
    scalar("meta.flow.dim", static_cast<double>(flow_cfg_.dim));
    scalar("meta.flow.context_dim", static_cast<double>(flow_cfg_.context_dim));
    scalar("meta.flow.layers", static_cast<double>(flow_cfg_.layers));
    scalar("meta.flow.bins", static_cast<double>(flow_cfg_.bins));
    scalar("meta.flow.tail_bound", flow_cfg_.tail_bound);
    scalar("meta.flow.hidden", static_cast<double>(flow_cfg_.hidden));
    scalar("meta.flow.min_bin", flow_cfg_.min_bin);
    arrays.push_back({"meta.theta_mean", {theta_mean_.size()}, theta_mean_});
    arrays.push_back({"meta.theta_sd", {theta_sd_.size()}, theta_sd_});
    arrays.push_back({"meta.fingerprint",
                      {2},
                      {static_cast<double>(fingerprint_ >> 32),
                       static_cast<double>(fingerprint_ & 0xFFFFFFFFull)}});

    nn::NamedParams params;
    const_cast<PosteriorEstimator*>(this)->collect_named(params);
    for (const auto& [name, p] : params) {
        arrays.push_back({name, p->shape, p->value});
    }
    save_checkpoint(path, arrays);
}

PosteriorEstimator PosteriorEstimator::load(const std::filesystem::path& path) {
    const std::vector<NamedArray> arrays = load_checkpoint(path);
    const auto idx = index_arrays(arrays);

    const Scenario scenario =
        static_cast<Scenario>(static_cast<int>(meta_scalar(idx, "meta.scenario")));
    scenario_to_string(scenario);

    EmbedConfig ec;
    ec.kind = meta_scalar(idx, "meta.embed.kind") == 0.0 ? EmbedConfig::Kind::Cnn
                                                         : EmbedConfig::Kind::Gnn;
    ec.k_emb = static_cast<std::size_t>(meta_scalar(idx, "meta.embed.k_emb"));
    ec.kernel = static_cast<std::size_t>(meta_scalar(idx, "meta.embed.kernel"));
    ec.pooled_len = static_cast<std::size_t>(meta_scalar(idx, "meta.embed.pooled_len"));
    ec.knn_k = static_cast<std::size_t>(meta_scalar(idx, "meta.embed.knn_k"));
    ec.sage_layers = static_cast<std::size_t>(meta_scalar(idx, "meta.embed.sage_layers"));
    ec.width = static_cast<std::size_t>(meta_scalar(idx, "meta.embed.width"));
    ec.channels.clear();
    for (double c : named(idx, "meta.embed.channels").data) {
        ec.channels.push_back(static_cast<std::size_t>(c));
    }

    FlowConfig fc;
    fc.dim = static_cast<std::size_t>(meta_scalar(idx, "meta.flow.dim"));
    fc.context_dim = static_cast<std::size_t>(meta_scalar(idx, "meta.flow.context_dim"));
    fc.layers = static_cast<std::size_t>(meta_scalar(idx, "meta.flow.layers"));
    fc.bins = static_cast<std::size_t>(meta_scalar(idx, "meta.flow.bins"));
    fc.tail_bound = meta_scalar(idx, "meta.flow.tail_bound");
    fc.hidden = static_cast<std::size_t>(meta_scalar(idx, "meta.flow.hidden"));
    fc.min_bin = meta_scalar(idx, "meta.flow.min_bin");

    RngStream init_rng(0, 0);
    PosteriorEstimator est(scenario, ec, fc, init_rng);
    est.set_standardisation(named(idx, "meta.theta_mean").data, named(idx, "meta.theta_sd").data);
    const NamedArray& fp = named(idx, "meta.fingerprint");
    if (fp.data.size() != 2) throw ConfigError("estimator: bad fingerprint entry");
    est.fingerprint_ = (static_cast<std::uint64_t>(fp.data[0]) << 32) |
                       static_cast<std::uint64_t>(fp.data[1]);

    nn::NamedParams params;
    est.collect_named(params);
    for (auto& [name, p] : params) {
        const NamedArray& a = named(idx, name);
        if (a.shape != p->shape) {
            throw ConfigError("estimator: shape mismatch for parameter " + name);
        }
        p->value = a.data;
    }
    return est;
}

namespace {

std::vector<double> standardise_theta(const TrainingPair& pair, std::span<const double> mean,
                                      std::span<const double> sd) {
    std::vector<double> out(pair.theta.size());
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = (pair.theta[d] - mean[d]) / sd[d];
    return out;
}

double validation_loss(PosteriorEstimator& est, const TrainingSet& data,
                       std::span<const std::size_t> val_idx, const Population& pop,
                       const SpatialGraph* graph) {
    double total = 0.0;
    for (std::size_t i : val_idx) {
        const TrainingPair& pair = data.pairs[i];
        const std::vector<double> context = est.embed(pair.obs, pop, graph);
        const std::vector<double> theta_std =
            standardise_theta(pair, est.theta_mean(), est.theta_sd());
        total -= est.flow().log_prob(theta_std, context);
    }
    return total / static_cast<double>(val_idx.size());
}

} // namespace

TrainResult train_estimator(const TrainingSet& data, const Population& pop,
                            const EmbedConfig& embed_cfg, const FlowConfig& flow_cfg,
                            const OptConfig& opt, std::uint64_t fingerprint) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = data.n();
    if (n < 2) throw ConfigError("train_estimator: need at least two pairs");
    if (opt.batch == 0 || opt.max_epochs == 0) {
        throw ConfigError("train_estimator: batch and max_epochs must be positive");
    }
    if (!(opt.val_frac > 0.0 && opt.val_frac < 1.0)) {
        throw ConfigError("train_estimator: val_frac must lie in (0,1)");
    }
    for (const TrainingPair& pair : data.pairs) {
        if (pair.theta.size() != data.dim() || pair.obs.T != data.T) {
            throw ConfigError("train_estimator: inconsistent training pair");
        }
    }

    FlowConfig fc = flow_cfg;
    fc.dim = data.dim();
    fc.context_dim = embed_cfg.k_emb;

    TrainResult result;
    RngStream init_rng(opt.seed, derive_stream(kInitTag, 0));
    result.estimator = PosteriorEstimator(data.scenario, embed_cfg, fc, init_rng);
    PosteriorEstimator& est = result.estimator;
    est.set_fingerprint(fingerprint);

    std::vector<double> mean(fc.dim, 0.0), sd(fc.dim, 1.0);
    for (std::size_t d = 0; d < fc.dim; ++d) {
        double s = 0.0;
        for (const TrainingPair& pair : data.pairs) s += pair.theta[d];
        mean[d] = s / static_cast<double>(n);
        double v = 0.0;
        for (const TrainingPair& pair : data.pairs) {
            const double c = pair.theta[d] - mean[d];
            v += c * c;
        }
        sd[d] = std::sqrt(v / static_cast<double>(n - 1));
        if (!(sd[d] > 1e-12)) sd[d] = 1.0;
    }
    est.set_standardisation(mean, sd);

    const SpatialGraph graph = embed_cfg.kind == EmbedConfig::Kind::Gnn
                                   ? knn_graph(pop, static_cast<int>(embed_cfg.knn_k))
                                   : SpatialGraph{};
    const SpatialGraph* graph_ptr = embed_cfg.kind == EmbedConfig::Kind::Gnn ? &graph : nullptr;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream split_rng(opt.seed, derive_stream(kSplitTag, 0));
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = split_rng.uniform_int(i + 1);
        std::swap(order[i], order[j]);
    }
    std::size_t n_val = static_cast<std::size_t>(opt.val_frac * static_cast<double>(n) + 0.5);
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

    std::vector<ad::Parameter*> params;
    est.collect(params);
    ad::Adam adam(params, opt.lr);

    std::vector<std::vector<double>> best_values;
    best_values.reserve(params.size());
    for (const ad::Parameter* p : params) best_values.push_back(p->value);
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    ad::Graph g;
    for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
        RngStream shuffle_rng(opt.seed, derive_stream(kShuffleTag, epoch));
        for (std::size_t i = train_idx.size() - 1; i > 0; --i) {
            const std::size_t j = shuffle_rng.uniform_int(i + 1);
            std::swap(train_idx[i], train_idx[j]);
        }

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < train_idx.size(); start += opt.batch) {
            const std::size_t stop = std::min(start + opt.batch, train_idx.size());
            const std::size_t b = stop - start;
            g.clear();
            std::vector<ad::Var> rows;
            std::vector<double> theta_std;
            rows.reserve(b);
            theta_std.reserve(b * fc.dim);
            for (std::size_t k = start; k < stop; ++k) {
                const TrainingPair& pair = data.pairs[train_idx[k]];
                rows.push_back(est.embed_graph(g, pair.obs, pop, graph_ptr));
                const std::vector<double> row =
                    standardise_theta(pair, est.theta_mean(), est.theta_sd());
                theta_std.insert(theta_std.end(), row.begin(), row.end());
            }
            const ad::Var context = ad::concat_rows(g, rows);
            const ad::Var theta = g.constant({b, fc.dim}, theta_std);
            const ad::Var logp = est.flow().log_prob_graph(g, theta, context);
            const ad::Var loss = ad::affine(g, ad::mean(g, logp), -1.0, 0.0);
            const double loss_val = g.val(loss)[0];
            if (!std::isfinite(loss_val)) {
                throw NumericalError("train_estimator: loss diverged at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(start / opt.batch));
            }
            g.backward(loss);
            adam.step();
            adam.zero_grad();
            epoch_loss += loss_val * static_cast<double>(b);
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(train_idx.size()));

        const double vl = validation_loss(est, data, val_idx, pop, graph_ptr);
        if (!std::isfinite(vl)) {
            throw NumericalError("train_estimator: validation loss diverged at epoch " +
                                 std::to_string(epoch));
        }
        result.val_loss.push_back(vl);
        if (vl < best_val) {
            best_val = vl;
            result.best_epoch = epoch;
            since_best = 0;
            for (std::size_t p = 0; p < params.size(); ++p) best_values[p] = params[p]->value;
        } else if (++since_best >= opt.patience) {
            break;
        }
    }

    for (std::size_t p = 0; p < params.size(); ++p) params[p]->value = best_values[p];
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

SampleResult posterior_sample(const PosteriorEstimator& est, const ObservedEpidemic& obs,
                              const Population& pop, std::size_t count, RngStream& rng,
                              const SpatialGraph* graph) {
    if (count == 0) throw ConfigError("posterior_sample: count must be positive");
    const std::size_t dim = est.dim();
    SampleResult result;
    result.dim = dim;
    result.requested = count;
    result.draws.reserve(count * dim);

    const std::vector<double> context = est.embed(obs, pop, graph);
    const std::size_t cap = 20 * count;
    std::vector<double> theta(dim);
    while (result.n() < count && result.attempted < cap) {
        const std::size_t chunk = std::min(count - result.n(), cap - result.attempted);
        const std::vector<double> z = est.flow().sample(context, chunk, rng);
        for (std::size_t r = 0; r < chunk; ++r) {
            for (std::size_t d = 0; d < dim; ++d) {
                theta[d] = est.theta_mean()[d] + est.theta_sd()[d] * z[r * dim + d];
            }
            if (params_in_domain(est.scenario(), theta)) {
                result.draws.insert(result.draws.end(), theta.begin(), theta.end());
            }
        }
        result.attempted += chunk;
    }
    return result;
}

} // namespace ilm
