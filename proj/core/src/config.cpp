#include "ilm/config.hpp"

#include "ilm/errors.hpp"
#include "ilm/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace ilm {

namespace {

using nlohmann::json;

constexpr std::uint64_t kPopTag = 0x706F70ull;
constexpr std::uint64_t kSeedIdTag = 0x693030ull;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ConfigError("config: " + where + ": " + what);
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) bad(where, "unknown key '" + key + "'");
    }
}

const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const char* key, double def, const std::string& where) {
    const json* v = find(obj, key);
    if (v == nullptr) return def;
    if (!v->is_number()) bad(where, std::string("'") + key + "' must be a number");
    return v->get<double>();
}

long long get_int(const json& obj, const char* key, long long def, const std::string& where) {
    const json* v = find(obj, key);
    if (v == nullptr) return def;
    if (!v->is_number_integer()) bad(where, std::string("'") + key + "' must be an integer");
    return v->get<long long>();
}

std::string get_string(const json& obj, const char* key, const std::string& def,
                       const std::string& where) {
    const json* v = find(obj, key);
    if (v == nullptr) return def;
    if (!v->is_string()) bad(where, std::string("'") + key + "' must be a string");
    return v->get<std::string>();
}

std::vector<double> get_number_list(const json& obj, const char* key, std::vector<double> def,
                                    const std::string& where) {
    const json* v = find(obj, key);
    if (v == nullptr) return def;
    if (!v->is_array()) bad(where, std::string("'") + key + "' must be an array");
    std::vector<double> out;
    for (const auto& e : *v) {
        if (!e.is_number()) bad(where, std::string("'") + key + "' must hold numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

PopulationConfig parse_population(const json& obj) {
    const std::string where = "population";
    check_keys(obj, {"m", "side", "kind", "n_clusters", "spread", "csv"}, where);
    PopulationConfig pc;
    const long long m = get_int(obj, "m", static_cast<long long>(pc.m), where);
    if (m < 2) bad(where, "'m' must be at least 2");
    pc.m = static_cast<std::size_t>(m);
    pc.side = get_number(obj, "side", pc.side, where);
    if (!(pc.side > 0.0)) bad(where, "'side' must be positive");
    pc.kind = get_string(obj, "kind", pc.kind, where);
    if (pc.kind != "uniform" && pc.kind != "clustered") {
        bad(where, "'kind' must be 'uniform' or 'clustered'");
    }
    const long long nc = get_int(obj, "n_clusters", static_cast<long long>(pc.n_clusters), where);
    if (nc < 1) bad(where, "'n_clusters' must be positive");
    pc.n_clusters = static_cast<std::size_t>(nc);
    pc.spread = get_number(obj, "spread", pc.spread, where);
    if (!(pc.spread > 0.0)) bad(where, "'spread' must be positive");
    pc.csv = get_string(obj, "csv", pc.csv, where);
    return pc;
}

PriorSpec parse_prior(const json& obj) {
    const std::string where = "prior";
    check_keys(obj,
               {"beta_shape", "beta_scale", "r0_shape", "r0_scale", "mu_fix", "mu_i_sigma",
                "mu_i_logmean", "eps_rate", "gamma_e_shape", "gamma_e_scale", "seir_mean_ip"},
               where);
    PriorSpec p;
    p.beta_shape = get_number(obj, "beta_shape", p.beta_shape, where);
    p.beta_scale = get_number(obj, "beta_scale", p.beta_scale, where);
    p.r0_shape = get_number(obj, "r0_shape", p.r0_shape, where);
    p.r0_scale = get_number(obj, "r0_scale", p.r0_scale, where);
    p.mu_fix = get_number(obj, "mu_fix", p.mu_fix, where);
    p.mu_i_sigma = get_number(obj, "mu_i_sigma", p.mu_i_sigma, where);
    p.mu_i_logmean = get_number(obj, "mu_i_logmean", p.mu_i_logmean, where);
    p.eps_rate = get_number(obj, "eps_rate", p.eps_rate, where);
    p.gamma_e_shape = get_number(obj, "gamma_e_shape", p.gamma_e_shape, where);
    p.gamma_e_scale = get_number(obj, "gamma_e_scale", p.gamma_e_scale, where);
    p.seir_mean_ip = get_number(obj, "seir_mean_ip", p.seir_mean_ip, where);
    for (double v : {p.beta_shape, p.beta_scale, p.r0_shape, p.r0_scale, p.mu_fix, p.mu_i_sigma,
                     p.eps_rate, p.gamma_e_shape, p.gamma_e_scale, p.seir_mean_ip}) {
        if (!(v > 0.0)) bad(where, "hyperparameters must be positive");
    }
    return p;
}

EmbedConfig parse_embed(const json& obj) {
    const std::string where = "embed";
    check_keys(obj, {"kind", "k_emb", "channels", "kernel", "pooled_len", "knn_k", "sage_layers",
                     "width"},
               where);
    EmbedConfig e;
    e.kind = embed_kind_from_string(get_string(obj, "kind", to_string(e.kind), where));
    auto size_field = [&](const char* key, std::size_t def) {
        const long long v = get_int(obj, key, static_cast<long long>(def), where);
        if (v < 1) bad(where, std::string("'") + key + "' must be positive");
        return static_cast<std::size_t>(v);
    };
    e.k_emb = size_field("k_emb", e.k_emb);
    e.kernel = size_field("kernel", e.kernel);
    e.pooled_len = size_field("pooled_len", e.pooled_len);
    e.knn_k = size_field("knn_k", e.knn_k);
    e.sage_layers = size_field("sage_layers", e.sage_layers);
    e.width = size_field("width", e.width);
    if (e.kernel % 2 == 0) bad(where, "'kernel' must be odd");
    if (const json* v = find(obj, "channels")) {
        if (!v->is_array() || v->empty()) bad(where, "'channels' must be a non-empty array");
        e.channels.clear();
        for (const auto& c : *v) {
            if (!c.is_number_integer() || c.get<long long>() < 1) {
                bad(where, "'channels' must hold positive integers");
            }
            e.channels.push_back(c.get<std::size_t>());
        }
    }
    return e;
}

FlowConfig parse_flow(const json& obj) {
    const std::string where = "flow";
    check_keys(obj, {"layers", "bins", "tail_bound", "hidden", "min_bin"}, where);
    FlowConfig f;
    auto size_field = [&](const char* key, std::size_t def) {
        const long long v = get_int(obj, key, static_cast<long long>(def), where);
        if (v < 1) bad(where, std::string("'") + key + "' must be positive");
        return static_cast<std::size_t>(v);
    };
    f.layers = size_field("layers", f.layers);
    f.bins = size_field("bins", f.bins);
    f.hidden = size_field("hidden", f.hidden);
    f.tail_bound = get_number(obj, "tail_bound", f.tail_bound, where);
    if (!(f.tail_bound > 0.0)) bad(where, "'tail_bound' must be positive");
    f.min_bin = get_number(obj, "min_bin", f.min_bin, where);
    if (!(f.min_bin > 0.0)) bad(where, "'min_bin' must be positive");
    return f;
}

OptConfig parse_opt(const json& obj) {
    const std::string where = "opt";
    check_keys(obj, {"batch", "lr", "max_epochs", "patience", "val_frac"}, where);
    OptConfig o;
    auto size_field = [&](const char* key, std::size_t def) {
        const long long v = get_int(obj, key, static_cast<long long>(def), where);
        if (v < 1) bad(where, std::string("'") + key + "' must be positive");
        return static_cast<std::size_t>(v);
    };
    o.batch = size_field("batch", o.batch);
    o.max_epochs = size_field("max_epochs", o.max_epochs);
    o.patience = size_field("patience", o.patience);
    o.lr = get_number(obj, "lr", o.lr, where);
    if (!(o.lr > 0.0)) bad(where, "'lr' must be positive");
    o.val_frac = get_number(obj, "val_frac", o.val_frac, where);
    if (!(o.val_frac > 0.0 && o.val_frac < 1.0)) bad(where, "'val_frac' must lie in (0,1)");
    return o;
}

McmcConfig parse_mcmc(const json& obj) {
    const std::string where = "mcmc";
    check_keys(obj, {"chains", "iters", "burnin", "thin", "target_accept", "infection_props",
                     "exposure_window"},
               where);
    McmcConfig m;
    m.n_chains = static_cast<int>(get_int(obj, "chains", m.n_chains, where));
    m.iters = get_int(obj, "iters", m.iters, where);
    m.burnin = get_int(obj, "burnin", m.burnin, where);
    m.thin = static_cast<int>(get_int(obj, "thin", m.thin, where));
    m.target_accept = get_number(obj, "target_accept", m.target_accept, where);
    m.n_infection_props =
        static_cast<int>(get_int(obj, "infection_props", m.n_infection_props, where));
    m.exposure_window =
        static_cast<int>(get_int(obj, "exposure_window", m.exposure_window, where));
    if (m.n_chains < 1) bad(where, "'chains' must be positive");
    if (m.iters < 1 || m.burnin < 0 || m.iters <= m.burnin) {
        bad(where, "need iters > burnin >= 0");
    }
    if (m.thin < 1) bad(where, "'thin' must be positive");
    if (!(m.target_accept > 0.0 && m.target_accept < 1.0)) {
        bad(where, "'target_accept' must lie in (0,1)");
    }
    if (m.n_infection_props < 1) bad(where, "'infection_props' must be positive");
    if (m.exposure_window < 1) bad(where, "'exposure_window' must be positive");
    return m;
}

json embed_json(const EmbedConfig& e) {
    json channels = json::array();
    for (std::size_t c : e.channels) channels.push_back(c);
    return {{"kind", to_string(e.kind)},     {"k_emb", e.k_emb},
            {"channels", channels},          {"kernel", e.kernel},
            {"pooled_len", e.pooled_len},    {"knn_k", e.knn_k},
            {"sage_layers", e.sage_layers},  {"width", e.width}};
}

json config_json(const RunConfig& cfg) {
    json j;
    j["scenario"] = scenario_to_string(cfg.scenario);
    j["population"] = {{"m", cfg.population.m},
                       {"side", cfg.population.side},
                       {"kind", cfg.population.kind},
                       {"n_clusters", cfg.population.n_clusters},
                       {"spread", cfg.population.spread},
                       {"csv", cfg.population.csv}};
    j["t_horizon"] = cfg.t_horizon;
    j["i0"] = cfg.i0;
    j["seed_ids"] = cfg.seed_ids;
    j["seir_seed_lo"] = cfg.seir_seed_lo;
    j["seir_seed_hi"] = cfg.seir_seed_hi;
    j["fixed_len"] = cfg.fixed_len;
    j["culling_pmf"] = cfg.culling_pmf;
    j["prior"] = {{"beta_shape", cfg.prior.beta_shape},
                  {"beta_scale", cfg.prior.beta_scale},
                  {"r0_shape", cfg.prior.r0_shape},
                  {"r0_scale", cfg.prior.r0_scale},
                  {"mu_fix", cfg.prior.mu_fix},
                  {"mu_i_sigma", cfg.prior.mu_i_sigma},
                  {"mu_i_logmean", cfg.prior.mu_i_logmean},
                  {"eps_rate", cfg.prior.eps_rate},
                  {"gamma_e_shape", cfg.prior.gamma_e_shape},
                  {"gamma_e_scale", cfg.prior.gamma_e_scale},
                  {"seir_mean_ip", cfg.prior.seir_mean_ip}};
    j["embed"] = embed_json(cfg.embed);
    j["flow"] = {{"layers", cfg.flow.layers},
                 {"bins", cfg.flow.bins},
                 {"tail_bound", cfg.flow.tail_bound},
                 {"hidden", cfg.flow.hidden},
                 {"min_bin", cfg.flow.min_bin}};
    j["opt"] = {{"batch", cfg.opt.batch},
                {"lr", cfg.opt.lr},
                {"max_epochs", cfg.opt.max_epochs},
                {"patience", cfg.opt.patience},
                {"val_frac", cfg.opt.val_frac}};
    j["mcmc"] = {{"chains", cfg.mcmc.n_chains},
                 {"iters", cfg.mcmc.iters},
                 {"burnin", cfg.mcmc.burnin},
                 {"thin", cfg.mcmc.thin},
                 {"target_accept", cfg.mcmc.target_accept},
                 {"infection_props", cfg.mcmc.n_infection_props},
                 {"exposure_window", cfg.mcmc.exposure_window}};
    j["n_train"] = cfg.n_train;
    j["n_test"] = cfg.n_test;
    j["n_posterior"] = cfg.n_posterior;
    j["master_seed"] = cfg.master_seed;
    j["out_dir"] = cfg.out_dir;
    return j;
}

} // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    const std::string where = "top level";
    check_keys(j,
               {"scenario", "population", "t_horizon", "i0", "seed_ids", "seir_seed_lo",
                "seir_seed_hi", "fixed_len", "culling_pmf", "prior", "embed", "flow", "opt",
                "mcmc", "n_train", "n_test", "n_posterior", "master_seed", "out_dir"},
               where);

    RunConfig cfg;
    cfg.scenario = scenario_from_string(
        get_string(j, "scenario", scenario_to_string(cfg.scenario), where));
    if (const json* v = find(j, "population")) {
        if (!v->is_object()) bad(where, "'population' must be an object");
        cfg.population = parse_population(*v);
    }
    cfg.t_horizon = static_cast<int>(get_int(j, "t_horizon", cfg.t_horizon, where));
    if (cfg.t_horizon < 1) bad(where, "'t_horizon' must be positive");
    cfg.i0 = static_cast<int>(get_int(j, "i0", cfg.i0, where));
    if (cfg.i0 < 1) bad(where, "'i0' must be positive");
    if (const json* v = find(j, "seed_ids")) {
        if (!v->is_array()) bad(where, "'seed_ids' must be an array");
        for (const auto& e : *v) {
            if (!e.is_number_integer() || e.get<long long>() < 0) {
                bad(where, "'seed_ids' must hold non-negative integers");
            }
            cfg.seed_ids.push_back(e.get<std::uint32_t>());
        }
    }
    cfg.seir_seed_lo = static_cast<int>(get_int(j, "seir_seed_lo", cfg.seir_seed_lo, where));
    cfg.seir_seed_hi = static_cast<int>(get_int(j, "seir_seed_hi", cfg.seir_seed_hi, where));
    if (cfg.seir_seed_lo < 1 || cfg.seir_seed_hi < cfg.seir_seed_lo) {
        bad(where, "need 1 <= seir_seed_lo <= seir_seed_hi");
    }
    cfg.fixed_len = static_cast<int>(get_int(j, "fixed_len", cfg.fixed_len, where));
    if (cfg.fixed_len < 1) bad(where, "'fixed_len' must be positive");
    cfg.culling_pmf = get_number_list(j, "culling_pmf", cfg.culling_pmf, where);
    if (cfg.culling_pmf.empty()) bad(where, "'culling_pmf' must be non-empty");
    double pmf_sum = 0.0;
    for (double p : cfg.culling_pmf) {
        if (p < 0.0) bad(where, "'culling_pmf' entries must be non-negative");
        pmf_sum += p;
    }
    if (std::fabs(pmf_sum - 1.0) > 1e-9) bad(where, "'culling_pmf' must sum to 1");
    if (const json* v = find(j, "prior")) {
        if (!v->is_object()) bad(where, "'prior' must be an object");
        cfg.prior = parse_prior(*v);
    }
    if (const json* v = find(j, "embed")) {
        if (!v->is_object()) bad(where, "'embed' must be an object");
        cfg.embed = parse_embed(*v);
    }
    if (const json* v = find(j, "flow")) {
        if (!v->is_object()) bad(where, "'flow' must be an object");
        cfg.flow = parse_flow(*v);
    }
    if (const json* v = find(j, "opt")) {
        if (!v->is_object()) bad(where, "'opt' must be an object");
        cfg.opt = parse_opt(*v);
    }
    if (const json* v = find(j, "mcmc")) {
        if (!v->is_object()) bad(where, "'mcmc' must be an object");
        cfg.mcmc = parse_mcmc(*v);
    }
    auto count_field = [&](const char* key, std::size_t def) {
        const long long v = get_int(j, key, static_cast<long long>(def), where);
        if (v < 1) bad(where, std::string("'") + key + "' must be positive");
        return static_cast<std::size_t>(v);
    };
    cfg.n_train = count_field("n_train", cfg.n_train);
    cfg.n_test = count_field("n_test", cfg.n_test);
    cfg.n_posterior = count_field("n_posterior", cfg.n_posterior);
    const long long seed = get_int(j, "master_seed", static_cast<long long>(cfg.master_seed), where);
    if (seed < 0) bad(where, "'master_seed' must be non-negative");
    cfg.master_seed = static_cast<std::uint64_t>(seed);
    cfg.out_dir = get_string(j, "out_dir", cfg.out_dir, where);

    cfg.mcmc.fixed_len = cfg.fixed_len;
    cfg.mcmc.culling_pmf = cfg.culling_pmf;
    cfg.mcmc.seed = derive_stream(cfg.master_seed, 0x6D636D63ull);
    cfg.flow.dim = scenario_dim(cfg.scenario);
    cfg.flow.context_dim = cfg.embed.k_emb;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_text_file(path));
}

std::string canonical_json(const RunConfig& cfg) {
    return config_json(cfg).dump(2);
}

std::uint64_t config_fingerprint(const RunConfig& cfg) {
    return fnv1a64(config_json(cfg).dump());
}

Population resolve_population(const RunConfig& cfg) {
    if (!cfg.population.csv.empty()) return Population::load_csv(cfg.population.csv);
    const std::uint64_t seed = derive_stream(cfg.master_seed, kPopTag);
    if (cfg.population.kind == "clustered") {
        return Population::generate_clustered(cfg.population.m, cfg.population.n_clusters,
                                              cfg.population.spread, seed);
    }
    return Population::generate_uniform(cfg.population.m, cfg.population.side, seed);
}

std::vector<std::uint32_t> resolve_seed_ids(const RunConfig& cfg, std::size_t pop_size) {
    if (!cfg.seed_ids.empty()) {
        std::vector<std::uint32_t> ids = cfg.seed_ids;
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= pop_size) throw ConfigError("config: seed id out of range");
            if (i > 0 && ids[i] == ids[i - 1]) throw ConfigError("config: duplicate seed id");
        }
        return ids;
    }
    if (static_cast<std::size_t>(cfg.i0) > pop_size) {
        throw ConfigError("config: i0 exceeds the population size");
    }
    RngStream rng(cfg.master_seed, derive_stream(kSeedIdTag, 0));
    std::vector<std::uint32_t> ids(pop_size);
    std::iota(ids.begin(), ids.end(), 0u);
    for (int i = 0; i < cfg.i0; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) + rng.uniform_int(pop_size - static_cast<std::size_t>(i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }
    std::vector<std::uint32_t> out(ids.begin(), ids.begin() + cfg.i0);
    std::sort(out.begin(), out.end());
    return out;
}

SimStudyConfig study_config(const RunConfig& cfg, const Population& pop) {
    SimStudyConfig sc;
    sc.scenario = cfg.scenario;
    sc.T = cfg.t_horizon;
    if (cfg.scenario != Scenario::Seir) sc.seeds = resolve_seed_ids(cfg, pop.size());
    sc.seir_seed_lo = cfg.seir_seed_lo;
    sc.seir_seed_hi = cfg.seir_seed_hi;
    sc.prior = cfg.prior;
    sc.fixed_len = cfg.fixed_len;
    sc.culling_pmf = cfg.culling_pmf;
    return sc;
}

void write_manifest(const std::filesystem::path& path, const std::string& command,
                    std::uint64_t fingerprint, std::uint64_t seed, double wall_seconds,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
    json j;
    j["command"] = command;
    j["fingerprint"] = fingerprint;
    j["seed"] = seed;
    j["wall_seconds"] = wall_seconds;
    j["version"] = "0.1.0";
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    j["unix_time"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    for (const auto& [key, value] : extra) j[key] = value;
    write_text_file(path, j.dump(2) + "\n");
}

} // namespace ilm
