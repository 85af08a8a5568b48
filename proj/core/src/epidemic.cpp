#include "ilm/epidemic.hpp"

#include "ilm/errors.hpp"
#include "ilm/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ilm {

Scenario scenario_from_string(const std::string& s) {
    if (s == "full") return Scenario::Full;
    if (s == "stoch") return Scenario::Stoch;
    if (s == "partial") return Scenario::Partial;
    if (s == "seir") return Scenario::Seir;
    throw ConfigError("unknown scenario '" + s + "' (expected full|stoch|partial|seir)");
}

std::string scenario_to_string(Scenario s) {
    switch (s) {
        case Scenario::Full: return "full";
        case Scenario::Stoch: return "stoch";
        case Scenario::Partial: return "partial";
        case Scenario::Seir: return "seir";
    }
    throw std::logic_error("scenario_to_string: bad enum");
}

std::size_t scenario_dim(Scenario s) {
    switch (s) {
        case Scenario::Full: return 2;
        case Scenario::Stoch: return 3;
        case Scenario::Partial: return 3;
        case Scenario::Seir: return 4;
    }
    throw std::logic_error("scenario_dim: bad enum");
}

std::vector<std::string> scenario_param_names(Scenario s) {
    switch (s) {
        case Scenario::Full: return {"alpha", "beta"};
        case Scenario::Stoch: return {"alpha", "beta", "gamma"};
        case Scenario::Partial: return {"alpha", "beta", "rho"};
        case Scenario::Seir: return {"alpha", "beta", "eps", "gamma_e"};
    }
    throw std::logic_error("scenario_param_names: bad enum");
}

bool params_in_domain(Scenario s, std::span<const double> v) {
    if (v.size() != scenario_dim(s)) {
        throw std::invalid_argument("params_in_domain: wrong dimension for scenario");
    }
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    if (!(v[0] > 0.0) || !(v[1] > 0.0)) return false;
    switch (s) {
        case Scenario::Full: return true;
        case Scenario::Stoch: return v[2] > 0.0;
        case Scenario::Partial: return v[2] > 0.0 && v[2] < 1.0;
        case Scenario::Seir: return v[2] >= 0.0 && v[3] > 0.0;
    }
    return false;
}

RemovalModel RemovalModel::fixed(int len) {
    if (len < 1) throw std::invalid_argument("RemovalModel::fixed: length must be at least 1");
    RemovalModel m;
    m.kind = Kind::Fixed;
    m.fixed_len = len;
    return m;
}

RemovalModel RemovalModel::geometric(double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("RemovalModel::geometric: gamma must be positive");
    RemovalModel m;
    m.kind = Kind::Geometric;
    m.gamma = gamma;
    return m;
}

double infection_prob(double pressure, double alpha, double eps) {
    if (pressure < 0.0 || !(alpha > 0.0) || eps < 0.0) {
        throw std::invalid_argument("infection_prob: need pressure >= 0, alpha > 0, eps >= 0");
    }
    return -std::expm1(-alpha * pressure - eps);
}

double removal_prob(double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("removal_prob: gamma must be positive");
    return -std::expm1(-gamma);
}

namespace {

std::vector<std::uint32_t> checked_seeds(std::span<const std::uint32_t> seeds, std::size_t m) {
    if (seeds.empty()) throw std::invalid_argument("simulate: seed set is empty");
    std::vector<std::uint32_t> out(seeds.begin(), seeds.end());
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end()) {
        throw std::invalid_argument("simulate: duplicate seed id");
    }
    if (out.back() >= m) throw std::invalid_argument("simulate: seed id out of range");
    return out;
}

void add_row(std::vector<double>& pressure, const std::vector<double>& kernel, std::size_t m,
             std::size_t j, double sign) {
    const double* row = kernel.data() + j * m;
    for (std::size_t i = 0; i < m; ++i) pressure[i] += sign * row[i];
}

int draw_duration(std::span<const double> pmf, RngStream& rng) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t g = 0; g < pmf.size(); ++g) {
        acc += pmf[g];
        if (u < acc) return static_cast<int>(g) + 1;
    }
    return static_cast<int>(pmf.size());
}

} // namespace

Trajectory simulate_sir(const Population& pop, double alpha, double beta,
                        const RemovalModel& removal, std::span<const std::uint32_t> seeds,
                        int T, RngStream& rng) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("simulate_sir: alpha, beta must be positive");
    if (T < 1) throw std::invalid_argument("simulate_sir: T must be at least 1");
    if (removal.kind == RemovalModel::Kind::Geometric && !(removal.gamma > 0.0)) {
        throw std::invalid_argument("simulate_sir: gamma must be positive");
    }
    const std::size_t m = pop.size();

    Trajectory traj;
    traj.T = T;
    traj.infection_time.assign(m, kNever);
    traj.removal_time.assign(m, kNever);
    traj.seeds = checked_seeds(seeds, m);

    const std::vector<double> kernel = pairwise_kernel(pop, beta);
    std::vector<double> pressure(m, 0.0);
    for (std::uint32_t s : traj.seeds) {
        traj.infection_time[s] = 0;
        if (removal.kind == RemovalModel::Kind::Fixed) {
            const int r = removal.fixed_len;
            traj.removal_time[s] = r <= T ? r : kNever;
        }
        add_row(pressure, kernel, m, s, +1.0);
    }

    const double p_rem = removal.kind == RemovalModel::Kind::Geometric ? removal_prob(removal.gamma) : 0.0;
    std::vector<std::uint32_t> fresh;
    for (int t = 0; t < T; ++t) {
        fresh.clear();
        for (std::size_t i = 0; i < m; ++i) {
            if (traj.infection_time[i] != kNever) continue;
            const double p = -std::expm1(-alpha * pressure[i]);
            if (rng.bernoulli(p)) {
                traj.infection_time[i] = t + 1;
                fresh.push_back(static_cast<std::uint32_t>(i));
            }
        }
        if (removal.kind == RemovalModel::Kind::Geometric) {
            for (std::size_t i = 0; i < m; ++i) {
                if (traj.infection_time[i] == kNever || traj.infection_time[i] > t) continue;
                if (traj.removal_time[i] != kNever) continue;
                if (rng.bernoulli(p_rem)) traj.removal_time[i] = t + 1;
            }
        }
        for (std::size_t i = 0; i < m; ++i) {
            if (traj.removal_time[i] == t + 1) add_row(pressure, kernel, m, i, -1.0);
        }
        for (std::uint32_t i : fresh) {
            if (removal.kind == RemovalModel::Kind::Fixed) {
                const int r = t + 1 + removal.fixed_len;
                traj.removal_time[i] = r <= T ? r : kNever;
            }
            add_row(pressure, kernel, m, i, +1.0);
        }
    }
    return traj;
}

Trajectory simulate_seir(const Population& pop, double alpha, double beta, double eps,
                         double gamma_e, std::span<const double> culling_pmf,
                         std::span<const std::uint32_t> seeds, int T, RngStream& rng) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("simulate_seir: alpha, beta must be positive");
    if (eps < 0.0 || !(gamma_e > 0.0)) throw std::invalid_argument("simulate_seir: need eps >= 0, gamma_e > 0");
    if (T < 1) throw std::invalid_argument("simulate_seir: T must be at least 1");
    const std::size_t m = pop.size();
    if (seeds.empty()) throw std::invalid_argument("simulate_seir: need at least one seed");
    if (culling_pmf.empty()) throw std::invalid_argument("simulate_seir: empty culling pmf");
    double pmf_sum = 0.0;
    for (double p : culling_pmf) {
        if (p < 0.0) throw std::invalid_argument("simulate_seir: negative culling pmf entry");
        pmf_sum += p;
    }
    if (std::fabs(pmf_sum - 1.0) > 1e-9) throw std::invalid_argument("simulate_seir: culling pmf must sum to 1");

    Trajectory traj;
    traj.T = T;
    traj.exposure_time.assign(m, kNever);
    traj.infection_time.assign(m, kNever);
    traj.removal_time.assign(m, kNever);

    traj.seeds.assign(seeds.begin(), seeds.end());
    std::sort(traj.seeds.begin(), traj.seeds.end());
    for (std::size_t i = 0; i < traj.seeds.size(); ++i) {
        if (traj.seeds[i] >= m) throw std::invalid_argument("simulate_seir: seed id out of range");
        if (i > 0 && traj.seeds[i] == traj.seeds[i - 1]) {
            throw std::invalid_argument("simulate_seir: duplicate seed id");
        }
    }

    const std::vector<double> kernel = pairwise_kernel(pop, beta);
    std::vector<double> pressure(m, 0.0);
    for (std::uint32_t s : traj.seeds) {
        traj.exposure_time[s] = 0;
        traj.infection_time[s] = 0;
        const int g = draw_duration(culling_pmf, rng);
        traj.removal_time[s] = g <= T ? g : kNever;
        add_row(pressure, kernel, m, s, +1.0);
    }

    const double p_ei = -std::expm1(-gamma_e);
    std::vector<std::uint32_t> fresh_inf;
    for (int t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < m; ++i) {
            if (traj.exposure_time[i] != kNever) continue;
            const double p = -std::expm1(-alpha * pressure[i] - eps);
            if (rng.bernoulli(p)) traj.exposure_time[i] = t + 1;
        }
        fresh_inf.clear();
        for (std::size_t i = 0; i < m; ++i) {
            if (traj.exposure_time[i] == kNever || traj.exposure_time[i] > t) continue;
            if (traj.infection_time[i] != kNever) continue;
            if (rng.bernoulli(p_ei)) {
                traj.infection_time[i] = t + 1;
                const int g = draw_duration(culling_pmf, rng);
                const int r = t + 1 + g;
                traj.removal_time[i] = r <= T ? r : kNever;
                fresh_inf.push_back(static_cast<std::uint32_t>(i));
            }
        }
        for (std::size_t i = 0; i < m; ++i) {
            if (traj.removal_time[i] == t + 1) add_row(pressure, kernel, m, i, -1.0);
        }
        for (std::uint32_t i : fresh_inf) add_row(pressure, kernel, m, i, +1.0);
    }
    return traj;
}

Trajectory simulate_seir(const Population& pop, double alpha, double beta, double eps,
                         double gamma_e, std::span<const double> culling_pmf,
                         int seed_lo, int seed_hi, int T, RngStream& rng) {
    const std::size_t m = pop.size();
    if (seed_lo < 1 || seed_hi < seed_lo || static_cast<std::size_t>(seed_hi) > m) {
        throw std::invalid_argument("simulate_seir: bad seed-count range");
    }
    const int n_seeds = seed_lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(seed_hi - seed_lo + 1)));
    std::vector<std::uint32_t> ids(m);
    std::iota(ids.begin(), ids.end(), 0u);
    for (int i = 0; i < n_seeds; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) + rng.uniform_int(m - static_cast<std::size_t>(i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }
    const std::vector<std::uint32_t> seeds(ids.begin(), ids.begin() + n_seeds);
    return simulate_seir(pop, alpha, beta, eps, gamma_e, culling_pmf, seeds, T, rng);
}

ObservedEpidemic observe(const Trajectory& traj, Scenario scenario, double rho, RngStream& rng) {
    const std::size_t m = traj.size();
    ObservedEpidemic obs;
    obs.scenario = scenario;
    obs.T = traj.T;
    obs.M = m;
    obs.seeds = traj.seeds;
    obs.node_observed.assign(m, 0);
    obs.node_obs_time.assign(m, kNever);
    obs.incidence.assign(static_cast<std::size_t>(traj.T), 0);

    if (scenario == Scenario::Partial) {
        if (!(rho > 0.0 && rho < 1.0)) {
            throw std::invalid_argument("observe: Partial scenario needs rho in (0,1)");
        }
    }
    std::vector<std::uint8_t> is_seed(m, 0);
    for (std::uint32_t s : traj.seeds) is_seed[s] = 1;

    for (std::size_t i = 0; i < m; ++i) {
        if (traj.infection_time[i] == kNever) continue;
        bool keep = true;
        if (scenario == Scenario::Partial && !is_seed[i]) keep = rng.bernoulli(rho);
        if (!keep) continue;
        obs.node_observed[i] = 1;
        obs.node_obs_time[i] = traj.infection_time[i];
        if (traj.infection_time[i] >= 1) {
            obs.incidence[static_cast<std::size_t>(traj.infection_time[i] - 1)] += 1;
        }
    }
    return obs;
}

void save_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "id,exposure_time,infection_time,removal_time,observed\n";
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const int e = traj.exposure_time.empty() ? kNever : traj.exposure_time[i];
        out << i << ',' << e << ',' << traj.infection_time[i] << ',' << traj.removal_time[i]
            << ',' << (traj.infection_time[i] != kNever ? 1 : 0) << '\n';
    }
    write_text_file(path, out.str());
}

Trajectory load_trajectory_csv(const std::filesystem::path& path, int T) {
    const auto rows = read_csv(path, "id,exposure_time,infection_time,removal_time,observed");
    const std::size_t m = rows.size();
    if (m == 0) throw ConfigError(path.string() + ": empty trajectory");
    if (T < 1) throw ConfigError(path.string() + ": horizon must be positive");
    Trajectory traj;
    traj.exposure_time.assign(m, kNever);
    traj.infection_time.assign(m, kNever);
    traj.removal_time.assign(m, kNever);
    bool any_exposure = false;
    int t_max = 0;
    for (const auto& row : rows) {
        const long long id = parse_int(row[0], path.string() + " id");
        if (id < 0 || static_cast<std::size_t>(id) >= m) {
            throw ConfigError(path.string() + ": id out of range: " + row[0]);
        }
        const std::size_t i = static_cast<std::size_t>(id);
        traj.exposure_time[i] = static_cast<int>(parse_int(row[1], path.string() + " exposure_time"));
        traj.infection_time[i] = static_cast<int>(parse_int(row[2], path.string() + " infection_time"));
        traj.removal_time[i] = static_cast<int>(parse_int(row[3], path.string() + " removal_time"));
        if (traj.exposure_time[i] != kNever) any_exposure = true;
        t_max = std::max({t_max, traj.exposure_time[i], traj.infection_time[i], traj.removal_time[i]});
        if (traj.infection_time[i] == 0) traj.seeds.push_back(static_cast<std::uint32_t>(i));
    }
    if (!any_exposure) traj.exposure_time.clear();
    if (t_max > T) {
        throw ConfigError(path.string() + ": event time " + std::to_string(t_max) +
                          " beyond horizon " + std::to_string(T));
    }
    traj.T = T;
    return traj;
}

void save_observed(const ObservedEpidemic& obs, const std::filesystem::path& dir) {
    ensure_dir(dir);
    nlohmann::json meta;
    meta["scenario"] = scenario_to_string(obs.scenario);
    meta["M"] = obs.M;
    meta["T"] = obs.T;
    meta["seeds"] = obs.seeds;
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");

    std::ostringstream inc;
    inc << "t,count\n";
    for (std::size_t s = 0; s < obs.incidence.size(); ++s) {
        inc << (s + 1) << ',' << obs.incidence[s] << '\n';
    }
    write_text_file(dir / "incidence.csv", inc.str());

    std::ostringstream nodes;
    nodes << "id,observed,obs_time\n";
    for (std::size_t i = 0; i < obs.node_observed.size(); ++i) {
        nodes << i << ',' << int(obs.node_observed[i]) << ',' << obs.node_obs_time[i] << '\n';
    }
    write_text_file(dir / "nodes.csv", nodes.str());
}

ObservedEpidemic load_observed(const std::filesystem::path& dir) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(dir / "meta.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError((dir / "meta.json").string() + ": " + e.what());
    }
    ObservedEpidemic obs;
    try {
        obs.scenario = scenario_from_string(meta.at("scenario").get<std::string>());
        obs.M = meta.at("M").get<std::size_t>();
        obs.T = meta.at("T").get<int>();
        obs.seeds = meta.at("seeds").get<std::vector<std::uint32_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError((dir / "meta.json").string() + ": " + e.what());
    }
    if (obs.T < 1 || obs.M < 2) throw ConfigError((dir / "meta.json").string() + ": bad M or T");

    const auto inc_rows = read_csv(dir / "incidence.csv", "t,count");
    if (inc_rows.size() != static_cast<std::size_t>(obs.T)) {
        throw ConfigError((dir / "incidence.csv").string() + ": expected " + std::to_string(obs.T) + " rows");
    }
    obs.incidence.assign(static_cast<std::size_t>(obs.T), 0);
    for (std::size_t s = 0; s < inc_rows.size(); ++s) {
        const long long t = parse_int(inc_rows[s][0], "incidence t");
        if (t != static_cast<long long>(s + 1)) throw ConfigError((dir / "incidence.csv").string() + ": t column must run 1..T");
        obs.incidence[s] = static_cast<int>(parse_int(inc_rows[s][1], "incidence count"));
    }

    const auto node_rows = read_csv(dir / "nodes.csv", "id,observed,obs_time");
    if (node_rows.size() != obs.M) {
        throw ConfigError((dir / "nodes.csv").string() + ": expected M=" + std::to_string(obs.M) + " rows");
    }
    obs.node_observed.assign(obs.M, 0);
    obs.node_obs_time.assign(obs.M, kNever);
    std::vector<int> counts(static_cast<std::size_t>(obs.T), 0);
    for (const auto& row : node_rows) {
        const long long id = parse_int(row[0], "nodes id");
        if (id < 0 || static_cast<std::size_t>(id) >= obs.M) throw ConfigError((dir / "nodes.csv").string() + ": id out of range");
        const std::size_t i = static_cast<std::size_t>(id);
        obs.node_observed[i] = parse_int(row[1], "nodes observed") != 0 ? 1 : 0;
        obs.node_obs_time[i] = static_cast<int>(parse_int(row[2], "nodes obs_time"));
        if (obs.node_observed[i] && obs.node_obs_time[i] >= 1) {
            if (obs.node_obs_time[i] > obs.T) throw ConfigError((dir / "nodes.csv").string() + ": obs_time beyond T");
            counts[static_cast<std::size_t>(obs.node_obs_time[i] - 1)] += 1;
        }
    }
    if (counts != obs.incidence) {
        throw ConfigError(dir.string() + ": incidence.csv does not match nodes.csv");
    }
    return obs;
}

} // namespace ilm
