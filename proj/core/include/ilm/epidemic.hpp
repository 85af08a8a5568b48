#pragma once

#include "ilm/population.hpp"
#include "ilm/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ilm {

// Sentinel for "event never happened", also the on-disk encoding.
constexpr int kNever = -1;

enum class Scenario { Full, Stoch, Partial, Seir };

Scenario scenario_from_string(const std::string& s);
std::string scenario_to_string(Scenario s);

// Parameter order is pinned per scenario:
//   Full    (alpha, beta)
//   Stoch   (alpha, beta, gamma)
//   Partial (alpha, beta, rho)
//   Seir    (alpha, beta, eps, gamma_e)
std::size_t scenario_dim(Scenario s);
std::vector<std::string> scenario_param_names(Scenario s);
bool params_in_domain(Scenario s, std::span<const double> v);

// Discrete-time event record over horizon T. Times are steps in 0..T;
// exposure_time is populated only for SEIR runs. Seeds carry
// infection_time = 0 (and exposure_time = 0 under SEIR). An individual
// still infectious at T keeps removal_time = kNever.
struct Trajectory {
    int T = 0;
    std::vector<int> exposure_time;
    std::vector<int> infection_time;
    std::vector<int> removal_time;
    std::vector<std::uint32_t> seeds;

    std::size_t size() const { return infection_time.size(); }
    bool infected(std::size_t i) const { return infection_time[i] != kNever; }
    bool infectious_at(std::size_t i, int t) const {
        return infection_time[i] != kNever && infection_time[i] <= t &&
               (removal_time[i] == kNever || removal_time[i] > t);
    }
    bool susceptible_at(std::size_t i, int t) const {
        const int first = exposure_time.empty() ? infection_time[i] : exposure_time[i];
        return first == kNever || first > t;
    }
};

// The file carries event times only, so the caller supplies the horizon T;
// every recorded time must lie within it.
void save_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory_csv(const std::filesystem::path& path, int T);

struct RemovalModel {
    enum class Kind { Fixed, Geometric };
    Kind kind = Kind::Fixed;
    int fixed_len = 3;
    double gamma = 0.0;

    static RemovalModel fixed(int len);
    static RemovalModel geometric(double gamma);
};

double infection_prob(double pressure, double alpha, double eps = 0.0);
double removal_prob(double gamma);

Trajectory simulate_sir(const Population& pop, double alpha, double beta,
                        const RemovalModel& removal, std::span<const std::uint32_t> seeds,
                        int T, RngStream& rng);

// Culling pmf gives the infectious-period distribution over durations
// 1..pmf.size(). Seeds are infectious at t=0 with a culling-distributed
// removal.
Trajectory simulate_seir(const Population& pop, double alpha, double beta, double eps,
                         double gamma_e, std::span<const double> culling_pmf,
                         std::span<const std::uint32_t> seeds, int T, RngStream& rng);

// Draws the number of seeds uniformly from [seed_lo, seed_hi] and seed ids
// uniformly without replacement, then runs the seeded simulator.
Trajectory simulate_seir(const Population& pop, double alpha, double beta, double eps,
                         double gamma_e, std::span<const double> culling_pmf,
                         int seed_lo, int seed_hi, int T, RngStream& rng);

// What the inference methods get to see. incidence[s] counts observed
// infections at step s+1 (seeds sit at step 0 and are reported through
// node_obs_time, not the curve).
struct ObservedEpidemic {
    Scenario scenario = Scenario::Full;
    int T = 0;
    std::size_t M = 0;
    std::vector<int> incidence;
    std::vector<std::uint8_t> node_observed;
    std::vector<int> node_obs_time;
    std::vector<std::uint32_t> seeds;
};

// Full/Stoch/Seir expose every infection time; Partial thins non-seed
// infections with retention probability rho (seeds always observed).
ObservedEpidemic observe(const Trajectory& traj, Scenario scenario, double rho, RngStream& rng);

// Bundle layout: dir/{meta.json, incidence.csv, nodes.csv}.
void save_observed(const ObservedEpidemic& obs, const std::filesystem::path& dir);
ObservedEpidemic load_observed(const std::filesystem::path& dir);

} // namespace ilm
