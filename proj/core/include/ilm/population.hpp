#pragma once

#include "ilm/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ilm {

struct Region {
    double xmin = 0.0;
    double xmax = 0.0;
    double ymin = 0.0;
    double ymax = 0.0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    // Longest extent, used to normalise coordinates for node features.
    double side() const { return width() > height() ? width() : height(); }
};

// Immutable spatial population. Ids are the stable indices 0..M-1. The dense
// distance matrix is built at construction, which also rejects duplicate
// coordinates (a zero distance would blow up d^{-beta}). Intended scale is
// a few thousand individuals at most.
class Population {
public:
    static Population from_coords(std::vector<double> xs, std::vector<double> ys, Region region);
    static Population generate_uniform(std::size_t m, double side, std::uint64_t seed);
    static Population generate_clustered(std::size_t m, std::size_t n_clusters, double spread,
                                         std::uint64_t seed);
    // CSV with header `id,x,y`; ids must form a permutation of 0..M-1.
    static Population load_csv(const std::filesystem::path& path);
    void save_csv(const std::filesystem::path& path) const;

    std::size_t size() const { return xs_.size(); }
    double x(std::size_t i) const { return xs_[i]; }
    double y(std::size_t i) const { return ys_[i]; }
    const Region& region() const { return region_; }

    double distance(std::size_t i, std::size_t j) const { return dist_[i * size() + j]; }
    // Row-major M*M, zero diagonal.
    const std::vector<double>& distance_matrix() const { return dist_; }
    // log d_ij with zero diagonal (value there is unused by convention).
    const std::vector<double>& log_distance_matrix() const;

private:
    Population() = default;

    std::vector<double> xs_;
    std::vector<double> ys_;
    Region region_;
    std::vector<double> dist_;
    mutable std::vector<double> log_dist_;
};

struct SpatialGraph {
    int k = 0;
    // Out-edges of node i occupy [i*k, (i+1)*k), nearest first.
    std::vector<std::uint32_t> edges;

    std::span<const std::uint32_t> neighbours(std::size_t i) const {
        return {edges.data() + i * static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
    }
};

// d_ij^{-beta}, symmetric, zero diagonal.
std::vector<double> pairwise_kernel(const Population& pop, double beta);

// Directed k-nearest-neighbour graph; ties broken by lower node index.
SpatialGraph knn_graph(const Population& pop, int k);

// Mean over seeds j of the total pressure they exert on the non-seed set:
// (1/|seeds|) sum_{j in seeds} sum_{i not in seeds} d_ij^{-beta}.
double mean_initial_pressure(const Population& pop, std::span<const std::uint32_t> seeds, double beta);

} // namespace ilm
