#include "ilm/population.hpp"

#include "ilm/errors.hpp"
#include "ilm/io.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ilm {

Population Population::from_coords(std::vector<double> xs, std::vector<double> ys, Region region) {
    if (xs.size() != ys.size()) throw std::invalid_argument("population: coordinate arrays differ in length");
    const std::size_t m = xs.size();
    if (m < 2) throw std::invalid_argument("population: need at least 2 individuals");
    for (std::size_t i = 0; i < m; ++i) {
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
            throw std::invalid_argument("population: non-finite coordinate at id " + std::to_string(i));
        }
    }
    Population pop;
    pop.xs_ = std::move(xs);
    pop.ys_ = std::move(ys);
    pop.region_ = region;
    pop.dist_.assign(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double dx = pop.xs_[i] - pop.xs_[j];
            const double dy = pop.ys_[i] - pop.ys_[j];
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d == 0.0) {
                throw std::invalid_argument("population: duplicate coordinates at ids " +
                                            std::to_string(i) + " and " + std::to_string(j));
            }
            pop.dist_[i * m + j] = d;
            pop.dist_[j * m + i] = d;
        }
    }
    return pop;
}

Population Population::generate_uniform(std::size_t m, double side, std::uint64_t seed) {
    if (m < 2) throw std::invalid_argument("generate_uniform: M must be at least 2");
    if (!(side > 0.0)) throw std::invalid_argument("generate_uniform: side must be positive");
    RngStream rng(seed, mix64(0x706F70756C6174ull));
    std::vector<double> xs(m);
    std::vector<double> ys(m);
    for (std::size_t i = 0; i < m; ++i) {
        xs[i] = side * rng.uniform01();
        ys[i] = side * rng.uniform01();
    }
    return from_coords(std::move(xs), std::move(ys), Region{0.0, side, 0.0, side});
}

Population Population::generate_clustered(std::size_t m, std::size_t n_clusters, double spread,
                                          std::uint64_t seed) {
    if (m < 2) throw std::invalid_argument("generate_clustered: M must be at least 2");
    if (n_clusters < 1) throw std::invalid_argument("generate_clustered: need at least one cluster");
    if (!(spread > 0.0)) throw std::invalid_argument("generate_clustered: spread must be positive");
    const double side = 100.0;
    RngStream rng(seed, mix64(0x636C757374657200ull));
    std::vector<double> cx(n_clusters);
    std::vector<double> cy(n_clusters);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        cx[c] = side * rng.uniform01();
        cy[c] = side * rng.uniform01();
    }
    std::vector<double> xs(m);
    std::vector<double> ys(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t c = rng.uniform_int(n_clusters);
        xs[i] = std::clamp(cx[c] + spread * rng.normal(), 0.0, side);
        ys[i] = std::clamp(cy[c] + spread * rng.normal(), 0.0, side);
    }
    return from_coords(std::move(xs), std::move(ys), Region{0.0, side, 0.0, side});
}

Population Population::load_csv(const std::filesystem::path& path) {
    const auto rows = read_csv(path, "id,x,y");
    const std::size_t m = rows.size();
    if (m < 2) throw ConfigError(path.string() + ": population needs at least 2 rows");
    std::vector<double> xs(m, 0.0);
    std::vector<double> ys(m, 0.0);
    std::vector<bool> seen(m, false);
    for (const auto& row : rows) {
        const long long id = parse_int(row[0], path.string() + " id");
        if (id < 0 || static_cast<std::size_t>(id) >= m) {
            throw ConfigError(path.string() + ": id " + row[0] + " outside 0.." + std::to_string(m - 1));
        }
        if (seen[static_cast<std::size_t>(id)]) {
            throw ConfigError(path.string() + ": duplicate id " + row[0]);
        }
        seen[static_cast<std::size_t>(id)] = true;
        xs[static_cast<std::size_t>(id)] = parse_double(row[1], path.string() + " x");
        ys[static_cast<std::size_t>(id)] = parse_double(row[2], path.string() + " y");
    }
    Region region{xs[0], xs[0], ys[0], ys[0]};
    for (std::size_t i = 0; i < m; ++i) {
        region.xmin = std::min(region.xmin, xs[i]);
        region.xmax = std::max(region.xmax, xs[i]);
        region.ymin = std::min(region.ymin, ys[i]);
        region.ymax = std::max(region.ymax, ys[i]);
    }
    try {
        return from_coords(std::move(xs), std::move(ys), region);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void Population::save_csv(const std::filesystem::path& path) const {
    std::ostringstream out;
    out << "id,x,y\n";
    for (std::size_t i = 0; i < size(); ++i) {
        out << i << ',' << format_double(xs_[i]) << ',' << format_double(ys_[i]) << '\n';
    }
    write_text_file(path, out.str());
}

const std::vector<double>& Population::log_distance_matrix() const {
    if (log_dist_.empty()) {
        const std::size_t m = size();
        log_dist_.assign(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                if (i != j) log_dist_[i * m + j] = std::log(dist_[i * m + j]);
            }
        }
    }
    return log_dist_;
}

std::vector<double> pairwise_kernel(const Population& pop, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("pairwise_kernel: beta must be positive");
    const std::size_t m = pop.size();
    const auto& logd = pop.log_distance_matrix();
    std::vector<double> k(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double v = std::exp(-beta * logd[i * m + j]);
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    return k;
}

SpatialGraph knn_graph(const Population& pop, int k) {
    const std::size_t m = pop.size();
    if (k < 1 || static_cast<std::size_t>(k) > m - 1) {
        throw std::invalid_argument("knn_graph: k must be in [1, M-1]");
    }
    SpatialGraph g;
    g.k = k;
    g.edges.resize(m * static_cast<std::size_t>(k));
    std::vector<std::uint32_t> order;
    order.reserve(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
        order.clear();
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i) order.push_back(static_cast<std::uint32_t>(j));
        }
        const double* row = pop.distance_matrix().data() + i * m;
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [row](std::uint32_t a, std::uint32_t b) {
                              if (row[a] != row[b]) return row[a] < row[b];
                              return a < b;
                          });
        std::copy(order.begin(), order.begin() + k, g.edges.begin() + i * static_cast<std::size_t>(k));
    }
    return g;
}

double mean_initial_pressure(const Population& pop, std::span<const std::uint32_t> seeds, double beta) {
    if (seeds.empty()) throw std::invalid_argument("mean_initial_pressure: empty seed set");
    const std::size_t m = pop.size();
    std::vector<bool> is_seed(m, false);
    for (std::uint32_t s : seeds) {
        if (s >= m) throw std::invalid_argument("mean_initial_pressure: seed id out of range");
        is_seed[s] = true;
    }
    double total = 0.0;
    for (std::uint32_t j : seeds) {
        for (std::size_t i = 0; i < m; ++i) {
            if (is_seed[i]) continue;
            total += std::pow(pop.distance(i, j), -beta);
        }
    }
    return total / static_cast<double>(seeds.size());
}

} // namespace ilm
