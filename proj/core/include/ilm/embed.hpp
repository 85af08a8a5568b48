#pragma once

#include "ilm/epidemic.hpp"
#include "ilm/nn.hpp"
#include "ilm/population.hpp"
#include "ilm/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace ilm {

struct EmbedConfig {
    enum class Kind { Cnn, Gnn };
    Kind kind = Kind::Cnn;
    std::size_t k_emb = 32;
    // CNN branch.
    std::vector<std::size_t> channels = {32, 64, 64};
    std::size_t kernel = 5;
    std::size_t pooled_len = 8;
    // GNN branch.
    std::size_t knn_k = 5;
    std::size_t sage_layers = 3;
    std::size_t width = 64;
};

EmbedConfig::Kind embed_kind_from_string(const std::string& s);
std::string to_string(EmbedConfig::Kind k);

// log(1 + count) then standardisation by the curve's own mean/sd; sd floor
// 1e-6 so constant curves (all-zero included) map to all zeros.
std::vector<double> preprocess_incidence(std::span<const int> incidence);

// Per-node rows (observed indicator, t/T when observed else 0, x/side,
// y/side), row-major M x 4.
std::vector<double> node_features(const ObservedEpidemic& obs, const Population& pop);

// Incidence-curve encoder: conv stack, adaptive average pooling to a fixed
// temporal length, dense head.
class CnnEmbedding {
public:
    CnnEmbedding() = default;
    CnnEmbedding(const EmbedConfig& cfg, RngStream& rng);

    std::size_t out_dim() const { return cfg_.k_emb; }

    ad::Var forward_graph(ad::Graph& g, const ObservedEpidemic& obs);
    std::vector<double> forward(const ObservedEpidemic& obs) const;

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(const std::string& prefix, nn::NamedParams& out);

private:
    EmbedConfig cfg_;
    std::vector<nn::Conv1d> convs_;
    nn::Linear head_;
};

// Spatial encoder: linear node encoder, GraphSAGE layers with mean
// aggregation over the k-NN digraph, mean-pool readout, dense head.
class GnnEmbedding {
public:
    GnnEmbedding() = default;
    GnnEmbedding(const EmbedConfig& cfg, RngStream& rng);

    std::size_t out_dim() const { return cfg_.k_emb; }

    ad::Var forward_graph(ad::Graph& g, const ObservedEpidemic& obs, const Population& pop,
                          const SpatialGraph& graph);
    std::vector<double> forward(const ObservedEpidemic& obs, const Population& pop,
                                const SpatialGraph& graph) const;

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(const std::string& prefix, nn::NamedParams& out);

private:
    EmbedConfig cfg_;
    nn::Linear encoder_;
    struct Sage {
        nn::Linear self_lin;
        nn::Linear neigh_lin;
    };
    std::vector<Sage> sages_;
    nn::Linear head_;
};

} // namespace ilm
