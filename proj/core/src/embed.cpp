#include "ilm/embed.hpp"

#include <cmath>
#include <stdexcept>

namespace ilm {

EmbedConfig::Kind embed_kind_from_string(const std::string& s) {
    if (s == "cnn") return EmbedConfig::Kind::Cnn;
    if (s == "gnn") return EmbedConfig::Kind::Gnn;
    throw std::invalid_argument("unknown embedding kind: " + s);
}

std::string to_string(EmbedConfig::Kind k) {
    return k == EmbedConfig::Kind::Cnn ? "cnn" : "gnn";
}

std::vector<double> preprocess_incidence(std::span<const int> incidence) {
    std::vector<double> out(incidence.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t] = std::log1p(static_cast<double>(incidence[t]));
    }
    double mu = 0.0;
    for (double v : out) mu += v;
    mu /= static_cast<double>(out.size());
    double var = 0.0;
    for (double v : out) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(out.size()));
    if (sd < 1e-6) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    for (double& v : out) v = (v - mu) / sd;
    return out;
}

std::vector<double> node_features(const ObservedEpidemic& obs, const Population& pop) {
    if (pop.size() != obs.M) {
        throw std::invalid_argument("node_features: population size does not match observation");
    }
    const double side = pop.region().side();
    const double t_scale = obs.T > 0 ? static_cast<double>(obs.T) : 1.0;
    std::vector<double> feats(obs.M * 4, 0.0);
    for (std::size_t i = 0; i < obs.M; ++i) {
        const bool seen = obs.node_observed[i] != 0;
        feats[i * 4 + 0] = seen ? 1.0 : 0.0;
        feats[i * 4 + 1] = seen ? static_cast<double>(obs.node_obs_time[i]) / t_scale : 0.0;
        feats[i * 4 + 2] = pop.x(i) / side;
        feats[i * 4 + 3] = pop.y(i) / side;
    }
    return feats;
}

CnnEmbedding::CnnEmbedding(const EmbedConfig& cfg, RngStream& rng) : cfg_(cfg) {
    if (cfg_.channels.empty()) throw std::invalid_argument("CnnEmbedding: need at least one conv layer");
    std::size_t in = 1;
    for (std::size_t c : cfg_.channels) {
        convs_.emplace_back(in, c, cfg_.kernel);
        convs_.back().init_he(rng);
        in = c;
    }
    head_ = nn::Linear(cfg_.channels.back() * cfg_.pooled_len, cfg_.k_emb);
    head_.init_he(rng);
}

ad::Var CnnEmbedding::forward_graph(ad::Graph& g, const ObservedEpidemic& obs) {
    const std::size_t t_len = obs.incidence.size();
    ad::Var h = g.constant({1, t_len}, preprocess_incidence(obs.incidence));
    for (auto& conv : convs_) h = ad::relu(g, conv.forward(g, h));
    h = ad::adaptive_avg_pool1d(g, h, cfg_.pooled_len);
    h = ad::reshape(g, h, {1, cfg_.channels.back() * cfg_.pooled_len});
    return head_.forward(g, h);
}

std::vector<double> CnnEmbedding::forward(const ObservedEpidemic& obs) const {
    const std::size_t t_len = obs.incidence.size();
    std::vector<double> h = preprocess_incidence(obs.incidence);
    std::size_t cur_t = t_len;
    for (const auto& conv : convs_) {
        h = conv.forward_numeric(h, cur_t);
        for (double& v : h) v = v > 0.0 ? v : 0.0;
    }
    const std::size_t c = cfg_.channels.back();
    std::vector<double> pooled(c * cfg_.pooled_len, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t b = 0; b < cfg_.pooled_len; ++b) {
            const std::size_t s0 = b * cur_t / cfg_.pooled_len;
            const std::size_t s1 = ((b + 1) * cur_t + cfg_.pooled_len - 1) / cfg_.pooled_len;
            double acc = 0.0;
            for (std::size_t s = s0; s < s1; ++s) acc += h[ch * cur_t + s];
            pooled[ch * cfg_.pooled_len + b] = acc / static_cast<double>(s1 - s0);
        }
    }
    return head_.forward_row(pooled);
}

void CnnEmbedding::collect(std::vector<ad::Parameter*>& out) {
    for (auto& c : convs_) c.collect(out);
    head_.collect(out);
}

void CnnEmbedding::collect_named(const std::string& prefix, nn::NamedParams& out) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].collect_named(prefix + ".conv" + std::to_string(i), out);
    }
    head_.collect_named(prefix + ".head", out);
}

GnnEmbedding::GnnEmbedding(const EmbedConfig& cfg, RngStream& rng) : cfg_(cfg) {
    encoder_ = nn::Linear(4, cfg_.width);
    encoder_.init_he(rng);
    for (std::size_t l = 0; l < cfg_.sage_layers; ++l) {
        Sage s;
        s.self_lin = nn::Linear(cfg_.width, cfg_.width);
        s.self_lin.init_he(rng);
        s.neigh_lin = nn::Linear(cfg_.width, cfg_.width);
        s.neigh_lin.init_he(rng);
        sages_.push_back(std::move(s));
    }
    head_ = nn::Linear(cfg_.width, cfg_.k_emb);
    head_.init_he(rng);
}

namespace {

void check_graph(const ObservedEpidemic& obs, const Population& pop, const SpatialGraph& graph) {
    if (pop.size() != obs.M) {
        throw std::invalid_argument("GnnEmbedding: population size does not match observation");
    }
    if (graph.k < 1 ||
        graph.edges.size() != obs.M * static_cast<std::size_t>(graph.k)) {
        throw std::invalid_argument("GnnEmbedding: spatial graph does not match the population");
    }
}

} // namespace

ad::Var GnnEmbedding::forward_graph(ad::Graph& g, const ObservedEpidemic& obs,
                                    const Population& pop, const SpatialGraph& graph) {
    check_graph(obs, pop, graph);
    const std::size_t m = obs.M;
    const auto k = static_cast<std::size_t>(graph.k);
    std::vector<std::size_t> src(m * k);
    std::vector<std::size_t> dst(m * k);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t e = 0; e < k; ++e) {
            src[i * k + e] = graph.edges[i * k + e];
            dst[i * k + e] = i;
        }
    }
    ad::Var h = g.constant({m, 4}, node_features(obs, pop));
    h = ad::relu(g, encoder_.forward(g, h));
    for (auto& sage : sages_) {
        ad::Var nb = ad::scatter_mean(g, ad::gather(g, h, src), dst, m);
        h = ad::relu(g, ad::add(g, sage.self_lin.forward(g, h), sage.neigh_lin.forward(g, nb)));
    }
    ad::Var pooled = ad::reshape(g, ad::mean_rows(g, h), {1, cfg_.width});
    return head_.forward(g, pooled);
}

std::vector<double> GnnEmbedding::forward(const ObservedEpidemic& obs, const Population& pop,
                                          const SpatialGraph& graph) const {
    check_graph(obs, pop, graph);
    const std::size_t m = obs.M;
    const auto k = static_cast<std::size_t>(graph.k);
    const std::size_t w = cfg_.width;
    const std::vector<double> feats = node_features(obs, pop);
    std::vector<double> h(m * w);
    for (std::size_t i = 0; i < m; ++i) {
        auto row = encoder_.forward_row(std::span(feats.data() + i * 4, 4));
        for (std::size_t j = 0; j < w; ++j) h[i * w + j] = row[j] > 0.0 ? row[j] : 0.0;
    }
    std::vector<double> nb(m * w);
    std::vector<double> next(m * w);
    for (const auto& sage : sages_) {
        for (std::size_t i = 0; i < m; ++i) {
            double* acc = nb.data() + i * w;
            std::fill(acc, acc + w, 0.0);
            for (std::size_t e = 0; e < k; ++e) {
                const double* hr = h.data() + graph.edges[i * k + e] * w;
                for (std::size_t j = 0; j < w; ++j) acc[j] += hr[j];
            }
            for (std::size_t j = 0; j < w; ++j) acc[j] /= static_cast<double>(k);
        }
        for (std::size_t i = 0; i < m; ++i) {
            auto self_out = sage.self_lin.forward_row(std::span(h.data() + i * w, w));
            auto nb_out = sage.neigh_lin.forward_row(std::span(nb.data() + i * w, w));
            for (std::size_t j = 0; j < w; ++j) {
                const double v = self_out[j] + nb_out[j];
                next[i * w + j] = v > 0.0 ? v : 0.0;
            }
        }
        std::swap(h, next);
    }
    std::vector<double> pooled(w, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) pooled[j] += h[i * w + j];
    }
    for (double& v : pooled) v /= static_cast<double>(m);
    return head_.forward_row(pooled);
}

void GnnEmbedding::collect(std::vector<ad::Parameter*>& out) {
    encoder_.collect(out);
    for (auto& s : sages_) {
        s.self_lin.collect(out);
        s.neigh_lin.collect(out);
    }
    head_.collect(out);
}

void GnnEmbedding::collect_named(const std::string& prefix, nn::NamedParams& out) {
    encoder_.collect_named(prefix + ".encoder", out);
    for (std::size_t i = 0; i < sages_.size(); ++i) {
        sages_[i].self_lin.collect_named(prefix + ".sage" + std::to_string(i) + ".self", out);
        sages_[i].neigh_lin.collect_named(prefix + ".sage" + std::to_string(i) + ".neigh", out);
    }
    head_.collect_named(prefix + ".head", out);
}

} // namespace ilm
