#pragma once

#include "ilm/rng.hpp"
#include "ilm/tensor.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ilm::nn {

using NamedParams = std::vector<std::pair<std::string, ad::Parameter*>>;

// Dense layer, x [n,in] -> [n,out].
struct Linear {
    ad::Parameter w;
    ad::Parameter b;

    Linear() = default;
    Linear(std::size_t in, std::size_t out);

    std::size_t in() const { return w.shape[0]; }
    std::size_t out() const { return w.shape[1]; }

    void init_he(RngStream& rng);
    void init_zero();

    ad::Var forward(ad::Graph& g, ad::Var x);
    // Single row without the tape; in.size() == in(), returns out() values.
    std::vector<double> forward_row(std::span<const double> in) const;

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(const std::string& prefix, NamedParams& out);
};

// ReLU MLP; no activation after the last layer.
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    explicit Mlp(const std::vector<std::size_t>& sizes);

    // zero_last forces the final layer to zeros (identity-at-init flows).
    void init(RngStream& rng, bool zero_last = false);

    ad::Var forward(ad::Graph& g, ad::Var x);
    std::vector<double> forward_row(std::span<const double> in) const;

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(const std::string& prefix, NamedParams& out);
};

// 1-D convolution with same-length zero padding, x [in,T] -> [out,T].
struct Conv1d {
    ad::Parameter w;
    ad::Parameter b;

    Conv1d() = default;
    Conv1d(std::size_t in, std::size_t out, std::size_t k);

    void init_he(RngStream& rng);

    ad::Var forward(ad::Graph& g, ad::Var x);
    // Numeric path mirrors the tape op exactly.
    std::vector<double> forward_numeric(std::span<const double> x, std::size_t t_len) const;

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(const std::string& prefix, NamedParams& out);
};

} // namespace ilm::nn
