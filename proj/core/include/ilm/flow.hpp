#pragma once

#include "ilm/nn.hpp"
#include "ilm/rng.hpp"
#include "ilm/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace ilm {

struct FlowConfig {
    std::size_t dim = 2;
    std::size_t context_dim = 32;
    std::size_t layers = 5;
    std::size_t bins = 8;
    double tail_bound = 5.0;
    std::size_t hidden = 64;
    double min_bin = 1e-3;
};

// Monotone rational-quadratic spline on [-tail_bound, tail_bound], identity
// outside. raw holds 3*bins-1 unconstrained values: bins width logits, bins
// height logits, bins-1 interior derivative pre-activations (zero raw gives
// the identity spline). logdet is log(dy/dx) of the forward map in both
// directions, evaluated at the x/y pair the call produces.
void rq_spline_forward(double x, std::span<const double> raw, std::size_t bins, double tail_bound,
                       double min_bin, double& y, double& logdet);
void rq_spline_inverse(double y, std::span<const double> raw, std::size_t bins, double tail_bound,
                       double min_bin, double& x, double& logdet);

// Conditional coupling flow: `layers` coupling layers alternating which
// contiguous block passes through unchanged, each conditioning a
// rational-quadratic spline for the remaining coordinates on (identity
// block, context) through a ReLU MLP. The conditioners' last layers start
// at zero, so a fresh flow is the identity transform. dim == 1 degenerates
// to context-only conditioning.
class SplineFlow {
public:
    SplineFlow() = default;
    SplineFlow(const FlowConfig& cfg, RngStream& rng);

    const FlowConfig& config() const { return cfg_; }

    // Data-to-base transform; logdet accumulates the forward spline
    // log-derivatives, i.e. log|det dz/dtheta|.
    void to_base(std::span<const double> theta, std::span<const double> context,
                 std::span<double> z, double& logdet) const;
    // Base-to-data transform; logdet is log|det dtheta/dz| and equals minus
    // the to_base logdet at matched points.
    void to_data(std::span<const double> z, std::span<const double> context,
                 std::span<double> theta, double& logdet) const;

    double log_prob(std::span<const double> theta, std::span<const double> context) const;
    // count draws in standardised space, row-major count x dim.
    std::vector<double> sample(std::span<const double> context, std::size_t count,
                               RngStream& rng) const;

    // Training path: theta [n,dim], context [n,context_dim] -> log q [n].
    ad::Var log_prob_graph(ad::Graph& g, ad::Var theta, ad::Var context);

    void collect(std::vector<ad::Parameter*>& out);
    void collect_named(const std::string& prefix, nn::NamedParams& out);

private:
    FlowConfig cfg_;
    std::vector<nn::Mlp> conds_;

    std::size_t n_id() const { return cfg_.dim >= 2 ? cfg_.dim / 2 : 0; }
    std::size_t n_tr() const { return cfg_.dim - n_id(); }
    bool front_identity(std::size_t layer) const { return layer % 2 == 0; }
};

} // namespace ilm
