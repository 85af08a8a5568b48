#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ilm::ad {

// Trainable weight buffer. Gradients accumulate across backward calls until
// zero_grad; Adam owns the moment state.
struct Parameter {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;

    Parameter() = default;
    explicit Parameter(std::vector<std::size_t> s);

    std::size_t size() const { return value.size(); }
    void zero_grad();
};

struct Var {
    int id = -1;
};

// Define-by-run tape. Creation order is a topological order, so backward is
// a reverse sweep over node closures. Dense row-major 64-bit buffers; no
// broadcasting beyond the ops that state it.
class Graph {
public:
    Var constant(std::vector<std::size_t> shape, std::vector<double> values);
    Var scalar(double v);
    // Leaf bound to p: backward adds the node gradient into p.grad.
    Var param(Parameter& p);

    // Custom-op node; back receives this graph and the node's own Var and
    // must add into parent gradient buffers via grad_buf.
    Var raw(std::vector<std::size_t> shape, std::vector<double> values,
            std::function<void(Graph&, Var)> back);

    std::span<const double> val(Var v) const;
    const std::vector<std::size_t>& shape(Var v) const;
    std::size_t numel(Var v) const;

    // Reverse sweep from a scalar loss. Gradient buffers live until clear().
    void backward(Var loss);
    std::span<const double> grad(Var v) const;
    std::vector<double>& grad_buf(Var v);

    void clear();
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> val;
        std::vector<double> grad;
        std::function<void(Graph&, Var)> back;
        Parameter* bound = nullptr;
    };
    std::vector<Node> nodes_;
    bool grads_live_ = false;

    int push(Node n);
};

std::string shape_str(std::span<const std::size_t> s);

// Elementwise; shapes must match exactly.
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
// x * c + d with scalar constants.
Var affine(Graph& g, Var x, double c, double d = 0.0);

// Unary elementwise.
Var relu(Graph& g, Var x);
Var softplus(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
Var tanh_op(Graph& g, Var x);
Var exp_op(Graph& g, Var x);
Var log_op(Graph& g, Var x);

// [n,k] x [k,m] -> [n,m].
Var matmul(Graph& g, Var a, Var b);
// x [n,d] + b [d] broadcast over rows.
Var add_bias(Graph& g, Var x, Var b);

// x [C_in,T], w [C_out,C_in,K] (K odd), b [C_out]; same-length zero padding.
Var conv1d(Graph& g, Var x, Var w, Var b);
// x [C,T] -> [C,L], bucket b averages [floor(bT/L), ceil((b+1)T/L)).
Var adaptive_avg_pool1d(Graph& g, Var x, std::size_t out_len);

// Reductions.
Var sum(Graph& g, Var x);
Var mean(Graph& g, Var x);
// x [n,d] -> [n], sum over columns.
Var sum_cols(Graph& g, Var x);
// x [n,d] -> [d], mean over rows.
Var mean_rows(Graph& g, Var x);

// Row selection/aggregation; indices are constants for backward.
Var gather(Graph& g, Var x, std::vector<std::size_t> idx);
// x [n,d], idx [n] -> [n_buckets,d]; empty buckets are zero.
Var scatter_mean(Graph& g, Var x, std::vector<std::size_t> idx, std::size_t n_buckets);

// Layout ops.
Var concat_cols(Graph& g, Var a, Var b);
Var concat_rows(Graph& g, const std::vector<Var>& parts);
Var slice_cols(Graph& g, Var x, std::size_t c0, std::size_t c1);
Var reshape(Graph& g, Var x, std::vector<std::size_t> shape);

// Adam with bias correction; moments keyed by parameter order.
class Adam {
public:
    Adam(std::vector<Parameter*> params, double lr, double weight_decay = 0.0);

    void step();
    void zero_grad();
    long step_count() const { return t_; }
    double lr() const { return lr_; }

private:
    std::vector<Parameter*> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double lr_;
    double wd_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long t_ = 0;
};

} // namespace ilm::ad
