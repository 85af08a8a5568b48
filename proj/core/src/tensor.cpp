#include "ilm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ilm::ad {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

[[noreturn]] void shape_fail(const char* op, std::span<const std::size_t> a,
                             std::span<const std::size_t> b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

void require_matrix(const char* op, const std::vector<std::size_t>& s) {
    if (s.size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                    shape_str(s));
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

std::string shape_str(std::span<const std::size_t> s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i > 0) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

Parameter::Parameter(std::vector<std::size_t> s) : shape(std::move(s)) {
    value.assign(shape_numel(shape), 0.0);
}

void Parameter::zero_grad() {
    grad.assign(value.size(), 0.0);
}

int Graph::push(Node n) {
    if (grads_live_) {
        // New nodes after a backward sweep would see stale gradient state.
        for (auto& node : nodes_) node.grad.clear();
        grads_live_ = false;
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::constant(std::vector<std::size_t> shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("constant: shape " + shape_str(shape) + " needs " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    }
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(values);
    return {push(std::move(n))};
}

Var Graph::scalar(double v) {
    return constant({1}, {v});
}

Var Graph::param(Parameter& p) {
    Node n;
    n.shape = p.shape;
    n.val = p.value;
    n.bound = &p;
    n.back = [](Graph& g, Var self) {
        Node& node = g.nodes_[static_cast<std::size_t>(self.id)];
        Parameter* bp = node.bound;
        if (bp->grad.size() != bp->value.size()) bp->grad.assign(bp->value.size(), 0.0);
        for (std::size_t i = 0; i < node.grad.size(); ++i) bp->grad[i] += node.grad[i];
    };
    return {push(std::move(n))};
}

Var Graph::raw(std::vector<std::size_t> shape, std::vector<double> values,
               std::function<void(Graph&, Var)> back) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("raw: shape " + shape_str(shape) + " inconsistent with buffer");
    }
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(values);
    n.back = std::move(back);
    return {push(std::move(n))};
}

std::span<const double> Graph::val(Var v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).val;
}

const std::vector<std::size_t>& Graph::shape(Var v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).shape;
}

std::size_t Graph::numel(Var v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).val.size();
}

std::vector<double>& Graph::grad_buf(Var v) {
    if (!grads_live_) throw std::logic_error("grad_buf: no backward sweep in progress");
    return nodes_.at(static_cast<std::size_t>(v.id)).grad;
}

std::span<const double> Graph::grad(Var v) const {
    if (!grads_live_) throw std::logic_error("grad: call backward first");
    return nodes_.at(static_cast<std::size_t>(v.id)).grad;
}

void Graph::backward(Var loss) {
    const auto id = static_cast<std::size_t>(loss.id);
    if (id >= nodes_.size()) throw std::invalid_argument("backward: unknown node");
    if (nodes_[id].val.size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(nodes_[id].shape));
    }
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    grads_live_ = true;
    nodes_[id].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back(*this, Var{i});
    }
}

void Graph::clear() {
    nodes_.clear();
    grads_live_ = false;
}

namespace {

Var binary_elemwise(Graph& g, Var a, Var b, const char* name, double (*fwd)(double, double),
                    void (*bwd)(double ga_out, double xa, double xb, double& ga, double& gb)) {
    auto va = g.val(a);
    auto vb = g.val(b);
    if (g.shape(a) != g.shape(b)) shape_fail(name, g.shape(a), g.shape(b));
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i], vb[i]);
    const int ia = a.id;
    const int ib = b.id;
    return g.raw(g.shape(a), std::move(out), [ia, ib, bwd](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto xa = gg.val(Var{ia});
        auto xb = gg.val(Var{ib});
        auto& ga = gg.grad_buf(Var{ia});
        auto& gb = gg.grad_buf(Var{ib});
        for (std::size_t i = 0; i < go.size(); ++i) bwd(go[i], xa[i], xb[i], ga[i], gb[i]);
    });
}

Var unary_elemwise(Graph& g, Var x, double (*fwd)(double),
                   double (*deriv)(double x, double y)) {
    auto vx = g.val(x);
    std::vector<double> out(vx.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(vx[i]);
    const int ix = x.id;
    return g.raw(g.shape(x), std::move(out), [ix, deriv](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto vin = gg.val(Var{ix});
        auto vout = gg.val(self);
        auto& gx = gg.grad_buf(Var{ix});
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv(vin[i], vout[i]);
    });
}

} // namespace

Var add(Graph& g, Var a, Var b) {
    return binary_elemwise(
        g, a, b, "add", [](double x, double y) { return x + y; },
        [](double go, double, double, double& ga, double& gb) {
            ga += go;
            gb += go;
        });
}

Var sub(Graph& g, Var a, Var b) {
    return binary_elemwise(
        g, a, b, "sub", [](double x, double y) { return x - y; },
        [](double go, double, double, double& ga, double& gb) {
            ga += go;
            gb -= go;
        });
}

Var mul(Graph& g, Var a, Var b) {
    return binary_elemwise(
        g, a, b, "mul", [](double x, double y) { return x * y; },
        [](double go, double xa, double xb, double& ga, double& gb) {
            ga += go * xb;
            gb += go * xa;
        });
}

Var affine(Graph& g, Var x, double c, double d) {
    auto vx = g.val(x);
    std::vector<double> out(vx.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * c + d;
    const int ix = x.id;
    return g.raw(g.shape(x), std::move(out), [ix, c](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& gx = gg.grad_buf(Var{ix});
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    });
}

Var relu(Graph& g, Var x) {
    return unary_elemwise(
        g, x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Graph& g, Var x) {
    return unary_elemwise(
        g, x,
        [](double v) {
            if (v > 30.0) return v;
            if (v < -30.0) return std::exp(v);
            return std::log1p(std::exp(v));
        },
        [](double v, double) { return stable_sigmoid(v); });
}

Var sigmoid(Graph& g, Var x) {
    return unary_elemwise(
        g, x, [](double v) { return stable_sigmoid(v); },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(Graph& g, Var x) {
    return unary_elemwise(
        g, x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Var exp_op(Graph& g, Var x) {
    return unary_elemwise(
        g, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log_op(Graph& g, Var x) {
    return unary_elemwise(
        g, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var matmul(Graph& g, Var a, Var b) {
    require_matrix("matmul", g.shape(a));
    require_matrix("matmul", g.shape(b));
    const std::size_t n = g.shape(a)[0];
    const std::size_t k = g.shape(a)[1];
    if (g.shape(b)[0] != k) shape_fail("matmul", g.shape(a), g.shape(b));
    const std::size_t m = g.shape(b)[1];
    auto va = g.val(a);
    auto vb = g.val(b);
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = vb.data() + p * m;
            double* orow = out.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    }
    const int ia = a.id;
    const int ib = b.id;
    return g.raw({n, m}, std::move(out), [ia, ib, n, k, m](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto va2 = gg.val(Var{ia});
        auto vb2 = gg.val(Var{ib});
        auto& ga = gg.grad_buf(Var{ia});
        auto& gb = gg.grad_buf(Var{ib});
        for (std::size_t i = 0; i < n; ++i) {
            const double* grow = go.data() + i * m;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = vb2.data() + p * m;
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                ga[i * k + p] += acc;
            }
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = va2[i * k + p];
                if (aip == 0.0) continue;
                double* gbrow = gb.data() + p * m;
                for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
            }
        }
    });
}

Var add_bias(Graph& g, Var x, Var b) {
    require_matrix("add_bias", g.shape(x));
    const std::size_t n = g.shape(x)[0];
    const std::size_t d = g.shape(x)[1];
    if (g.shape(b).size() != 1 || g.shape(b)[0] != d) shape_fail("add_bias", g.shape(x), g.shape(b));
    auto vx = g.val(x);
    auto vb = g.val(b);
    std::vector<double> out(vx.begin(), vx.end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] += vb[j];
    }
    const int ix = x.id;
    const int ib = b.id;
    return g.raw({n, d}, std::move(out), [ix, ib, n, d](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& gx = gg.grad_buf(Var{ix});
        auto& gb = gg.grad_buf(Var{ib});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                gx[i * d + j] += go[i * d + j];
                gb[j] += go[i * d + j];
            }
        }
    });
}

Var conv1d(Graph& g, Var x, Var w, Var b) {
    require_matrix("conv1d", g.shape(x));
    if (g.shape(w).size() != 3) {
        throw std::invalid_argument("conv1d: kernel must be [out,in,k], got shape " +
                                    shape_str(g.shape(w)));
    }
    const std::size_t cin = g.shape(x)[0];
    const std::size_t t_len = g.shape(x)[1];
    const std::size_t cout = g.shape(w)[0];
    const std::size_t k = g.shape(w)[2];
    if (g.shape(w)[1] != cin) shape_fail("conv1d", g.shape(x), g.shape(w));
    if (k % 2 == 0) throw std::invalid_argument("conv1d: kernel length must be odd");
    if (g.shape(b).size() != 1 || g.shape(b)[0] != cout) shape_fail("conv1d", g.shape(w), g.shape(b));
    const std::size_t pad = k / 2;
    auto vx = g.val(x);
    auto vw = g.val(w);
    auto vb = g.val(b);
    std::vector<double> out(cout * t_len, 0.0);
    for (std::size_t o = 0; o < cout; ++o) {
        double* orow = out.data() + o * t_len;
        for (std::size_t t = 0; t < t_len; ++t) orow[t] = vb[o];
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xrow = vx.data() + c * t_len;
            const double* wrow = vw.data() + (o * cin + c) * k;
            for (std::size_t t = 0; t < t_len; ++t) {
                double acc = 0.0;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const std::ptrdiff_t s =
                        static_cast<std::ptrdiff_t>(t + kk) - static_cast<std::ptrdiff_t>(pad);
                    if (s < 0 || s >= static_cast<std::ptrdiff_t>(t_len)) continue;
                    acc += wrow[kk] * xrow[static_cast<std::size_t>(s)];
                }
                orow[t] += acc;
            }
        }
    }
    const int ix = x.id;
    const int iw = w.id;
    const int ib = b.id;
    return g.raw({cout, t_len}, std::move(out), [=](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto vx2 = gg.val(Var{ix});
        auto vw2 = gg.val(Var{iw});
        auto& gx = gg.grad_buf(Var{ix});
        auto& gw = gg.grad_buf(Var{iw});
        auto& gb = gg.grad_buf(Var{ib});
        for (std::size_t o = 0; o < cout; ++o) {
            const double* grow = go.data() + o * t_len;
            for (std::size_t t = 0; t < t_len; ++t) gb[o] += grow[t];
            for (std::size_t c = 0; c < cin; ++c) {
                const double* xrow = vx2.data() + c * t_len;
                const double* wrow = vw2.data() + (o * cin + c) * k;
                double* gxrow = gx.data() + c * t_len;
                double* gwrow = gw.data() + (o * cin + c) * k;
                for (std::size_t t = 0; t < t_len; ++t) {
                    const double gv = grow[t];
                    if (gv == 0.0) continue;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const std::ptrdiff_t s =
                            static_cast<std::ptrdiff_t>(t + kk) - static_cast<std::ptrdiff_t>(pad);
                        if (s < 0 || s >= static_cast<std::ptrdiff_t>(t_len)) continue;
                        gwrow[kk] += gv * xrow[static_cast<std::size_t>(s)];
                        gxrow[static_cast<std::size_t>(s)] += gv * wrow[kk];
                    }
                }
            }
        }
    });
}

Var adaptive_avg_pool1d(Graph& g, Var x, std::size_t out_len) {
    require_matrix("adaptive_avg_pool1d", g.shape(x));
    if (out_len == 0) throw std::invalid_argument("adaptive_avg_pool1d: zero output length");
    const std::size_t c = g.shape(x)[0];
    const std::size_t t_len = g.shape(x)[1];
    if (t_len == 0) throw std::invalid_argument("adaptive_avg_pool1d: empty input");
    auto vx = g.val(x);
    std::vector<double> out(c * out_len, 0.0);
    auto bucket = [t_len, out_len](std::size_t bi, std::size_t& start, std::size_t& end) {
        start = bi * t_len / out_len;
        end = ((bi + 1) * t_len + out_len - 1) / out_len;
    };
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t bi = 0; bi < out_len; ++bi) {
            std::size_t s0, s1;
            bucket(bi, s0, s1);
            double acc = 0.0;
            for (std::size_t s = s0; s < s1; ++s) acc += vx[ch * t_len + s];
            out[ch * out_len + bi] = acc / static_cast<double>(s1 - s0);
        }
    }
    const int ix = x.id;
    return g.raw({c, out_len}, std::move(out), [ix, c, t_len, out_len, bucket](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& gx = gg.grad_buf(Var{ix});
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t bi = 0; bi < out_len; ++bi) {
                std::size_t s0, s1;
                bucket(bi, s0, s1);
                const double share = go[ch * out_len + bi] / static_cast<double>(s1 - s0);
                for (std::size_t s = s0; s < s1; ++s) gx[ch * t_len + s] += share;
            }
        }
    });
}

Var sum(Graph& g, Var x) {
    auto vx = g.val(x);
    double acc = 0.0;
    for (double v : vx) acc += v;
    const int ix = x.id;
    return g.raw({1}, {acc}, [ix](Graph& gg, Var self) {
        const double go = gg.grad(self)[0];
        auto& gx = gg.grad_buf(Var{ix});
        for (double& v : gx) v += go;
    });
}

Var mean(Graph& g, Var x) {
    const std::size_t n = g.numel(x);
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    auto vx = g.val(x);
    double acc = 0.0;
    for (double v : vx) acc += v;
    const int ix = x.id;
    return g.raw({1}, {acc / static_cast<double>(n)}, [ix, n](Graph& gg, Var self) {
        const double go = gg.grad(self)[0] / static_cast<double>(n);
        auto& gx = gg.grad_buf(Var{ix});
        for (double& v : gx) v += go;
    });
}

Var sum_cols(Graph& g, Var x) {
    require_matrix("sum_cols", g.shape(x));
    const std::size_t n = g.shape(x)[0];
    const std::size_t d = g.shape(x)[1];
    auto vx = g.val(x);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[i] += vx[i * d + j];
    }
    const int ix = x.id;
    return g.raw({n}, std::move(out), [ix, n, d](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& gx = gg.grad_buf(Var{ix});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += go[i];
        }
    });
}

Var mean_rows(Graph& g, Var x) {
    require_matrix("mean_rows", g.shape(x));
    const std::size_t n = g.shape(x)[0];
    const std::size_t d = g.shape(x)[1];
    if (n == 0) throw std::invalid_argument("mean_rows: empty matrix");
    auto vx = g.val(x);
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[j] += vx[i * d + j];
    }
    for (double& v : out) v /= static_cast<double>(n);
    const int ix = x.id;
    return g.raw({d}, std::move(out), [ix, n, d](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& gx = gg.grad_buf(Var{ix});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += go[j] / static_cast<double>(n);
        }
    });
}

Var gather(Graph& g, Var x, std::vector<std::size_t> idx) {
    require_matrix("gather", g.shape(x));
    const std::size_t n = g.shape(x)[0];
    const std::size_t d = g.shape(x)[1];
    for (std::size_t r : idx) {
        if (r >= n) throw std::invalid_argument("gather: row index out of range");
    }
    auto vx = g.val(x);
    std::vector<double> out(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::memcpy(out.data() + r * d, vx.data() + idx[r] * d, d * sizeof(double));
    }
    const int ix = x.id;
    const std::size_t rows = idx.size();
    return g.raw({rows, d}, std::move(out),
                 [ix, d, indices = std::move(idx)](Graph& gg, Var self) {
                     auto go = gg.grad(self);
                     auto& gx = gg.grad_buf(Var{ix});
                     for (std::size_t r = 0; r < indices.size(); ++r) {
                         for (std::size_t j = 0; j < d; ++j) {
                             gx[indices[r] * d + j] += go[r * d + j];
                         }
                     }
                 });
}

Var scatter_mean(Graph& g, Var x, std::vector<std::size_t> idx, std::size_t n_buckets) {
    require_matrix("scatter_mean", g.shape(x));
    const std::size_t n = g.shape(x)[0];
    const std::size_t d = g.shape(x)[1];
    if (idx.size() != n) {
        throw std::invalid_argument("scatter_mean: need one bucket index per row");
    }
    std::vector<std::size_t> count(n_buckets, 0);
    for (std::size_t b : idx) {
        if (b >= n_buckets) throw std::invalid_argument("scatter_mean: bucket index out of range");
        ++count[b];
    }
    auto vx = g.val(x);
    std::vector<double> out(n_buckets * d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) out[idx[r] * d + j] += vx[r * d + j];
    }
    for (std::size_t b = 0; b < n_buckets; ++b) {
        if (count[b] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) out[b * d + j] /= static_cast<double>(count[b]);
    }
    const int ix = x.id;
    return g.raw({n_buckets, d}, std::move(out),
                 [ix, d, indices = std::move(idx), counts = std::move(count)](Graph& gg, Var self) {
                     auto go = gg.grad(self);
                     auto& gx = gg.grad_buf(Var{ix});
                     for (std::size_t r = 0; r < indices.size(); ++r) {
                         const std::size_t b = indices[r];
                         for (std::size_t j = 0; j < d; ++j) {
                             gx[r * d + j] += go[b * d + j] / static_cast<double>(counts[b]);
                         }
                     }
                 });
}

Var concat_cols(Graph& g, Var a, Var b) {
    require_matrix("concat_cols", g.shape(a));
    require_matrix("concat_cols", g.shape(b));
    const std::size_t n = g.shape(a)[0];
    if (g.shape(b)[0] != n) shape_fail("concat_cols", g.shape(a), g.shape(b));
    const std::size_t da = g.shape(a)[1];
    const std::size_t db = g.shape(b)[1];
    auto va = g.val(a);
    auto vb = g.val(b);
    std::vector<double> out(n * (da + db));
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * (da + db), va.data() + i * da, da * sizeof(double));
        std::memcpy(out.data() + i * (da + db) + da, vb.data() + i * db, db * sizeof(double));
    }
    const int ia = a.id;
    const int ib = b.id;
    return g.raw({n, da + db}, std::move(out), [ia, ib, n, da, db](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& ga = gg.grad_buf(Var{ia});
        auto& gb = gg.grad_buf(Var{ib});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < da; ++j) ga[i * da + j] += go[i * (da + db) + j];
            for (std::size_t j = 0; j < db; ++j) gb[i * db + j] += go[i * (da + db) + da + j];
        }
    });
}

Var concat_rows(Graph& g, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    require_matrix("concat_rows", g.shape(parts[0]));
    const std::size_t d = g.shape(parts[0])[1];
    std::size_t total = 0;
    for (Var p : parts) {
        require_matrix("concat_rows", g.shape(p));
        if (g.shape(p)[1] != d) shape_fail("concat_rows", g.shape(parts[0]), g.shape(p));
        total += g.shape(p)[0];
    }
    std::vector<double> out;
    out.reserve(total * d);
    std::vector<int> ids;
    std::vector<std::size_t> rows;
    for (Var p : parts) {
        auto vp = g.val(p);
        out.insert(out.end(), vp.begin(), vp.end());
        ids.push_back(p.id);
        rows.push_back(g.shape(p)[0]);
    }
    return g.raw({total, d}, std::move(out),
                 [ids, rows, d](Graph& gg, Var self) {
                     auto go = gg.grad(self);
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < ids.size(); ++p) {
                         auto& gp = gg.grad_buf(Var{ids[p]});
                         const std::size_t cnt = rows[p] * d;
                         for (std::size_t i = 0; i < cnt; ++i) gp[i] += go[off + i];
                         off += cnt;
                     }
                 });
}

Var slice_cols(Graph& g, Var x, std::size_t c0, std::size_t c1) {
    require_matrix("slice_cols", g.shape(x));
    const std::size_t n = g.shape(x)[0];
    const std::size_t d = g.shape(x)[1];
    if (c0 >= c1 || c1 > d) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") invalid for shape " +
                                    shape_str(g.shape(x)));
    }
    const std::size_t w = c1 - c0;
    auto vx = g.val(x);
    std::vector<double> out(n * w);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * w, vx.data() + i * d + c0, w * sizeof(double));
    }
    const int ix = x.id;
    return g.raw({n, w}, std::move(out), [ix, n, d, c0, w](Graph& gg, Var self) {
        auto go = gg.grad(self);
        auto& gx = gg.grad_buf(Var{ix});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < w; ++j) gx[i * d + c0 + j] += go[i * w + j];
        }
    });
}

Var reshape(Graph& g, Var x, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != g.numel(x)) {
        throw std::invalid_argument("reshape: target " + shape_str(shape) +
                                    " incompatible with source " + shape_str(g.shape(x)));
    }
    auto vx = g.val(x);
    const int ix = x.id;
    return g.raw(std::move(shape), std::vector<double>(vx.begin(), vx.end()),
                 [ix](Graph& gg, Var self) {
                     auto go = gg.grad(self);
                     auto& gx = gg.grad_buf(Var{ix});
                     for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                 });
}

Adam::Adam(std::vector<Parameter*> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->size(), 0.0);
        v_[i].assign(params_[i]->size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.grad.size() != p.value.size()) continue;
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            double gj = p.grad[j];
            if (wd_ != 0.0) gj += wd_ * p.value[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            p.value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

} // namespace ilm::ad
