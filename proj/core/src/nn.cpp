#include "ilm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ilm::nn {

Linear::Linear(std::size_t in, std::size_t out) : w({in, out}), b({out}) {}

void Linear::init_he(RngStream& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(in()));
    for (double& v : w.value) v = rng.normal(0.0, sd);
    for (double& v : b.value) v = 0.0;
}

void Linear::init_zero() {
    for (double& v : w.value) v = 0.0;
    for (double& v : b.value) v = 0.0;
}

ad::Var Linear::forward(ad::Graph& g, ad::Var x) {
    return ad::add_bias(g, ad::matmul(g, x, g.param(w)), g.param(b));
}

std::vector<double> Linear::forward_row(std::span<const double> in_row) const {
    const std::size_t ni = in();
    const std::size_t no = out();
    if (in_row.size() != ni) {
        throw std::invalid_argument("Linear::forward_row: expected " + std::to_string(ni) +
                                    " inputs, got " + std::to_string(in_row.size()));
    }
    std::vector<double> out(b.value);
    for (std::size_t i = 0; i < ni; ++i) {
        const double xi = in_row[i];
        if (xi == 0.0) continue;
        const double* wrow = w.value.data() + i * no;
        for (std::size_t j = 0; j < no; ++j) out[j] += xi * wrow[j];
    }
    return out;
}

void Linear::collect(std::vector<ad::Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
}

void Linear::collect_named(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

Mlp::Mlp(const std::vector<std::size_t>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        layers.emplace_back(sizes[i], sizes[i + 1]);
    }
}

void Mlp::init(RngStream& rng, bool zero_last) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (zero_last && i + 1 == layers.size()) {
            layers[i].init_zero();
        } else {
            layers[i].init_he(rng);
        }
    }
}

ad::Var Mlp::forward(ad::Graph& g, ad::Var x) {
    ad::Var h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(g, h);
        if (i + 1 < layers.size()) h = ad::relu(g, h);
    }
    return h;
}

std::vector<double> Mlp::forward_row(std::span<const double> in_row) const {
    std::vector<double> h(in_row.begin(), in_row.end());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward_row(h);
        if (i + 1 < layers.size()) {
            for (double& v : h) v = v > 0.0 ? v : 0.0;
        }
    }
    return h;
}

void Mlp::collect(std::vector<ad::Parameter*>& out) {
    for (auto& l : layers) l.collect(out);
}

void Mlp::collect_named(const std::string& prefix, NamedParams& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect_named(prefix + ".l" + std::to_string(i), out);
    }
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t k) : w({out, in, k}), b({out}) {
    if (k % 2 == 0) throw std::invalid_argument("Conv1d: kernel length must be odd");
}

void Conv1d::init_he(RngStream& rng) {
    const double fan_in = static_cast<double>(w.shape[1] * w.shape[2]);
    const double sd = std::sqrt(2.0 / fan_in);
    for (double& v : w.value) v = rng.normal(0.0, sd);
    for (double& v : b.value) v = 0.0;
}

ad::Var Conv1d::forward(ad::Graph& g, ad::Var x) {
    return ad::conv1d(g, x, g.param(w), g.param(b));
}

std::vector<double> Conv1d::forward_numeric(std::span<const double> x, std::size_t t_len) const {
    const std::size_t cout = w.shape[0];
    const std::size_t cin = w.shape[1];
    const std::size_t k = w.shape[2];
    if (x.size() != cin * t_len) {
        throw std::invalid_argument("Conv1d::forward_numeric: input size mismatch");
    }
    const std::size_t pad = k / 2;
    std::vector<double> out(cout * t_len, 0.0);
    for (std::size_t o = 0; o < cout; ++o) {
        double* orow = out.data() + o * t_len;
        for (std::size_t t = 0; t < t_len; ++t) orow[t] = b.value[o];
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xrow = x.data() + c * t_len;
            const double* wrow = w.value.data() + (o * cin + c) * k;
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
    return out;
}

void Conv1d::collect(std::vector<ad::Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
}

void Conv1d::collect_named(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

} // namespace ilm::nn
