#include "ilm/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ilm {

namespace {

constexpr std::size_t kMaxBins = 64;
// softplus(kDerivShift) = 1, so zero raw input yields unit knot derivatives.
const double kDerivShift = std::log(std::numbers::e - 1.0);

// Scalar forward-mode dual; one directional derivative per pass.
struct Du {
    double v = 0.0;
    double d = 0.0;
};

inline Du operator+(Du a, Du b) { return {a.v + b.v, a.d + b.d}; }
inline Du operator-(Du a, Du b) { return {a.v - b.v, a.d - b.d}; }
inline Du operator*(Du a, Du b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Du operator/(Du a, Du b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
inline Du operator+(Du a, double b) { return {a.v + b, a.d}; }
inline Du operator-(double a, Du b) { return {a - b.v, -b.d}; }
inline Du operator*(double a, Du b) { return {a * b.v, a * b.d}; }

inline double value_of(double x) { return x; }
inline double value_of(Du x) { return x.v; }

inline double exp_t(double x) { return std::exp(x); }
inline Du exp_t(Du x) {
    const double e = std::exp(x.v);
    return {e, e * x.d};
}
inline double log_t(double x) { return std::log(x); }
inline Du log_t(Du x) { return {std::log(x.v), x.d / x.v}; }
inline double log1p_t(double x) { return std::log1p(x); }
inline Du log1p_t(Du x) { return {std::log1p(x.v), x.d / (1.0 + x.v)}; }

template <class T>
T cst(double v) {
    if constexpr (std::is_same_v<T, double>) {
        return v;
    } else {
        return T{v, 0.0};
    }
}

template <class T>
T softplus_t(T x) {
    if (value_of(x) > 30.0) return x;
    if (value_of(x) < -30.0) return exp_t(x);
    return log1p_t(exp_t(x));
}

// Knot grid built from raw spline parameters; xs/ys have bins+1 entries,
// deltas bins+1 (unit boundary derivatives).
template <class T>
struct Grid {
    std::array<T, kMaxBins + 1> xs;
    std::array<T, kMaxBins + 1> ys;
    std::array<T, kMaxBins + 1> deltas;
};

template <class T>
void softmax_frac(const T* raw, std::size_t bins, double min_bin, T* frac) {
    double mx = value_of(raw[0]);
    for (std::size_t k = 1; k < bins; ++k) mx = std::max(mx, value_of(raw[k]));
    T sum = cst<T>(0.0);
    for (std::size_t k = 0; k < bins; ++k) {
        frac[k] = exp_t(raw[k] - cst<T>(mx));
        sum = sum + frac[k];
    }
    const double slack = 1.0 - static_cast<double>(bins) * min_bin;
    for (std::size_t k = 0; k < bins; ++k) {
        frac[k] = cst<T>(min_bin) + slack * (frac[k] / sum);
    }
}

template <class T>
void build_grid(const T* raw, std::size_t bins, double tail_bound, double min_bin, Grid<T>& grid) {
    std::array<T, kMaxBins> frac;
    softmax_frac(raw, bins, min_bin, frac.data());
    grid.xs[0] = cst<T>(-tail_bound);
    for (std::size_t k = 0; k < bins; ++k) {
        grid.xs[k + 1] = grid.xs[k] + 2.0 * tail_bound * frac[k];
    }
    grid.xs[bins] = cst<T>(tail_bound);
    softmax_frac(raw + bins, bins, min_bin, frac.data());
    grid.ys[0] = cst<T>(-tail_bound);
    for (std::size_t k = 0; k < bins; ++k) {
        grid.ys[k + 1] = grid.ys[k] + 2.0 * tail_bound * frac[k];
    }
    grid.ys[bins] = cst<T>(tail_bound);
    grid.deltas[0] = cst<T>(1.0);
    grid.deltas[bins] = cst<T>(1.0);
    for (std::size_t k = 1; k < bins; ++k) {
        grid.deltas[k] = softplus_t(raw[2 * bins + k - 1] + kDerivShift);
    }
}

template <class T>
std::size_t find_bin(const std::array<T, kMaxBins + 1>& knots, std::size_t bins, double v) {
    std::size_t k = 0;
    while (k + 1 < bins && value_of(knots[k + 1]) <= v) ++k;
    return k;
}

// Forward map and log(dy/dx) inside the spline interval.
template <class T>
void rq_fwd(T x, const Grid<T>& grid, std::size_t bins, T& y, T& ld) {
    const std::size_t k = find_bin(grid.xs, bins, value_of(x));
    const T w = grid.xs[k + 1] - grid.xs[k];
    const T h = grid.ys[k + 1] - grid.ys[k];
    const T s = h / w;
    const T xi = (x - grid.xs[k]) / w;
    const T xim = xi * (1.0 - xi);
    const T dk = grid.deltas[k];
    const T dk1 = grid.deltas[k + 1];
    const T den = s + (dk1 + dk - 2.0 * s) * xim;
    y = grid.ys[k] + h * (s * xi * xi + dk * xim) / den;
    const T omxi = 1.0 - xi;
    const T num = (s * s) * (dk1 * xi * xi + 2.0 * s * xim + dk * omxi * omxi);
    ld = log_t(num) - 2.0 * log_t(den);
}

template <class T>
void rq_kernel(T x, const T* raw, std::size_t bins, double tail_bound, double min_bin, T& y,
               T& ld) {
    const double xv = value_of(x);
    if (xv < -tail_bound || xv > tail_bound) {
        y = x;
        ld = cst<T>(0.0);
        return;
    }
    Grid<T> grid;
    build_grid(raw, bins, tail_bound, min_bin, grid);
    rq_fwd(x, grid, bins, y, ld);
}

void check_spline_args(std::size_t raw_len, std::size_t bins, double tail_bound, double min_bin) {
    if (bins < 2 || bins > kMaxBins) throw std::invalid_argument("rq_spline: bins out of range");
    if (raw_len != 3 * bins - 1) {
        throw std::invalid_argument("rq_spline: raw must have 3*bins-1 entries");
    }
    if (!(tail_bound > 0.0)) throw std::invalid_argument("rq_spline: tail bound must be positive");
    if (!(min_bin > 0.0) || static_cast<double>(bins) * min_bin >= 0.5) {
        throw std::invalid_argument("rq_spline: min_bin infeasible for this bin count");
    }
}

// Fused tape op: x [n,d], raw [n, d*(3*bins-1)] -> [n, d+1] holding the
// transformed coordinates and the per-row logdet sum. Backward re-runs the
// scalar kernel in forward-mode dual passes, one per contributing input.
ad::Var spline_pack(ad::Graph& g, ad::Var x, ad::Var raw, std::size_t bins, double tail_bound,
                    double min_bin) {
    const auto& xs = g.shape(x);
    const auto& rs = g.shape(raw);
    if (xs.size() != 2 || rs.size() != 2) {
        throw std::invalid_argument("spline_pack: expected matrices, got " + ad::shape_str(xs) +
                                    " and " + ad::shape_str(rs));
    }
    const std::size_t n = xs[0];
    const std::size_t d = xs[1];
    const std::size_t per = 3 * bins - 1;
    if (rs[0] != n || rs[1] != d * per) {
        throw std::invalid_argument("spline_pack: raw shape " + ad::shape_str(rs) +
                                    " inconsistent with input " + ad::shape_str(xs));
    }
    auto vx = g.val(x);
    auto vr = g.val(raw);
    std::vector<double> out(n * (d + 1), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double ld_sum = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double y, ld;
            rq_kernel(vx[r * d + c], vr.data() + r * d * per + c * per, bins, tail_bound, min_bin,
                      y, ld);
            out[r * (d + 1) + c] = y;
            ld_sum += ld;
        }
        out[r * (d + 1) + d] = ld_sum;
    }
    const int ix = x.id;
    const int ir = raw.id;
    return g.raw({n, d + 1}, std::move(out),
                 [ix, ir, n, d, per, bins, tail_bound, min_bin](ad::Graph& gg, ad::Var self) {
                     auto go = gg.grad(self);
                     auto vx2 = gg.val(ad::Var{ix});
                     auto vr2 = gg.val(ad::Var{ir});
                     auto& gx = gg.grad_buf(ad::Var{ix});
                     auto& gr = gg.grad_buf(ad::Var{ir});
                     std::array<Du, 3 * kMaxBins - 1> rawd;
                     for (std::size_t r = 0; r < n; ++r) {
                         const double go_ld = go[r * (d + 1) + d];
                         for (std::size_t c = 0; c < d; ++c) {
                             const double go_y = go[r * (d + 1) + c];
                             if (go_y == 0.0 && go_ld == 0.0) continue;
                             const double xv = vx2[r * d + c];
                             if (xv < -tail_bound || xv > tail_bound) {
                                 gx[r * d + c] += go_y;
                                 continue;
                             }
                             const double* rp = vr2.data() + r * d * per + c * per;
                             for (std::size_t j = 0; j < per; ++j) rawd[j] = {rp[j], 0.0};
                             Du y, ld;
                             // x pass
                             rq_kernel(Du{xv, 1.0}, rawd.data(), bins, tail_bound, min_bin, y, ld);
                             gx[r * d + c] += go_y * y.d + go_ld * ld.d;
                             // widths and heights couple through the softmax,
                             // so every logit contributes; of the interior
                             // derivatives only the active bin's two matter.
                             const Grid<double> probe = [&] {
                                 Grid<double> pg;
                                 build_grid(rp, bins, tail_bound, min_bin, pg);
                                 return pg;
                             }();
                             const std::size_t kbin = find_bin(probe.xs, bins, xv);
                             auto run_pass = [&](std::size_t j) {
                                 rawd[j].d = 1.0;
                                 rq_kernel(Du{xv, 0.0}, rawd.data(), bins, tail_bound, min_bin, y,
                                           ld);
                                 gr[r * d * per + c * per + j] += go_y * y.d + go_ld * ld.d;
                                 rawd[j].d = 0.0;
                             };
                             for (std::size_t j = 0; j < 2 * bins; ++j) run_pass(j);
                             if (kbin >= 1) run_pass(2 * bins + kbin - 1);
                             if (kbin + 1 <= bins - 1) run_pass(2 * bins + kbin);
                         }
                     }
                 });
}

} // namespace

void rq_spline_forward(double x, std::span<const double> raw, std::size_t bins, double tail_bound,
                       double min_bin, double& y, double& logdet) {
    check_spline_args(raw.size(), bins, tail_bound, min_bin);
    rq_kernel(x, raw.data(), bins, tail_bound, min_bin, y, logdet);
}

void rq_spline_inverse(double y, std::span<const double> raw, std::size_t bins, double tail_bound,
                       double min_bin, double& x, double& logdet) {
    check_spline_args(raw.size(), bins, tail_bound, min_bin);
    if (y < -tail_bound || y > tail_bound) {
        x = y;
        logdet = 0.0;
        return;
    }
    Grid<double> grid;
    build_grid(raw.data(), bins, tail_bound, min_bin, grid);
    const std::size_t k = find_bin(grid.ys, bins, y);
    const double w = grid.xs[k + 1] - grid.xs[k];
    const double h = grid.ys[k + 1] - grid.ys[k];
    const double s = h / w;
    const double dk = grid.deltas[k];
    const double dk1 = grid.deltas[k + 1];
    const double dy = y - grid.ys[k];
    const double a = h * (s - dk) + dy * (dk1 + dk - 2.0 * s);
    const double b = h * dk - dy * (dk1 + dk - 2.0 * s);
    const double c = -s * dy;
    const double disc = b * b - 4.0 * a * c;
    double xi = 2.0 * c / (-b - std::sqrt(std::max(disc, 0.0)));
    // One Newton polish against the forward map; the stable quadratic root
    // still sheds digits in sharp bins and forward evaluation is cheap.
    {
        const double xim = xi * (1.0 - xi);
        const double den = s + (dk1 + dk - 2.0 * s) * xim;
        const double yhat = grid.ys[k] + h * (s * xi * xi + dk * xim) / den;
        const double num = s * s * (dk1 * xi * xi + 2.0 * s * xim + dk * (1.0 - xi) * (1.0 - xi));
        const double dydxi = w * num / (den * den);
        if (dydxi > 0.0 && std::isfinite(yhat)) {
            xi = std::clamp(xi - (yhat - y) / dydxi, 0.0, 1.0);
        }
    }
    x = grid.xs[k] + xi * w;
    const double xim = xi * (1.0 - xi);
    const double den = s + (dk1 + dk - 2.0 * s) * xim;
    const double num = s * s * (dk1 * xi * xi + 2.0 * s * xim + dk * (1.0 - xi) * (1.0 - xi));
    logdet = std::log(num) - 2.0 * std::log(den);
}

SplineFlow::SplineFlow(const FlowConfig& cfg, RngStream& rng) : cfg_(cfg) {
    if (cfg_.dim < 1) throw std::invalid_argument("SplineFlow: dim must be positive");
    if (cfg_.context_dim < 1) throw std::invalid_argument("SplineFlow: context_dim must be positive");
    if (cfg_.layers < 1) throw std::invalid_argument("SplineFlow: need at least one layer");
    check_spline_args(3 * cfg_.bins - 1, cfg_.bins, cfg_.tail_bound, cfg_.min_bin);
    const std::size_t per = 3 * cfg_.bins - 1;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        conds_.emplace_back(std::vector<std::size_t>{n_id() + cfg_.context_dim, cfg_.hidden,
                                                     cfg_.hidden, n_tr() * per});
        conds_.back().init(rng, true);
    }
}

void SplineFlow::to_base(std::span<const double> theta, std::span<const double> context,
                         std::span<double> z, double& logdet) const {
    const std::size_t d = cfg_.dim;
    if (theta.size() != d || z.size() != d || context.size() != cfg_.context_dim) {
        throw std::invalid_argument("SplineFlow::to_base: dimension mismatch");
    }
    const std::size_t per = 3 * cfg_.bins - 1;
    std::vector<double> cur(theta.begin(), theta.end());
    std::vector<double> cond_in(n_id() + cfg_.context_dim);
    logdet = 0.0;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::size_t id0 = front_identity(l) ? 0 : d - n_id();
        const std::size_t tr0 = front_identity(l) ? n_id() : 0;
        for (std::size_t q = 0; q < n_id(); ++q) cond_in[q] = cur[id0 + q];
        for (std::size_t q = 0; q < cfg_.context_dim; ++q) cond_in[n_id() + q] = context[q];
        const std::vector<double> raw = conds_[l].forward_row(cond_in);
        for (std::size_t q = 0; q < n_tr(); ++q) {
            double y, ld;
            rq_kernel(cur[tr0 + q], raw.data() + q * per, cfg_.bins, cfg_.tail_bound, cfg_.min_bin,
                      y, ld);
            cur[tr0 + q] = y;
            logdet += ld;
        }
    }
    std::copy(cur.begin(), cur.end(), z.begin());
}

void SplineFlow::to_data(std::span<const double> z, std::span<const double> context,
                         std::span<double> theta, double& logdet) const {
    const std::size_t d = cfg_.dim;
    if (theta.size() != d || z.size() != d || context.size() != cfg_.context_dim) {
        throw std::invalid_argument("SplineFlow::to_data: dimension mismatch");
    }
    const std::size_t per = 3 * cfg_.bins - 1;
    std::vector<double> cur(z.begin(), z.end());
    std::vector<double> cond_in(n_id() + cfg_.context_dim);
    logdet = 0.0;
    for (std::size_t li = cfg_.layers; li-- > 0;) {
        const std::size_t id0 = front_identity(li) ? 0 : d - n_id();
        const std::size_t tr0 = front_identity(li) ? n_id() : 0;
        for (std::size_t q = 0; q < n_id(); ++q) cond_in[q] = cur[id0 + q];
        for (std::size_t q = 0; q < cfg_.context_dim; ++q) cond_in[n_id() + q] = context[q];
        const std::vector<double> raw = conds_[li].forward_row(cond_in);
        for (std::size_t q = 0; q < n_tr(); ++q) {
            double x, ld_fwd;
            rq_spline_inverse(cur[tr0 + q], std::span(raw.data() + q * per, per), cfg_.bins,
                              cfg_.tail_bound, cfg_.min_bin, x, ld_fwd);
            cur[tr0 + q] = x;
            logdet -= ld_fwd;
        }
    }
    std::copy(cur.begin(), cur.end(), theta.begin());
}

double SplineFlow::log_prob(std::span<const double> theta, std::span<const double> context) const {
    std::vector<double> z(cfg_.dim);
    double logdet = 0.0;
    to_base(theta, context, z, logdet);
    double sq = 0.0;
    for (double v : z) sq += v * v;
    const double base =
        -0.5 * sq - 0.5 * static_cast<double>(cfg_.dim) * std::log(2.0 * std::numbers::pi);
    return base + logdet;
}

std::vector<double> SplineFlow::sample(std::span<const double> context, std::size_t count,
                                       RngStream& rng) const {
    std::vector<double> out(count * cfg_.dim);
    std::vector<double> z(cfg_.dim);
    double logdet = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
        for (double& v : z) v = rng.normal();
        to_data(z, context, std::span(out.data() + s * cfg_.dim, cfg_.dim), logdet);
    }
    return out;
}

ad::Var SplineFlow::log_prob_graph(ad::Graph& g, ad::Var theta, ad::Var context) {
    const auto& ts = g.shape(theta);
    const auto& cs = g.shape(context);
    if (ts.size() != 2 || ts[1] != cfg_.dim) {
        throw std::invalid_argument("log_prob_graph: theta shape " + ad::shape_str(ts) +
                                    " does not match flow dim");
    }
    if (cs.size() != 2 || cs[0] != ts[0] || cs[1] != cfg_.context_dim) {
        throw std::invalid_argument("log_prob_graph: context shape " + ad::shape_str(cs) +
                                    " incompatible with theta " + ad::shape_str(ts));
    }
    const std::size_t n = ts[0];
    const std::size_t d = cfg_.dim;
    ad::Var cur = theta;
    ad::Var ld_total = g.constant({n}, std::vector<double>(n, 0.0));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        ad::Var cond_in = context;
        ad::Var x_id{-1};
        ad::Var x_tr = cur;
        if (n_id() > 0) {
            const std::size_t id0 = front_identity(l) ? 0 : d - n_id();
            const std::size_t tr0 = front_identity(l) ? n_id() : 0;
            x_id = ad::slice_cols(g, cur, id0, id0 + n_id());
            x_tr = ad::slice_cols(g, cur, tr0, tr0 + n_tr());
            cond_in = ad::concat_cols(g, x_id, context);
        }
        ad::Var raw = conds_[l].forward(g, cond_in);
        ad::Var packed = spline_pack(g, x_tr, raw, cfg_.bins, cfg_.tail_bound, cfg_.min_bin);
        ad::Var y_tr = ad::slice_cols(g, packed, 0, n_tr());
        ad::Var ld = ad::reshape(g, ad::slice_cols(g, packed, n_tr(), n_tr() + 1), {n});
        ld_total = ad::add(g, ld_total, ld);
        if (n_id() > 0) {
            cur = front_identity(l) ? ad::concat_cols(g, x_id, y_tr)
                                    : ad::concat_cols(g, y_tr, x_id);
        } else {
            cur = y_tr;
        }
    }
    ad::Var sq = ad::sum_cols(g, ad::mul(g, cur, cur));
    ad::Var base = ad::affine(g, sq, -0.5,
                              -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
    return ad::add(g, base, ld_total);
}

void SplineFlow::collect(std::vector<ad::Parameter*>& out) {
    for (auto& c : conds_) c.collect(out);
}

void SplineFlow::collect_named(const std::string& prefix, nn::NamedParams& out) {
    for (std::size_t l = 0; l < conds_.size(); ++l) {
        conds_[l].collect_named(prefix + ".layer" + std::to_string(l), out);
    }
}

} // namespace ilm
