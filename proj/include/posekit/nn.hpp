#pragma once

/// \file nn.hpp
/// \brief Parameters, layers, the gated attention unit, temperature softmax, the
/// SimCC KL loss and a central-difference gradient checker.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <algorithm>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posekit/autograd.hpp"
#include "posekit/error.hpp"
#include "posekit/tensor.hpp"

namespace posekit::nn {

/// Named trainable tensor. Copies are deep: a copied parameter owns its own value and grad.
template <typename T>
class Param {
public:
    Param() = default;
    Param(std::string name, Tensor<T> value) : name_(std::move(name)), node_(std::make_shared<Node<T>>())
    {
        node_->value = std::move(value);
        node_->requires_grad = true;
        node_->grad = Tensor<T>::zeros(node_->value.shape());
    }
    Param(const Param& o) : name_(o.name_)
    {
        if (o.node_) node_ = std::make_shared<Node<T>>(Node<T>{o.node_->value, o.node_->grad, o.node_->requires_grad, {}, {}});
    }
    Param& operator=(const Param& o)
    {
        if (this != &o) *this = Param(o);
        return *this;
    }
    Param(Param&&) noexcept = default;
    Param& operator=(Param&&) noexcept = default;

    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }
    Tensor<T>& value() { return node_->value; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& grad() { return node_->ensure_grad(); }
    const Tensor<T>& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    bool defined() const { return node_ != nullptr; }

    bool trainable() const { return node_->requires_grad; }
    void set_trainable(bool on) { node_->requires_grad = on; }

    void zero_grad() { node_->ensure_grad().fill(T(0)); }

    /// Graph handle; ops that consume it accumulate into grad().
    Var<T> var() const { return Var<T>(node_); }

private:
    std::string name_;
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

/// He-style uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)), variance 2/fan_in.
template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    Tensor<T> t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
struct Linear {
    Param<T> weight; ///< [in, out]
    Param<T> bias;   ///< [out]

    static Linear create(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
    {
        return {Param<T>(name + ".weight", he_uniform<T>({in, out}, in, rng)), Param<T>(name + ".bias", Tensor<T>({out}))};
    }

    std::size_t in_features() const { return weight.shape()[0]; }
    std::size_t out_features() const { return weight.shape()[1]; }

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight.var(), bias.var()); }

    void collect(ParamRefs<T>& out) { out.insert(out.end(), {&weight, &bias}); }
};

template <typename T>
struct Conv2d {
    Param<T> weight; ///< [O, C, k, k]
    Param<T> bias;   ///< [O]
    Conv2dOptions options;

    static Conv2d create(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                         std::size_t stride, std::mt19937_64& rng)
    {
        return {Param<T>(name + ".weight", he_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng)),
                Param<T>(name + ".bias", Tensor<T>({out})), Conv2dOptions{stride, kernel / 2}};
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight.var(), bias.var(), options); }

    void collect(ParamRefs<T>& out) { out.insert(out.end(), {&weight, &bias}); }
};

// --- softmax / losses --------------------------------------------------------------

/// softmax(v / tau), computed stably in double.
template <typename T>
std::vector<T> softmax_temp(std::span<const T> v, double tau)
{
    posekit::detail::require(tau > 0.0 && std::isfinite(tau), "softmax_temp: tau must be > 0");
    posekit::detail::require(!v.empty(), "softmax_temp: empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (T x : v) m = std::max(m, static_cast<double>(x) / tau);
    std::vector<double> e(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += e[i] = std::exp(static_cast<double>(v[i]) / tau - m);
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(e[i] / s);
    return out;
}

/// Weighted mean over rows of KL(target_row || softmax(pred_row / tau)).
///
/// `pred` has shape [..., L] and is viewed as R rows of length L; `target` holds R rows of
/// nonnegative soft labels, each renormalized to sum to 1 before use. Row i is scaled by
/// weights[i]; the sum is divided by the number of rows with nonzero weight (0 when none).
template <typename T>
Var<T> kl_discret_loss(const Var<T>& pred, const Tensor<T>& target, std::span<const T> weights, double tau)
{
    using posekit::detail::require;
    require(tau > 0.0, "kl_discret_loss: tau must be > 0");
    require(pred.rank() >= 1, "kl_discret_loss: prediction must have a class dimension");
    const std::size_t L = pred.shape().back();
    const std::size_t R = pred.size() / L;
    require(target.size() == pred.size(), "kl_discret_loss: target " + shape_str(target.shape()) + " vs prediction " +
                                              shape_str(pred.shape()));
    require(weights.size() == R, "kl_discret_loss: expected " + std::to_string(R) + " row weights, got " +
                                     std::to_string(weights.size()));

    std::size_t active = 0;
    for (T w : weights) {
        require(std::isfinite(static_cast<double>(w)) && w >= T(0), "kl_discret_loss: weights must be >= 0");
        active += w > T(0) ? 1 : 0;
    }

    // Cache of (target distribution, prediction distribution) per active row for backward.
    auto cache = std::make_shared<std::vector<double>>(2 * R * L, 0.0);
    double loss = 0.0;
    const T* pv = pred.value().data();
    for (std::size_t r = 0; r < R; ++r) {
        if (weights[r] == T(0)) continue;
        double* t = cache->data() + 2 * r * L;
        double* p = t + L;
        double tsum = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            t[j] = static_cast<double>(target[r * L + j]);
            require(t[j] >= 0.0, "kl_discret_loss: target labels must be nonnegative");
            tsum += t[j];
        }
        if (tsum <= 0.0) {
            std::fill(t, t + L, 0.0);
            continue;
        }
        for (std::size_t j = 0; j < L; ++j) t[j] /= tsum;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) m = std::max(m, static_cast<double>(pv[r * L + j]) / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) z += std::exp(static_cast<double>(pv[r * L + j]) / tau - m);
        const double logz = m + std::log(z);
        double kl = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            const double logp = static_cast<double>(pv[r * L + j]) / tau - logz;
            p[j] = std::exp(logp);
            if (t[j] > 0.0) kl += t[j] * (std::log(t[j]) - logp);
        }
        loss += static_cast<double>(weights[r]) * kl;
    }
    const double denom = active ? static_cast<double>(active) : 1.0;
    loss = active ? loss / denom : 0.0;

    std::vector<T> w(weights.begin(), weights.end());
    return detail::make_op<T>(Tensor<T>({1}, std::vector<T>{static_cast<T>(loss)}), {pred},
                              [cache, w = std::move(w), R, L, tau, denom](Node<T>& n) {
                                  auto& g = n.inputs[0]->ensure_grad();
                                  const double go = static_cast<double>(n.grad[0]);
                                  for (std::size_t r = 0; r < R; ++r) {
                                      if (w[r] == T(0)) continue;
                                      const double* t = cache->data() + 2 * r * L;
                                      const double* p = t + L;
                                      double tsum = 0.0;
                                      for (std::size_t j = 0; j < L; ++j) tsum += t[j];
                                      if (tsum == 0.0) continue;
                                      const double c = go * static_cast<double>(w[r]) / (denom * tau);
                                      for (std::size_t j = 0; j < L; ++j) g[r * L + j] += static_cast<T>(c * (p[j] - t[j]));
                                  }
                              });
}

/// As above with an extra per-row multiplier, e.g. a per-part weight expanded to keypoints.
template <typename T>
Var<T> kl_discret_loss(const Var<T>& pred, const Tensor<T>& target, std::span<const T> weights, double tau,
                       std::span<const T> part_weights)
{
    posekit::detail::require(part_weights.size() == weights.size(),
                             "kl_discret_loss: part_weights length differs from weights");
    std::vector<T> w(weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weights[i] * part_weights[i];
    return kl_discret_loss(pred, target, std::span<const T>(w), tau);
}

/// Mean squared error between two tensors of identical shape.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b)
{
    posekit::detail::require(a.shape() == b.shape(), "mse: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Var<T> d = add(a, scale(b, T(-1)));
    return mean(mul(d, d));
}

// --- gated attention unit -------------------------------------------------------------

struct GauConfig {
    std::size_t model_dim = 256;
    std::size_t expansion_dim = 0; ///< 0 selects 2 * model_dim
    std::size_t attention_dim = 128;
    bool residual = true;

    std::size_t expansion() const { return expansion_dim ? expansion_dim : 2 * model_dim; }

    void validate() const
    {
        posekit::detail::require(model_dim > 0 && expansion() > 0 && attention_dim > 0, "GAU dimensions must be > 0");
    }
};

template <typename T>
struct GauParams {
    Linear<T> to_u;   ///< d -> e, SiLU gate
    Linear<T> to_v;   ///< d -> e, SiLU values
    Linear<T> to_z;   ///< d -> s, SiLU shared base
    Linear<T> query;  ///< d -> s, Q(X)
    Param<T> key_gamma; ///< per-dim scale of K(Z)
    Param<T> key_beta;
    Linear<T> out;    ///< e -> d

    static GauParams create(const std::string& name, const GauConfig& cfg, std::mt19937_64& rng)
    {
        cfg.validate();
        const std::size_t d = cfg.model_dim, e = cfg.expansion(), s = cfg.attention_dim;
        GauParams p;
        p.to_u = Linear<T>::create(name + ".to_u", d, e, rng);
        p.to_v = Linear<T>::create(name + ".to_v", d, e, rng);
        p.to_z = Linear<T>::create(name + ".to_z", d, s, rng);
        p.query = Linear<T>::create(name + ".query", d, s, rng);
        Tensor<T> gamma({s}, T(1));
        p.key_gamma = Param<T>(name + ".key_gamma", std::move(gamma));
        p.key_beta = Param<T>(name + ".key_beta", Tensor<T>({s}));
        p.out = Linear<T>::create(name + ".out", e, d, rng);
        return p;
    }

    void collect(ParamRefs<T>& out_refs)
    {
        to_u.collect(out_refs);
        to_v.collect(out_refs);
        to_z.collect(out_refs);
        query.collect(out_refs);
        out_refs.insert(out_refs.end(), {&key_gamma, &key_beta});
        out.collect(out_refs);
    }
};

/// Gated attention unit over n tokens.
///
///   U = silu(X Wu), V = silu(X Wv), Z = silu(X Wz)
///   A = relu(Q(X) K(Z)^T / sqrt(s))^2 / n
///   O = (U * (A V)) Wo            (+ X when cfg.residual)
///
/// x: [n, d] or [B, n, d]; the output has the shape of x.
template <typename T>
Var<T> gau_forward(const Var<T>& x, const GauConfig& cfg, const GauParams<T>& p)
{
    using posekit::detail::require;
    cfg.validate();
    require(x.rank() == 2 || x.rank() == 3, "gau_forward: input must be [n,d] or [B,n,d]");
    require(x.shape().back() == cfg.model_dim, "gau_forward: feature dim " + std::to_string(x.shape().back()) +
                                                   " differs from model_dim " + std::to_string(cfg.model_dim));
    require(p.to_u.in_features() == cfg.model_dim && p.to_u.out_features() == cfg.expansion() &&
                p.to_z.out_features() == cfg.attention_dim,
            "gau_forward: parameters do not match the config");
    const Shape in_shape = x.shape();
    const std::size_t n = in_shape[in_shape.size() - 2];
    require(n >= 1, "gau_forward: need at least one token");
    Var<T> x3 = x.rank() == 3 ? x : reshape(x, {1, n, cfg.model_dim});

    Var<T> u = silu(p.to_u(x3));
    Var<T> v = silu(p.to_v(x3));
    Var<T> z = silu(p.to_z(x3));
    Var<T> q = p.query(x3);
    Var<T> k = affine_last(z, p.key_gamma.var(), p.key_beta.var());
    Var<T> logits = scale(bmm(q, k, /*transpose_b=*/true), T(1) / static_cast<T>(std::sqrt(double(cfg.attention_dim))));
    Var<T> attn = scale(relu_sq(logits), T(1) / static_cast<T>(n));
    Var<T> o = p.out(mul(u, bmm(attn, v)));
    if (cfg.residual) o = add(o, x3);
    return x.rank() == 3 ? o : reshape(o, in_shape);
}

// --- gradient checking -------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

enum class FiniteDifference {
    Central, ///< one central difference with step eps
    Ridders, ///< Richardson extrapolation of central differences, starting at step eps
};

/// Ridders' extrapolation of central differences of g(h) = f(w + h) around h = 0. Steps
/// shrink by 1.4 from `h0`; the tableau entry with the smallest error estimate wins.
template <typename G>
double ridders_derivative(G&& g, double h0)
{
    constexpr double con = 1.4, con2 = con * con;
    constexpr int n = 10;
    double a[n][n];
    double h = h0;
    a[0][0] = (g(h) - g(-h)) / (2.0 * h);
    double best = a[0][0], err = std::numeric_limits<double>::infinity();
    for (int i = 1; i < n; ++i) {
        h /= con;
        a[0][i] = (g(h) - g(-h)) / (2.0 * h);
        double fac = con2;
        for (int j = 1; j <= i; ++j) {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= con2;
            const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
            if (e <= err) {
                err = e;
                best = a[j][i];
            }
        }
        // higher orders got worse: roundoff has taken over
        if (std::abs(a[i][i] - a[i - 1][i - 1]) >= 2.0 * err) break;
    }
    return best;
}

/// Compares reverse-mode gradients of the scalar `f()` against central differences
/// (f(w + eps) - f(w - eps)) / (2 eps) for every entry of every parameter, or for up to
/// `max_entries` randomly chosen entries per parameter when nonzero.
///
/// A single step trades truncation error against roundoff, which breaks down on deep
/// piecewise-smooth graphs with gradient entries near 1e-9; FiniteDifference::Ridders
/// extrapolates instead.
template <typename F>
GradCheckResult grad_check(F&& f, const ParamRefs<double>& params, double eps = 1e-4, std::size_t max_entries = 0,
                           std::uint64_t seed = 0, FiniteDifference method = FiniteDifference::Central)
{
    for (auto* p : params) p->zero_grad();
    Var<double> loss = f();
    posekit::detail::require(std::isfinite(loss.item()), "grad_check: f is not finite");
    backward(loss);

    std::mt19937_64 rng(seed);
    GradCheckResult res;
    for (auto* p : params) {
        std::vector<std::size_t> idx(p->size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (max_entries && idx.size() > max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_entries);
        }
        for (std::size_t i : idx) {
            double& w = p->value()[i];
            const double saved = w;
            auto shifted = [&](double h) {
                w = saved + h;
                const double v = f().item();
                w = saved;
                posekit::detail::require(std::isfinite(v), "grad_check: f is not finite");
                return v;
            };
            const double numeric = method == FiniteDifference::Ridders ? ridders_derivative(shifted, eps)
                                                                       : (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            const double err = relative_error(p->grad()[i], numeric);
            ++res.entries;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = p->name();
                res.worst_index = i;
                res.worst_analytic = p->grad()[i];
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

} // namespace posekit::nn
