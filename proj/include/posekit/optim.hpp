#pragma once

/// \file optim.hpp
/// \brief SGD with momentum (the reference optimizer) and an AdamW variant.

#include <cmath>
#include <string>
#include <vector>

#include "posekit/error.hpp"
#include "posekit/nn.hpp"

namespace posekit::nn {

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamRefs<T>& params, double max_norm)
{
    double sq = 0.0;
    for (const auto* p : params)
        if (p->trainable())
            for (T g : p->grad().vec()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto* p : params)
            if (p->trainable())
                for (T& g : p->grad().vec()) g *= s;
    }
    return norm;
}

struct SgdOptions {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

/// v <- momentum * v + (g + wd * w);  w <- w - lr * v.  Frozen parameters are skipped.
template <typename T>
class Sgd {
public:
    explicit Sgd(SgdOptions opt = {}) : opt_(opt)
    {
        detail::require(opt.lr >= 0.0 && opt.momentum >= 0.0 && opt.weight_decay >= 0.0,
                        "sgd: lr, momentum and weight decay must be >= 0");
    }

    void step(const ParamRefs<T>& params)
    {
        if (velocity_.empty()) {
            for (const auto* p : params) velocity_.push_back(Tensor<T>::zeros(p->shape()));
        }
        detail::require(velocity_.size() == params.size(), "sgd: parameter list changed between steps");
        const T lr = static_cast<T>(opt_.lr), mu = static_cast<T>(opt_.momentum), wd = static_cast<T>(opt_.weight_decay);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto* p = params[i];
            if (!p->trainable()) continue;
            auto& v = velocity_[i].vec();
            auto& w = p->value().vec();
            const auto& g = p->grad().vec();
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = mu * v[j] + g[j] + wd * w[j];
                w[j] -= lr * v[j];
            }
        }
    }

    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }

private:
    SgdOptions opt_;
    std::vector<Tensor<T>> velocity_;
};

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWOptions opt = {}) : opt_(opt)
    {
        detail::require(opt.lr >= 0.0 && opt.beta1 >= 0.0 && opt.beta1 < 1.0 && opt.beta2 >= 0.0 && opt.beta2 < 1.0,
                        "adamw: invalid hyperparameters");
    }

    void step(const ParamRefs<T>& params)
    {
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.push_back(Tensor<double>::zeros(p->shape()));
                v_.push_back(Tensor<double>::zeros(p->shape()));
            }
        }
        detail::require(m_.size() == params.size(), "adamw: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto* p = params[i];
            if (!p->trainable()) continue;
            auto& w = p->value().vec();
            const auto& g = p->grad().vec();
            auto& m = m_[i].vec();
            auto& v = v_[i].vec();
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
                v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
                double wj = static_cast<double>(w[j]) * (1.0 - opt_.lr * opt_.weight_decay);
                wj -= opt_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
                w[j] = static_cast<T>(wj);
            }
        }
    }

    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }

private:
    AdamWOptions opt_;
    std::vector<Tensor<double>> m_, v_;
    long t_ = 0;
};

} // namespace posekit::nn
