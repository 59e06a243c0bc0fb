#pragma once

/// \file train.hpp
/// \brief Batching, the SimCC task loss and a deterministic training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posekit/depth.hpp"
#include "posekit/error.hpp"
#include "posekit/model.hpp"
#include "posekit/nn.hpp"
#include "posekit/optim.hpp"
#include "posekit/simcc.hpp"
#include "posekit/synthetic.hpp"

namespace posekit::train {

/// Label spec whose vector lengths agree with the model's branches.
inline simcc::LabelSpec label_spec(const ModelConfig& c)
{
    simcc::LabelSpec s;
    s.input_w = static_cast<int>(c.input_w);
    s.input_h = static_cast<int>(c.input_h);
    s.split_ratio = c.split_ratio;
    s.z_bins = static_cast<int>(c.z_bins);
    return s;
}

struct Example {
    Tensor<float> image; ///< [3, H, W]
    Pose pose;           ///< patch coordinates (depth already normalized when present)
    simcc::Labels<float> labels;
};

/// Encodes scenes; poses with depth get z labels through `rule`, the rest are z-masked.
inline std::vector<Example> make_examples(const std::vector<synth::Scene>& scenes, const simcc::LabelSpec& spec,
                                          const RootRule& rule = {})
{
    std::vector<Example> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) {
        auto labels = s.pose.depth ? simcc::encode_pose_3d<float>(s.pose, rule, spec) : simcc::encode_pose<float>(s.pose, spec);
        out.push_back({s.image, s.pose, std::move(labels)});
    }
    return out;
}

template <typename T>
struct Batch {
    std::size_t n = 0, k = 0;
    Tensor<T> images; ///< [N, 3, H, W]
    Tensor<T> x, y;   ///< [N, K, L]
    std::optional<Tensor<T>> z;
    std::vector<T> weights;   ///< N*K
    std::vector<T> z_weights; ///< N*K
};

/// Stacks examples; if any carries z labels the batch gets a z tensor in which the
/// remaining (2D) examples contribute zero rows with zero z weight.
template <typename T = float>
Batch<T> make_batch(const std::vector<Example>& data, std::span<const std::size_t> idx)
{
    detail::require(!idx.empty(), "make_batch: empty index list");
    const auto& first = data.at(idx[0]);
    Batch<T> b;
    b.n = idx.size();
    b.k = first.labels.x.dim(0);
    const std::size_t lx = first.labels.x.dim(1), ly = first.labels.y.dim(1);
    const Shape img = first.image.shape();
    bool any_z = false;
    std::size_t lz = 0;
    for (auto i : idx) {
        const auto& e = data.at(i);
        detail::require(e.image.shape() == img && e.labels.x.dim(0) == b.k && e.labels.x.dim(1) == lx &&
                            e.labels.y.dim(1) == ly,
                        "make_batch: examples have inconsistent shapes");
        if (e.labels.z) {
            detail::require(!any_z || e.labels.z->dim(1) == lz, "make_batch: inconsistent z bins");
            any_z = true;
            lz = e.labels.z->dim(1);
        }
    }
    b.images = Tensor<T>({b.n, img[0], img[1], img[2]});
    b.x = Tensor<T>({b.n, b.k, lx});
    b.y = Tensor<T>({b.n, b.k, ly});
    if (any_z) b.z = Tensor<T>({b.n, b.k, lz});
    b.weights.assign(b.n * b.k, T(0));
    b.z_weights.assign(b.n * b.k, T(0));
    auto copy = [](const auto& src, Tensor<T>& dst, std::size_t slot) {
        std::transform(src.vec().begin(), src.vec().end(), dst.data() + slot * src.size(),
                       [](auto v) { return static_cast<T>(v); });
    };
    for (std::size_t s = 0; s < b.n; ++s) {
        const auto& e = data[idx[s]];
        copy(e.image, b.images, s);
        copy(e.labels.x, b.x, s);
        copy(e.labels.y, b.y, s);
        if (e.labels.z) copy(*e.labels.z, *b.z, s);
        for (std::size_t j = 0; j < b.k; ++j) {
            b.weights[s * b.k + j] = static_cast<T>(e.labels.keypoint_weights[j]);
            if (e.labels.z) b.z_weights[s * b.k + j] = static_cast<T>(e.labels.z_weights[j]);
        }
    }
    return b;
}

struct LossConfig {
    double tau = 0.1;
    /// Per-keypoint multipliers (empty = all 1); use expand_part_weights for per-part values.
    std::vector<double> part_weights;
};

/// Per-keypoint weights from per-part values, e.g. {{"hand", 2.0}}; unnamed parts get 1.
inline std::vector<double> expand_part_weights(const KeypointSchema& schema,
                                               const std::vector<std::pair<std::string, double>>& parts)
{
    std::vector<double> w(schema.size(), 1.0);
    for (const auto& [name, value] : parts) {
        detail::require(value >= 0.0, "part weight for '" + name + "' must be >= 0");
        auto r = schema.part_slice(name);
        for (std::size_t i = r.begin; i < r.end; ++i) w[i] = value;
    }
    return w;
}

/// Sum over axes of kl_discret_loss; the z term uses the z-mask weights.
template <typename T>
nn::Var<T> task_loss(const ForwardOutput<T>& out, const Batch<T>& b, const LossConfig& cfg)
{
    std::vector<T> w = b.weights, zw = b.z_weights;
    if (!cfg.part_weights.empty()) {
        detail::require(cfg.part_weights.size() == b.k, "task_loss: part_weights must have one entry per keypoint");
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] *= static_cast<T>(cfg.part_weights[i % b.k]);
            zw[i] *= static_cast<T>(cfg.part_weights[i % b.k]);
        }
    }
    std::vector<nn::Var<T>> terms{nn::kl_discret_loss(out.x_logits, b.x, std::span<const T>(w), cfg.tau),
                                  nn::kl_discret_loss(out.y_logits, b.y, std::span<const T>(w), cfg.tau)};
    if (out.z_logits.defined() && b.z) terms.push_back(nn::kl_discret_loss(out.z_logits, *b.z, std::span<const T>(zw), cfg.tau));
    return nn::add_all(terms);
}

/// Shuffled epochs over [0, n), deterministic in the seed.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed)
    {
        detail::require(n > 0, "sampler: no examples");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        pos_ = n;
    }

    std::vector<std::size_t> next(std::size_t count)
    {
        std::vector<std::size_t> out;
        out.reserve(count);
        while (out.size() < count) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
    std::size_t pos_ = 0;
};

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 16;
    std::string optimizer = "sgd"; ///< "sgd" or "adamw"
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::string schedule = "cosine"; ///< "constant" or "cosine"
    double clip_norm = 0.0;          ///< 0 disables clipping
    LossConfig loss;
    std::uint64_t seed = 0;
};

inline double scheduled_lr(const TrainConfig& c, std::size_t step)
{
    if (c.schedule == "constant" || c.steps <= 1) return c.lr;
    detail::require(c.schedule == "cosine", "unknown lr schedule '" + c.schedule + "'");
    const double t = static_cast<double>(step) / static_cast<double>(c.steps);
    return 0.5 * c.lr * (1.0 + std::cos(3.14159265358979323846 * t));
}

/// SGD or AdamW behind one interface.
template <typename T>
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& c)
    {
        if (c.optimizer == "sgd")
            sgd_.emplace(nn::SgdOptions{c.lr, c.momentum, c.weight_decay});
        else if (c.optimizer == "adamw")
            adamw_.emplace(nn::AdamWOptions{c.lr, 0.9, 0.999, 1e-8, c.weight_decay});
        else
            throw Error("unknown optimizer '" + c.optimizer + "'");
    }

    void set_lr(double lr) { sgd_ ? sgd_->set_lr(lr) : adamw_->set_lr(lr); }
    void step(const nn::ParamRefs<T>& p) { sgd_ ? sgd_->step(p) : adamw_->step(p); }

private:
    std::optional<nn::Sgd<T>> sgd_;
    std::optional<nn::AdamW<T>> adamw_;
};

/// Extra loss terms added to the task loss (distillation hooks into this).
template <typename T>
using LossHook = std::function<nn::Var<T>(const ForwardOutput<T>&, const Batch<T>&)>;

/// One optimizer step on task loss (+ `extra`). `extra_params` (e.g. a distillation
/// projector) are optimized alongside the model.
template <typename T>
double train_step(Model<T>& model, const Batch<T>& batch, Optimizer<T>& opt, const TrainConfig& cfg,
                  const LossHook<T>& extra = {}, const nn::ParamRefs<T>& extra_params = {})
{
    auto params = model.parameters();
    params.insert(params.end(), extra_params.begin(), extra_params.end());
    bool any = false;
    for (auto* p : params) any = any || p->trainable();
    detail::require(any, "train_step: no trainable parameters");
    for (auto* p : params) p->zero_grad();
    ForwardOutput<T> out = model.forward(nn::constant(batch.images));
    nn::Var<T> loss = task_loss(out, batch, cfg.loss);
    if (extra) loss = nn::add(loss, extra(out, batch));
    nn::backward(loss);
    if (cfg.clip_norm > 0.0) nn::clip_grad_norm(params, cfg.clip_norm);
    opt.step(params);
    return static_cast<double>(loss.item());
}

struct TrainLog {
    std::vector<double> losses;
};

/// Runs cfg.steps optimizer steps over `data`; `on_step(step, loss)` is called after each.
template <typename T>
TrainLog fit(Model<T>& model, const std::vector<Example>& data, const TrainConfig& cfg,
             const std::function<void(std::size_t, double)>& on_step = {}, const LossHook<T>& extra = {},
             const nn::ParamRefs<T>& extra_params = {})
{
    detail::require(cfg.batch_size > 0, "fit: batch_size must be > 0");
    EpochSampler sampler(data.size(), cfg.seed);
    Optimizer<T> opt(cfg);
    TrainLog log;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        opt.set_lr(scheduled_lr(cfg, step));
        auto idx = sampler.next(cfg.batch_size);
        auto batch = make_batch<T>(data, idx);
        const double loss = train_step(model, batch, opt, cfg, extra, extra_params);
        detail::require(std::isfinite(loss), "training diverged at step " + std::to_string(step));
        log.losses.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return log;
}

/// Decoded poses for a list of examples, processed in chunks.
template <typename T>
std::vector<Pose> predict(const Model<T>& model, const std::vector<Example>& data, std::size_t chunk = 32)
{
    const auto spec = label_spec(model.config());
    std::vector<Pose> out;
    for (std::size_t s = 0; s < data.size(); s += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = s; i < std::min(data.size(), s + chunk); ++i) idx.push_back(i);
        auto batch = make_batch<T>(data, idx);
        auto fwd = model.forward(nn::constant(batch.images));
        const std::size_t k = batch.k;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            auto rows = [&](const nn::Var<T>& v) {
                const std::size_t L = v.shape().back();
                return Tensor<T>({k, L}, std::vector<T>(v.value().data() + b * k * L, v.value().data() + (b + 1) * k * L));
            };
            Tensor<T> x = rows(fwd.x_logits), y = rows(fwd.y_logits);
            if (fwd.z_logits.defined()) {
                Tensor<T> z = rows(fwd.z_logits);
                out.push_back(simcc::decode_pose(x, y, &z, spec));
            } else {
                out.push_back(simcc::decode_pose(x, y, spec));
            }
        }
    }
    return out;
}

/// Mean Euclidean decode error in px over keypoints with nonzero label weight,
/// optionally restricted to `slice`.
template <typename T>
double mean_keypoint_error(const Model<T>& model, const std::vector<Example>& data,
                           std::optional<IndexRange> slice = std::nullopt)
{
    auto preds = predict(model, data);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto& e = data[s];
        for (std::size_t j = 0; j < e.pose.size(); ++j) {
            if (slice && !slice->contains(j)) continue;
            if (e.labels.keypoint_weights[j] <= 0.0f) continue;
            const double dx = preds[s].coords[j].x - e.pose.coords[j].x;
            const double dy = preds[s].coords[j].y - e.pose.coords[j].y;
            sum += std::sqrt(dx * dx + dy * dy);
            ++count;
        }
    }
    detail::require(count > 0, "mean_keypoint_error: no labeled keypoints");
    return sum / static_cast<double>(count);
}

} // namespace posekit::train
