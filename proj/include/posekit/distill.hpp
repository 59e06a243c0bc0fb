#pragma once

/// \file distill.hpp
/// \brief Two-stage distillation. Stage 1 adds teacher logit and fused-feature terms to
/// task training; stage 2 freezes everything below the head and retrains the head
/// against the stage-1 model's own logits.

#include <cstdint>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posekit/error.hpp"
#include "posekit/model.hpp"
#include "posekit/nn.hpp"
#include "posekit/train.hpp"

namespace posekit::distill {

struct DistillConfig {
    double tau_d = 0.1;
    double alpha = 1.0; ///< logit term weight
    double beta = 0.5;  ///< feature term weight
    int stage = 1;
    double stage2_fraction = 0.2;
    bool linear_decay = false; ///< scale alpha and beta by (1 - step / steps)
    bool reinit_head = true;   ///< stage 2 starts from a fresh head instead of the stage-1 one

    void validate() const
    {
        using detail::require;
        require(tau_d > 0.0, "distill: tau_d must be > 0");
        require(alpha >= 0.0 && beta >= 0.0, "distill: alpha and beta must be >= 0");
        require(stage == 1 || stage == 2, "distill: stage must be 1 or 2");
        require(stage2_fraction >= 0.0 && stage2_fraction <= 1.0, "distill: stage2_fraction must be in [0, 1]");
    }
};

/// Row-wise softmax(teacher / tau) over the last axis.
template <typename T>
Tensor<T> soft_targets(const Tensor<T>& teacher_logits, double tau)
{
    detail::require(teacher_logits.rank() >= 1, "soft_targets: logits need a class axis");
    const std::size_t L = teacher_logits.shape().back();
    Tensor<T> out(teacher_logits.shape());
    for (std::size_t r = 0; r < teacher_logits.size() / L; ++r) {
        auto p = nn::softmax_temp<T>(std::span<const T>(teacher_logits.data() + r * L, L), tau);
        std::copy(p.begin(), p.end(), out.data() + r * L);
    }
    return out;
}

/// Keypoint-weighted KL(softmax(teacher/tau) || softmax(student/tau)).
template <typename T>
nn::Var<T> logit_distill_loss(const Tensor<T>& teacher_logits, const nn::Var<T>& student_logits,
                              std::span<const T> weights, double tau_d)
{
    detail::require(teacher_logits.shape() == student_logits.shape(),
                    "logit_distill_loss: teacher " + shape_str(teacher_logits.shape()) + " vs student " +
                        shape_str(student_logits.shape()));
    return nn::kl_discret_loss(student_logits, soft_targets(teacher_logits, tau_d), weights, tau_d);
}

/// Per-level learned 1x1 projection from student to teacher channels; identity where
/// the channel counts already agree.
template <typename T>
struct FeatureProjector {
    std::vector<std::optional<nn::Conv2d<T>>> levels;

    static FeatureProjector create(const std::vector<std::size_t>& student_channels,
                                   const std::vector<std::size_t>& teacher_channels, std::uint64_t seed)
    {
        detail::require(student_channels.size() == teacher_channels.size(), "projector: level counts differ");
        std::mt19937_64 rng(seed);
        FeatureProjector p;
        for (std::size_t l = 0; l < student_channels.size(); ++l) {
            if (student_channels[l] == teacher_channels[l])
                p.levels.emplace_back(std::nullopt);
            else
                p.levels.emplace_back(nn::Conv2d<T>::create("projector.level" + std::to_string(l), student_channels[l],
                                                            teacher_channels[l], 1, 1, rng));
        }
        return p;
    }

    nn::ParamRefs<T> parameters()
    {
        nn::ParamRefs<T> out;
        for (auto& l : levels)
            if (l) l->collect(out);
        return out;
    }
};

/// MSE between teacher features and (projected) student features of one level.
template <typename T>
nn::Var<T> feature_distill_loss(const Tensor<T>& teacher_feat, const nn::Var<T>& student_feat,
                                const nn::Conv2d<T>* projector = nullptr)
{
    using detail::require;
    const auto& ts = teacher_feat.shape();
    const auto& ss = student_feat.shape();
    require(ts.size() == ss.size() && ts.size() >= 3, "feature_distill_loss: features must be [C,H,W] or [N,C,H,W]");
    const std::size_t r = ts.size();
    require(ts[r - 1] == ss[r - 1] && ts[r - 2] == ss[r - 2] && (r == 3 || ts[0] == ss[0]),
            "feature_distill_loss: spatial dims differ: teacher " + shape_str(ts) + ", student " + shape_str(ss));
    nn::Var<T> s = projector ? (*projector)(student_feat) : student_feat;
    require(s.shape() == ts, "feature_distill_loss: channel counts differ (" + shape_str(s.shape()) + " vs " +
                                 shape_str(ts) + ") and no projector was given");
    return nn::mse(s, nn::constant(teacher_feat));
}

/// Mean feature term over pyramid levels.
template <typename T>
nn::Var<T> feature_distill_loss(const std::vector<nn::Var<T>>& teacher, const std::vector<nn::Var<T>>& student,
                                const FeatureProjector<T>& projector)
{
    detail::require(teacher.size() == student.size() && student.size() == projector.levels.size(),
                    "feature_distill_loss: level counts differ");
    std::vector<nn::Var<T>> terms;
    for (std::size_t l = 0; l < student.size(); ++l) {
        const auto& proj = projector.levels[l];
        terms.push_back(feature_distill_loss(teacher[l].value(), student[l], proj ? &*proj : nullptr));
    }
    return nn::scale(nn::add_all(terms), T(1) / static_cast<T>(terms.size()));
}

/// Distillation terms over x, y (and z when both sides have it), each keypoint-weighted.
template <typename T>
nn::Var<T> logit_terms(const ForwardOutput<T>& teacher, const ForwardOutput<T>& student, const train::Batch<T>& b,
                       double tau_d)
{
    std::span<const T> w(b.weights);
    std::vector<nn::Var<T>> terms{logit_distill_loss(teacher.x_logits.value(), student.x_logits, w, tau_d),
                                  logit_distill_loss(teacher.y_logits.value(), student.y_logits, w, tau_d)};
    // Without z labels the teacher's depth is still a useful target, so fall back to the 2D weights.
    if (teacher.z_logits.defined() && student.z_logits.defined())
        terms.push_back(logit_distill_loss(teacher.z_logits.value(), student.z_logits,
                                           b.z ? std::span<const T>(b.z_weights) : w, tau_d));
    return nn::add_all(terms);
}

/// Stage 1: task loss + alpha * logit term + beta * feature term. With alpha = beta = 0
/// no extra work is done and training is identical to train::fit.
template <typename T>
train::TrainLog stage1_fit(Model<T>& student, const Model<T>& teacher, FeatureProjector<T>& projector,
                           const std::vector<train::Example>& data, const train::TrainConfig& tc,
                           const DistillConfig& dc, const std::function<void(std::size_t, double)>& on_step = {})
{
    dc.validate();
    detail::require(dc.stage == 1, "stage1_fit: config is for stage 2");
    if (dc.alpha == 0.0 && dc.beta == 0.0) return train::fit(student, data, tc, on_step);

    std::size_t step = 0;
    train::LossHook<T> hook = [&](const ForwardOutput<T>& out, const train::Batch<T>& b) {
        const double decay = dc.linear_decay ? 1.0 - static_cast<double>(step) / static_cast<double>(tc.steps) : 1.0;
        ForwardOutput<T> t = teacher.forward(nn::constant(b.images));
        std::vector<nn::Var<T>> terms;
        if (dc.alpha > 0.0) terms.push_back(nn::scale(logit_terms(t, out, b, dc.tau_d), static_cast<T>(dc.alpha * decay)));
        if (dc.beta > 0.0)
            terms.push_back(nn::scale(feature_distill_loss(t.fused, out.fused, projector), static_cast<T>(dc.beta * decay)));
        return nn::add_all(terms);
    };
    auto counting = [&](std::size_t s, double l) {
        step = s + 1;
        if (on_step) on_step(s, l);
    };
    return train::fit(student, data, tc, counting, hook, projector.parameters());
}

/// Parameters trained in stage 2: the attention block and the final branches.
inline bool stage2_trainable(const std::string& name) { return is_head_parameter(name); }

/// Marks backbone, neck and hierarchical encoder frozen; returns the number of
/// trainable parameters left.
template <typename T>
std::size_t freeze_for_stage2(Model<T>& m)
{
    std::size_t n = 0;
    for (auto* p : m.parameters()) {
        p->set_trainable(stage2_trainable(p->name()));
        n += p->trainable() ? 1 : 0;
    }
    return n;
}

template <typename T>
void unfreeze_all(Model<T>& m)
{
    for (auto* p : m.parameters()) p->set_trainable(true);
}

/// Fresh values for every stage-2 trainable parameter, drawn from a model built with `seed`.
template <typename T>
void reinit_head(Model<T>& m, std::uint64_t seed)
{
    Model<T> fresh = Model<T>::build(m.config(), seed);
    auto dst = m.parameters();
    auto src = fresh.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i)
        if (stage2_trainable(dst[i]->name())) dst[i]->value() = src[i]->value();
}

template <typename T>
std::uint64_t frozen_checksum(const Model<T>& m)
{
    std::vector<const nn::Param<T>*> frozen;
    for (const auto* p : m.parameters())
        if (!stage2_trainable(p->name())) frozen.push_back(p);
    return parameter_checksum(frozen);
}

template <typename T>
std::uint64_t head_checksum(const Model<T>& m)
{
    std::vector<const nn::Param<T>*> head;
    for (const auto* p : m.parameters())
        if (stage2_trainable(p->name())) head.push_back(p);
    return parameter_checksum(head);
}

/// Teacher logits for a batch.
template <typename T>
using LogitsProvider = std::function<ForwardOutput<T>(const train::Batch<T>&)>;

template <typename T>
LogitsProvider<T> snapshot_provider(std::shared_ptr<const Model<T>> snapshot)
{
    return [snapshot](const train::Batch<T>& b) { return snapshot->forward(nn::constant(b.images)); };
}

/// One stage-2 step: only parameters still marked trainable move. Returns the distill loss
/// measured before the update.
template <typename T>
double stage2_head_distill_step(Model<T>& student, const LogitsProvider<T>& teacher, const train::Batch<T>& batch,
                                train::Optimizer<T>& opt, const DistillConfig& dc, double clip_norm = 0.0)
{
    dc.validate();
    auto params = student.parameters();
    nn::ParamRefs<T> trainable;
    for (auto* p : params)
        if (p->trainable()) trainable.push_back(p);
    detail::require(!trainable.empty(), "stage2: the trainable parameter set is empty");
    student.zero_grad();
    ForwardOutput<T> t = teacher(batch);
    ForwardOutput<T> s = student.forward(nn::constant(batch.images));
    nn::Var<T> loss = logit_terms(t, s, batch, dc.tau_d);
    nn::backward(loss);
    if (clip_norm > 0.0) nn::clip_grad_norm(params, clip_norm);
    opt.step(params);
    return static_cast<double>(loss.item());
}

/// Stage 2 on a stage-1 model: snapshot it as the teacher, freeze, optionally re-initialize
/// the head from `tc.seed` and train the head for tc.steps steps.
template <typename T>
train::TrainLog stage2_fit(Model<T>& student, const std::vector<train::Example>& data, const train::TrainConfig& tc,
                           const DistillConfig& dc, const std::function<void(std::size_t, double)>& on_step = {})
{
    dc.validate();
    auto snapshot = std::make_shared<const Model<T>>(student);
    auto provider = snapshot_provider<T>(snapshot);
    freeze_for_stage2(student);
    if (dc.reinit_head) reinit_head(student, tc.seed ^ 0x5eed5eed5eedull);
    train::EpochSampler sampler(data.size(), tc.seed);
    train::Optimizer<T> opt(tc);
    train::TrainLog log;
    for (std::size_t step = 0; step < tc.steps; ++step) {
        opt.set_lr(train::scheduled_lr(tc, step));
        auto idx = sampler.next(tc.batch_size);
        auto batch = train::make_batch<T>(data, idx);
        const double loss = stage2_head_distill_step(student, provider, batch, opt, dc, tc.clip_norm);
        detail::require(std::isfinite(loss), "stage 2 diverged at step " + std::to_string(step));
        log.losses.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return log;
}

} // namespace posekit::distill
