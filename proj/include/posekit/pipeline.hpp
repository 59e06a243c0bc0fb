#pragma once

/// \file pipeline.hpp
/// \brief Top-down inference: affine cropping, skip-frame detection with keypoint-driven
/// bbox tracking, OKS pose-NMS and temporal smoothing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "posekit/core_types.hpp"
#include "posekit/error.hpp"
#include "posekit/eval.hpp"
#include "posekit/model.hpp"
#include "posekit/simcc.hpp"
#include "posekit/tensor.hpp"
#include "posekit/train.hpp"

namespace posekit::pipeline {

using detail::require;

/// u = a*x + b*y + c, v = d*x + e*y + f. Maps image coordinates to patch coordinates.
struct Affine {
    double a = 1.0, b = 0.0, c = 0.0;
    double d = 0.0, e = 1.0, f = 0.0;

    Point2 apply(Point2 p) const { return {a * p.x + b * p.y + c, d * p.x + e * p.y + f}; }

    Affine inverse() const
    {
        const double det = a * e - b * d;
        require(std::isfinite(det) && std::abs(det) > 1e-300, "affine transform is singular");
        Affine r;
        r.a = e / det;
        r.b = -b / det;
        r.d = -d / det;
        r.e = a / det;
        r.c = -(r.a * c + r.b * f);
        r.f = -(r.d * c + r.e * f);
        return r;
    }
};

struct Crop {
    Tensor<float> patch; ///< [3, out_h, out_w]
    Affine transform;    ///< image -> patch
    BBox region;         ///< padded, aspect-corrected region in image coordinates
};

/// Padded crop region: the bbox grown by `padding` about its center, then the shorter
/// side expanded until the aspect matches out_w / out_h.
inline BBox crop_region(const BBox& bbox, std::size_t out_w, std::size_t out_h, double padding)
{
    require(bbox.valid(), "affine_crop: degenerate bbox");
    require(out_w > 0 && out_h > 0, "affine_crop: output size must be positive");
    require(padding >= 1.0 && std::isfinite(padding), "affine_crop: padding must be >= 1");
    const Point2 c = bbox.center();
    double w = bbox.w * padding, h = bbox.h * padding;
    const double aspect = double(out_w) / double(out_h);
    if (w > h * aspect)
        h = w / aspect;
    else
        w = h * aspect;
    return {c.x - 0.5 * w, c.y - 0.5 * h, w, h};
}

/// Bilinear sample of channel `ch` at (x, y); pixel (u, v) holds the value at coordinate
/// (u, v) and everything outside the image reads as zero.
inline float sample_bilinear(const Tensor<float>& img, std::size_t ch, double x, double y)
{
    const std::size_t h = img.dim(1), w = img.dim(2);
    const double fx = std::floor(x), fy = std::floor(y);
    const double tx = x - fx, ty = y - fy;
    const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
    auto at = [&](std::ptrdiff_t u, std::ptrdiff_t v) -> double {
        if (u < 0 || v < 0 || u >= std::ptrdiff_t(w) || v >= std::ptrdiff_t(h)) return 0.0;
        return img[(ch * h + std::size_t(v)) * w + std::size_t(u)];
    };
    const double top = (1.0 - tx) * at(x0, y0) + tx * at(x0 + 1, y0);
    const double bot = (1.0 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1);
    return static_cast<float>((1.0 - ty) * top + ty * bot);
}

inline Crop affine_crop(const Tensor<float>& image, const BBox& bbox, std::size_t out_w, std::size_t out_h,
                        double padding)
{
    require(image.rank() == 3 && image.dim(0) == 3, "affine_crop: image must be [3,H,W]");
    Crop out;
    out.region = crop_region(bbox, out_w, out_h, padding);
    const Point2 c = bbox.center();
    const double s = double(out_w) / out.region.w;
    out.transform = {s, 0.0, 0.5 * double(out_w) - s * c.x, 0.0, s, 0.5 * double(out_h) - s * c.y};
    out.patch = Tensor<float>({3, out_h, out_w});
    if (image.empty()) return out;
    const Affine inv = out.transform.inverse();
    for (std::size_t v = 0; v < out_h; ++v)
        for (std::size_t u = 0; u < out_w; ++u) {
            const Point2 q = inv.apply({double(u), double(v)});
            for (std::size_t ch = 0; ch < 3; ++ch) out.patch[(ch * out_h + v) * out_w + u] = sample_bilinear(image, ch, q.x, q.y);
        }
    return out;
}

/// Maps a pose from patch coordinates back to the image; visibility, depth and scores
/// are kept.
inline Pose invert_transform(const Pose& pose_in_patch, const Affine& transform)
{
    const Affine inv = transform.inverse();
    Pose out = pose_in_patch;
    for (auto& p : out.coords) p = inv.apply(p);
    return out;
}

/// Area of the axis-aligned extent of the labeled keypoints.
inline double keypoint_extent_area(const Pose& p)
{
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p.labeled(i)) continue;
        x0 = std::min(x0, p.coords[i].x);
        x1 = std::max(x1, p.coords[i].x);
        y0 = std::min(y0, p.coords[i].y);
        y1 = std::max(y1, p.coords[i].y);
    }
    return x1 >= x0 ? (x1 - x0) * (y1 - y0) : 0.0;
}

/// Symmetric OKS used for NMS: keypoints labeled in both poses, area taken as the mean
/// of the two keypoint-extent areas. Zero when nothing overlaps.
inline double nms_oks(const Pose& a, const Pose& b, std::span<const double> sigmas)
{
    require(a.size() == b.size() && sigmas.size() >= a.size(), "pose_nms: pose or sigma length mismatch");
    const double area = 0.5 * (keypoint_extent_area(a) + keypoint_extent_area(b));
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a.labeled(i) || !b.labeled(i)) continue;
        const double dx = a.coords[i].x - b.coords[i].x, dy = a.coords[i].y - b.coords[i].y;
        const double var = (2.0 * sigmas[i]) * (2.0 * sigmas[i]);
        sum += std::exp(-(dx * dx + dy * dy) / var / (area + eval::kEps) / 2.0);
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

/// Greedy OKS suppression. Returns kept indices in descending score order; equal scores
/// keep the lower index first.
inline std::vector<std::size_t> pose_nms(const std::vector<Pose>& poses, const std::vector<double>& scores,
                                         std::span<const double> sigmas, double oks_thr)
{
    require(poses.size() == scores.size(), "pose_nms: poses and scores differ in length");
    std::vector<std::size_t> order(poses.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
        bool keep = true;
        for (std::size_t j : kept)
            if (nms_oks(poses[i], poses[j], sigmas) >= oks_thr) {
                keep = false;
                break;
            }
        if (keep) kept.push_back(i);
    }
    return kept;
}

inline constexpr double kTrackScoreFloor = 0.3;

/// Bounds of keypoints scoring above `floor`, grown by `padding` about the center.
/// Nothing qualifying means the instance stops being tracked.
inline std::optional<BBox> bbox_from_keypoints(const Pose& pose, double padding, double floor = kTrackScoreFloor)
{
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
    bool any = false;
    for (std::size_t i = 0; i < pose.size(); ++i) {
        if (!pose.labeled(i) || !(pose.score(i) > floor)) continue;
        const Point2 p = pose.coords[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
        any = true;
    }
    if (!any) return std::nullopt;
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    const double w = (x1 - x0) * padding, h = (y1 - y0) * padding;
    BBox b{cx - 0.5 * w, cy - 0.5 * h, w, h};
    if (!b.valid()) return std::nullopt; // a single point or a line has no area
    return b;
}

// ---- smoothing ----

enum class SmootherKind { None, Ema, OneEuro };

struct SmootherConfig {
    SmootherKind kind = SmootherKind::OneEuro;
    double alpha = 0.5;
    double min_cutoff = 1.0;
    double beta = 0.007;
    double d_cutoff = 1.0;
    double fps = 30.0;

    void validate() const
    {
        require(alpha > 0.0 && alpha <= 1.0, "smoother: alpha must be in (0, 1]");
        require(min_cutoff > 0.0 && d_cutoff > 0.0 && fps > 0.0, "smoother: cutoffs and fps must be positive");
        require(beta >= 0.0, "smoother: beta must be >= 0");
    }
};

/// Per-instance filter memory: one entry per scalar coordinate (x and y interleaved).
struct SmootherState {
    bool initialized = false;
    std::vector<double> value;
    std::vector<double> derivative;
};

inline double one_euro_alpha(double cutoff, double dt)
{
    const double tau = 1.0 / (2.0 * std::numbers::pi * cutoff);
    return 1.0 / (1.0 + tau / dt);
}

/// Filters one pose in place of the instance's history; the first frame passes through.
inline Pose smooth(const Pose& pose, SmootherState& st, const SmootherConfig& cfg)
{
    if (cfg.kind == SmootherKind::None) return pose;
    const std::size_t n = pose.size() * 2;
    if (!st.initialized || st.value.size() != n) {
        st.initialized = true;
        st.value.resize(n);
        st.derivative.assign(n, 0.0);
        for (std::size_t i = 0; i < pose.size(); ++i) {
            st.value[2 * i] = pose.coords[i].x;
            st.value[2 * i + 1] = pose.coords[i].y;
        }
        return pose;
    }
    Pose out = pose;
    const double dt = 1.0 / cfg.fps;
    // std::lerp is exact at t = 1 and for equal endpoints, so alpha 1 is the identity
    // and a constant input is a fixed point.
    for (std::size_t j = 0; j < n; ++j) {
        double& dst = (j % 2 == 0) ? out.coords[j / 2].x : out.coords[j / 2].y;
        const double x = dst;
        if (cfg.kind == SmootherKind::Ema) {
            st.value[j] = std::lerp(st.value[j], x, cfg.alpha);
        } else {
            const double dx = (x - st.value[j]) / dt;
            const double ad = one_euro_alpha(cfg.d_cutoff, dt);
            st.derivative[j] = std::lerp(st.derivative[j], dx, ad);
            const double cutoff = cfg.min_cutoff + cfg.beta * std::abs(st.derivative[j]);
            const double a = one_euro_alpha(cutoff, dt);
            st.value[j] = std::lerp(st.value[j], x, a);
        }
        dst = st.value[j];
    }
    return out;
}

// ---- configuration ----

struct PipelineConfig {
    std::size_t detect_interval = 1;
    double bbox_padding = 1.25;
    /// Growth applied to keypoint bounds when they become the next frame's bbox.
    double track_padding = 1.25;
    double nms_oks_thr = 0.9;
    double score_floor = kTrackScoreFloor;
    SmootherConfig smoother;
    std::size_t input_w = 48;
    std::size_t input_h = 64;
    std::vector<double> sigmas; ///< empty selects a uniform default per keypoint

    void validate() const
    {
        require(detect_interval >= 1, "pipeline: detect_interval must be >= 1");
        require(bbox_padding >= 1.0 && track_padding >= 1.0, "pipeline: padding must be >= 1");
        require(nms_oks_thr > 0.0 && nms_oks_thr <= 1.0, "pipeline: nms_oks_thr must be in (0, 1]");
        require(score_floor >= 0.0 && score_floor < 1.0, "pipeline: score_floor must be in [0, 1)");
        require(input_w > 0 && input_h > 0, "pipeline: input size must be positive");
        smoother.validate();
    }
};

inline std::string to_string(SmootherKind k)
{
    switch (k) {
    case SmootherKind::None: return "none";
    case SmootherKind::Ema: return "ema";
    default: return "one-euro";
    }
}

inline SmootherKind smoother_kind_from_string(const std::string& s)
{
    if (s == "none") return SmootherKind::None;
    if (s == "ema") return SmootherKind::Ema;
    if (s == "one-euro" || s == "one_euro") return SmootherKind::OneEuro;
    throw Error("unknown smoother '" + s + "' (expected none, ema or one-euro)");
}

/// Missing keys keep their defaults.
inline PipelineConfig pipeline_config_from_json(const nlohmann::ordered_json& j)
{
    PipelineConfig c;
    try {
        c.detect_interval = j.value("detect_interval", c.detect_interval);
        c.bbox_padding = j.value("bbox_padding", c.bbox_padding);
        c.track_padding = j.value("track_padding", c.track_padding);
        c.nms_oks_thr = j.value("nms_oks_thr", c.nms_oks_thr);
        c.score_floor = j.value("score_floor", c.score_floor);
        c.input_w = j.value("input_w", c.input_w);
        c.input_h = j.value("input_h", c.input_h);
        c.sigmas = j.value("sigmas", c.sigmas);
        if (j.contains("smoother")) {
            const auto& s = j.at("smoother");
            if (s.is_string()) {
                c.smoother.kind = smoother_kind_from_string(s.get<std::string>());
            } else {
                c.smoother.kind = smoother_kind_from_string(s.value("kind", std::string("one-euro")));
                c.smoother.alpha = s.value("alpha", c.smoother.alpha);
                c.smoother.min_cutoff = s.value("min_cutoff", c.smoother.min_cutoff);
                c.smoother.beta = s.value("beta", c.smoother.beta);
                c.smoother.d_cutoff = s.value("d_cutoff", c.smoother.d_cutoff);
                c.smoother.fps = s.value("fps", c.smoother.fps);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::ordered_json to_json(const PipelineConfig& c)
{
    nlohmann::ordered_json j;
    j["detect_interval"] = c.detect_interval;
    j["bbox_padding"] = c.bbox_padding;
    j["track_padding"] = c.track_padding;
    j["nms_oks_thr"] = c.nms_oks_thr;
    j["score_floor"] = c.score_floor;
    j["input_w"] = c.input_w;
    j["input_h"] = c.input_h;
    j["smoother"] = {{"kind", to_string(c.smoother.kind)},
                     {"alpha", c.smoother.alpha},
                     {"min_cutoff", c.smoother.min_cutoff},
                     {"beta", c.smoother.beta},
                     {"d_cutoff", c.smoother.d_cutoff},
                     {"fps", c.smoother.fps}};
    if (!c.sigmas.empty()) j["sigmas"] = c.sigmas;
    return j;
}

// ---- the stepping loop ----

using Detector = std::function<std::vector<BBox>(const Tensor<float>& image)>;

/// Receives the crop and returns a pose in patch coordinates.
using Estimator = std::function<Pose(const Crop& crop)>;

struct Result {
    Pose pose;
    double score = 0.0;
};

/// Accumulated wall-clock per stage, in microseconds.
struct StageTimes {
    std::map<std::string, double> us;
    std::map<std::string, std::size_t> calls;
};

struct PipelineState {
    std::uint64_t frame_counter = 0;
    std::vector<BBox> bboxes;
    std::vector<SmootherState> smoothers;
    // Diagnostics from the latest step.
    bool detector_ran = false;
    std::vector<BBox> last_crop_bboxes;
    std::size_t detector_calls = 0;
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const PipelineConfig& config() const { return cfg_; }
    const PipelineState& state() const { return state_; }
    void reset() { state_ = {}; }
    void set_timer(StageTimes* t) { timer_ = t; }

    std::vector<Result> step(std::uint64_t frame_index, const Tensor<float>& image, const Detector& detector,
                             const Estimator& estimator)
    {
        require(!state_.frame_counter || frame_index >= last_frame_, "pipeline: frame indices must not decrease");
        last_frame_ = frame_index;
        ++state_.frame_counter;

        state_.detector_ran = frame_index % cfg_.detect_interval == 0;
        if (state_.detector_ran) {
            auto t = tick();
            state_.bboxes.clear();
            for (const BBox& b : detector(image))
                if (b.valid()) state_.bboxes.push_back(b);
            ++state_.detector_calls;
            tock("detect", t);
        }
        state_.last_crop_bboxes = state_.bboxes;

        std::vector<Pose> poses;
        std::vector<double> scores;
        for (const BBox& b : state_.bboxes) {
            auto t = tick();
            Crop crop = affine_crop(image, b, cfg_.input_w, cfg_.input_h, cfg_.bbox_padding);
            tock("crop", t);
            t = tick();
            Pose p = estimator(crop);
            tock("estimate", t);
            t = tick();
            poses.push_back(invert_transform(p, crop.transform));
            tock("invert", t);
            scores.push_back(eval::instance_score(poses.back()));
        }

        auto t = tick();
        std::vector<std::size_t> kept;
        if (!poses.empty()) {
            const std::vector<double> sig = sigmas_for(poses.front().size());
            kept = pose_nms(poses, scores, sig, cfg_.nms_oks_thr);
        }
        tock("nms", t);

        t = tick();
        std::vector<Result> out;
        state_.smoothers.resize(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i)
            out.push_back({smooth(poses[kept[i]], state_.smoothers[i], cfg_.smoother), scores[kept[i]]});
        tock("smooth", t);

        t = tick();
        state_.bboxes.clear();
        for (const auto& r : out)
            if (auto b = bbox_from_keypoints(r.pose, cfg_.track_padding, cfg_.score_floor)) state_.bboxes.push_back(*b);
        tock("track", t);
        return out;
    }

    std::vector<double> sigmas_for(std::size_t k) const
    {
        if (cfg_.sigmas.empty()) return std::vector<double>(k, kDefaultSigma);
        require(cfg_.sigmas.size() == k, "pipeline: sigma table length " + std::to_string(cfg_.sigmas.size()) +
                                             " does not match " + std::to_string(k) + " keypoints");
        return cfg_.sigmas;
    }

private:
    using Clock = std::chrono::steady_clock;

    std::optional<Clock::time_point> tick() const
    {
        if (!timer_) return std::nullopt;
        return Clock::now();
    }

    void tock(const char* stage, const std::optional<Clock::time_point>& start)
    {
        if (!timer_ || !start) return;
        timer_->us[stage] += std::chrono::duration<double, std::micro>(Clock::now() - *start).count();
        ++timer_->calls[stage];
    }

    PipelineConfig cfg_;
    PipelineState state_;
    std::uint64_t last_frame_ = 0;
    StageTimes* timer_ = nullptr;
};

/// Estimator backed by a model: forward the patch and decode. The model must outlive
/// the returned function.
template <typename T>
Estimator model_estimator(const Model<T>& model)
{
    return [&model](const Crop& crop) {
        const auto fwd = model.forward(crop.patch.template cast<T>());
        const auto spec = train::label_spec(model.config());
        const std::size_t k = model.config().num_keypoints;
        auto rows = [&](const nn::Var<T>& v) { return v.value().reshaped({k, v.shape().back()}); };
        if (fwd.z_logits.defined()) {
            Tensor<T> z = rows(fwd.z_logits);
            return simcc::decode_pose(rows(fwd.x_logits), rows(fwd.y_logits), &z, spec);
        }
        return simcc::decode_pose(rows(fwd.x_logits), rows(fwd.y_logits), spec);
    };
}

// ---- trace-driven simulation ----

/// Per-frame detector output and ground truth poses, both in image coordinates.
struct TraceFrame {
    std::vector<BBox> detections;
    std::vector<Pose> poses;
};

struct Trace {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t num_keypoints = 0;
    std::vector<TraceFrame> frames;
};

inline Trace trace_from_json(const nlohmann::ordered_json& j)
{
    Trace t;
    try {
        t.width = j.value("width", std::size_t{0});
        t.height = j.value("height", std::size_t{0});
        t.num_keypoints = j.at("num_keypoints").get<std::size_t>();
        require(t.num_keypoints > 0, "trace: num_keypoints must be positive");
        for (const auto& f : j.at("frames")) {
            TraceFrame fr;
            for (const auto& b : f.value("detections", nlohmann::ordered_json::array())) {
                require(b.is_array() && b.size() == 4, "trace: a detection must be [x, y, w, h]");
                fr.detections.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
            for (const auto& pj : f.value("poses", nlohmann::ordered_json::array())) {
                const auto kp = pj.at("keypoints").get<std::vector<double>>();
                require(kp.size() == 3 * t.num_keypoints, "trace: keypoints must hold 3 values per keypoint");
                Pose p = Pose::unlabeled(t.num_keypoints);
                for (std::size_t i = 0; i < t.num_keypoints; ++i) {
                    p.coords[i] = {kp[3 * i], kp[3 * i + 1]};
                    p.visibility[i] = static_cast<std::uint8_t>(kp[3 * i + 2]);
                }
                if (pj.contains("scores")) {
                    p.scores = pj.at("scores").get<std::vector<double>>();
                    require(p.scores->size() == t.num_keypoints, "trace: one score per keypoint is required");
                }
                fr.poses.push_back(std::move(p));
            }
            t.frames.push_back(std::move(fr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("trace: ") + e.what());
    }
    return t;
}

inline nlohmann::ordered_json pose_keypoints_json(const Pose& p)
{
    auto kp = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < p.size(); ++i) {
        kp.push_back(p.coords[i].x);
        kp.push_back(p.coords[i].y);
        kp.push_back(int(p.visibility[i]));
    }
    return kp;
}

inline nlohmann::ordered_json trace_to_json(const Trace& t)
{
    nlohmann::ordered_json j;
    j["width"] = t.width;
    j["height"] = t.height;
    j["num_keypoints"] = t.num_keypoints;
    auto frames = nlohmann::ordered_json::array();
    for (const auto& f : t.frames) {
        nlohmann::ordered_json fj;
        fj["detections"] = nlohmann::ordered_json::array();
        for (const auto& b : f.detections) fj["detections"].push_back({b.x, b.y, b.w, b.h});
        fj["poses"] = nlohmann::ordered_json::array();
        for (const auto& p : f.poses) {
            nlohmann::ordered_json pj;
            pj["keypoints"] = pose_keypoints_json(p);
            if (p.scores) pj["scores"] = *p.scores;
            fj["poses"].push_back(pj);
        }
        frames.push_back(fj);
    }
    j["frames"] = frames;
    return j;
}

/// Synthetic trace: `people` instances drifting across the frame, one noisy detection
/// each plus, on every fourth frame, a near-duplicate detection that NMS should remove.
inline Trace synthetic_trace(std::size_t frames, std::size_t people, std::size_t k, std::uint64_t seed,
                             std::size_t width = 640, std::size_t height = 480)
{
    require(k >= 2, "synthetic_trace: at least two keypoints are required");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    struct Track {
        double cx, cy, vx, vy, scale;
        std::vector<Point2> offsets;
    };
    std::vector<Track> tracks;
    for (std::size_t p = 0; p < people; ++p) {
        Track t;
        t.cx = (0.2 + 0.6 * uni(rng)) * double(width);
        t.cy = (0.3 + 0.4 * uni(rng)) * double(height);
        t.vx = 4.0 * (uni(rng) - 0.5);
        t.vy = 2.0 * (uni(rng) - 0.5);
        t.scale = 40.0 + 40.0 * uni(rng);
        for (std::size_t i = 0; i < k; ++i) t.offsets.push_back({uni(rng) - 0.5, 2.0 * (uni(rng) - 0.5)});
        tracks.push_back(std::move(t));
    }
    Trace tr{width, height, k, {}};
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t f = 0; f < frames; ++f) {
        TraceFrame fr;
        for (auto& t : tracks) {
            Pose p = Pose::unlabeled(k);
            p.scores = std::vector<double>(k, 0.9);
            for (std::size_t i = 0; i < k; ++i) {
                p.coords[i] = {t.cx + t.scale * t.offsets[i].x, t.cy + t.scale * t.offsets[i].y};
                p.visibility[i] = kVisible;
            }
            auto b = bbox_from_keypoints(p, 1.0, 0.0);
            if (b) {
                BBox d{b->x + noise(rng), b->y + noise(rng), b->w * (1.0 + 0.02 * noise(rng)), b->h * (1.0 + 0.02 * noise(rng))};
                if (d.valid()) fr.detections.push_back(d);
                if (f % 4 == 0) {
                    BBox dup{d.x + 1.0, d.y - 1.0, d.w, d.h};
                    if (dup.valid()) fr.detections.push_back(dup);
                }
            }
            fr.poses.push_back(std::move(p));
            t.cx += t.vx;
            t.cy += t.vy;
        }
        tr.frames.push_back(std::move(fr));
    }
    return tr;
}

/// Stand-in for a trained model during simulation: returns the ground-truth pose whose
/// labeled centroid lies in the crop region (nearest to its center), in patch
/// coordinates, with optional Gaussian jitter. Regions without a match yield a pose
/// whose scores are all zero.
class TraceOracle {
public:
    TraceOracle(std::size_t k, double noise_px, std::uint64_t seed) : k_(k), noise_(noise_px), rng_(seed) {}

    void set_frame(const TraceFrame* frame) { frame_ = frame; }

    Pose operator()(const Crop& crop)
    {
        const Point2 c = crop.region.center();
        const Pose* best = nullptr;
        double best_d = INFINITY;
        if (frame_)
            for (const Pose& p : frame_->poses) {
                double sx = 0.0, sy = 0.0;
                std::size_t n = 0;
                for (std::size_t i = 0; i < p.size(); ++i)
                    if (p.labeled(i)) {
                        sx += p.coords[i].x;
                        sy += p.coords[i].y;
                        ++n;
                    }
                if (!n) continue;
                sx /= double(n);
                sy /= double(n);
                const BBox& r = crop.region;
                if (sx < r.x || sx > r.x + r.w || sy < r.y || sy > r.y + r.h) continue;
                const double d = std::hypot(sx - c.x, sy - c.y);
                if (d < best_d) {
                    best_d = d;
                    best = &p;
                }
            }
        Pose out = Pose::unlabeled(k_);
        out.scores = std::vector<double>(k_, 0.0);
        if (!best) {
            for (std::size_t i = 0; i < k_; ++i) {
                out.coords[i] = crop.transform.apply(c);
                out.visibility[i] = kVisible;
            }
            return out;
        }
        std::normal_distribution<double> jitter(0.0, noise_);
        for (std::size_t i = 0; i < k_; ++i) {
            Point2 q = best->coords[i];
            if (noise_ > 0.0) {
                q.x += jitter(rng_);
                q.y += jitter(rng_);
            }
            out.coords[i] = crop.transform.apply(q);
            out.visibility[i] = kVisible;
            (*out.scores)[i] = best->labeled(i) ? best->score(i) : 0.0;
        }
        return out;
    }

private:
    std::size_t k_;
    double noise_;
    std::mt19937_64 rng_;
    const TraceFrame* frame_ = nullptr;
};

struct SimSummary {
    std::size_t frames = 0;
    std::size_t detector_calls = 0;
    std::size_t outputs = 0;
    double mean_error_px = 0.0; ///< each output against its nearest ground truth pose
};

/// Mean distance over keypoints labeled in `gt`; infinity when none are.
inline double mean_distance(const Pose& pred, const Pose& gt)
{
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size() && i < pred.size(); ++i) {
        if (!gt.labeled(i)) continue;
        s += std::hypot(pred.coords[i].x - gt.coords[i].x, pred.coords[i].y - gt.coords[i].y);
        ++n;
    }
    return n ? s / double(n) : INFINITY;
}

/// Runs the pipeline over a trace with an empty image (the oracle does not look at
/// pixels) and returns the per-frame JSON record plus a summary.
inline std::pair<nlohmann::ordered_json, SimSummary> simulate(const Trace& trace, const PipelineConfig& cfg,
                                                              double noise_px, std::uint64_t seed)
{
    Pipeline pipe(cfg);
    TraceOracle oracle(trace.num_keypoints, noise_px, seed);
    const Tensor<float> blank({3, 0, 0});
    SimSummary sum;
    double err = 0.0;
    std::size_t err_n = 0;
    auto frames = nlohmann::ordered_json::array();
    for (std::size_t f = 0; f < trace.frames.size(); ++f) {
        const TraceFrame& fr = trace.frames[f];
        oracle.set_frame(&fr);
        auto results = pipe.step(f, blank, [&](const Tensor<float>&) { return fr.detections; },
                                 [&](const Crop& c) { return oracle(c); });
        nlohmann::ordered_json fj;
        fj["frame"] = f;
        fj["detector_ran"] = pipe.state().detector_ran;
        fj["crop_bboxes"] = nlohmann::ordered_json::array();
        for (const auto& b : pipe.state().last_crop_bboxes) fj["crop_bboxes"].push_back({b.x, b.y, b.w, b.h});
        fj["results"] = nlohmann::ordered_json::array();
        for (const auto& r : results) {
            nlohmann::ordered_json rj;
            rj["score"] = r.score;
            rj["keypoints"] = pose_keypoints_json(r.pose);
            fj["results"].push_back(rj);
            double best = INFINITY;
            for (const auto& g : fr.poses) best = std::min(best, mean_distance(r.pose, g));
            if (std::isfinite(best)) {
                err += best;
                ++err_n;
            }
        }
        sum.outputs += results.size();
        frames.push_back(fj);
    }
    sum.frames = trace.frames.size();
    sum.detector_calls = pipe.state().detector_calls;
    sum.mean_error_px = err_n ? err / double(err_n) : 0.0;
    return {frames, sum};
}

} // namespace posekit::pipeline
