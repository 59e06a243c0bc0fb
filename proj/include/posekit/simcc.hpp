#pragma once

/// \file simcc.hpp
/// \brief Coordinate-classification codec: per-axis Gaussian soft labels over
/// sub-pixel bins, root-relative depth bins with a z-mask, and argmax decoding.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "posekit/core_types.hpp"
#include "posekit/depth.hpp"
#include "posekit/error.hpp"
#include "posekit/tensor.hpp"

namespace posekit::simcc {

struct LabelSpec {
    int input_w = 192;
    int input_h = 256;
    double split_ratio = 2.0;
    std::optional<double> sigma_x; ///< bins; defaults to sigma_for(length_x())
    std::optional<double> sigma_y;
    bool normalize_labels = false;
    int z_bins = 450;
    double z_min = -1.0;
    double z_max = 1.0;
    std::optional<double> sigma_z;

    std::size_t length_x() const { return static_cast<std::size_t>(std::lround(split_ratio * input_w)); }
    std::size_t length_y() const { return static_cast<std::size_t>(std::lround(split_ratio * input_h)); }

    void validate() const;
    double resolved_sigma_x() const;
    double resolved_sigma_y() const;
    double resolved_sigma_z() const;
};

/// Label smoothing width for a SimCC vector of `vector_length` bins: sqrt(L / 16).
inline double sigma_for(double vector_length)
{
    detail::require(vector_length > 0.0 && std::isfinite(vector_length), "sigma_for: vector length must be positive");
    return std::sqrt(vector_length / 16.0);
}

inline void LabelSpec::validate() const
{
    using detail::require;
    require(input_w > 0 && input_h > 0, "label spec: input size must be positive");
    require(split_ratio > 0.0 && std::isfinite(split_ratio), "label spec: split_ratio must be > 0");
    require(z_bins >= 1, "label spec: z_bins must be >= 1");
    require(z_min < z_max, "label spec: z_min must be < z_max");
    for (const auto& s : {sigma_x, sigma_y, sigma_z})
        require(!s || (*s > 0.0 && std::isfinite(*s)), "label spec: sigmas must be > 0");
    require(length_x() >= 1 && length_y() >= 1, "label spec: SimCC vectors would be empty");
}

inline double LabelSpec::resolved_sigma_x() const { return sigma_x.value_or(sigma_for(double(length_x()))); }
inline double LabelSpec::resolved_sigma_y() const { return sigma_y.value_or(sigma_for(double(length_y()))); }
inline double LabelSpec::resolved_sigma_z() const { return sigma_z.value_or(sigma_for(double(z_bins))); }

template <typename T>
struct Labels {
    Tensor<T> x;                  ///< K x L_x
    Tensor<T> y;                  ///< K x L_y
    std::optional<Tensor<T>> z;   ///< K x N_z
    std::vector<T> keypoint_weights;
    std::vector<T> z_weights;
};

/// Gaussian row v[i] = exp(-(i - t)^2 / (2 sigma^2)), optionally normalized to sum 1.
template <typename T = double>
std::vector<T> encode_axis(double target, std::size_t length, double sigma, bool normalize)
{
    detail::require(length >= 1, "encode_axis: length must be >= 1");
    detail::require(sigma > 0.0, "encode_axis: sigma must be > 0");
    detail::require(std::isfinite(target), "encode_axis: target bin is not finite");
    std::vector<double> v(length);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    double sum = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
        const double d = static_cast<double>(i) - target;
        v[i] = std::exp(-d * d * inv);
        sum += v[i];
    }
    std::vector<T> out(length);
    for (std::size_t i = 0; i < length; ++i) out[i] = static_cast<T>(normalize && sum > 0.0 ? v[i] / sum : v[i]);
    return out;
}

namespace detail {

using posekit::detail::require;

template <typename T>
void write_row(Tensor<T>& m, std::size_t row, const std::vector<T>& v)
{
    std::copy(v.begin(), v.end(), m.row(row).begin());
}

} // namespace detail

/// x/y labels for a pose already expressed in patch coordinates. Unlabeled keypoints
/// and keypoints outside [0, input_w) x [0, input_h) get weight 0 and all-zero rows.
template <typename T = float>
Labels<T> encode_pose(const Pose& pose, const LabelSpec& spec)
{
    spec.validate();
    const std::size_t k = pose.size();
    const std::size_t lx = spec.length_x(), ly = spec.length_y();
    const double sx = spec.resolved_sigma_x(), sy = spec.resolved_sigma_y();

    Labels<T> out;
    out.x = Tensor<T>({k, lx});
    out.y = Tensor<T>({k, ly});
    out.keypoint_weights.assign(k, T(0));
    out.z_weights.assign(k, T(0));
    for (std::size_t i = 0; i < k; ++i) {
        const auto& p = pose.coords[i];
        const bool finite = std::isfinite(p.x) && std::isfinite(p.y);
        const bool inside = finite && p.x >= 0.0 && p.y >= 0.0 && p.x < spec.input_w && p.y < spec.input_h;
        if (!pose.labeled(i) || !inside) continue;
        out.keypoint_weights[i] = T(1);
        detail::write_row(out.x, i, encode_axis<T>(p.x * spec.split_ratio, lx, sx, spec.normalize_labels));
        detail::write_row(out.y, i, encode_axis<T>(p.y * spec.split_ratio, ly, sy, spec.normalize_labels));
    }
    return out;
}

/// Fractional bin of a root-relative offset (clamped to [z_min, z_max]).
inline double z_bin(double offset, const LabelSpec& spec)
{
    const double c = std::clamp(offset, spec.z_min, spec.z_max);
    return (c - spec.z_min) / (spec.z_max - spec.z_min) * static_cast<double>(spec.z_bins - 1);
}

/// Inverse of `z_bin` for an integer bin index.
inline double z_offset(double bin, const LabelSpec& spec)
{
    if (spec.z_bins == 1) return 0.5 * (spec.z_min + spec.z_max);
    return spec.z_min + bin / static_cast<double>(spec.z_bins - 1) * (spec.z_max - spec.z_min);
}

template <typename T>
struct ZLabels {
    Tensor<T> labels;           ///< K x N_z
    std::vector<T> weights;     ///< the z-mask
};

/// Depth labels from root-relative offsets. Keypoints without a z annotation, and every
/// keypoint of an instance whose root cannot be resolved, get z weight 0.
template <typename T = float>
ZLabels<T> encode_z(const Pose& pose, const RootRule& rule, const LabelSpec& spec)
{
    spec.validate();
    const std::size_t k = pose.size();
    const auto nz = static_cast<std::size_t>(spec.z_bins);
    ZLabels<T> out{Tensor<T>({k, nz}), std::vector<T>(k, T(0))};
    auto offsets = root_relative_z(pose, rule);
    if (!offsets) return out;
    const double sz = spec.resolved_sigma_z();
    for (std::size_t i = 0; i < k; ++i) {
        if (!posekit::detail::has_z(pose, i)) continue;
        out.weights[i] = T(1);
        detail::write_row(out.labels, i, encode_axis<T>(z_bin((*offsets)[i], spec), nz, sz, spec.normalize_labels));
    }
    return out;
}

/// x/y labels plus depth labels; z weights are additionally capped by the keypoint weights.
template <typename T = float>
Labels<T> encode_pose_3d(const Pose& pose, const RootRule& rule, const LabelSpec& spec)
{
    Labels<T> out = encode_pose<T>(pose, spec);
    ZLabels<T> z = encode_z<T>(pose, rule, spec);
    for (std::size_t i = 0; i < pose.size(); ++i) {
        z.weights[i] = std::min(z.weights[i], out.keypoint_weights[i]);
        if (z.weights[i] == T(0)) std::fill(z.labels.row(i).begin(), z.labels.row(i).end(), T(0));
    }
    out.z = std::move(z.labels);
    out.z_weights = std::move(z.weights);
    return out;
}

/// Index of the maximum; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v)
{
    detail::require(!v.empty(), "argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

template <typename T>
double decode_axis(std::span<const T> v, double split_ratio)
{
    detail::require(!v.empty(), "decode_axis: empty vector");
    detail::require(split_ratio > 0.0, "decode_axis: split_ratio must be > 0");
    return static_cast<double>(argmax(v)) / split_ratio;
}

/// Largest probability of softmax(v).
template <typename T>
double softmax_max(std::span<const T> v)
{
    const double m = static_cast<double>(v[argmax(v)]);
    double sum = 0.0;
    for (T x : v) sum += std::exp(static_cast<double>(x) - m);
    return 1.0 / sum;
}

/// Decodes per-axis logits into a pose with per-keypoint scores
/// min(max softmax(x-row), max softmax(y-row)). Depth, when present, is decoded to a
/// root-relative offset.
template <typename T>
Pose decode_pose(const Tensor<T>& x_logits, const Tensor<T>& y_logits, const Tensor<T>* z_logits,
                 const LabelSpec& spec)
{
    using posekit::detail::require;
    require(x_logits.rank() == 2 && y_logits.rank() == 2, "decode_pose: logits must be K x L matrices");
    const std::size_t k = x_logits.dim(0);
    require(y_logits.dim(0) == k, "decode_pose: x and y keypoint counts differ");
    require(!z_logits || (z_logits->rank() == 2 && z_logits->dim(0) == k), "decode_pose: z keypoint count differs");

    Pose pose = Pose::unlabeled(k);
    pose.scores = std::vector<double>(k, 0.0);
    if (z_logits) pose.depth = Depth{std::vector<double>(k, 0.0), std::vector<std::uint8_t>(k, 1)};
    for (std::size_t i = 0; i < k; ++i) {
        auto xr = x_logits.row(i);
        auto yr = y_logits.row(i);
        pose.coords[i] = {decode_axis(xr, spec.split_ratio), decode_axis(yr, spec.split_ratio)};
        pose.visibility[i] = kVisible;
        (*pose.scores)[i] = std::min(softmax_max(xr), softmax_max(yr));
        if (z_logits) pose.depth->z[i] = z_offset(static_cast<double>(argmax(z_logits->row(i))), spec);
    }
    return pose;
}

template <typename T>
Pose decode_pose(const Tensor<T>& x_logits, const Tensor<T>& y_logits, const LabelSpec& spec)
{
    return decode_pose<T>(x_logits, y_logits, nullptr, spec);
}

} // namespace posekit::simcc
