#pragma once

/// \file depth.hpp
/// \brief Skeleton root selection and root-relative depth offsets.

#include <optional>
#include <vector>

#include "posekit/core_types.hpp"

namespace posekit {

/// Root point rule. The root is the midpoint of the two hips; when that is not
/// available it falls back to a single labeled hip, then to the centroid of the
/// labeled torso keypoints. Indices default to the canonical whole-body layout.
struct RootRule {
    std::size_t left_hip = wholebody::kLeftHip;
    std::size_t right_hip = wholebody::kRightHip;
    IndexRange torso = wholebody::kBody;
};

namespace detail {

inline bool has_z(const Pose& pose, std::size_t i)
{
    return pose.depth && i < pose.size() && pose.visibility[i] > 0 && pose.depth->valid[i] != 0;
}

} // namespace detail

/// Root as a sum over `count` contributing keypoints; offsets are formed as
/// (count * z_i - sum) / count so a global shift cancels before any division.
struct RootEstimate {
    double sum = 0.0;
    std::size_t count = 0;

    double value() const { return sum / static_cast<double>(count); }
    double offset(double z) const { return (static_cast<double>(count) * z - sum) / static_cast<double>(count); }
};

/// Root of `pose` under `rule`, or nullopt when no fallback applies.
inline std::optional<RootEstimate> resolve_root(const Pose& pose, const RootRule& rule = {})
{
    if (!pose.depth) return std::nullopt;
    const auto& z = pose.depth->z;
    const bool l = detail::has_z(pose, rule.left_hip);
    const bool r = detail::has_z(pose, rule.right_hip);
    if (l && r) return RootEstimate{z[rule.left_hip] + z[rule.right_hip], 2};
    if (l) return RootEstimate{z[rule.left_hip], 1};
    if (r) return RootEstimate{z[rule.right_hip], 1};

    RootEstimate torso;
    for (std::size_t i = rule.torso.begin; i < rule.torso.end && i < pose.size(); ++i) {
        if (detail::has_z(pose, i)) {
            torso.sum += z[i];
            ++torso.count;
        }
    }
    if (torso.count == 0) return std::nullopt;
    return torso;
}

inline std::optional<double> root_depth(const Pose& pose, const RootRule& rule = {})
{
    auto root = resolve_root(pose, rule);
    if (!root) return std::nullopt;
    return root->value();
}

/// z_i - z_root for every keypoint; entries without a z label are 0.
/// nullopt means the root cannot be resolved and the instance's depth must be masked.
inline std::optional<std::vector<double>> root_relative_z(const Pose& pose, const RootRule& rule = {})
{
    auto root = resolve_root(pose, rule);
    if (!root) return std::nullopt;
    std::vector<double> out(pose.size(), 0.0);
    for (std::size_t i = 0; i < pose.size(); ++i)
        if (detail::has_z(pose, i)) out[i] = root->offset(pose.depth->z[i]);
    return out;
}

} // namespace posekit
