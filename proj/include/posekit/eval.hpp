#pragma once

/// \file eval.hpp
/// \brief OKS, COCO-style keypoint AP/AR, per-part reports and MPJPE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "posekit/core_types.hpp"
#include "posekit/dataset.hpp"
#include "posekit/depth.hpp"
#include "posekit/error.hpp"
#include "posekit/parallel.hpp"

namespace posekit::eval {

using dataset::Detection;
using json = nlohmann::ordered_json;

/// numpy's spacing(1), used by the reference evaluator to guard divisions.
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

/// OKS of `pred` against `gt` over the labeled gt keypoints of `slice`; nullopt when the
/// slice has no labeled gt keypoint. `sigmas` is indexed like the poses.
inline std::optional<double> oks(const Pose& pred, const Pose& gt, double gt_area, std::span<const double> sigmas,
                                 IndexRange slice)
{
    detail::require(slice.end > slice.begin, "oks: empty slice");
    detail::require(slice.end <= gt.size() && slice.end <= pred.size() && slice.end <= sigmas.size(),
                    "oks: slice exceeds pose or sigma length");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = slice.begin; i < slice.end; ++i) {
        if (!gt.labeled(i)) continue;
        const double dx = pred.coords[i].x - gt.coords[i].x, dy = pred.coords[i].y - gt.coords[i].y;
        const double var = (2.0 * sigmas[i]) * (2.0 * sigmas[i]);
        const double e = (dx * dx + dy * dy) / var / (gt_area + kEps) / 2.0;
        sum += std::exp(-e);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

struct GroundTruth {
    std::int64_t image_id = 0;
    Pose pose;
    BBox bbox;
    double area = 0.0;
    bool iscrowd = false;
};

inline std::vector<GroundTruth> ground_truth_from(const std::vector<AnnotatedInstance>& instances)
{
    std::vector<GroundTruth> out;
    for (const auto& a : instances) out.push_back({a.image_id, a.pose, a.bbox, a.area, a.iscrowd});
    return out;
}

struct EvalParams {
    std::vector<double> thresholds = default_thresholds();
    std::size_t max_dets = 20;
    /// Images under evaluation; defaults to those with ground truth. Images listed here
    /// without ground truth still count their detections as false positives.
    std::optional<std::vector<std::int64_t>> image_ids;

    /// 0.50:0.05:0.95, generated the way numpy's linspace does.
    static std::vector<double> default_thresholds()
    {
        std::vector<double> t(10);
        const double step = (0.95 - 0.5) / 9.0;
        for (std::size_t i = 0; i < 10; ++i) t[i] = static_cast<double>(i) * step + 0.5;
        t.back() = 0.95;
        return t;
    }
};

struct ApAr {
    std::optional<double> ap; ///< nullopt when no non-ignored gt exists
    std::optional<double> ar;
    std::size_t num_gt = 0;   ///< gts that count (labeled in the slice, not crowd)
    std::size_t num_pred = 0; ///< detections that entered matching

    bool defined() const { return ap.has_value(); }
};

namespace detail {

using posekit::detail::require;

inline std::vector<double> recall_thresholds()
{
    std::vector<double> r(101);
    const double step = 1.0 / 100.0;
    for (std::size_t i = 0; i < 101; ++i) r[i] = static_cast<double>(i) * step;
    r.back() = 1.0;
    return r;
}

inline bool any_labeled(const Pose& p, IndexRange slice)
{
    for (std::size_t i = slice.begin; i < slice.end; ++i)
        if (p.visibility[i] > 0) return true;
    return false;
}

/// OKS for a gt without labeled keypoints in the slice: distance of each predicted
/// keypoint to the gt box grown by one box size on every side.
inline double oks_unlabeled(const Pose& pred, const GroundTruth& g, std::span<const double> sigmas, IndexRange slice)
{
    const auto& b = g.bbox;
    const double x0 = b.x - b.w, x1 = b.x + b.w * 2.0, y0 = b.y - b.h, y1 = b.y + b.h * 2.0;
    double sum = 0.0;
    for (std::size_t i = slice.begin; i < slice.end; ++i) {
        const double xd = pred.coords[i].x, yd = pred.coords[i].y;
        const double dx = std::max(0.0, x0 - xd) + std::max(0.0, xd - x1);
        const double dy = std::max(0.0, y0 - yd) + std::max(0.0, yd - y1);
        const double var = (2.0 * sigmas[i]) * (2.0 * sigmas[i]);
        sum += std::exp(-((dx * dx + dy * dy) / var / (g.area + kEps) / 2.0));
    }
    return sum / static_cast<double>(slice.size());
}

struct ImageResult {
    std::vector<double> scores;                 ///< score-sorted detections
    std::vector<std::vector<int>> matched;      ///< [T][D] 1 if matched to any gt
    std::vector<std::vector<bool>> ignored;     ///< [T][D]
    std::size_t counted_gt = 0;
};

inline ImageResult evaluate_image(const std::vector<const Detection*>& dets_in, const std::vector<const GroundTruth*>& gts_in,
                                  std::span<const double> sigmas, IndexRange slice, const EvalParams& params)
{
    // detections: score-descending, stable, truncated
    std::vector<const Detection*> dets = dets_in;
    std::stable_sort(dets.begin(), dets.end(), [](const Detection* a, const Detection* b) { return a->score > b->score; });
    if (dets.size() > params.max_dets) dets.resize(params.max_dets);

    // gts: counted ones first, stable
    std::vector<const GroundTruth*> gts = gts_in;
    auto ignored_gt = [&](const GroundTruth* g) { return g->iscrowd || !any_labeled(g->pose, slice); };
    std::stable_sort(gts.begin(), gts.end(),
                     [&](const GroundTruth* a, const GroundTruth* b) { return !ignored_gt(a) && ignored_gt(b); });

    const std::size_t D = dets.size(), G = gts.size(), T = params.thresholds.size();
    std::vector<std::vector<double>> ious(D, std::vector<double>(G, 0.0));
    for (std::size_t j = 0; j < G; ++j) {
        const bool labeled = any_labeled(gts[j]->pose, slice);
        for (std::size_t i = 0; i < D; ++i)
            ious[i][j] = labeled ? *oks(dets[i]->pose, gts[j]->pose, gts[j]->area, sigmas, slice)
                                 : oks_unlabeled(dets[i]->pose, *gts[j], sigmas, slice);
    }

    ImageResult r;
    for (const auto* d : dets) r.scores.push_back(d->score);
    for (const auto* g : gts) r.counted_gt += ignored_gt(g) ? 0 : 1;
    r.matched.assign(T, std::vector<int>(D, 0));
    r.ignored.assign(T, std::vector<bool>(D, false));
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<bool> gt_taken(G, false);
        for (std::size_t i = 0; i < D; ++i) {
            double best = std::min(params.thresholds[t], 1.0 - 1e-10);
            long m = -1;
            for (std::size_t j = 0; j < G; ++j) {
                if (gt_taken[j] && !gts[j]->iscrowd) continue;
                // a match on a counted gt is never traded for an ignored one
                if (m > -1 && !ignored_gt(gts[m]) && ignored_gt(gts[j])) break;
                if (ious[i][j] < best) continue;
                best = ious[i][j];
                m = static_cast<long>(j);
            }
            if (m == -1) continue;
            r.matched[t][i] = 1;
            r.ignored[t][i] = ignored_gt(gts[m]);
            gt_taken[m] = true;
        }
    }
    return r;
}

} // namespace detail

/// COCO keypoint AP/AR over `slice` with the reference evaluator's semantics: per-image
/// greedy matching in score order (ties on OKS go to the later gt), gts without labeled
/// keypoints in the slice or marked crowd are ignored, detections with no positive
/// visibility in the slice are dropped, and precision is read at 101 recall points.
inline ApAr ap_ar(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gts,
                  std::span<const double> sigmas, IndexRange slice, const EvalParams& params = {})
{
    detail::require(slice.end > slice.begin && slice.end <= sigmas.size(), "ap_ar: bad slice for the sigma table");
    std::map<std::int64_t, std::pair<std::vector<const Detection*>, std::vector<const GroundTruth*>>> images;
    if (params.image_ids)
        for (auto id : *params.image_ids) images[id];
    for (const auto& g : gts) {
        if (params.image_ids && !images.count(g.image_id))
            throw Error("ap_ar: ground truth for image " + std::to_string(g.image_id) + " outside the image list");
        detail::require(g.pose.size() >= slice.end, "ap_ar: ground truth pose shorter than the slice");
        images[g.image_id].second.push_back(&g);
    }
    for (const auto& d : preds) {
        detail::require(d.pose.size() >= slice.end, "ap_ar: prediction pose shorter than the slice");
        if (!images.count(d.image_id))
            throw Error("ap_ar: prediction for unknown image " + std::to_string(d.image_id));
        if (!detail::any_labeled(d.pose, slice)) continue;
        images[d.image_id].first.push_back(&d);
    }

    const std::size_t T = params.thresholds.size();
    std::vector<double> scores;
    std::vector<std::vector<int>> matched(T);
    std::vector<std::vector<bool>> ignored(T);
    std::size_t counted = 0;
    ApAr out;
    for (const auto& [id, entry] : images) {
        if (entry.first.empty() && entry.second.empty()) continue;
        auto r = detail::evaluate_image(entry.first, entry.second, sigmas, slice, params);
        scores.insert(scores.end(), r.scores.begin(), r.scores.end());
        for (std::size_t t = 0; t < T; ++t) {
            matched[t].insert(matched[t].end(), r.matched[t].begin(), r.matched[t].end());
            ignored[t].insert(ignored[t].end(), r.ignored[t].begin(), r.ignored[t].end());
        }
        counted += r.counted_gt;
        out.num_pred += r.scores.size();
    }
    out.num_gt = counted;
    if (counted == 0) return out;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const auto rec_thr = detail::recall_thresholds();
    double ap_sum = 0.0, ar_sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> rc, pr;
        double tp = 0.0, fp = 0.0;
        for (std::size_t idx : order) {
            if (ignored[t][idx]) {
                // ignored detections leave the cumulative counts unchanged but keep their slot
            } else if (matched[t][idx]) {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            rc.push_back(tp / static_cast<double>(counted));
            pr.push_back(tp / (fp + tp + kEps));
        }
        ar_sum += rc.empty() ? 0.0 : rc.back();
        for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
        for (double r : rec_thr) {
            const auto it = std::lower_bound(rc.begin(), rc.end(), r);
            if (it != rc.end()) ap_sum += pr[static_cast<std::size_t>(it - rc.begin())];
        }
    }
    out.ap = ap_sum / static_cast<double>(T * rec_thr.size());
    out.ar = ar_sum / static_cast<double>(T);
    return out;
}

// --- per-part report ----------------------------------------------------------------

inline const std::vector<std::string>& report_parts()
{
    static const std::vector<std::string> p{"whole", "body", "foot", "face", "hand"};
    return p;
}

struct PartResult {
    std::string part;
    IndexRange slice;
    ApAr result;
};

struct EvalReport {
    std::vector<PartResult> parts; ///< whole, body, foot, face, hand
    std::optional<double> mpjpe;
    std::string mpjpe_units;
    std::size_t num_gt_instances = 0;
    std::size_t num_pred_instances = 0;

    const PartResult& part(const std::string& name) const
    {
        for (const auto& p : parts)
            if (p.part == name) return p;
        throw Error("report has no part '" + name + "'");
    }
};

/// AP/AR for the whole pose and each part of `schema`, using that slice's keypoints and
/// sigmas only. "whole" is the full index range.
inline EvalReport per_part_report(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gts,
                                  const KeypointSchema& schema = coco_wholebody_133(), const EvalParams& params = {})
{
    EvalReport rep;
    rep.num_gt_instances = gts.size();
    rep.num_pred_instances = preds.size();
    for (const auto& g : gts)
        detail::require(g.pose.size() == schema.size(), "per_part_report: ground truth does not match schema '" + schema.name() + "'");
    for (const auto& d : preds)
        detail::require(d.pose.size() == schema.size(), "per_part_report: prediction does not match schema '" + schema.name() + "'");
    const auto& sig = schema.sigmas();
    for (const auto& name : report_parts()) {
        if (name == "whole")
            rep.parts.push_back({name, schema.full(), {}});
        else if (schema.has_part(name))
            rep.parts.push_back({name, schema.part_slice(name), {}});
    }
    parallel_for(rep.parts.size(), [&](std::size_t i) { rep.parts[i].result = ap_ar(preds, gts, sig, rep.parts[i].slice, params); });
    return rep;
}

inline json report_to_json(const EvalReport& r)
{
    json j;
    json parts = json::object();
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    for (const auto& p : r.parts)
        parts[p.part] = {{"AP", opt(p.result.ap)}, {"AR", opt(p.result.ar)}, {"num_gt", p.result.num_gt},
                         {"num_pred", p.result.num_pred}, {"slice", {p.slice.begin, p.slice.end}}};
    j["parts"] = parts;
    if (r.mpjpe) j["mpjpe"] = {{"value", *r.mpjpe}, {"units", r.mpjpe_units}};
    j["num_gt_instances"] = r.num_gt_instances;
    j["num_pred_instances"] = r.num_pred_instances;
    return j;
}

/// Fixed-width table: one AP and one AR column per part.
inline std::string report_table(const EvalReport& r)
{
    std::ostringstream os;
    os << std::left << std::setw(8) << "metric";
    for (const auto& p : r.parts) os << std::right << std::setw(10) << p.part;
    os << "\n";
    auto row = [&](const char* name, auto get) {
        os << std::left << std::setw(8) << name;
        for (const auto& p : r.parts) {
            const auto v = get(p.result);
            os << std::right << std::setw(10);
            if (v)
                os << std::fixed << std::setprecision(4) << *v;
            else
                os << "n/a";
        }
        os << "\n";
    };
    row("AP", [](const ApAr& a) { return a.ap; });
    row("AR", [](const ApAr& a) { return a.ar; });
    if (r.mpjpe) os << "MPJPE " << std::fixed << std::setprecision(6) << *r.mpjpe << " " << r.mpjpe_units << "\n";
    return os.str();
}

// --- MPJPE --------------------------------------------------------------------------

struct Point3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

namespace detail {

inline bool joint_3d(const Pose& p, std::size_t i) { return posekit::detail::has_z(p, i); }

/// Root by the hip rule on `ref`'s labeled joints, evaluated on `p` with the same joints.
inline std::optional<Point3> root_point(const Pose& p, const Pose& ref, const RootRule& rule)
{
    std::vector<std::size_t> idx;
    const bool l = joint_3d(ref, rule.left_hip), r = joint_3d(ref, rule.right_hip);
    if (l) idx.push_back(rule.left_hip);
    if (r) idx.push_back(rule.right_hip);
    if (idx.empty())
        for (std::size_t i = rule.torso.begin; i < rule.torso.end && i < ref.size(); ++i)
            if (joint_3d(ref, i)) idx.push_back(i);
    if (idx.empty()) return std::nullopt;
    Point3 c;
    for (auto i : idx) {
        c.x += p.coords[i].x;
        c.y += p.coords[i].y;
        c.z += p.depth->z[i];
    }
    const double n = static_cast<double>(idx.size());
    return Point3{c.x / n, c.y / n, c.z / n};
}

} // namespace detail

/// Mean Euclidean 3D distance over joints labeled with depth in `gt`. With `root_align`,
/// each pose is first translated so its root (chosen from gt's labels) is at the origin.
inline double mpjpe(const Pose& pred, const Pose& gt, bool root_align, const RootRule& rule = {})
{
    detail::require(pred.size() == gt.size(), "mpjpe: pose lengths differ");
    detail::require(pred.depth.has_value() && gt.depth.has_value(), "mpjpe: both poses need depth");
    Point3 rp, rg;
    if (root_align) {
        auto a = detail::root_point(pred, gt, rule), b = detail::root_point(gt, gt, rule);
        if (!a || !b) throw Error("mpjpe: root cannot be resolved for alignment");
        rp = *a;
        rg = *b;
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!detail::joint_3d(gt, i)) continue;
        const double dx = (pred.coords[i].x - rp.x) - (gt.coords[i].x - rg.x);
        const double dy = (pred.coords[i].y - rp.y) - (gt.coords[i].y - rg.y);
        const double dz = (pred.depth->z[i] - rp.z) - (gt.depth->z[i] - rg.z);
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
        ++n;
    }
    if (n == 0) throw Error("mpjpe: no labeled joints");
    return sum / static_cast<double>(n);
}

/// Mean MPJPE over aligned lists of instances.
inline double mpjpe(const std::vector<Pose>& pred, const std::vector<Pose>& gt, bool root_align, const RootRule& rule = {})
{
    detail::require(pred.size() == gt.size() && !gt.empty(), "mpjpe: instance lists must be nonempty and aligned");
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) s += mpjpe(pred[i], gt[i], root_align, rule);
    return s / static_cast<double>(gt.size());
}

/// Root-aligned MPJPE where each non-crowd ground truth with depth is paired with the
/// same-image prediction of highest OKS that also carries depth (ties: earlier
/// prediction). Unpaired or unresolvable ground truths are skipped; nullopt when none
/// remain. Units are those of the inputs.
inline std::optional<double> matched_mpjpe(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gts,
                                           std::span<const double> sigmas, const RootRule& rule = {})
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& g : gts) {
        if (g.iscrowd || !g.pose.depth || g.pose.size() == 0) continue;
        const Detection* best = nullptr;
        double best_oks = -1.0;
        for (const auto& d : preds) {
            if (d.image_id != g.image_id || !d.pose.depth || d.pose.size() != g.pose.size()) continue;
            const auto o = oks(d.pose, g.pose, g.area, sigmas, {0, g.pose.size()});
            if (o && *o > best_oks) {
                best_oks = *o;
                best = &d;
            }
        }
        if (!best) continue;
        try {
            sum += mpjpe(best->pose, g.pose, true, rule);
            ++n;
        } catch (const Error&) {
            continue; // no depth-labeled joints or no root
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

/// Instance score for matching: mean decode score over labeled keypoints.
inline double instance_score(const Pose& p)
{
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p.labeled(i)) continue;
        s += p.score(i);
        ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

} // namespace posekit::eval
