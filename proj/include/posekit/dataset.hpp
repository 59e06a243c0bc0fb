#pragma once

/// \file dataset.hpp
/// \brief Mapping heterogeneous keypoint datasets onto the 133-point layout, COCO-style
/// annotation I/O and weighted mixed-corpus sampling.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "posekit/core_types.hpp"
#include "posekit/depth.hpp"
#include "posekit/error.hpp"

namespace posekit::dataset {

using json = nlohmann::ordered_json;

namespace detail {
using posekit::detail::has_z;
using posekit::detail::require;
} // namespace detail

/// Source -> target keypoint index table.
struct SchemaMapping {
    std::string source;
    std::string target = "coco-wholebody-133";
    std::vector<std::pair<std::size_t, std::size_t>> pairs; ///< (src, dst)
    std::string notes;

    std::size_t max_source_index() const
    {
        std::size_t m = 0;
        for (const auto& p : pairs) m = std::max(m, p.first);
        return m;
    }
};

/// Checks index ranges and target uniqueness. `source_size` is checked when known.
inline void validate_mapping(const SchemaMapping& m, std::size_t target_size = wholebody::kNumKeypoints,
                             std::optional<std::size_t> source_size = std::nullopt)
{
    detail::require(!m.source.empty(), "mapping: missing source schema name");
    std::set<std::size_t> seen_dst;
    for (const auto& [src, dst] : m.pairs) {
        if (dst >= target_size)
            throw Error("mapping: target index " + std::to_string(dst) + " out of range [0, " +
                        std::to_string(target_size) + ")");
        if (source_size && src >= *source_size)
            throw Error("mapping: source index " + std::to_string(src) + " out of range [0, " +
                        std::to_string(*source_size) + ") for schema '" + m.source + "'");
        if (!seen_dst.insert(dst).second) throw Error("duplicate target " + std::to_string(dst));
    }
}

inline SchemaMapping mapping_from_json(const json& j, const SchemaRegistry* registry = nullptr)
{
    SchemaMapping m;
    try {
        m.source = j.at("source").get<std::string>();
        m.target = j.value("target", m.target);
        m.notes = j.value("notes", std::string{});
        for (const auto& p : j.at("pairs")) {
            if (!p.is_array() || p.size() != 2) throw Error("mapping: each pair must be [src, dst]");
            const auto src = p[0].get<std::int64_t>(), dst = p[1].get<std::int64_t>();
            if (src < 0 || dst < 0) throw Error("mapping: negative index in pair [" + std::to_string(src) + ", " +
                                                std::to_string(dst) + "]");
            m.pairs.emplace_back(static_cast<std::size_t>(src), static_cast<std::size_t>(dst));
        }
    } catch (const json::exception& e) {
        throw Error(std::string("mapping: malformed JSON: ") + e.what());
    }
    std::size_t target_size = wholebody::kNumKeypoints;
    std::optional<std::size_t> source_size;
    if (registry) {
        if (const auto* t = registry->find(m.target)) target_size = t->size();
        if (const auto* s = registry->find(m.source)) source_size = s->size();
    }
    validate_mapping(m, target_size, source_size);
    return m;
}

inline json mapping_to_json(const SchemaMapping& m)
{
    json j;
    j["source"] = m.source;
    j["target"] = m.target;
    json pairs = json::array();
    for (const auto& [s, d] : m.pairs) pairs.push_back({s, d});
    j["pairs"] = pairs;
    if (!m.notes.empty()) j["notes"] = m.notes;
    return j;
}

inline SchemaMapping load_mapping(const std::string& path, const SchemaRegistry* registry = nullptr)
{
    return mapping_from_json(read_json_file(path), registry);
}

inline SchemaMapping identity_mapping(const KeypointSchema& schema, const std::string& target = "coco-wholebody-133")
{
    SchemaMapping m{schema.name(), target, {}, "identity"};
    for (std::size_t i = 0; i < schema.size(); ++i) m.pairs.emplace_back(i, i);
    return m;
}

/// An instance on the 133-point layout. Depth is always present; `valid` doubles as
/// the z mask. Only produced by `remap_instance` and `inject_z_mask`.
class UnifiedInstance {
public:
    const AnnotatedInstance& instance() const { return inst_; }
    const Pose& pose() const { return inst_.pose; }

    /// 1 where the keypoint is labeled and has a z annotation.
    std::vector<float> z_weights() const
    {
        std::vector<float> w(inst_.pose.size(), 0.0f);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = detail::has_z(inst_.pose, i) ? 1.0f : 0.0f;
        return w;
    }

    bool has_any_z() const
    {
        for (std::size_t i = 0; i < inst_.pose.size(); ++i)
            if (detail::has_z(inst_.pose, i)) return true;
        return false;
    }

private:
    explicit UnifiedInstance(AnnotatedInstance inst) : inst_(std::move(inst)) {}
    AnnotatedInstance inst_;

    friend UnifiedInstance remap_instance(const AnnotatedInstance&, const SchemaMapping&, std::size_t);
    friend UnifiedInstance inject_z_mask(const UnifiedInstance&);
    friend UnifiedInstance mask_unresolvable_depth(const UnifiedInstance&, const RootRule&);
};

/// Copies mapped keypoints (coordinates, visibility, z, scores) verbatim into an
/// otherwise unlabeled target pose.
inline UnifiedInstance remap_instance(const AnnotatedInstance& inst, const SchemaMapping& m,
                                      std::size_t target_size = wholebody::kNumKeypoints)
{
    if (inst.schema != m.source)
        throw Error("remap: instance schema '" + inst.schema + "' does not match mapping source '" + m.source + "'");
    const Pose& src = inst.pose;
    if (!m.pairs.empty() && m.max_source_index() >= src.size())
        throw Error("remap: mapping reads source index " + std::to_string(m.max_source_index()) + " but the pose has " +
                    std::to_string(src.size()) + " keypoints");

    AnnotatedInstance out = inst;
    out.schema = m.target;
    Pose& dst = out.pose;
    dst = Pose::unlabeled(target_size);
    dst.depth = Depth{std::vector<double>(target_size, 0.0), std::vector<std::uint8_t>(target_size, 0)};
    if (src.scores) dst.scores = std::vector<double>(target_size, 0.0);
    for (const auto& [s, d] : m.pairs) {
        dst.coords[d] = src.coords[s];
        dst.visibility[d] = src.visibility[s];
        if (src.depth) {
            dst.depth->z[d] = src.depth->z[s];
            dst.depth->valid[d] = src.depth->valid[s];
        }
        if (src.scores) (*dst.scores)[d] = (*src.scores)[s];
    }
    return UnifiedInstance(std::move(out));
}

/// Same instance with z = 0 and every z weight 0; x/y untouched.
inline UnifiedInstance inject_z_mask(const UnifiedInstance& u)
{
    AnnotatedInstance out = u.inst_;
    const std::size_t n = out.pose.size();
    out.pose.depth = Depth{std::vector<double>(n, 0.0), std::vector<std::uint8_t>(n, 0)};
    return UnifiedInstance(std::move(out));
}

/// Masks all depth when no root can be resolved (the graceful-degradation end of the
/// root fallback chain); otherwise returns the instance unchanged.
inline UnifiedInstance mask_unresolvable_depth(const UnifiedInstance& u, const RootRule& rule = {})
{
    if (!u.has_any_z() || resolve_root(u.pose(), rule)) return u;
    return inject_z_mask(u);
}

/// Depth divided by the bbox diagonal, so z ranges are comparable across datasets.
inline Pose normalized_depth_pose(const AnnotatedInstance& inst)
{
    Pose p = inst.pose;
    if (!p.depth) return p;
    const double diag = std::hypot(inst.bbox.w, inst.bbox.h);
    detail::require(diag > 0.0 && std::isfinite(diag), "normalized depth: bbox diagonal must be > 0");
    for (auto& z : p.depth->z) z /= diag;
    return p;
}

// --- dataset descriptors and mixed sampling ---------------------------------------

enum class DatasetKind { wholebody2d, body2d, face2d, hand2d, wholebody3d };

inline std::string to_string(DatasetKind k)
{
    switch (k) {
    case DatasetKind::wholebody2d: return "wholebody2d";
    case DatasetKind::body2d: return "body2d";
    case DatasetKind::face2d: return "face2d";
    case DatasetKind::hand2d: return "hand2d";
    case DatasetKind::wholebody3d: return "wholebody3d";
    }
    return "?";
}

inline DatasetKind dataset_kind_from_string(const std::string& s)
{
    for (auto k : {DatasetKind::wholebody2d, DatasetKind::body2d, DatasetKind::face2d, DatasetKind::hand2d,
                   DatasetKind::wholebody3d})
        if (to_string(k) == s) return k;
    throw Error("unknown dataset kind '" + s + "'");
}

inline bool is_3d(DatasetKind k) { return k == DatasetKind::wholebody3d; }

struct DatasetDescriptor {
    std::string name;
    DatasetKind kind = DatasetKind::wholebody2d;
    SchemaMapping mapping;
    double sampling_weight = 1.0;

    void validate() const
    {
        detail::require(sampling_weight > 0.0 && std::isfinite(sampling_weight),
                        "dataset '" + name + "': sampling_weight must be > 0");
    }
};

/// Descriptor plus its unified instances. 2D kinds are z-masked on construction.
struct Dataset {
    DatasetDescriptor descriptor;
    std::vector<UnifiedInstance> instances;

    static Dataset from_annotations(DatasetDescriptor d, const std::vector<AnnotatedInstance>& anns,
                                    const RootRule& rule = {})
    {
        d.validate();
        Dataset out{std::move(d), {}};
        for (const auto& a : anns) {
            auto u = remap_instance(a, out.descriptor.mapping);
            out.instances.push_back(is_3d(out.descriptor.kind) ? mask_unresolvable_depth(u, rule) : inject_z_mask(u));
        }
        return out;
    }
};

struct SampleRef {
    std::size_t dataset = 0;
    std::size_t index = 0;
    bool operator==(const SampleRef&) const = default;
};

/// Deterministic stream of mixed batches. Each draw picks a dataset with probability
/// proportional to its weight, then the next instance of that dataset's shuffled epoch.
class BatchStream {
public:
    BatchStream(const std::vector<Dataset>& datasets, std::size_t batch_size, std::uint64_t seed)
        : datasets_(&datasets), batch_size_(batch_size), rng_(seed)
    {
        detail::require(!datasets.empty(), "combined_batches: no datasets");
        detail::require(batch_size > 0, "combined_batches: batch_size must be > 0");
        double total = 0.0;
        for (const auto& d : datasets) {
            d.descriptor.validate();
            if (d.instances.empty()) throw Error("combined_batches: dataset '" + d.descriptor.name + "' is empty");
            total += d.descriptor.sampling_weight;
            cumulative_.push_back(total);
            order_.emplace_back(d.instances.size());
            pos_.push_back(d.instances.size());
        }
        for (auto& c : cumulative_) c /= total;
    }

    SampleRef draw()
    {
        std::size_t d = 0;
        if (cumulative_.size() > 1) {
            const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
            while (d + 1 < cumulative_.size() && u >= cumulative_[d]) ++d;
        }
        auto& order = order_[d];
        if (pos_[d] == order.size()) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            // Fisher-Yates with our own index draw, so the stream does not depend on the
            // standard library's distribution implementation
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);
            pos_[d] = 0;
        }
        return {d, order[pos_[d]++]};
    }

    std::vector<SampleRef> next()
    {
        std::vector<SampleRef> out;
        out.reserve(batch_size_);
        for (std::size_t i = 0; i < batch_size_; ++i) out.push_back(draw());
        return out;
    }

    const UnifiedInstance& at(const SampleRef& r) const { return (*datasets_)[r.dataset].instances[r.index]; }

private:
    const std::vector<Dataset>* datasets_;
    std::size_t batch_size_;
    std::mt19937_64 rng_;
    std::vector<double> cumulative_;
    std::vector<std::vector<std::size_t>> order_;
    std::vector<std::size_t> pos_;
};

inline BatchStream combined_batches(const std::vector<Dataset>& datasets, std::size_t batch_size, std::uint64_t seed)
{
    return BatchStream(datasets, batch_size, seed);
}

// --- COCO-style JSON ----------------------------------------------------------------

/// Annotation file contents. `images` and `categories` are passed through untouched.
struct CocoFile {
    json images = json::array();
    json categories = json::array();
    std::vector<AnnotatedInstance> instances;
    std::vector<std::int64_t> ids;
};

namespace detail {

inline std::string schema_for_size(std::size_t n, const SchemaRegistry& registry)
{
    std::string found;
    for (const auto& name : registry.names()) {
        if (registry.at(name).size() != n) continue;
        if (!found.empty()) throw Error("ambiguous schema for " + std::to_string(n) + " keypoints; pass it explicitly");
        found = name;
    }
    if (found.empty()) throw Error("no registered schema has " + std::to_string(n) + " keypoints");
    return found;
}

inline Pose pose_from_flat(const json& kps, const json* kz)
{
    if (!kps.is_array() || kps.size() % 3 != 0) throw Error("keypoints must be a flat [x, y, v] * N array");
    const std::size_t n = kps.size() / 3;
    Pose p = Pose::unlabeled(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.coords[i] = {kps[3 * i].get<double>(), kps[3 * i + 1].get<double>()};
        const double v = kps[3 * i + 2].get<double>();
        if (v != 0.0 && v != 1.0 && v != 2.0)
            throw Error("keypoint " + std::to_string(i) + " has visibility " + std::to_string(v));
        p.visibility[i] = static_cast<std::uint8_t>(v);
    }
    if (kz) {
        if (!kz->is_array() || kz->size() != n) throw Error("keypoints_z must hold one [z, has_z] pair per keypoint");
        Depth d{std::vector<double>(n), std::vector<std::uint8_t>(n)};
        for (std::size_t i = 0; i < n; ++i) {
            const auto& e = (*kz)[i];
            if (!e.is_array() || e.size() != 2) throw Error("keypoints_z entries must be [z, has_z]");
            d.z[i] = e[0].get<double>();
            d.valid[i] = e[1].get<double>() != 0.0 ? 1 : 0;
        }
        p.depth = std::move(d);
    }
    return p;
}

inline json flat_keypoints(const Pose& p)
{
    json k = json::array();
    for (std::size_t i = 0; i < p.size(); ++i) {
        k.push_back(p.coords[i].x);
        k.push_back(p.coords[i].y);
        k.push_back(static_cast<int>(p.visibility[i]));
    }
    return k;
}

} // namespace detail

/// Parses a COCO-style annotation object. The schema is `schema` when given, otherwise
/// the unique registered schema with the annotation's keypoint count.
inline CocoFile coco_from_json(const json& j, const SchemaRegistry& registry, const std::string& schema = "",
                               const std::string& dataset_name = "")
{
    CocoFile f;
    try {
        if (j.contains("images")) f.images = j.at("images");
        if (j.contains("categories")) f.categories = j.at("categories");
        const auto& anns = j.at("annotations");
        for (std::size_t a = 0; a < anns.size(); ++a) {
            const auto& e = anns[a];
            try {
                AnnotatedInstance inst;
                inst.image_id = e.at("image_id").get<std::int64_t>();
                const auto& b = e.at("bbox");
                if (!b.is_array() || b.size() != 4) throw Error("bbox must be [x, y, w, h]");
                inst.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
                inst.area = e.contains("area") ? e.at("area").get<double>() : inst.bbox.w * inst.bbox.h;
                inst.pose = detail::pose_from_flat(e.at("keypoints"), e.contains("keypoints_z") ? &e.at("keypoints_z") : nullptr);
                inst.schema = schema.empty() ? detail::schema_for_size(inst.pose.size(), registry) : schema;
                const auto& s = registry.at(inst.schema);
                if (s.size() != inst.pose.size())
                    throw Error("annotation has " + std::to_string(inst.pose.size()) + " keypoints, schema '" + s.name() +
                                "' expects " + std::to_string(s.size()));
                inst.dataset = dataset_name;
                inst.iscrowd = e.value("iscrowd", 0) != 0;
                f.ids.push_back(e.value("id", static_cast<std::int64_t>(a + 1)));
                f.instances.push_back(std::move(inst));
            } catch (const Error& err) {
                throw Error("annotation " + std::to_string(a) + ": " + err.what());
            }
        }
    } catch (const json::exception& e) {
        throw Error(std::string("malformed COCO JSON: ") + e.what());
    }
    return f;
}

inline CocoFile load_coco(const std::string& path, const SchemaRegistry& registry, const std::string& schema = "",
                          const std::string& dataset_name = "")
{
    try {
        return coco_from_json(read_json_file(path), registry, schema, dataset_name);
    } catch (const Error& e) {
        const std::string msg = e.what();
        if (msg.find(path) != std::string::npos) throw;
        throw Error(path + ": " + msg);
    }
}

inline json coco_to_json(const CocoFile& f)
{
    json j;
    j["images"] = f.images;
    json anns = json::array();
    for (std::size_t a = 0; a < f.instances.size(); ++a) {
        const auto& inst = f.instances[a];
        json e;
        e["id"] = a < f.ids.size() ? f.ids[a] : static_cast<std::int64_t>(a + 1);
        e["image_id"] = inst.image_id;
        e["category_id"] = 1;
        e["bbox"] = {inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h};
        e["area"] = inst.area;
        e["iscrowd"] = inst.iscrowd ? 1 : 0;
        e["num_keypoints"] = inst.pose.num_labeled();
        e["keypoints"] = detail::flat_keypoints(inst.pose);
        if (inst.pose.depth) {
            json kz = json::array();
            for (std::size_t i = 0; i < inst.pose.size(); ++i)
                kz.push_back({inst.pose.depth->z[i], static_cast<int>(inst.pose.depth->valid[i])});
            e["keypoints_z"] = kz;
        }
        anns.push_back(std::move(e));
    }
    j["annotations"] = anns;
    j["categories"] = f.categories;
    return j;
}

inline void write_json_file(const std::string& path, const json& j)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    out << j.dump(1) << "\n";
    if (!out) throw Error("write failed: " + path);
}

/// Remaps every annotation of `f` through `m`; 2D sources get a full z mask.
inline CocoFile convert(const CocoFile& f, const SchemaMapping& m, const RootRule& rule = {})
{
    CocoFile out;
    out.images = f.images;
    out.categories = f.categories;
    out.ids = f.ids;
    for (const auto& inst : f.instances) {
        auto u = remap_instance(inst, m);
        out.instances.push_back((inst.pose.depth ? mask_unresolvable_depth(u, rule) : inject_z_mask(u)).instance());
    }
    return out;
}

// --- detection results ------------------------------------------------------------

/// One predicted instance in COCO results format.
struct Detection {
    std::int64_t image_id = 0;
    Pose pose;
    double score = 0.0;
};

inline std::vector<Detection> results_from_json(const json& j)
{
    const json& arr = j.is_object() && j.contains("annotations") ? j.at("annotations") : j;
    if (!arr.is_array()) throw Error("results must be a JSON array of detections");
    std::vector<Detection> out;
    try {
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const auto& e = arr[i];
            Detection d;
            d.image_id = e.at("image_id").get<std::int64_t>();
            d.score = e.at("score").get<double>();
            d.pose = detail::pose_from_flat(e.at("keypoints"), e.contains("keypoints_z") ? &e.at("keypoints_z") : nullptr);
            out.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw Error(std::string("malformed results JSON: ") + e.what());
    }
    return out;
}

inline json results_to_json(const std::vector<Detection>& dets)
{
    json arr = json::array();
    for (const auto& d : dets) {
        json e;
        e["image_id"] = d.image_id;
        e["category_id"] = 1;
        e["keypoints"] = detail::flat_keypoints(d.pose);
        e["score"] = d.score;
        arr.push_back(std::move(e));
    }
    return arr;
}

} // namespace posekit::dataset
