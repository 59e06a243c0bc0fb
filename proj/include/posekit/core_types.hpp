#pragma once

/// \file core_types.hpp
/// \brief Keypoint schemas, poses, boxes and annotated instances.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "posekit/error.hpp"

namespace posekit {

/// Half-open index range [begin, end).
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool empty() const { return end <= begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    bool operator==(const IndexRange&) const = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// COCO visibility convention: 0 unlabeled, 1 labeled but occluded, 2 labeled and visible.
enum Visibility : std::uint8_t { kUnlabeled = 0, kOccluded = 1, kVisible = 2 };

/// Per-keypoint depth with an annotation mask; `valid[i] == 0` means no z label.
struct Depth {
    std::vector<double> z;
    std::vector<std::uint8_t> valid;
};

struct Pose {
    std::vector<Point2> coords;
    std::vector<std::uint8_t> visibility;
    std::optional<Depth> depth;
    std::optional<std::vector<double>> scores;

    std::size_t size() const { return coords.size(); }
    bool labeled(std::size_t i) const { return visibility[i] > 0; }

    std::size_t num_labeled() const
    {
        std::size_t n = 0;
        for (auto v : visibility) n += v > 0 ? 1 : 0;
        return n;
    }

    double score(std::size_t i) const { return scores ? (*scores)[i] : 1.0; }

    static Pose unlabeled(std::size_t n)
    {
        Pose p;
        p.coords.assign(n, Point2{});
        p.visibility.assign(n, kUnlabeled);
        return p;
    }
};

struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    bool valid() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0; }
    double area() const { return w * h; }
    Point2 center() const { return {x + 0.5 * w, y + 0.5 * h}; }
    bool operator==(const BBox&) const = default;
};

struct AnnotatedInstance {
    std::int64_t image_id = 0;
    BBox bbox;
    double area = 0.0;
    Pose pose;
    std::string schema;
    std::string dataset;
    bool iscrowd = false;
};

/// Named keypoint layout. Construct through `KeypointSchema::create`, which enforces
/// that part slices tile [0, size) and that every OKS sigma is positive.
class KeypointSchema {
public:
    using Part = std::pair<std::string, IndexRange>;
    using Edge = std::pair<std::size_t, std::size_t>;

    static KeypointSchema create(std::string name, std::size_t size, std::vector<Part> parts,
                                 std::vector<double> sigmas, std::vector<Edge> skeleton = {})
    {
        using detail::require;
        require(!name.empty(), "schema name must not be empty");
        require(size > 0, "schema '" + name + "': size must be positive");
        require(sigmas.size() == size, "schema '" + name + "': expected " + std::to_string(size) + " sigmas, got " +
                                           std::to_string(sigmas.size()));
        for (double s : sigmas)
            require(std::isfinite(s) && s > 0.0, "schema '" + name + "': sigmas must be finite and positive");
        require(!parts.empty(), "schema '" + name + "': at least one part is required");

        std::vector<int> cover(size, 0);
        for (const auto& [part_name, range] : parts) {
            require(!range.empty() && range.end <= size,
                    "schema '" + name + "': part '" + part_name + "' has an invalid range");
            for (std::size_t i = range.begin; i < range.end; ++i) ++cover[i];
        }
        for (std::size_t i = 0; i < size; ++i)
            require(cover[i] == 1, "schema '" + name + "': parts must tile [0, size) exactly (index " +
                                       std::to_string(i) + " covered " + std::to_string(cover[i]) + " times)");
        for (const auto& [a, b] : skeleton)
            require(a < size && b < size, "schema '" + name + "': skeleton edge out of range");

        KeypointSchema s;
        s.name_ = std::move(name);
        s.size_ = size;
        s.parts_ = std::move(parts);
        s.sigmas_ = std::move(sigmas);
        s.skeleton_ = std::move(skeleton);
        return s;
    }

    const std::string& name() const { return name_; }
    std::size_t size() const { return size_; }
    const std::vector<Part>& parts() const { return parts_; }
    const std::vector<double>& sigmas() const { return sigmas_; }
    const std::vector<Edge>& skeleton() const { return skeleton_; }

    bool has_part(const std::string& part) const
    {
        for (const auto& p : parts_)
            if (p.first == part) return true;
        return false;
    }

    /// Slice of a declared part; throws naming the valid parts otherwise.
    IndexRange part_slice(const std::string& part) const
    {
        for (const auto& p : parts_)
            if (p.first == part) return p.second;
        std::string valid;
        for (const auto& p : parts_) valid += (valid.empty() ? "" : ", ") + p.first;
        throw Error("unknown part '" + part + "' for schema '" + name_ + "'; valid parts: " + valid);
    }

    IndexRange full() const { return {0, size_}; }

private:
    KeypointSchema() = default;

    std::string name_;
    std::size_t size_ = 0;
    std::vector<Part> parts_;
    std::vector<double> sigmas_;
    std::vector<Edge> skeleton_;
};

inline IndexRange part_slice(const KeypointSchema& schema, const std::string& part)
{
    return schema.part_slice(part);
}

namespace wholebody {

inline constexpr std::size_t kNumKeypoints = 133;
inline constexpr IndexRange kBody{0, 17};
inline constexpr IndexRange kFoot{17, 23};
inline constexpr IndexRange kFace{23, 91};
inline constexpr IndexRange kHand{91, 133};
inline constexpr IndexRange kLeftHand{91, 112};
inline constexpr IndexRange kRightHand{112, 133};
inline constexpr std::size_t kLeftHip = 11;
inline constexpr std::size_t kRightHip = 12;

inline const std::vector<double>& body_sigmas()
{
    static const std::vector<double> v{0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
                                       0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
    return v;
}

inline std::vector<KeypointSchema::Edge> body_skeleton()
{
    return {{15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12}, {5, 6}, {5, 7}, {6, 8},
            {7, 9},   {8, 10},  {1, 2},   {0, 1},   {0, 2},   {1, 3},  {2, 4},  {3, 5}, {4, 6}};
}

} // namespace wholebody

/// COCO-WholeBody 133-point target layout with the standard per-keypoint OKS constants.
inline KeypointSchema coco_wholebody_133()
{
    std::vector<double> sigmas = wholebody::body_sigmas();
    const std::vector<double> foot{0.068, 0.066, 0.066, 0.092, 0.094, 0.094};
    const std::vector<double> face{
        0.042, 0.043, 0.044, 0.043, 0.040, 0.035, 0.031, 0.025, 0.020, 0.023, 0.029, 0.032, 0.037, 0.038,
        0.043, 0.041, 0.045, 0.013, 0.012, 0.011, 0.011, 0.012, 0.012, 0.011, 0.011, 0.013, 0.015, 0.009,
        0.007, 0.007, 0.007, 0.012, 0.009, 0.008, 0.016, 0.010, 0.017, 0.011, 0.009, 0.011, 0.009, 0.007,
        0.013, 0.008, 0.011, 0.012, 0.010, 0.034, 0.008, 0.008, 0.009, 0.008, 0.008, 0.007, 0.010, 0.008,
        0.009, 0.009, 0.009, 0.007, 0.007, 0.008, 0.011, 0.008, 0.008, 0.008, 0.010, 0.008};
    const std::vector<double> hand{0.029, 0.022, 0.035, 0.037, 0.047, 0.026, 0.025, 0.024, 0.035, 0.018, 0.024,
                                   0.022, 0.026, 0.017, 0.021, 0.021, 0.032, 0.020, 0.019, 0.022, 0.031};
    sigmas.insert(sigmas.end(), foot.begin(), foot.end());
    sigmas.insert(sigmas.end(), face.begin(), face.end());
    sigmas.insert(sigmas.end(), hand.begin(), hand.end());
    sigmas.insert(sigmas.end(), hand.begin(), hand.end());

    auto skeleton = wholebody::body_skeleton();
    for (std::size_t f : {17, 18, 19}) skeleton.emplace_back(15, f);
    for (std::size_t f : {20, 21, 22}) skeleton.emplace_back(16, f);
    for (std::size_t root : {wholebody::kLeftHand.begin, wholebody::kRightHand.begin}) {
        for (std::size_t finger = 0; finger < 5; ++finger) {
            std::size_t prev = root;
            for (std::size_t j = 1; j <= 4; ++j) {
                std::size_t cur = root + finger * 4 + j;
                skeleton.emplace_back(prev, cur);
                prev = cur;
            }
        }
    }
    skeleton.emplace_back(9, wholebody::kLeftHand.begin);
    skeleton.emplace_back(10, wholebody::kRightHand.begin);

    return KeypointSchema::create("coco-wholebody-133", wholebody::kNumKeypoints,
                                  {{"body", wholebody::kBody},
                                   {"foot", wholebody::kFoot},
                                   {"face", wholebody::kFace},
                                   {"hand", wholebody::kHand}},
                                  std::move(sigmas), std::move(skeleton));
}

inline KeypointSchema coco_body_17()
{
    return KeypointSchema::create("coco-17", 17, {{"body", {0, 17}}}, wholebody::body_sigmas(),
                                  wholebody::body_skeleton());
}

inline constexpr double kDefaultSigma = 0.05;

// --- JSON -----------------------------------------------------------------

inline KeypointSchema schema_from_json(const nlohmann::ordered_json& j)
{
    try {
        std::vector<KeypointSchema::Part> parts;
        for (const auto& [name, range] : j.at("parts").items()) {
            detail::require(range.is_array() && range.size() == 2, "part '" + name + "' must be [start, end]");
            parts.emplace_back(name, IndexRange{range[0].get<std::size_t>(), range[1].get<std::size_t>()});
        }
        std::vector<KeypointSchema::Edge> skeleton;
        if (j.contains("skeleton"))
            for (const auto& e : j["skeleton"]) skeleton.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
        return KeypointSchema::create(j.at("name").get<std::string>(), j.at("size").get<std::size_t>(),
                                      std::move(parts), j.at("sigmas").get<std::vector<double>>(), std::move(skeleton));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed schema JSON: ") + e.what());
    }
}

inline nlohmann::ordered_json schema_to_json(const KeypointSchema& s)
{
    nlohmann::ordered_json j;
    j["name"] = s.name();
    j["size"] = s.size();
    nlohmann::ordered_json parts = nlohmann::ordered_json::object();
    for (const auto& [name, r] : s.parts()) parts[name] = {r.begin, r.end};
    j["parts"] = parts;
    j["sigmas"] = s.sigmas();
    if (!s.skeleton().empty()) {
        nlohmann::ordered_json sk = nlohmann::ordered_json::array();
        for (const auto& [a, b] : s.skeleton()) sk.push_back({a, b});
        j["skeleton"] = sk;
    }
    return j;
}

inline nlohmann::ordered_json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("cannot parse JSON in " + path + ": " + e.what());
    }
}

inline KeypointSchema load_schema(const std::string& path) { return schema_from_json(read_json_file(path)); }

/// Name -> schema lookup. Starts with the built-in COCO layouts.
class SchemaRegistry {
public:
    SchemaRegistry()
    {
        add(coco_wholebody_133());
        add(coco_body_17());
    }

    void add(KeypointSchema schema)
    {
        auto name = schema.name();
        schemas_.insert_or_assign(std::move(name), std::move(schema));
    }

    const KeypointSchema* find(const std::string& name) const
    {
        auto it = schemas_.find(name);
        return it == schemas_.end() ? nullptr : &it->second;
    }

    const KeypointSchema& at(const std::string& name) const
    {
        if (const auto* s = find(name)) return *s;
        throw Error("unknown schema '" + name + "'");
    }

    /// OKS constants for a schema; unknown schemas fall back to a uniform 0.05 with a warning.
    std::vector<double> sigmas_for(const std::string& name, std::size_t size) const
    {
        if (const auto* s = find(name)) return s->sigmas();
        std::cerr << "warning: no sigma table for schema '" << name << "', using uniform " << kDefaultSigma << "\n";
        return std::vector<double>(size, kDefaultSigma);
    }

    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        for (const auto& kv : schemas_) out.push_back(kv.first);
        return out;
    }

private:
    std::map<std::string, KeypointSchema> schemas_;
};

// --- validation -------------------------------------------------------------

struct Violation {
    std::string code;
    std::string message;
};

/// Reports every violated invariant of `inst`; never throws on bad numeric data.
inline std::vector<Violation> validate(const AnnotatedInstance& inst, const SchemaRegistry& registry)
{
    std::vector<Violation> out;
    auto report = [&](std::string code, std::string msg) { out.push_back({std::move(code), std::move(msg)}); };

    const Pose& pose = inst.pose;
    const std::size_t n = pose.coords.size();
    if (const auto* schema = registry.find(inst.schema)) {
        if (n != schema->size())
            report("length mismatch", "pose has " + std::to_string(n) + " keypoints, schema '" + inst.schema +
                                          "' expects " + std::to_string(schema->size()));
    } else {
        report("unknown schema", "schema '" + inst.schema + "' is not registered");
    }

    if (pose.visibility.size() != n)
        report("length mismatch", "visibility has " + std::to_string(pose.visibility.size()) + " entries, expected " +
                                      std::to_string(n));
    if (pose.scores && pose.scores->size() != n) report("length mismatch", "scores length differs from coords");
    if (pose.depth && (pose.depth->z.size() != n || pose.depth->valid.size() != n))
        report("length mismatch", "depth length differs from coords");

    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(pose.coords[i].x) || !std::isfinite(pose.coords[i].y)) {
            report("non-finite coordinate", "keypoint " + std::to_string(i) + " has a non-finite coordinate");
        }
    }
    for (std::size_t i = 0; i < pose.visibility.size(); ++i) {
        if (pose.visibility[i] > kVisible)
            report("visibility out of domain", "keypoint " + std::to_string(i) + " has visibility " +
                                                   std::to_string(int(pose.visibility[i])));
    }
    if (pose.depth) {
        for (std::size_t i = 0; i < pose.depth->z.size(); ++i)
            if (!std::isfinite(pose.depth->z[i]))
                report("non-finite coordinate", "keypoint " + std::to_string(i) + " has a non-finite z");
    }
    if (pose.scores) {
        for (std::size_t i = 0; i < pose.scores->size(); ++i) {
            double s = (*pose.scores)[i];
            if (!(s >= 0.0 && s <= 1.0)) report("score out of range", "keypoint " + std::to_string(i) + " score not in [0,1]");
        }
    }
    if (!inst.bbox.valid()) report("non-positive bbox", "bbox must have finite coordinates and w, h > 0");
    if (!(std::isfinite(inst.area) && inst.area > 0.0)) report("non-positive area", "area must be > 0");
    return out;
}

} // namespace posekit
