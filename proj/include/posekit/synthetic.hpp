#pragma once

/// \file synthetic.hpp
/// \brief Procedural training data: keypoints rendered as colored Gaussian blobs.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "posekit/core_types.hpp"
#include "posekit/error.hpp"
#include "posekit/tensor.hpp"

namespace posekit::synth {

struct BlobStyle {
    std::array<double, 3> color{1.0, 1.0, 1.0};
    double radius = 2.0; ///< Gaussian std in px
};

struct Scene {
    Tensor<float> image; ///< [3, H, W]
    Pose pose;           ///< patch coordinates
};

/// Fully saturated color for keypoint i of k, spread around the hue circle.
inline std::array<double, 3> palette(std::size_t i, std::size_t k)
{
    const double h = 6.0 * static_cast<double>(i) / static_cast<double>(k);
    const double f = h - std::floor(h);
    switch (static_cast<int>(h) % 6) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
    }
}

/// Sum of per-keypoint Gaussian blobs; pixel (u, v) samples the scene at coordinate (u, v).
/// Unlabeled keypoints are not drawn.
inline Tensor<float> render(const Pose& pose, const std::vector<BlobStyle>& styles, std::size_t w, std::size_t h)
{
    detail::require(styles.size() == pose.size(), "render: one style per keypoint is required");
    Tensor<float> img({3, h, w});
    for (std::size_t i = 0; i < pose.size(); ++i) {
        if (!pose.labeled(i)) continue;
        const auto& s = styles[i];
        const double px = pose.coords[i].x, py = pose.coords[i].y;
        const double inv = 1.0 / (2.0 * s.radius * s.radius);
        const double reach = 4.0 * s.radius;
        const auto u0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(px - reach)));
        const auto u1 = static_cast<std::ptrdiff_t>(std::min(double(w) - 1.0, std::ceil(px + reach)));
        const auto v0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(py - reach)));
        const auto v1 = static_cast<std::ptrdiff_t>(std::min(double(h) - 1.0, std::ceil(py + reach)));
        for (std::ptrdiff_t v = v0; v <= v1; ++v)
            for (std::ptrdiff_t u = u0; u <= u1; ++u) {
                const double d2 = (double(u) - px) * (double(u) - px) + (double(v) - py) * (double(v) - py);
                const double g = std::exp(-d2 * inv);
                for (std::size_t c = 0; c < 3; ++c)
                    img[(c * h + std::size_t(v)) * w + std::size_t(u)] += static_cast<float>(s.color[c] * g);
            }
    }
    return img;
}

/// K keypoints at independent uniform positions, one color each.
inline std::vector<Scene> memorization_corpus(std::size_t k, std::size_t w, std::size_t h, std::size_t n,
                                              std::uint64_t seed, double radius = 2.0)
{
    std::mt19937_64 rng(seed);
    const double margin = 2.0;
    std::uniform_real_distribution<double> ux(margin, double(w) - 1.0 - margin), uy(margin, double(h) - 1.0 - margin);
    std::vector<BlobStyle> styles(k);
    for (std::size_t i = 0; i < k; ++i) styles[i] = {palette(i, k), radius};
    std::vector<Scene> out;
    for (std::size_t s = 0; s < n; ++s) {
        Pose p = Pose::unlabeled(k);
        for (std::size_t i = 0; i < k; ++i) {
            p.coords[i] = {ux(rng), uy(rng)};
            p.visibility[i] = kVisible;
        }
        out.push_back({render(p, styles, w, h), std::move(p)});
    }
    return out;
}

/// Two-scale figure: keypoints [0, 4) are a large torso quadrilateral drawn with wide
/// blobs, keypoints [4, 8) a tight hand cluster drawn with small blobs next to one
/// torso corner. Localizing the cluster needs fine spatial detail.
inline constexpr std::size_t kMultiScaleKeypoints = 8;
inline constexpr IndexRange kTorsoPart{0, 4};
inline constexpr IndexRange kHandPart{4, 8};

inline KeypointSchema multiscale_schema()
{
    return KeypointSchema::create("synthetic-multiscale-8", kMultiScaleKeypoints,
                                  {{"torso", kTorsoPart}, {"hand", kHandPart}}, std::vector<double>(8, 0.05),
                                  {{0, 1}, {1, 3}, {3, 2}, {2, 0}, {1, 4}, {4, 5}, {4, 6}, {4, 7}});
}

inline std::vector<Scene> multiscale_corpus(std::size_t n, std::uint64_t seed, std::size_t w = 48, std::size_t h = 64)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<BlobStyle> styles(kMultiScaleKeypoints);
    for (std::size_t i = 0; i < 4; ++i) styles[i] = {palette(i, 4), 3.5};
    for (std::size_t i = 4; i < 8; ++i) styles[i] = {palette(i - 4, 4), 1.0};

    std::vector<Scene> out;
    while (out.size() < n) {
        const double tw = 12.0 + 10.0 * u01(rng), th = 18.0 + 14.0 * u01(rng);
        const double cx = 0.5 * double(w) + (u01(rng) - 0.5) * (double(w) - tw - 14.0);
        const double cy = 0.5 * double(h) + (u01(rng) - 0.5) * (double(h) - th - 14.0);
        Pose p = Pose::unlabeled(kMultiScaleKeypoints);
        const double sx[] = {-0.5, 0.5, -0.5, 0.5}, sy[] = {-0.5, -0.5, 0.5, 0.5};
        for (std::size_t i = 0; i < 4; ++i)
            p.coords[i] = {cx + sx[i] * tw + (u01(rng) - 0.5) * 3.0, cy + sy[i] * th + (u01(rng) - 0.5) * 3.0};
        // hand cluster hangs off a random torso corner
        const std::size_t corner = static_cast<std::size_t>(u01(rng) * 4.0) % 4;
        const double ang = 2.0 * 3.14159265358979 * u01(rng);
        const double hx = p.coords[corner].x + sx[corner] * 8.0 + 2.0 * std::cos(ang);
        const double hy = p.coords[corner].y + sy[corner] * 8.0 + 2.0 * std::sin(ang);
        const double spread = 2.0 + 2.0 * u01(rng);
        for (std::size_t i = 4; i < 8; ++i) {
            const double a = ang + 1.5707963267949 * double(i - 4) + 0.4 * (u01(rng) - 0.5);
            p.coords[i] = {hx + spread * std::cos(a), hy + spread * std::sin(a)};
        }
        bool inside = true;
        for (const auto& c : p.coords)
            inside = inside && c.x >= 1.0 && c.y >= 1.0 && c.x <= double(w) - 2.0 && c.y <= double(h) - 2.0;
        if (!inside) continue;
        for (auto& v : p.visibility) v = kVisible;
        out.push_back({render(p, styles, w, h), std::move(p)});
    }
    return out;
}

/// Recipe for a generated corpus, stored as JSON so CLI runs can name their data.
struct CorpusSpec {
    std::string generator = "memorization"; ///< "memorization" or "multiscale"
    std::size_t n = 16;
    std::size_t k = 8; ///< ignored by "multiscale", which always has 8 keypoints
    std::size_t width = 48;
    std::size_t height = 64;
    std::uint64_t seed = 0;
    double radius = 2.0;

    void validate() const
    {
        detail::require(generator == "memorization" || generator == "multiscale",
                        "corpus: unknown generator '" + generator + "'");
        detail::require(n > 0 && k > 0 && width > 4 && height > 4, "corpus: n, k and the image size must be positive");
        detail::require(radius > 0.0, "corpus: radius must be > 0");
    }

    std::size_t keypoints() const { return generator == "multiscale" ? kMultiScaleKeypoints : k; }
};

inline CorpusSpec corpus_spec_from_json(const nlohmann::ordered_json& j)
{
    CorpusSpec c;
    try {
        c.generator = j.value("generator", c.generator);
        c.n = j.value("n", c.n);
        c.k = j.value("k", c.k);
        c.width = j.value("width", c.width);
        c.height = j.value("height", c.height);
        c.seed = j.value("seed", c.seed);
        c.radius = j.value("radius", c.radius);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("corpus: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::ordered_json to_json(const CorpusSpec& c)
{
    return {{"generator", c.generator}, {"n", c.n}, {"k", c.keypoints()}, {"width", c.width},
            {"height", c.height},       {"seed", c.seed}, {"radius", c.radius}};
}

inline std::vector<Scene> generate(const CorpusSpec& c)
{
    c.validate();
    if (c.generator == "multiscale") return multiscale_corpus(c.n, c.seed, c.width, c.height);
    return memorization_corpus(c.k, c.width, c.height, c.n, c.seed, c.radius);
}

/// Adds depth to a pose: z grows with keypoint index plus noise, offset by a per-instance
/// camera distance; hips (when present) get distinct depths.
inline void attach_depth(Pose& pose, std::mt19937_64& rng, double origin)
{
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    Depth d{std::vector<double>(pose.size()), std::vector<std::uint8_t>(pose.size(), 1)};
    for (std::size_t i = 0; i < pose.size(); ++i) d.z[i] = origin + u(rng);
    pose.depth = std::move(d);
}

} // namespace posekit::synth
