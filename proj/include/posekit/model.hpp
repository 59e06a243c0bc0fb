#pragma once

/// \file model.hpp
/// \brief Toy-scale whole-body network: plain conv backbone, path-aggregation feature
/// pyramid, hierarchical per-level SimCC encoding, gated attention and per-axis
/// classification branches.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "posekit/autograd.hpp"
#include "posekit/error.hpp"
#include "posekit/nn.hpp"
#include "posekit/tensor.hpp"

namespace posekit {

struct ModelConfig {
    std::size_t input_w = 48;
    std::size_t input_h = 64;
    /// Stem followed by further stages; every stage halves the resolution.
    std::vector<std::size_t> backbone_channels{16, 32, 48, 64};
    /// Pyramid levels fed to the neck, taken from the deepest stages.
    std::size_t num_levels = 2;
    std::size_t neck_channels = 32;
    std::size_t num_keypoints = 17;
    double split_ratio = 2.0;
    std::size_t hem_hidden = 256;
    std::size_t head_kernel = 7;
    std::size_t attention_dim = 128;
    std::size_t expansion_dim = 0; ///< 0 selects 2 * hem_hidden
    bool use_gau = true;
    bool enable_z = false;
    std::size_t z_bins = 450;

    std::size_t num_stages() const { return backbone_channels.size(); }
    std::size_t max_stride() const { return std::size_t{1} << num_stages(); }
    std::size_t simcc_w() const { return static_cast<std::size_t>(std::lround(split_ratio * double(input_w))); }
    std::size_t simcc_h() const { return static_cast<std::size_t>(std::lround(split_ratio * double(input_h))); }

    /// Spatial extent (h, w) of pyramid level `l` (0 = finest).
    std::pair<std::size_t, std::size_t> level_extent(std::size_t l) const
    {
        const std::size_t stage = num_stages() - num_levels + l;
        const std::size_t stride = std::size_t{2} << stage;
        return {input_h / stride, input_w / stride};
    }

    nn::GauConfig gau() const { return {hem_hidden, expansion_dim, attention_dim, true}; }

    void validate() const
    {
        using detail::require;
        require(!backbone_channels.empty(), "model config: backbone needs at least one stage");
        for (auto c : backbone_channels) require(c > 0, "model config: channel counts must be > 0");
        require(input_w > 0 && input_h > 0, "model config: input size must be > 0");
        require(input_w % max_stride() == 0 && input_h % max_stride() == 0,
                "model config: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                    " is not divisible by the largest stride " + std::to_string(max_stride()));
        require(num_levels >= 1 && num_levels <= num_stages(), "model config: num_levels must be in [1, stages]");
        require(num_keypoints >= 1, "model config: need at least one keypoint");
        require(split_ratio > 0.0, "model config: split_ratio must be > 0");
        require(hem_hidden > 0 && neck_channels > 0 && attention_dim > 0, "model config: widths must be > 0");
        require(head_kernel % 2 == 1, "model config: head kernel must be odd");
        require(!enable_z || z_bins >= 1, "model config: z_bins must be >= 1");
    }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c)
{
    return {{"input_w", c.input_w},         {"input_h", c.input_h},
            {"backbone_channels", c.backbone_channels},
            {"num_levels", c.num_levels},   {"neck_channels", c.neck_channels},
            {"num_keypoints", c.num_keypoints},
            {"split_ratio", c.split_ratio}, {"hem_hidden", c.hem_hidden},
            {"head_kernel", c.head_kernel}, {"attention_dim", c.attention_dim},
            {"expansion_dim", c.expansion_dim},
            {"use_gau", c.use_gau},         {"enable_z", c.enable_z},
            {"z_bins", c.z_bins}};
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j)
{
    ModelConfig c;
    try {
        c.input_w = j.value("input_w", c.input_w);
        c.input_h = j.value("input_h", c.input_h);
        if (j.contains("backbone_channels")) c.backbone_channels = j["backbone_channels"].get<std::vector<std::size_t>>();
        c.num_levels = j.value("num_levels", c.num_levels);
        c.neck_channels = j.value("neck_channels", c.neck_channels);
        c.num_keypoints = j.value("num_keypoints", c.num_keypoints);
        c.split_ratio = j.value("split_ratio", c.split_ratio);
        c.hem_hidden = j.value("hem_hidden", c.hem_hidden);
        c.head_kernel = j.value("head_kernel", c.head_kernel);
        c.attention_dim = j.value("attention_dim", c.attention_dim);
        c.expansion_dim = j.value("expansion_dim", c.expansion_dim);
        c.use_gau = j.value("use_gau", c.use_gau);
        c.enable_z = j.value("enable_z", c.enable_z);
        c.z_bins = j.value("z_bins", c.z_bins);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

enum class Axis : std::size_t { X = 0, Y = 1, Z = 2 };

template <typename T>
struct ConvBlock {
    nn::Conv2d<T> reduce;  ///< 1x1
    nn::Conv2d<T> spatial; ///< 3x3

    nn::Var<T> operator()(const nn::Var<T>& x) const { return nn::silu(spatial(nn::silu(reduce(x)))); }

    void collect(nn::ParamRefs<T>& out)
    {
        reduce.collect(out);
        spatial.collect(out);
    }
};

/// Per-axis hierarchical encodings, each [N, K, hem_hidden].
template <typename T>
struct HemEncoding {
    nn::Var<T> x, y, z;
};

template <typename T>
struct ForwardOutput {
    nn::Var<T> x_logits; ///< [N, K, k*W]
    nn::Var<T> y_logits; ///< [N, K, k*H]
    nn::Var<T> z_logits; ///< [N, K, N_z] or undefined
    std::vector<nn::Var<T>> fused; ///< neck outputs, fine to coarse
};

template <typename T>
class Model {
public:
    Model() = default;

    static Model build(const ModelConfig& config, std::uint64_t seed)
    {
        config.validate();
        Model m;
        m.config_ = config;
        std::mt19937_64 rng(seed);
        const auto& ch = config.backbone_channels;
        const std::size_t C = config.neck_channels, K = config.num_keypoints, L = config.num_levels;
        const std::size_t hid = config.hem_hidden;

        for (std::size_t s = 0; s < ch.size(); ++s) {
            const std::string name = "backbone.stage" + std::to_string(s);
            std::vector<nn::Conv2d<T>> stage;
            stage.push_back(nn::Conv2d<T>::create(name + ".down", s == 0 ? 3 : ch[s - 1], ch[s], 3, 2, rng));
            if (s > 0) stage.push_back(nn::Conv2d<T>::create(name + ".conv", ch[s], ch[s], 3, 1, rng));
            m.backbone_.push_back(std::move(stage));
        }

        auto block = [&](const std::string& name, std::size_t in) {
            return ConvBlock<T>{nn::Conv2d<T>::create(name + ".reduce", in, C, 1, 1, rng),
                                nn::Conv2d<T>::create(name + ".spatial", C, C, 3, 1, rng)};
        };
        for (std::size_t l = 0; l < L; ++l)
            m.lateral_.push_back(nn::Conv2d<T>::create("neck.lateral" + std::to_string(l),
                                                       ch[ch.size() - L + l], C, 1, 1, rng));
        if (L == 1) {
            m.top_down_.push_back(block("neck.block0", C));
        } else {
            for (std::size_t l = 0; l + 1 < L; ++l) m.top_down_.push_back(block("neck.top_down" + std::to_string(l), 2 * C));
            for (std::size_t l = 1; l < L; ++l) {
                m.downsample_.push_back(nn::Conv2d<T>::create("neck.down" + std::to_string(l), C, C, 3, 2, rng));
                m.bottom_up_.push_back(block("neck.bottom_up" + std::to_string(l), 2 * C));
            }
        }

        const std::size_t axes = config.enable_z ? 3 : 2;
        const char* axis_names[] = {"x", "y", "z"};
        for (std::size_t l = 0; l < L; ++l)
            m.level_conv_.push_back(nn::Conv2d<T>::create("hem.level" + std::to_string(l) + ".conv", C, K,
                                                          config.head_kernel, 1, rng));
        m.proj_.resize(axes);
        for (std::size_t a = 0; a < axes; ++a) {
            for (std::size_t l = 0; l < L; ++l) {
                auto [h, w] = config.level_extent(l);
                m.proj_[a].push_back(nn::Linear<T>::create(
                    std::string("hem.") + axis_names[a] + ".level" + std::to_string(l) + ".proj", h * w, hid, rng));
            }
            if (L > 1)
                m.fuse_.push_back(nn::Linear<T>::create(std::string("hem.") + axis_names[a] + ".fuse", L * hid, hid, rng));
        }

        m.gau_ = nn::GauParams<T>::create("gau", config.gau(), rng);
        m.branch_.push_back(nn::Linear<T>::create("head.x", hid, config.simcc_w(), rng));
        m.branch_.push_back(nn::Linear<T>::create("head.y", hid, config.simcc_h(), rng));
        if (config.enable_z) m.branch_.push_back(nn::Linear<T>::create("head.z", hid, config.z_bins, rng));
        return m;
    }

    const ModelConfig& config() const { return config_; }

    /// Every parameter in registration order; names are unique.
    nn::ParamRefs<T> parameters()
    {
        nn::ParamRefs<T> out;
        for (auto& stage : backbone_)
            for (auto& c : stage) c.collect(out);
        for (auto& c : lateral_) c.collect(out);
        for (auto& b : top_down_) b.collect(out);
        for (std::size_t i = 0; i < downsample_.size(); ++i) {
            downsample_[i].collect(out);
            bottom_up_[i].collect(out);
        }
        for (auto& c : level_conv_) c.collect(out);
        for (auto& axis : proj_)
            for (auto& p : axis) p.collect(out);
        for (auto& f : fuse_) f.collect(out);
        gau_.collect(out);
        for (auto& b : branch_) b.collect(out);
        return out;
    }

    std::vector<const nn::Param<T>*> parameters() const
    {
        auto refs = const_cast<Model*>(this)->parameters();
        return {refs.begin(), refs.end()};
    }

    nn::Param<T>* find(const std::string& name)
    {
        for (auto* p : parameters())
            if (p->name() == name) return p;
        return nullptr;
    }

    std::size_t num_parameters() const
    {
        std::size_t n = 0;
        for (const auto* p : parameters()) n += p->size();
        return n;
    }

    void zero_grad()
    {
        for (auto* p : parameters()) p->zero_grad();
    }

    /// Backbone feature maps, one per stage.
    std::vector<nn::Var<T>> backbone_forward(const nn::Var<T>& image) const
    {
        std::vector<nn::Var<T>> feats;
        nn::Var<T> h = image;
        for (const auto& stage : backbone_) {
            for (const auto& conv : stage) h = nn::silu(conv(h));
            feats.push_back(h);
        }
        return feats;
    }

    /// Top-down then bottom-up aggregation over levels ordered fine to coarse.
    std::vector<nn::Var<T>> pafpn_fuse(const std::vector<nn::Var<T>>& levels) const
    {
        using detail::require;
        const std::size_t L = lateral_.size();
        require(levels.size() == L, "pafpn_fuse: expected " + std::to_string(L) + " levels, got " + std::to_string(levels.size()));
        for (const auto& f : levels) require(f.rank() == 4, "pafpn_fuse: levels must be [N,C,H,W]");
        for (std::size_t l = 0; l + 1 < L; ++l) {
            const auto& a = levels[l].shape();
            const auto& b = levels[l + 1].shape();
            require(a[2] == 2 * b[2] && a[3] == 2 * b[3],
                    "pafpn_fuse: levels " + shape_str(a) + " and " + shape_str(b) + " are not a 2x pyramid step");
        }

        std::vector<nn::Var<T>> lat;
        for (std::size_t l = 0; l < L; ++l) lat.push_back(nn::silu(lateral_[l](levels[l])));
        if (L == 1) return {top_down_[0](lat[0])};

        std::vector<nn::Var<T>> td(L);
        td[L - 1] = lat[L - 1];
        for (std::size_t l = L - 1; l-- > 0;)
            td[l] = top_down_[l](nn::concat<T>({lat[l], nn::upsample_nearest2x(td[l + 1])}, 1));

        std::vector<nn::Var<T>> out(L);
        out[0] = td[0];
        for (std::size_t l = 1; l < L; ++l)
            out[l] = bottom_up_[l - 1](nn::concat<T>({td[l], nn::silu(downsample_[l - 1](out[l - 1]))}, 1));
        return out;
    }

    /// Per level: large-kernel conv to K maps, flatten per keypoint, project per axis;
    /// then concatenate the per-level codes of each axis and fuse back to hem_hidden.
    HemEncoding<T> hem_encode(const std::vector<nn::Var<T>>& fused) const
    {
        using detail::require;
        const std::size_t L = level_conv_.size();
        require(fused.size() == L, "hem_encode: expected " + std::to_string(L) + " levels, got " + std::to_string(fused.size()));
        const std::size_t K = config_.num_keypoints;

        std::vector<nn::Var<T>> flat;
        for (std::size_t l = 0; l < L; ++l) {
            const auto& s = fused[l].shape();
            require(s.size() == 4, "hem_encode: level must be [N,C,H,W]");
            auto [h, w] = config_.level_extent(l);
            require(s[2] == h && s[3] == w, "hem_encode: level " + std::to_string(l) + " has extent " + shape_str(s) +
                                                ", parameters expect " + std::to_string(h) + "x" + std::to_string(w));
            nn::Var<T> maps = level_conv_[l](fused[l]);
            flat.push_back(nn::reshape(maps, {s[0], K, h * w}));
        }

        HemEncoding<T> enc;
        for (std::size_t a = 0; a < proj_.size(); ++a) {
            std::vector<nn::Var<T>> codes;
            for (std::size_t l = 0; l < L; ++l) codes.push_back(proj_[a][l](flat[l]));
            nn::Var<T> merged = L == 1 ? codes[0] : fuse_[a](nn::concat<T>(codes, 2));
            (a == 0 ? enc.x : a == 1 ? enc.y : enc.z) = merged;
        }
        return enc;
    }

    /// Shared attention over the K keypoint tokens of one axis code.
    nn::Var<T> attend(const nn::Var<T>& code) const
    {
        return config_.use_gau ? nn::gau_forward(code, config_.gau(), gau_) : code;
    }

    ForwardOutput<T> forward(const nn::Var<T>& image) const
    {
        using detail::require;
        const bool batched = image.rank() == 4;
        require(image.rank() == 3 || batched, "forward: image must be [3,H,W] or [N,3,H,W]");
        const auto& s = image.shape();
        const std::size_t o = batched ? 1 : 0;
        require(s[o] == 3 && s[o + 1] == config_.input_h && s[o + 2] == config_.input_w,
                "forward: image " + shape_str(s) + " does not match input 3x" + std::to_string(config_.input_h) + "x" +
                    std::to_string(config_.input_w));
        nn::Var<T> x = batched ? image : nn::reshape(image, {1, s[0], s[1], s[2]});

        auto feats = backbone_forward(x);
        std::vector<nn::Var<T>> levels(feats.end() - static_cast<std::ptrdiff_t>(config_.num_levels), feats.end());
        ForwardOutput<T> out;
        out.fused = pafpn_fuse(levels);
        HemEncoding<T> enc = hem_encode(out.fused);
        out.x_logits = branch_[0](attend(enc.x));
        out.y_logits = branch_[1](attend(enc.y));
        if (config_.enable_z) out.z_logits = branch_[2](attend(enc.z));
        return out;
    }

    ForwardOutput<T> forward(const Tensor<T>& image) const { return forward(nn::constant(image)); }

    /// Same architecture and values in another precision.
    template <typename U>
    Model<U> cast() const
    {
        Model<U> m = Model<U>::build(config_, 0);
        auto dst = m.parameters();
        auto src = parameters();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value() = src[i]->value().template cast<U>();
        return m;
    }

private:
    ModelConfig config_;
    std::vector<std::vector<nn::Conv2d<T>>> backbone_;
    std::vector<nn::Conv2d<T>> lateral_;
    std::vector<ConvBlock<T>> top_down_;
    std::vector<nn::Conv2d<T>> downsample_;
    std::vector<ConvBlock<T>> bottom_up_;
    std::vector<nn::Conv2d<T>> level_conv_;
    std::vector<std::vector<nn::Linear<T>>> proj_; ///< [axis][level]
    std::vector<nn::Linear<T>> fuse_;              ///< [axis], only with more than one level
    nn::GauParams<T> gau_;
    std::vector<nn::Linear<T>> branch_;            ///< x, y[, z]
};

template <typename T>
std::uint64_t parameter_checksum(const std::vector<const nn::Param<T>*>& params)
{
    std::uint64_t h = 1469598103934665603ull;
    for (const auto* p : params) h = checksum(p->value(), h);
    return h;
}

template <typename T>
std::uint64_t parameter_checksum(const nn::ParamRefs<T>& params)
{
    return parameter_checksum(std::vector<const nn::Param<T>*>(params.begin(), params.end()));
}

template <typename T>
std::uint64_t parameter_checksum(const Model<T>& m)
{
    return parameter_checksum(m.parameters());
}

/// Parameters under the backbone, neck and hierarchical encoder; everything else
/// (attention and classification branches) forms the head.
inline bool is_head_parameter(const std::string& name)
{
    return name.rfind("gau.", 0) == 0 || name.rfind("head.", 0) == 0;
}

} // namespace posekit
