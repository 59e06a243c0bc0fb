#pragma once

/// \file checkpoint.hpp
/// \brief Single-file model checkpoints: magic "POSEKIT1", a little-endian uint64 header
/// length, a JSON header (config + parameter manifest) and raw little-endian float32 blobs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "posekit/error.hpp"
#include "posekit/model.hpp"

namespace posekit {

inline constexpr char kCheckpointMagic[8] = {'P', 'O', 'S', 'E', 'K', 'I', 'T', '1'};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

inline void put_f32_le(std::string& out, float f)
{
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const unsigned char* p)
{
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

} // namespace detail

/// Serialized checkpoint bytes. `extra` is stored verbatim under "extra" in the header.
template <typename T>
std::string checkpoint_bytes(const Model<T>& model, const nlohmann::ordered_json& extra = nlohmann::ordered_json::object())
{
    nlohmann::ordered_json header;
    header["format"] = "posekit-checkpoint";
    header["version"] = 1;
    header["config"] = to_json(model.config());
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto* p : model.parameters()) {
        manifest.push_back({{"name", p->name()}, {"shape", p->shape()}, {"offset", offset}});
        offset += 4 * p->size();
    }
    header["parameters"] = manifest;
    header["extra"] = extra;
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, 8);
    detail::put_u64_le(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto* p : model.parameters())
        for (T v : p->value().vec()) detail::put_f32_le(out, static_cast<float>(v));
    return out;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object())
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write checkpoint: " + path);
    const std::string bytes = checkpoint_bytes(model, extra);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    nlohmann::ordered_json extra;
};

template <typename T>
LoadedCheckpoint<T> checkpoint_from_bytes(const std::string& bytes, const std::string& source = "<memory>")
{
    auto fail = [&](const std::string& why) { return Error("invalid checkpoint " + source + ": " + why); };
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw fail("bad magic");
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t hlen = detail::get_u64_le(raw + 8);
    if (hlen > bytes.size() - 16) throw fail("truncated header");
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("header is not JSON: ") + e.what());
    }
    if (!header.contains("config") || !header.contains("parameters")) throw fail("header lacks config or parameters");
    LoadedCheckpoint<T> out{Model<T>::build(model_config_from_json(header["config"]), 0),
                            header.value("extra", nlohmann::ordered_json::object())};
    const std::size_t base = 16 + hlen;
    auto params = out.model.parameters();
    const auto& manifest = header["parameters"];
    if (manifest.size() != params.size()) throw fail("parameter count does not match the config");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = manifest[i];
        auto* p = params[i];
        if (e.at("name").get<std::string>() != p->name()) throw fail("unexpected parameter " + e.at("name").get<std::string>());
        if (e.at("shape").get<Shape>() != p->shape()) throw fail("shape mismatch for " + p->name());
        const std::size_t off = base + e.at("offset").get<std::size_t>();
        if (off + 4 * p->size() > bytes.size()) throw fail("truncated data for " + p->name());
        auto& v = p->value().vec();
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<T>(detail::get_f32_le(raw + off + 4 * j));
    }
    return out;
}

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return checkpoint_from_bytes<T>(bytes, path);
}

} // namespace posekit
