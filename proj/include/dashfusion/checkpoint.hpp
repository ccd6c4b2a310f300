#pragma once

// <dir>/checkpoint.json lists every parameter (name, shape, offset into the
// flat payload, trainable flag) plus the model config; <dir>/params.dfts holds
// all values as one rank-1 float32 container in that order.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dashfusion/config.hpp"
#include "dashfusion/dfts.hpp"
#include "dashfusion/parameters.hpp"

namespace dashfusion {

inline constexpr int kCheckpointFormatVersion = 1;

template <std::floating_point T>
void save_checkpoint(const ParameterStore<T>& store, const ModelConfig& cfg, const std::filesystem::path& dir,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    TensorFile payload;
    payload.dtype = DType::float32;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : store) {
        params.push_back({{"name", p.name},
                          {"shape", p.value.shape()},
                          {"offset", payload.f32.size()},
                          {"trainable", p.trainable}});
        for (T v : p.value.values()) payload.f32.push_back(static_cast<float>(v));
    }
    payload.dims = {static_cast<std::uint32_t>(payload.f32.size())};
    const auto crc = write_dfts(dir / "params.dfts", payload);
    nlohmann::json manifest{{"format", "dashfusion-checkpoint"},
                            {"format_version", kCheckpointFormatVersion},
                            {"model", cfg},
                            {"payload", "params.dfts"},
                            {"payload_crc32", detail::hex32(crc)},
                            {"params", params},
                            {"extra", extra}};
    detail::write_json(dir / "checkpoint.json", manifest);
}

inline ModelConfig read_checkpoint_config(const std::filesystem::path& dir) {
    const auto j = detail::read_json(dir / "checkpoint.json");
    try {
        return j.at("model").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint.json: ") + e.what());
    }
}

/// Overwrites every parameter of `store` from the checkpoint; names and shapes must match.
template <std::floating_point T>
void load_checkpoint(ParameterStore<T>& store, const std::filesystem::path& dir) {
    const auto j = detail::read_json(dir / "checkpoint.json");
    try {
        if (j.value("format", std::string()) != "dashfusion-checkpoint") throw FormatError("checkpoint.json: not a checkpoint");
        if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
            throw FormatError("checkpoint.json: unsupported format version " + j.at("format_version").dump());
        }
        const auto file = j.at("payload").get<std::string>();
        const auto bytes = read_bytes(dir / file);
        const auto payload = decode_dfts(bytes, file);
        const auto actual = crc32_of(bytes.data(), bytes.size());
        const auto expected = j.at("payload_crc32").get<std::string>();
        if (expected != detail::hex32(actual)) {
            throw ChecksumError(file, static_cast<std::uint32_t>(std::stoul(expected, nullptr, 16)), actual);
        }
        if (payload.dtype != DType::float32 || payload.dims.size() != 1) throw FormatError(file + ": expected rank-1 float32");
        std::size_t seen = 0;
        for (const auto& e : j.at("params")) {
            const auto name = e.at("name").get<std::string>();
            if (!store.contains(name)) throw FormatError("checkpoint has parameter '" + name + "' unknown to the model");
            const auto shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::size_t>();
            const std::size_t n = numel(shape);
            if (offset + n > payload.f32.size()) throw FormatError(file + ": parameter '" + name + "' runs past the payload");
            std::vector<T> v(payload.f32.begin() + static_cast<std::ptrdiff_t>(offset),
                             payload.f32.begin() + static_cast<std::ptrdiff_t>(offset + n));
            store.set(name, Tensor<T>(shape, std::move(v)));
            ++seen;
        }
        if (seen != store.size()) {
            throw FormatError("checkpoint covers " + std::to_string(seen) + " of " + std::to_string(store.size()) +
                              " model parameters");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint.json: ") + e.what());
    }
}

}  // namespace dashfusion
