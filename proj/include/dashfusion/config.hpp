#pragma once

// Training options and JSON mapping for every configuration struct. Config
// documents look like {"data": "...", "synth": {...}, "model": {...}, "train": {...}};
// missing keys keep their defaults, unknown keys are errors.

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "dashfusion/data.hpp"
#include "dashfusion/errors.hpp"
#include "dashfusion/model.hpp"

namespace dashfusion {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda = 0.2;
    double tau = 0.5;
    std::uint64_t seed = 0;
    bool semantic_align = true;
    bool scl = true;
    double semantic_weight = 1.0;
    double scl_weight = 1.0;
    double pair_quantile = 0.25;
    double neutral_band = 0.1;

    void validate() const {
        if (epochs == 0 || batch_size == 0) throw ConfigError("train: epochs and batch_size must be positive");
        if (!(lr > 0) || !(eps > 0)) throw ConfigError("train: lr and eps must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
        if (!(lambda >= 0)) throw ConfigError("train: lambda must be non-negative");
        if (!(tau > 0)) throw ConfigError("train: tau must be positive");
        if (!(pair_quantile > 0 && pair_quantile <= 0.5)) throw ConfigError("train: pair_quantile must lie in (0, 0.5]");
        if (!(neutral_band >= 0 && neutral_band < 1)) throw ConfigError("train: neutral_band must lie in [0, 1)");
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        if (!known.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

template <class V>
void get_if(const nlohmann::json& j, const char* key, V& field) {
    if (j.contains(key)) j.at(key).get_to(field);
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d", c.d},
                       {"heads", c.heads},
                       {"enc_layers", c.enc_layers},
                       {"fusion_layers", c.fusion_layers},
                       {"bottleneck_tokens", c.bottleneck_tokens},
                       {"vocab_size", c.vocab_size},
                       {"audio_dim", c.audio_dim},
                       {"vision_dim", c.vision_dim},
                       {"text_len", c.text_len},
                       {"audio_len", c.audio_len},
                       {"vision_len", c.vision_len},
                       {"fusion", std::string(fusion_name(c.fusion))},
                       {"temporal_align", c.temporal_align},
                       {"hbf", c.hbf},
                       {"random_bottleneck_seed", c.random_bottleneck_seed},
                       {"concat_sa_layers", c.concat_sa_layers}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    detail::reject_unknown(j,
                           {"d", "heads", "enc_layers", "fusion_layers", "bottleneck_tokens", "vocab_size", "audio_dim",
                            "vision_dim", "text_len", "audio_len", "vision_len", "fusion", "temporal_align", "hbf",
                            "random_bottleneck_seed", "concat_sa_layers"},
                           "model");
    detail::get_if(j, "d", c.d);
    detail::get_if(j, "heads", c.heads);
    detail::get_if(j, "enc_layers", c.enc_layers);
    detail::get_if(j, "fusion_layers", c.fusion_layers);
    detail::get_if(j, "bottleneck_tokens", c.bottleneck_tokens);
    detail::get_if(j, "vocab_size", c.vocab_size);
    detail::get_if(j, "audio_dim", c.audio_dim);
    detail::get_if(j, "vision_dim", c.vision_dim);
    detail::get_if(j, "text_len", c.text_len);
    detail::get_if(j, "audio_len", c.audio_len);
    detail::get_if(j, "vision_len", c.vision_len);
    if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    detail::get_if(j, "temporal_align", c.temporal_align);
    detail::get_if(j, "hbf", c.hbf);
    detail::get_if(j, "random_bottleneck_seed", c.random_bottleneck_seed);
    detail::get_if(j, "concat_sa_layers", c.concat_sa_layers);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"eps", c.eps},
                       {"lambda", c.lambda},
                       {"tau", c.tau},
                       {"seed", c.seed},
                       {"semantic_align", c.semantic_align},
                       {"scl", c.scl},
                       {"semantic_weight", c.semantic_weight},
                       {"scl_weight", c.scl_weight},
                       {"pair_quantile", c.pair_quantile},
                       {"neutral_band", c.neutral_band}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::reject_unknown(j,
                           {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "lambda", "tau", "seed",
                            "semantic_align", "scl", "semantic_weight", "scl_weight", "pair_quantile", "neutral_band"},
                           "train");
    detail::get_if(j, "epochs", c.epochs);
    detail::get_if(j, "batch_size", c.batch_size);
    detail::get_if(j, "lr", c.lr);
    detail::get_if(j, "beta1", c.beta1);
    detail::get_if(j, "beta2", c.beta2);
    detail::get_if(j, "eps", c.eps);
    detail::get_if(j, "lambda", c.lambda);
    detail::get_if(j, "tau", c.tau);
    detail::get_if(j, "seed", c.seed);
    detail::get_if(j, "semantic_align", c.semantic_align);
    detail::get_if(j, "scl", c.scl);
    detail::get_if(j, "semantic_weight", c.semantic_weight);
    detail::get_if(j, "scl_weight", c.scl_weight);
    detail::get_if(j, "pair_quantile", c.pair_quantile);
    detail::get_if(j, "neutral_band", c.neutral_band);
}

struct RunConfig {
    std::optional<std::string> data;  // dataset directory; generated from `synth` when absent
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
    try {
        detail::reject_unknown(j, {"data", "synth", "model", "train"}, "config");
        RunConfig rc;
        if (j.contains("data")) rc.data = j.at("data").get<std::string>();
        if (j.contains("synth")) rc.synth = j.at("synth").get<SynthConfig>();
        if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
        if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
        return rc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline nlohmann::json to_json(const RunConfig& rc) {
    nlohmann::json j{{"synth", rc.synth}, {"model", rc.model}, {"train", rc.train}};
    if (rc.data) j["data"] = *rc.data;
    return j;
}

/// Model shapes taken from a dataset split; architecture fields are kept.
inline ModelConfig fit_to_data(ModelConfig cfg, const DatasetSplit& split, std::size_t vocab_size) {
    cfg.text_len = split.text_len;
    cfg.audio_len = split.audio_len;
    cfg.audio_dim = split.audio_dim;
    cfg.vision_len = split.vision_len;
    cfg.vision_dim = split.vision_dim;
    cfg.vocab_size = vocab_size;
    return cfg;
}

}  // namespace dashfusion
