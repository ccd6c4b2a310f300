#pragma once

// One JSON object per report line; "kind" is one of metrics, madds, losslog, gradcheck.

#include <string>

#include <nlohmann/json.hpp>

#include "dashfusion/madds.hpp"
#include "dashfusion/metrics.hpp"
#include "dashfusion/train.hpp"

namespace dashfusion {

inline nlohmann::json metrics_fields(const MetricsReport& r) {
    return {{"count", r.count},
            {"np_count", r.np_count},
            {"acc2_nn", r.acc2_nn},
            {"acc2_np", r.acc2_np},
            {"f1_nn", r.f1_nn},
            {"f1_np", r.f1_np},
            {"acc3", r.acc3},
            {"acc5", r.acc5},
            {"acc7", r.acc7},
            {"mae", r.mae},
            {"corr", r.corr ? nlohmann::json(*r.corr) : nlohmann::json(nullptr)},
            {"corr_defined", r.corr.has_value()}};
}

inline nlohmann::json metrics_report(const MetricsReport& r, const std::string& split) {
    auto j = metrics_fields(r);
    j["kind"] = "metrics";
    j["split"] = split;
    return j;
}

inline nlohmann::json losslog_report(const EpochLog& e) {
    return {{"kind", "losslog"},
            {"epoch", e.epoch},
            {"L_pred", e.l_pred},
            {"L_con", e.l_con},
            {"L_all", e.l_all},
            {"semantic", e.semantic},
            {"supervised", e.supervised},
            {"pair_sets", e.pair_sets},
            {"pairs_skipped", e.pairs_skipped},
            {"valid", metrics_fields(e.valid)}};
}

inline nlohmann::json madds_report(const MaddsReport& r, const ModelConfig& cfg) {
    return {{"kind", "madds"},
            {"fusion", std::string(fusion_name(r.variant))},
            {"analytic", r.analytic},
            {"instrumented", r.instrumented},
            {"matmul_calls", r.matmul_calls},
            {"median_us", r.median_us},
            {"timing_runs", r.timing_runs},
            {"warmup_runs", r.warmup_runs},
            {"seq_lens", {cfg.text_len, cfg.audio_len, cfg.vision_len}},
            {"d", cfg.d},
            {"layers", cfg.fusion_layers},
            {"bottleneck_tokens", cfg.bottleneck_tokens}};
}

inline nlohmann::json gradcheck_report(const GradCheckReport& r, double tolerance) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries) {
        entries.push_back({{"param", e.name},
                           {"index", e.index},
                           {"autodiff", e.autodiff},
                           {"numeric", e.numeric},
                           {"relative_error", e.relative_error}});
    }
    return {{"kind", "gradcheck"},
            {"coordinates", r.entries.size()},
            {"max_relative_error", r.max_relative_error},
            {"tolerance", tolerance},
            {"passed", r.passed(tolerance)},
            {"entries", entries}};
}

inline nlohmann::json ablation_report(const AblationRow& row) {
    nlohmann::json j = row.skipped ? nlohmann::json::object() : metrics_fields(row.mean());
    j["kind"] = "metrics";
    j["split"] = "test";
    j["row"] = row.name;
    j["group"] = row.group;
    j["seeds"] = row.seeds;
    if (row.skipped) {
        j["skipped"] = *row.skipped;
    } else {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& r : row.per_seed) per.push_back(metrics_fields(r));
        j["per_seed"] = per;
    }
    return j;
}

}  // namespace dashfusion
