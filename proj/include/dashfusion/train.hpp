#pragma once

// Adam, the mini-batch training loop, split evaluation and the ablation runner.
//
// Supervised contrastive pairs are drawn once per epoch: the pooled features
// of every training sample are recomputed with the current parameters
// (detached), a cosine-similarity index is built over the pooled text features
// and each anchor's pair set refers into that bank.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dashfusion/config.hpp"
#include "dashfusion/contrastive.hpp"
#include "dashfusion/data.hpp"
#include "dashfusion/metrics.hpp"
#include "dashfusion/model.hpp"

namespace dashfusion {

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update of every trainable parameter. `grads` must
/// hold exactly the trainable parameter names, with matching shapes.
template <std::floating_point T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, AdamState& state, const TrainConfig& cfg) {
    std::size_t trainable = 0;
    for (const auto& p : params) {
        if (!p.trainable) continue;
        ++trainable;
        const auto it = grads.find(p.name);
        if (it == grads.end()) throw std::invalid_argument("adam_step: no gradient for parameter '" + p.name + "'");
        if (it->second.shape() != p.value.shape()) {
            throw DimensionError("adam_step: gradient for '" + p.name + "' is " + to_string(it->second.shape()) +
                                 ", parameter is " + to_string(p.value.shape()));
        }
    }
    if (grads.size() != trainable) {
        for (const auto& [name, g] : grads) {
            if (!params.contains(name) || !params.at(name).trainable) {
                throw std::invalid_argument("adam_step: gradient '" + name + "' has no trainable parameter");
            }
        }
    }
    ++state.step;
    const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
    std::vector<std::pair<std::string, Tensor<T>>> updates;
    for (const auto& p : params) {
        if (!p.trainable) continue;
        const auto g = grads.at(p.name).values();
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        std::vector<T> next(p.value.values().begin(), p.value.values().end());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            next[i] = static_cast<T>(static_cast<double>(next[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
        }
        updates.emplace_back(p.name, Tensor<T>(p.value.shape(), std::move(next)));
    }
    for (auto& [name, value] : updates) params.set(name, std::move(value));
}

// ---------------------------------------------------------------------------
// Inputs and evaluation

template <std::floating_point T>
std::vector<SampleInput<T>> split_inputs(const DatasetSplit& split) {
    std::vector<SampleInput<T>> out;
    out.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i)
        out.push_back({split.tokens_of(i), split.audio_of<T>(i), split.vision_of<T>(i)});
    return out;
}

template <std::floating_point T>
std::vector<double> predict(const DashFusionModel<T>& model, const std::vector<SampleInput<T>>& inputs) {
    const ParamView<T> view(model.parameters());
    std::vector<double> out;
    out.reserve(inputs.size());
    for (const auto& s : inputs) out.push_back(static_cast<double>(model.forward(view, s).prediction.item()));
    return out;
}

template <std::floating_point T>
MetricsReport evaluate_split(const DashFusionModel<T>& model, const DatasetSplit& split, double label_scale) {
    const auto preds = predict(model, split_inputs<T>(split));
    const auto labels = split.labels_as_double();
    return evaluate(preds, labels, MetricsOptions{label_scale, {}, {}});
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double l_pred = 0;      // sample-weighted means over the epoch's batches
    double l_con = 0;
    double l_all = 0;
    double semantic = 0;
    double supervised = 0;
    std::size_t pair_sets = 0;
    std::size_t pairs_skipped = 0;
    MetricsReport valid;
};

template <std::floating_point T>
struct TrainResult {
    ModelConfig model;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_valid_mae = 0;
    ParameterStore<T> best;
    MetricsReport test;  // evaluated with `best`
};

template <std::floating_point T>
struct BatchLoss {
    Tensor<T> all, pred, con;
    double semantic = 0;
    double supervised = 0;
};

/// L_all = L_pred + lambda * L_con on one mini-batch, built through `view`.
template <std::floating_point T>
BatchLoss<T> batch_loss(const DashFusionModel<T>& model, const ParamView<T>& view, std::span<const SampleInput<T>> inputs,
                        std::span<const T> labels, std::span<const std::optional<PairFeatures<T>>> pairs,
                        const TrainConfig& cfg) {
    std::vector<Tensor<T>> preds;
    std::vector<GlobalFeature<T>> globals;
    for (const auto& s : inputs) {
        auto r = model.forward(view, s);
        preds.push_back(r.prediction);
        globals.push_back(std::move(r.globals));
    }
    BatchLoss<T> out;
    out.pred = mse_loss(stack(preds), labels);
    if (!cfg.semantic_align && !cfg.scl) {
        out.con = Tensor<T>::scalar(T(0));
        out.all = out.pred;
        return out;
    }
    const ContrastiveOptions opts{cfg.tau, cfg.semantic_align, cfg.scl, cfg.semantic_weight, cfg.scl_weight};
    const auto con = contrastive_batch_loss<T>(globals, pairs, opts);
    out.con = con.total;
    out.semantic = con.semantic;
    out.supervised = con.supervised;
    out.all = add(out.pred, scale(out.con, static_cast<T>(cfg.lambda)));
    return out;
}

namespace detail {

inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = derive_rng(seed, (1ULL << 63) | epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    return order;
}

template <std::floating_point T>
SimilarityIndex bank_index(const std::vector<GlobalFeature<T>>& bank, std::span<const double> labels, double scale,
                           double band) {
    const std::size_t n = bank.size();
    const std::size_t width = bank.front().text.size();
    std::vector<double> flat;
    flat.reserve(n * width);
    for (const auto& g : bank)
        for (T x : g.text.values()) flat.push_back(static_cast<double>(x));
    return build_similarity_index(Tensor<double>::matrix(n, width, std::move(flat)), labels, scale, band);
}

}  // namespace detail

template <std::floating_point T>
TrainResult<T> train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    const double label_scale = ds.config.label_scale;
    if (ds.train.size() < 2 || ds.valid.size() == 0) throw std::invalid_argument("train: dataset too small");
    DashFusionModel<T> model(fit_to_data(model_cfg, ds.train, ds.config.vocab_size), cfg.seed);
    TrainResult<T> result;
    result.model = model.config();
    result.best = model.parameters();
    result.best_valid_mae = std::numeric_limits<double>::infinity();

    const auto inputs = split_inputs<T>(ds.train);
    const auto valid_inputs = split_inputs<T>(ds.valid);
    const auto train_labels = ds.train.labels_as_double();
    const auto valid_labels = ds.valid.labels_as_double();
    const std::size_t n = inputs.size();
    AdamState adam;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch;

        std::vector<GlobalFeature<T>> bank;
        std::optional<SimilarityIndex> index;
        if (cfg.scl) {
            const ParamView<T> frozen(model.parameters());
            bank.reserve(n);
            for (const auto& s : inputs) bank.push_back(model.global_features(frozen, s).detach());
            index = detail::bank_index(bank, train_labels, label_scale, cfg.neutral_band);
        }

        const auto order = detail::shuffled_order(n, cfg.seed, epoch);
        for (std::size_t start = 0, batch = 1; start < n; start += cfg.batch_size, ++batch) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            std::vector<SampleInput<T>> bx;
            std::vector<T> by;
            std::vector<std::optional<PairFeatures<T>>> pairs;
            for (std::size_t r = start; r < stop; ++r) {
                const std::size_t i = order[r];
                bx.push_back(inputs[i]);
                by.push_back(static_cast<T>(train_labels[i]));
                if (!index) continue;
                Rng rng = derive_rng(cfg.seed, (1ULL << 62) | (static_cast<std::uint64_t>(epoch) << 32) | i);
                const auto sampled = sample_pairs(*index, i, rng, cfg.pair_quantile);
                ++log.pair_sets;
                if (!sampled.pairs) {
                    ++log.pairs_skipped;
                    pairs.emplace_back();
                    continue;
                }
                PairFeatures<T> pf;
                for (std::size_t k = 0; k < 2; ++k) pf.positives[k] = bank[sampled.pairs->positives[k]];
                for (std::size_t k = 0; k < 4; ++k) pf.negatives[k] = bank[sampled.pairs->negatives[k]];
                pairs.push_back(std::move(pf));
            }

            const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
            Tape<T> tape;
            const ParamView<T> view(model.parameters(), &tape);
            BatchLoss<T> loss;
            try {
                loss = batch_loss<T>(model, view, bx, by, pairs, cfg);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at " + where + " in the forward pass: " + e.what());
            }
            const double l_pred = static_cast<double>(loss.pred.item());
            const double l_con = static_cast<double>(loss.con.item());
            const double l_all = static_cast<double>(loss.all.item());
            for (const auto& [term, value] : {std::pair{"L_pred", l_pred}, {"L_con", l_con}, {"L_all", l_all}}) {
                if (!std::isfinite(value)) {
                    throw NumericError("non-finite " + std::string(term) + " (" + std::to_string(value) + ") at " + where);
                }
            }
            auto grads = tape.backward(loss.all);
            for (const auto& p : model.parameters())
                if (p.trainable && !grads.contains(p.name)) grads.emplace(p.name, Tensor<T>::zeros(p.value.shape()));
            adam_step(model.parameters(), grads, adam, cfg);

            const double w = static_cast<double>(stop - start);
            log.l_pred += w * l_pred;
            log.l_con += w * l_con;
            log.l_all += w * l_all;
            log.semantic += w * loss.semantic;
            log.supervised += w * loss.supervised;
        }
        const double dn = static_cast<double>(n);
        log.l_pred /= dn;
        log.l_con /= dn;
        log.l_all /= dn;
        log.semantic /= dn;
        log.supervised /= dn;
        log.valid = evaluate(predict(model, valid_inputs), valid_labels, MetricsOptions{label_scale, {}, {}});
        if (log.valid.mae < result.best_valid_mae) {
            result.best_valid_mae = log.valid.mae;
            result.best_epoch = epoch;
            result.best = model.parameters();
        }
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    DashFusionModel<T> best(result.model, cfg.seed);
    best.parameters() = result.best;
    result.test = evaluate_split(best, ds.test, label_scale);
    return result;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationPlan {
    bool switches = true;
    bool variants = true;
    bool sweep = true;
    std::vector<std::size_t> sweep_tokens{4, 8, 16, 32, 64};
    std::vector<std::uint64_t> seeds{0};
};

struct AblationRow {
    std::string name;
    std::string group;  // "switch", "variant" or "sweep"
    ModelConfig model;
    TrainConfig train;
    std::optional<std::string> skipped;
    std::vector<std::uint64_t> seeds;
    std::vector<MetricsReport> per_seed;  // test split, best-valid checkpoint

    MetricsReport mean() const;
};

/// Field-wise mean; corr averages the seeds where it is defined.
inline MetricsReport mean_metrics(const std::vector<MetricsReport>& rs) {
    MetricsReport m;
    if (rs.empty()) return m;
    double corr = 0;
    std::size_t corr_n = 0;
    for (const auto& r : rs) {
        m.count += r.count;
        m.np_count += r.np_count;
        m.acc2_nn += r.acc2_nn;
        m.acc2_np += r.acc2_np;
        m.f1_nn += r.f1_nn;
        m.f1_np += r.f1_np;
        m.acc3 += r.acc3;
        m.acc5 += r.acc5;
        m.acc7 += r.acc7;
        m.mae += r.mae;
        if (r.corr) {
            corr += *r.corr;
            ++corr_n;
        }
    }
    const double k = static_cast<double>(rs.size());
    m.count = rs.front().count;
    m.np_count = rs.front().np_count;
    m.acc2_nn /= k;
    m.acc2_np /= k;
    m.f1_nn /= k;
    m.f1_np /= k;
    m.acc3 /= k;
    m.acc5 /= k;
    m.acc7 /= k;
    m.mae /= k;
    if (corr_n) m.corr = corr / static_cast<double>(corr_n);
    return m;
}

inline MetricsReport AblationRow::mean() const { return mean_metrics(per_seed); }

/// Configurations for every requested row; invalid ones carry a skip reason.
inline std::vector<AblationRow> ablation_rows(const ModelConfig& base, const TrainConfig& train_cfg, const AblationPlan& plan) {
    std::vector<AblationRow> rows;
    auto push = [&](std::string name, std::string group, ModelConfig m, TrainConfig t) {
        AblationRow row{std::move(name), std::move(group), m, t, std::nullopt, plan.seeds, {}};
        try {
            m.validate();
            t.validate();
        } catch (const ConfigError& e) {
            row.skipped = e.what();
        }
        rows.push_back(std::move(row));
    };
    if (plan.switches) {
        push("full", "switch", base, train_cfg);
        {
            auto m = base;
            auto t = train_cfg;
            m.random_bottleneck_seed = true;
            m.temporal_align = false;
            t.semantic_align = false;
            push("w/o dual-stream alignment", "switch", m, t);
        }
        {
            auto m = base;
            m.temporal_align = false;
            push("w/o temporal alignment", "switch", m, train_cfg);
        }
        {
            auto t = train_cfg;
            t.semantic_align = false;
            push("w/o semantic alignment", "switch", base, t);
        }
        {
            auto t = train_cfg;
            t.scl = false;
            push("w/o SCL", "switch", base, t);
        }
        {
            auto m = base;
            m.hbf = false;
            push("w/o HBF", "switch", m, train_cfg);
        }
    }
    if (plan.variants) {
        for (auto v : kFusionVariants) {
            auto m = base;
            m.fusion = v;
            push("fusion=" + std::string(fusion_name(v)), "variant", m, train_cfg);
        }
    }
    if (plan.sweep) {
        for (auto p : plan.sweep_tokens) {
            auto m = base;
            m.bottleneck_tokens = p;
            push("p=" + std::to_string(p), "sweep", m, train_cfg);
        }
    }
    return rows;
}

/// Trains every runnable row once per seed (the seed replaces train.seed).
/// Rows whose effective configuration matches an earlier row reuse its results.
template <std::floating_point T>
std::vector<AblationRow> run_ablation(const Dataset& ds, const ModelConfig& base, const TrainConfig& train_cfg,
                                      const AblationPlan& plan,
                                      const std::function<void(const AblationRow&)>& on_row = {}) {
    auto rows = ablation_rows(base, train_cfg, plan);
    std::map<std::string, std::vector<MetricsReport>> done;
    for (auto& row : rows) {
        if (!row.skipped) {
            auto key_train = row.train;
            key_train.seed = 0;
            const std::string key = nlohmann::json{{"model", row.model}, {"train", key_train}}.dump();
            if (const auto it = done.find(key); it != done.end()) {
                row.per_seed = it->second;
            } else {
                for (auto seed : row.seeds) {
                    auto t = row.train;
                    t.seed = seed;
                    row.per_seed.push_back(train<T>(ds, row.model, t).test);
                }
                done.emplace(key, row.per_seed);
            }
        }
        if (on_row) on_row(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Gradient check of the full objective

struct GradCheckSetup {
    std::size_t batch = 4;
    std::size_t pool = 16;  // samples available to the pair sampler
    std::size_t coordinates = 20;
    std::uint64_t seed = 0;
    double step = 1e-5;
};

/// Autodiff vs central differences on random parameter coordinates of
/// L_pred + lambda * L_con for one mini-batch. Pair sets are chosen once from
/// the initial features; their features are then recomputed through the
/// parameters like every other term.
inline GradCheckReport gradcheck_objective(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                           const GradCheckSetup& setup) {
    SynthConfig sc;
    sc.n_samples = std::max(setup.pool, setup.batch);
    sc.text_len = model_cfg.text_len;
    sc.audio_len = model_cfg.audio_len;
    sc.vision_len = model_cfg.vision_len;
    sc.audio_dim = model_cfg.audio_dim;
    sc.vision_dim = model_cfg.vision_dim;
    sc.vocab_size = model_cfg.vocab_size;
    sc.signal_dims = std::min<std::size_t>(sc.signal_dims, std::min(sc.audio_dim, sc.vision_dim));
    sc.seed = setup.seed;
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < sc.n_samples; ++i) samples.push_back(generate_indexed_sample(sc, i));

    const DashFusionModel<double> model(model_cfg, setup.seed);
    std::vector<SampleInput<double>> inputs;
    std::vector<double> labels;
    for (const auto& s : samples) {
        inputs.push_back({s.tokens, s.audio, s.vision});
        labels.push_back(s.label);
    }

    std::vector<std::optional<PairSet>> pair_sets(setup.batch);
    if (train_cfg.scl) {
        const ParamView<double> frozen(model.parameters());
        std::vector<GlobalFeature<double>> bank;
        for (const auto& in : inputs) bank.push_back(model.global_features(frozen, in));
        const auto index = detail::bank_index(bank, labels, sc.label_scale, train_cfg.neutral_band);
        for (std::size_t i = 0; i < setup.batch; ++i) {
            Rng rng = derive_rng(setup.seed, 0x70616972ULL + i);
            pair_sets[i] = sample_pairs(index, i, rng, train_cfg.pair_quantile).pairs;
        }
    }

    const std::span<const SampleInput<double>> batch_inputs(inputs.data(), setup.batch);
    const std::span<const double> batch_labels(labels.data(), setup.batch);
    const std::function<Tensor<double>(const ParamView<double>&)> loss = [&](const ParamView<double>& view) {
        std::vector<std::optional<PairFeatures<double>>> pairs;
        if (train_cfg.scl) {
            for (const auto& ps : pair_sets) {
                if (!ps) {
                    pairs.emplace_back();
                    continue;
                }
                PairFeatures<double> pf;
                for (std::size_t k = 0; k < 2; ++k) pf.positives[k] = model.global_features(view, inputs[ps->positives[k]]);
                for (std::size_t k = 0; k < 4; ++k) pf.negatives[k] = model.global_features(view, inputs[ps->negatives[k]]);
                pairs.push_back(std::move(pf));
            }
        }
        return batch_loss<double>(model, view, batch_inputs, batch_labels, pairs, train_cfg).all;
    };
    Rng rng = derive_rng(setup.seed, 0x67726164ULL);
    const auto coords = random_coordinates(model.parameters(), setup.coordinates, rng);
    return grad_check_params<double>(model.parameters(), loss, coords, setup.step);
}

}  // namespace dashfusion
