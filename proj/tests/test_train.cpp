#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "dashfusion/checkpoint.hpp"
#include "dashfusion/train.hpp"

using namespace dashfusion;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_synth(std::size_t n = 60) {
    SynthConfig c;
    c.n_samples = n;
    c.text_len = 6;
    c.audio_len = 8;
    c.vision_len = 5;
    c.audio_dim = 4;
    c.vision_dim = 3;
    c.vocab_size = 32;
    c.signal_dims = 2;
    c.seed = 3;
    return c;
}

ModelConfig tiny_model() {
    ModelConfig m;
    m.d = 8;
    m.heads = 2;
    m.fusion_layers = 2;
    m.bottleneck_tokens = 4;
    return m;
}

TrainConfig quick_train(std::size_t epochs = 2) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 8;
    t.lr = 1e-3;
    return t;
}

ParameterStore<double> scalar_store(double value, bool trainable = true) {
    ParameterStore<double> s;
    s.add("w", Tensor<double>::vector({value}), trainable);
    return s;
}

Gradients<double> scalar_grad(double g) {
    Gradients<double> out;
    out.emplace("w", Tensor<double>::vector({g}));
    return out;
}

const Dataset& tiny_dataset() {
    static const Dataset ds = generate_dataset(tiny_synth());
    return ds;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
    auto s = scalar_store(0.7);
    AdamState st;
    TrainConfig cfg;
    cfg.lr = 1e-3;
    adam_step(s, scalar_grad(0.0), st, cfg);
    EXPECT_EQ(s.get("w")[0], 0.7);
    EXPECT_EQ(st.m["w"][0], 0.0);
    EXPECT_EQ(st.v["w"][0], 0.0);

    st.m["w"][0] = 0.5;
    st.v["w"][0] = 0.25;
    adam_step(s, scalar_grad(0.0), st, cfg);
    EXPECT_DOUBLE_EQ(st.m["w"][0], 0.45);
    EXPECT_DOUBLE_EQ(st.v["w"][0], 0.24975);
}

TEST(Adam, FirstStepClosedForm) {
    auto s = scalar_store(0.0);
    AdamState st;
    TrainConfig cfg;
    cfg.lr = 1e-3;
    adam_step(s, scalar_grad(1.0), st, cfg);
    EXPECT_NEAR(s.get("w")[0], -1e-3 / (1 + 1e-8), 1e-18);
    EXPECT_NEAR(s.get("w")[0], -0.001, 1e-10);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, TwoStepsMatchHandUnrolledRecurrence) {
    auto s = scalar_store(0.3);
    AdamState st;
    TrainConfig cfg;
    cfg.lr = 0.01;
    const double g = 0.5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double theta = 0.3, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        adam_step(s, scalar_grad(g), st, cfg);
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        theta -= 0.01 * mh / (std::sqrt(vh) + eps);
    }
    EXPECT_NEAR(s.get("w")[0], theta, 1e-15);
}

TEST(Adam, KeyAndShapeMismatch) {
    auto s = scalar_store(1.0);
    s.add("frozen", Tensor<double>::vector({2.0}), false);
    AdamState st;
    const TrainConfig cfg;
    EXPECT_THROW(adam_step(s, Gradients<double>{}, st, cfg), std::invalid_argument);
    auto extra = scalar_grad(1.0);
    extra.emplace("ghost", Tensor<double>::vector({1.0}));
    EXPECT_THROW(adam_step(s, extra, st, cfg), std::invalid_argument);
    Gradients<double> wrong;
    wrong.emplace("w", Tensor<double>::vector({1.0, 2.0}));
    EXPECT_THROW(adam_step(s, wrong, st, cfg), DimensionError);
    adam_step(s, scalar_grad(1.0), st, cfg);
    EXPECT_EQ(s.get("frozen")[0], 2.0);
    EXPECT_NE(s.get("w")[0], 1.0);
}

TEST(Train, PredictionOnlyObjectiveLogsEqualTerms) {
    auto t = quick_train(2);
    t.lambda = 0;
    t.scl = false;
    t.semantic_align = false;
    const auto r = train<double>(tiny_dataset(), tiny_model(), t);
    ASSERT_EQ(r.log.size(), 2u);
    for (const auto& e : r.log) {
        EXPECT_EQ(e.l_all, e.l_pred);
        EXPECT_EQ(e.l_con, 0.0);
        EXPECT_EQ(e.pair_sets, 0u);
    }
}

TEST(Train, SameSeedGivesBitwiseIdenticalLogs) {
    const auto t = quick_train(2);
    const auto a = train<float>(tiny_dataset(), tiny_model(), t);
    const auto b = train<float>(tiny_dataset(), tiny_model(), t);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].l_pred, b.log[i].l_pred);
        EXPECT_EQ(a.log[i].l_con, b.log[i].l_con);
        EXPECT_EQ(a.log[i].l_all, b.log[i].l_all);
        EXPECT_EQ(a.log[i].valid.mae, b.log[i].valid.mae);
        EXPECT_GT(a.log[i].l_con, 0.0);
        EXPECT_EQ(a.log[i].pair_sets, tiny_dataset().train.size());
    }
    EXPECT_EQ(a.test.mae, b.test.mae);
    auto other = t;
    other.seed = 1;
    EXPECT_NE(train<float>(tiny_dataset(), tiny_model(), other).log[0].l_all, a.log[0].l_all);
}

TEST(Train, LossDecreasesOverFiveEpochs) {
    const auto ds = generate_dataset(tiny_synth(150));
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        auto t = quick_train(5);
        t.seed = seed;
        const auto r = train<float>(ds, tiny_model(), t);
        EXPECT_LT(r.log.back().l_all, r.log.front().l_all) << "seed " << seed;
        EXPECT_LT(r.log.back().l_pred, r.log.front().l_pred) << "seed " << seed;
    }
}

TEST(Train, BestCheckpointDrivesTestMetrics) {
    const auto r = train<double>(tiny_dataset(), tiny_model(), quick_train(3));
    std::size_t argmin = 0;
    for (std::size_t i = 1; i < r.log.size(); ++i)
        if (r.log[i].valid.mae < r.log[argmin].valid.mae) argmin = i;
    EXPECT_EQ(r.best_epoch, argmin + 1);
    EXPECT_EQ(r.best_valid_mae, r.log[argmin].valid.mae);
    DashFusionModel<double> m(r.model, 0);
    m.parameters() = r.best;
    EXPECT_EQ(evaluate_split(m, tiny_dataset().valid, 3.0).mae, r.best_valid_mae);
    EXPECT_EQ(evaluate_split(m, tiny_dataset().test, 3.0).mae, r.test.mae);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
    auto ds = tiny_dataset();
    ds.train.labels[5] = std::numeric_limits<float>::quiet_NaN();
    auto t = quick_train(1);
    t.scl = false;
    try {
        train<double>(ds, tiny_model(), t);
        FAIL() << "expected abort";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("L_pred"), std::string::npos) << msg;
        EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch "), std::string::npos) << msg;
    }
}

TEST(Train, RejectsInvalidConfig) {
    auto t = quick_train(1);
    t.tau = 0;
    EXPECT_THROW(train<double>(tiny_dataset(), tiny_model(), t), ConfigError);
    t = quick_train(0);
    EXPECT_THROW(train<double>(tiny_dataset(), tiny_model(), t), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
    const fs::path dir = fs::temp_directory_path() / "dashfusion_checkpoint_test";
    fs::remove_all(dir);
    auto cfg = tiny_model();
    cfg.text_len = 6;
    const DashFusionModel<float> model(cfg, 4);
    save_checkpoint(model.parameters(), cfg, dir, {{"best_epoch", 3}});
    EXPECT_EQ(nlohmann::json(read_checkpoint_config(dir)), nlohmann::json(cfg));
    DashFusionModel<float> other(cfg, 5);
    load_checkpoint(other.parameters(), dir);
    for (const auto& p : model.parameters()) {
        const auto& q = other.parameters().get(p.name);
        for (std::size_t i = 0; i < q.size(); ++i) ASSERT_EQ(q[i], p.value[i]) << p.name;
    }

    auto smaller = cfg;
    smaller.fusion_layers = 1;
    DashFusionModel<float> mismatched(smaller, 0);
    EXPECT_THROW(load_checkpoint(mismatched.parameters(), dir), FormatError);

    auto bytes = read_bytes(dir / "params.dfts");
    bytes[bytes.size() / 2] ^= 0x10;
    write_bytes(dir / "params.dfts", bytes);
    EXPECT_THROW(load_checkpoint(other.parameters(), dir), ChecksumError);
    fs::remove_all(dir);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
    RunConfig rc;
    rc.model.fusion = FusionVariant::concat_sa;
    rc.model.bottleneck_tokens = 16;
    rc.train.lambda = 0.3;
    rc.train.scl = false;
    rc.synth.n_samples = 77;
    rc.data = "somewhere";
    const auto j = to_json(rc);
    const auto back = parse_run_config(j);
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(back.model.fusion, FusionVariant::concat_sa);
    EXPECT_THROW(parse_run_config(nlohmann::json{{"modle", {}}}), ConfigError);
    EXPECT_THROW(parse_run_config(nlohmann::json{{"train", {{"lamda", 0.1}}}}), ConfigError);
    EXPECT_THROW(parse_run_config(nlohmann::json{{"model", {{"fusion", "mlp"}}}}), ConfigError);
    EXPECT_THROW(parse_run_config(nlohmann::json{{"train", {{"epochs", "many"}}}}), ConfigError);
}

TEST(Ablation, RowSetAndSkips) {
    AblationPlan plan;
    const auto rows = ablation_rows(ModelConfig{}, TrainConfig{}, plan);
    std::vector<std::string> names;
    for (const auto& r : rows) names.push_back(r.name);
    const std::vector<std::string> want{"full",
                                        "w/o dual-stream alignment",
                                        "w/o temporal alignment",
                                        "w/o semantic alignment",
                                        "w/o SCL",
                                        "w/o HBF",
                                        "fusion=concat",
                                        "fusion=concat-sa",
                                        "fusion=ca",
                                        "fusion=bf",
                                        "fusion=hbf",
                                        "p=4",
                                        "p=8",
                                        "p=16",
                                        "p=32",
                                        "p=64"};
    EXPECT_EQ(names, want);
    for (const auto& r : rows) {
        const bool too_wide = r.name == "p=32" || r.name == "p=64";
        EXPECT_EQ(r.skipped.has_value(), too_wide) << r.name;
    }
    const auto& dual = rows[1];
    EXPECT_TRUE(dual.model.random_bottleneck_seed);
    EXPECT_FALSE(dual.model.temporal_align);
    EXPECT_FALSE(dual.train.semantic_align);
    EXPECT_FALSE(rows[5].model.hbf);

    plan.variants = plan.sweep = false;
    EXPECT_EQ(ablation_rows(ModelConfig{}, TrainConfig{}, plan).size(), 6u);
}

TEST(Ablation, RunsRowsWithFiniteMetrics) {
    AblationPlan plan;
    plan.sweep = false;
    plan.seeds = {0, 1};
    std::size_t seen = 0;
    const auto rows = run_ablation<float>(tiny_dataset(), tiny_model(), quick_train(1), plan,
                                          [&](const AblationRow&) { ++seen; });
    EXPECT_EQ(seen, rows.size());
    for (const auto& r : rows) {
        ASSERT_FALSE(r.skipped) << r.name;
        ASSERT_EQ(r.per_seed.size(), 2u) << r.name;
        const auto m = r.mean();
        for (double a : {m.acc2_nn, m.acc2_np, m.acc3, m.acc5, m.acc7, m.f1_nn, m.f1_np}) {
            EXPECT_TRUE(std::isfinite(a));
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
        }
        EXPECT_TRUE(std::isfinite(m.mae));
        EXPECT_GE(m.mae, 0.0);
    }
    // "fusion=hbf" is the full configuration and reuses its runs.
    EXPECT_EQ(rows[0].per_seed[0].mae, rows[10].per_seed[0].mae);
    EXPECT_NE(rows[0].per_seed[0].mae, rows[5].per_seed[0].mae);
}

TEST(GradCheck, FullObjectiveOnTinyModel) {
    ModelConfig m = tiny_model();
    m.vocab_size = 16;
    m.text_len = 6;
    m.audio_len = 5;
    m.vision_len = 4;
    m.audio_dim = 3;
    m.vision_dim = 3;
    TrainConfig t;
    GradCheckSetup setup;
    setup.coordinates = 40;
    const auto r = gradcheck_objective(m, t, setup);
    EXPECT_EQ(r.entries.size(), 40u);
    EXPECT_LT(r.max_relative_error, 1e-4);
}
