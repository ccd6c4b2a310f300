#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "dashfusion/checkpoint.hpp"
#include "dashfusion/config.hpp"
#include "dashfusion/data.hpp"
#include "dashfusion/madds.hpp"
#include "dashfusion/report.hpp"
#include "dashfusion/train.hpp"

namespace dashfusion {
namespace {

namespace fs = std::filesystem;

struct Overrides {
    std::string config;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string split = "test";
    std::string fusion;
    std::string rows = "switch,variant,sweep";
    std::uint64_t seed = 0;
    std::size_t layers = 0, bottleneck_tokens = 0, batch_size = 0, epochs = 0, seeds = 1, coords = 20, runs = 30;
    double lambda = 0, tau = 0, lr = 0;
    bool no_temporal = false, no_semantic = false, no_scl = false, no_hbf = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--fusion", o.fusion, "fusion variant")
        ->check(CLI::IsMember({"concat", "concat-sa", "ca", "bf", "hbf"}));
    cmd->add_option("--layers", o.layers, "fusion layers")->check(CLI::PositiveNumber);
    cmd->add_option("--bottleneck-tokens", o.bottleneck_tokens, "initial bottleneck tokens")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--lambda", o.lambda, "contrastive loss weight")->check(CLI::NonNegativeNumber);
    cmd->add_option("--tau", o.tau, "contrastive temperature")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", o.lr, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--batch-size", o.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", o.epochs, "training epochs")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-temporal", o.no_temporal, "disable temporal alignment");
    cmd->add_flag("--no-semantic", o.no_semantic, "disable semantic alignment");
    cmd->add_flag("--no-scl", o.no_scl, "disable supervised contrastive learning");
    cmd->add_flag("--no-hbf", o.no_hbf, "predict without the bottleneck fusion stack");
}

RunConfig resolve(const Overrides& o, const CLI::App* cmd) {
    auto given = [cmd](const char* flag) { return cmd->get_option(flag)->count() > 0; };
    RunConfig rc;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(o.config + ": " + e.what());
        }
        rc = parse_run_config(j);
        if (rc.data && fs::path(*rc.data).is_relative()) rc.data = (fs::path(o.config).parent_path() / *rc.data).string();
    }
    if (!o.data.empty()) rc.data = o.data;
    if (given("--seed")) {
        rc.train.seed = o.seed;
        rc.synth.seed = o.seed;
    }
    if (given("--fusion")) rc.model.fusion = parse_fusion(o.fusion);
    if (given("--layers")) rc.model.fusion_layers = o.layers;
    if (given("--bottleneck-tokens")) rc.model.bottleneck_tokens = o.bottleneck_tokens;
    if (given("--lambda")) rc.train.lambda = o.lambda;
    if (given("--tau")) rc.train.tau = o.tau;
    if (given("--lr")) rc.train.lr = o.lr;
    if (given("--batch-size")) rc.train.batch_size = o.batch_size;
    if (given("--epochs")) rc.train.epochs = o.epochs;
    if (o.no_temporal) rc.model.temporal_align = false;
    if (o.no_semantic) rc.train.semantic_align = false;
    if (o.no_scl) rc.train.scl = false;
    if (o.no_hbf) rc.model.hbf = false;
    rc.synth.validate();
    rc.train.validate();
    return rc;
}

/// Report lines to `out`, mirrored into <dir>/reports.jsonl when a directory is given.
class Reporter {
public:
    Reporter(std::ostream& out, const std::string& dir) : out_(out) {
        if (dir.empty()) return;
        fs::create_directories(dir);
        file_.open(fs::path(dir) / "reports.jsonl", std::ios::trunc);
        if (!file_) throw FormatError("cannot write " + (fs::path(dir) / "reports.jsonl").string());
    }
    void emit(const nlohmann::json& j) {
        const auto line = j.dump();
        out_ << line << '\n' << std::flush;
        if (file_.is_open()) file_ << line << '\n' << std::flush;
    }

private:
    std::ostream& out_;
    std::ofstream file_;
};

Dataset dataset_for(const RunConfig& rc, std::ostream& err) {
    if (rc.data) return load_dataset(*rc.data);
    err << "no --data given; generating " << rc.synth.n_samples << " samples with seed " << rc.synth.seed << "\n";
    return generate_dataset(rc.synth);
}

int run_gen(const CLI::App* cmd, const Overrides& o, std::ostream& err) {
    if (o.out.empty()) throw ConfigError("gen needs --out");
    const auto rc = resolve(o, cmd);
    const auto ds = generate_dataset(rc.synth);
    save_dataset(ds, o.out);
    err << "wrote " << ds.train.size() << "/" << ds.valid.size() << "/" << ds.test.size() << " samples to " << o.out << "\n";
    return 0;
}

int run_train(const CLI::App* cmd, const Overrides& o, std::ostream& out, std::ostream& err) {
    const auto rc = resolve(o, cmd);
    const auto ds = dataset_for(rc, err);
    Reporter rep(out, o.out);
    const auto result = train<float>(ds, rc.model, rc.train, [&](const EpochLog& e) { rep.emit(losslog_report(e)); });
    if (!o.out.empty()) {
        save_checkpoint(result.best, result.model, fs::path(o.out) / "checkpoint",
                        {{"best_epoch", result.best_epoch}, {"best_valid_mae", result.best_valid_mae}, {"train", rc.train}});
    }
    auto j = metrics_report(result.test, "test");
    j["best_epoch"] = result.best_epoch;
    rep.emit(j);
    return 0;
}

int run_eval(const CLI::App* cmd, const Overrides& o, std::ostream& out, std::ostream& err) {
    if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    const auto rc = resolve(o, cmd);
    const auto ds = dataset_for(rc, err);
    DashFusionModel<float> model(read_checkpoint_config(o.checkpoint));
    load_checkpoint(model.parameters(), o.checkpoint);
    Reporter rep(out, o.out);
    rep.emit(metrics_report(evaluate_split(model, ds.split(o.split), ds.config.label_scale), o.split));
    return 0;
}

int run_ablate(const CLI::App* cmd, const Overrides& o, std::ostream& out, std::ostream& err) {
    const auto rc = resolve(o, cmd);
    const auto ds = dataset_for(rc, err);
    AblationPlan plan;
    plan.switches = plan.variants = plan.sweep = false;
    std::stringstream groups(o.rows);
    for (std::string g; std::getline(groups, g, ',');) {
        if (g == "switch") plan.switches = true;
        else if (g == "variant") plan.variants = true;
        else if (g == "sweep") plan.sweep = true;
        else throw ConfigError("--rows: unknown group '" + g + "' (expected switch, variant, sweep)");
    }
    plan.seeds.clear();
    for (std::size_t s = 0; s < o.seeds; ++s) plan.seeds.push_back(rc.train.seed + s);
    Reporter rep(out, o.out);
    run_ablation<float>(ds, fit_to_data(rc.model, ds.train, ds.config.vocab_size), rc.train, plan,
                        [&](const AblationRow& row) { rep.emit(ablation_report(row)); });
    return 0;
}

int run_madds(const CLI::App* cmd, const Overrides& o, std::ostream& out) {
    const auto rc = resolve(o, cmd);
    Reporter rep(out, o.out);
    std::vector<FusionVariant> variants;
    if (cmd->get_option("--fusion")->count() > 0) {
        variants.push_back(rc.model.fusion);
    } else {
        variants.assign(kFusionVariants.begin(), kFusionVariants.end());
    }
    for (auto v : variants) {
        auto cfg = rc.model;
        cfg.fusion = v;
        rep.emit(madds_report(count_madds(cfg, rc.train.seed, o.runs), cfg));
    }
    return 0;
}

int run_gradcheck(const CLI::App* cmd, const Overrides& o, std::ostream& out) {
    const auto rc = resolve(o, cmd);
    GradCheckSetup setup;
    setup.coordinates = o.coords;
    setup.seed = rc.train.seed;
    Reporter rep(out, o.out);
    const double tolerance = 1e-4;
    const auto report = gradcheck_objective(rc.model, rc.train, setup);
    rep.emit(gradcheck_report(report, tolerance));
    return report.passed(tolerance) ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"DashFusion: multimodal sentiment model, synthetic data, training and cost reports", "dashfusion"};
    app.require_subcommand(1, 1);
    Overrides o;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset under --out");
    add_common(gen, o);

    auto* train_cmd = app.add_subcommand("train", "train a model; losslog lines per epoch, test metrics at the end");
    add_common(train_cmd, o);
    train_cmd->add_option("--data", o.data, "dataset directory")->check(CLI::ExistingDirectory);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    add_common(eval, o);
    eval->add_option("--data", o.data, "dataset directory")->check(CLI::ExistingDirectory);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->check(CLI::ExistingDirectory);
    eval->add_option("--split", o.split, "split to evaluate")->check(CLI::IsMember({"train", "valid", "test"}));

    auto* ablate = app.add_subcommand("ablate", "component switches, fusion variants and the bottleneck-size sweep");
    add_common(ablate, o);
    ablate->add_option("--data", o.data, "dataset directory")->check(CLI::ExistingDirectory);
    ablate->add_option("--seeds", o.seeds, "seeds per row, counted up from --seed")->check(CLI::PositiveNumber);
    ablate->add_option("--rows", o.rows, "comma-separated groups: switch, variant, sweep");

    auto* madds = app.add_subcommand("madds", "fusion-stage multiply-adds and wall-clock time");
    add_common(madds, o);
    madds->add_option("--runs", o.runs, "timed runs after 5 warmups")->check(CLI::PositiveNumber);

    auto* gradcheck = app.add_subcommand("gradcheck", "autodiff vs finite differences on the full loss (64-bit)");
    add_common(gradcheck, o);
    gradcheck->add_option("--coords", o.coords, "random parameter coordinates")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return 2;
    }

    try {
        if (gen->parsed()) return run_gen(gen, o, err);
        if (train_cmd->parsed()) return run_train(train_cmd, o, out, err);
        if (eval->parsed()) return run_eval(eval, o, out, err);
        if (ablate->parsed()) return run_ablate(ablate, o, out, err);
        if (madds->parsed()) return run_madds(madds, o, out);
        if (gradcheck->parsed()) return run_gradcheck(gradcheck, o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace dashfusion
