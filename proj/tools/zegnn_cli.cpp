// zegnn: batch frontend for data generation, training, cross-validation,
// hyperparameter search, diagnostics and report assembly.

#include "zegnn/diagnostics.hpp"
#include "zegnn/error.hpp"
#include "zegnn/evaluation.hpp"
#include "zegnn/synthetic_data.hpp"
#include "zegnn/training.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef ZEGNN_VERSION
#define ZEGNN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zegnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct DataOptions {
    std::string scenario = "nonlinear";
    int side = 50;
    std::string data;
    std::string schema;
    std::string truth;
};

struct ModelOptions {
    int k = 8;
    int regimes = 3;
    double lambda_sparse = 0.001;
    double lambda_mag = 0.001;
    int epochs = 800;
    int patience = 60;
    double lr = 0.005;
    int nn_epochs = 600;
};

struct Options {
    std::uint64_t seed = 1;
    std::string out;
    int threads = 1;
    DataOptions data;
    ModelOptions model;
    std::string kind = "zegnn";
    std::string protocol = "spatial";
    int folds = 5;
    int blocks = 5;
    bool no_in_sample = false;
    std::string grid;
    std::string checkpoint;
    double delta = 0.1;
    std::vector<std::string> reports;
};

// Output files of one run, flushed together with the manifest.
class RunWriter {
public:
    RunWriter(std::string command, const std::string& out) : command_(std::move(command)), dir_(out) {
        if (dir_.empty()) throw ParameterError("--out is required");
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_)) throw ParameterError("cannot create output directory '" + out + "'");
    }

    void add(const std::string& name, std::string contents) { files_[name] = std::move(contents); }
    void input(const std::string& role, const std::string& contents) { inputs_[role] = config_hash(json(contents)); }

    void commit(const json& config, std::uint64_t seed, const std::vector<std::string>& argv) {
        json outputs = json::object();
        for (const auto& [name, body] : files_) {
            write_file_atomic((dir_ / name).string(), body);
            outputs[name] = config_hash(json(body));
        }
        const json manifest = {
            {"format", "zegnn-manifest"},
            {"version", 1},
            {"command", command_},
            {"argv", argv},
            {"config", config},
            {"config_hash", config_hash(config)},
            {"seed", seed},
            {"inputs", inputs_},
            {"outputs", outputs},
            {"versions",
             {{"zegnn", ZEGNN_VERSION},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__}}},
        };
        write_file_atomic((dir_ / "manifest.json").string(), manifest.dump(2) + "\n");
    }

private:
    std::string command_;
    fs::path dir_;
    std::map<std::string, std::string> files_;
    json inputs_ = json::object();
};

struct LoadedData {
    SpatialDataset data;
    RoleSchema schema;
    std::optional<Scenario> scenario;
};

LoadedData load_data(const DataOptions& o, std::uint64_t seed, RunWriter& run) {
    LoadedData r;
    if (!o.data.empty()) {
        if (o.schema.empty()) throw SchemaError("--data requires --schema");
        r.schema = load_schema(o.schema);
        const std::string csv = read_file(o.data);
        r.data = parse_dataset(parse_csv(csv), r.schema);
        run.input("data", csv);
        run.input("schema", format_schema(r.schema));
        if (!o.truth.empty()) {
            const std::string truth = read_file(o.truth);
            attach_truth(r.data, json::parse(truth));
            run.input("truth", truth);
        }
        return r;
    }
    ScenarioSpec spec;
    spec.kind = parse_scenario_kind(o.scenario);
    spec.lattice_side = o.side;
    spec.seed = seed;
    r.scenario = generate_scenario(spec);
    r.data = r.scenario->data;
    r.schema = r.scenario->schema;
    run.input("data", format_dataset_csv(r.data, r.schema));
    return r;
}

json data_config(const DataOptions& o) {
    if (!o.data.empty()) return {{"data", o.data}, {"schema", o.schema}, {"truth", o.truth}};
    return {{"scenario", o.scenario}, {"side", o.side}};
}

json model_config(const ModelOptions& m) {
    return {{"k", m.k},
            {"K_upper", m.regimes},
            {"lambda_sparse", m.lambda_sparse},
            {"lambda_mag", m.lambda_mag},
            {"epochs", m.epochs},
            {"patience", m.patience},
            {"lr", m.lr},
            {"nn_epochs", m.nn_epochs}};
}

HyperParams hyper_of(const ModelOptions& m) { return {m.k, m.regimes, m.lambda_sparse, m.lambda_mag}; }

CvOptions cv_options(const Options& o) {
    CvOptions c;
    c.train.max_epochs = o.model.epochs;
    c.train.patience = o.model.patience;
    c.train.lr = o.model.lr;
    c.neural.epochs = o.model.nn_epochs;
    c.folds = o.folds;
    c.grid = o.blocks;
    c.in_sample = !o.no_in_sample;
    c.threads = o.threads;
    return c;
}

void cmd_generate(const Options& o, const std::vector<std::string>& argv) {
    RunWriter run("generate", o.out);
    ScenarioSpec spec;
    spec.kind = parse_scenario_kind(o.data.scenario);
    spec.lattice_side = o.data.side;
    spec.seed = o.seed;
    const Scenario sc = generate_scenario(spec);
    run.add("dataset.csv", format_dataset_csv(sc.data, sc.schema));
    run.add("schema.txt", format_schema(sc.schema));
    run.add("truth.json", scenario_truth_json(sc).dump() + "\n");
    run.commit({{"scenario", to_string(spec.kind)}, {"spec", spec.to_json()}}, o.seed, argv);
}

void cmd_train(const Options& o, const std::vector<std::string>& argv) {
    RunWriter run("train", o.out);
    const LoadedData d = load_data(o.data, o.seed, run);
    const SpatialGraph graph = build_knn_graph(d.data.coords, o.model.k);
    ModelConfig mc;
    mc.p_burden = d.data.p_burden();
    mc.p_capacity = d.data.p_capacity();
    mc.regimes = o.model.regimes;
    TrainConfig tc;
    tc.max_epochs = o.model.epochs;
    tc.patience = o.model.patience;
    tc.lr = o.model.lr;
    tc.lambda_sparse = o.model.lambda_sparse;
    tc.lambda_mag = o.model.lambda_mag;
    tc.seed = o.seed;
    auto [fitted, report] = fit(d.data, graph, mc, tc);
    fitted.graph_k = o.model.k;
    const Vector yhat = predict(fitted, d.data, graph);

    std::ostringstream pred;
    pred << "node_id,y,yhat\n";
    for (int i = 0; i < d.data.n(); ++i) {
        pred << i << ',' << format_double(d.data.y(i)) << ',' << format_double(yhat(i)) << '\n';
    }
    run.add("checkpoint.json", fitted_to_json(fitted).dump() + "\n");
    run.add("training_trace.csv", report.trace_csv());
    run.add("predictions.csv", pred.str());
    const json summary = {{"best_epoch", report.best_epoch},
                          {"epochs_run", report.epochs_run},
                          {"best_val_loss", report.best_val_loss},
                          {"r2_in_sample", r2_score(d.data.y, yhat)},
                          {"rmse_in_sample", rmse(d.data.y, yhat)}};
    run.add("train_summary.json", summary.dump(2) + "\n");
    run.commit({{"data", data_config(o.data)}, {"model", model_config(o.model)}, {"train", tc.to_json()}}, o.seed,
               argv);
}

void cmd_cv(const Options& o, const std::vector<std::string>& argv) {
    RunWriter run("cv", o.out);
    const LoadedData d = load_data(o.data, o.seed, run);
    const ModelKind kind = parse_model_kind(o.kind);
    const Protocol protocol = parse_protocol(o.protocol);
    const CvReport report = run_cv(kind, d.data, protocol, hyper_of(o.model), o.seed, cv_options(o));
    std::ostringstream folds;
    folds << "node_id,fold\n";
    for (size_t i = 0; i < report.fold_id.size(); ++i) folds << i << ',' << report.fold_id[i] << '\n';
    run.add("cv_report.json", report.to_json().dump(2) + "\n");
    run.add("cv_folds.csv", report.folds_csv());
    run.add("fold_assignment.csv", folds.str());
    run.commit({{"data", data_config(o.data)},
                {"model_kind", to_string(kind)},
                {"protocol", to_string(protocol)},
                {"model", model_config(o.model)},
                {"folds", o.folds},
                {"blocks", o.blocks},
                {"in_sample", !o.no_in_sample},
                {"fold_assignment_hash", config_hash(json(report.fold_id))}},
               o.seed, argv);
}

void cmd_search(const Options& o, const std::vector<std::string>& argv) {
    RunWriter run("search", o.out);
    const LoadedData d = load_data(o.data, o.seed, run);
    SearchGrid grid;
    if (!o.grid.empty()) {
        const std::string text = read_file(o.grid);
        json gj;
        try {
            gj = json::parse(text);
        } catch (const json::exception& e) {
            throw SchemaError(std::string("grid file: ") + e.what());
        }
        grid = SearchGrid::from_json(gj);
        run.input("grid", text);
    }
    grid.validate();
    CvOptions opts = cv_options(o);
    const SearchResult result = hyper_search(d.data, grid, o.seed, opts);
    run.add("search_table.csv", result.table_csv());
    run.add("search.json", result.to_json().dump(2) + "\n");
    run.commit({{"data", data_config(o.data)}, {"grid", grid.to_json()}, {"model", model_config(o.model)}}, o.seed,
               argv);
}

void cmd_diagnose(const Options& o, const std::vector<std::string>& argv) {
    RunWriter run("diagnose", o.out);
    if (o.checkpoint.empty()) throw ParameterError("--checkpoint is required");
    const std::string ck = read_file(o.checkpoint);
    json cj;
    try {
        cj = json::parse(ck);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    }
    const FittedZegnn fitted = fitted_from_json(cj);
    run.input("checkpoint", ck);
    LoadedData d = load_data(o.data, o.seed, run);
    if (d.data.p_burden() != fitted.params.config.p_burden || d.data.p_capacity() != fitted.params.config.p_capacity) {
        throw SchemaError("dataset covariate blocks do not match the checkpoint (" +
                          std::to_string(fitted.params.config.p_burden) + " burden, " +
                          std::to_string(fitted.params.config.p_capacity) + " capacity)");
    }
    const int k = fitted.graph_k > 0 ? fitted.graph_k : o.model.k;
    const SpatialGraph graph = build_knn_graph(d.data.coords, k);
    const SensitivityAtlas atlas = sensitivity_fields(fitted, d.data, graph);
    const ForwardOutputs out = predict_outputs(fitted, d.data, graph);
    const FiniteDifferenceResult fd = finite_difference_check(fitted, d.data, graph, atlas, o.delta);

    run.add("atlas.csv", atlas_long_csv(atlas, d.data.coords));
    run.add("summary.csv", summary_csv(full_summary(atlas)));
    run.add("regime_probabilities.csv", regime_probability_csv(out.P));
    run.add("entropy.csv", entropy_csv(out.H_norm, d.data.coords));
    run.add("finite_difference.csv", finite_difference_csv(fd, atlas.names));
    if (d.data.truth) run.add("gradient_matching.csv", gradient_matching_csv(gradient_matching(atlas, d.data.truth)));
    run.commit({{"data", data_config(o.data)}, {"graph_k", k}, {"delta", o.delta}}, o.seed, argv);
}

std::string cell(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return "";
    return format_double(j.at(key).get<double>());
}

void cmd_report(const Options& o, const std::vector<std::string>& argv) {
    RunWriter run("report", o.out);
    if (o.reports.empty()) throw ParameterError("report needs at least one cv_report.json");
    std::ostringstream os;
    os << "model,protocol,seed,folds,mean_r2,se_r2,mean_rmse,se_rmse,r2_in_sample,rmse_in_sample,"
          "residual_morans_i,heldout_morans_i,leaked_nodes\n";
    for (const std::string& path : o.reports) {
        const std::string text = read_file(path);
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw SchemaError(path + ": " + e.what());
        }
        if (j.value("format", "") != "zegnn-cv-report") throw SchemaError(path + ": not a cv report");
        run.input(path, text);
        os << j.at("model").get<std::string>() << ',' << j.at("protocol").get<std::string>() << ','
           << j.at("seed").get<std::uint64_t>() << ',' << j.at("folds").size() << ',' << cell(j, "mean_r2") << ','
           << cell(j, "se_r2") << ',' << cell(j, "mean_rmse") << ',' << cell(j, "se_rmse") << ','
           << cell(j, "r2_in_sample") << ',' << cell(j, "rmse_in_sample") << ',' << cell(j, "residual_morans_i")
           << ',' << cell(j, "heldout_morans_i") << ',' << j.at("leaked_nodes").get<int>() << '\n';
    }
    run.add("comparison.csv", os.str());
    run.commit({{"reports", o.reports}}, o.seed, argv);
}

void add_data_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--scenario", o.data.scenario, "global-linear | local-linear | nonlinear")->capture_default_str();
    cmd->add_option("--side", o.data.side, "lattice side length")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--data", o.data.data, "dataset CSV (instead of a scenario)");
    cmd->add_option("--schema", o.data.schema, "role schema for --data");
    cmd->add_option("--truth", o.data.truth, "truth JSON to attach to --data");
}

void add_model_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--k", o.model.k, "spatial graph neighbours")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--K-upper", o.model.regimes, "regime count")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--lambda-sparse", o.model.lambda_sparse)->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--lambda-mag", o.model.lambda_mag)->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--epochs", o.model.epochs, "ZeGNN epoch cap")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--patience", o.model.patience)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--lr", o.model.lr)->capture_default_str()->check(CLI::PositiveNumber);
}

void add_cv_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--folds", o.folds)->capture_default_str()->check(CLI::Range(2, 1000));
    cmd->add_option("--blocks", o.blocks, "block grid side for spatial folds")->capture_default_str();
    cmd->add_option("--nn-epochs", o.model.nn_epochs, "DNN/GNN epochs")->capture_default_str();
    cmd->add_flag("--no-in-sample", o.no_in_sample, "skip the in-sample refit");
}

int run_cli(const std::vector<std::string>& args);

int cmd_replay(const std::string& manifest_path, const std::string& out) {
    const json m = json::parse(read_file(manifest_path));
    if (m.value("format", "") != "zegnn-manifest") throw SchemaError("not a manifest: " + manifest_path);
    std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
    args.push_back("--out");
    args.push_back(out);
    return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"ZeGNN regime-mixture spatial regression toolkit", "zegnn"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with option values");
    app.set_version_flag("--version", ZEGNN_VERSION);

    Options o;
    o.threads = thread_cap_from_env();
    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", o.seed, "global seed")->capture_default_str();
        cmd->add_option("--out", o.out, "output directory")->required();
        cmd->add_option("--threads", o.threads, "worker cap (default ZEGNN_THREADS)")->check(CLI::PositiveNumber);
    };

    CLI::App* gen = app.add_subcommand("generate", "simulate a synthetic scenario");
    common(gen);
    gen->add_option("--scenario", o.data.scenario)->capture_default_str();
    gen->add_option("--side", o.data.side)->capture_default_str()->check(CLI::PositiveNumber);

    CLI::App* train = app.add_subcommand("train", "fit ZeGNN on all rows and write a checkpoint");
    common(train);
    add_data_options(train, o);
    add_model_options(train, o);

    CLI::App* cv = app.add_subcommand("cv", "cross-validate one model");
    common(cv);
    add_data_options(cv, o);
    add_model_options(cv, o);
    add_cv_options(cv, o);
    cv->add_option("--model", o.kind, "zegnn | ols | dnn | gnn")->capture_default_str();
    cv->add_option("--protocol", o.protocol, "random | spatial | in_sample")->capture_default_str();

    CLI::App* search = app.add_subcommand("search", "spatial-CV grid search with the 1-SE rule");
    common(search);
    add_data_options(search, o);
    add_model_options(search, o);
    add_cv_options(search, o);
    search->add_option("--grid", o.grid, "grid JSON (k, K_upper, lambda_sparse, lambda_mag lists)");

    CLI::App* diag = app.add_subcommand("diagnose", "sensitivity atlas and summaries of a checkpoint");
    common(diag);
    add_data_options(diag, o);
    diag->add_option("--checkpoint", o.checkpoint)->required();
    diag->add_option("--delta", o.delta, "finite-difference step")->capture_default_str()->check(CLI::PositiveNumber);
    diag->add_option("--k", o.model.k, "graph k when the checkpoint has none")->capture_default_str();

    CLI::App* report = app.add_subcommand("report", "merge cv reports into one comparison table");
    common(report);
    report->add_option("reports", o.reports, "cv_report.json files")->required();

    std::string manifest;
    std::string replay_out;
    CLI::App* replay = app.add_subcommand("replay", "re-run a manifest into a new directory");
    replay->add_option("manifest", manifest)->required();
    replay->add_option("--out", replay_out)->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    // argv without --out, for replay
    std::vector<std::string> replay_args;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--out") {
            ++i;
            continue;
        }
        if (args[i].rfind("--out=", 0) == 0) continue;
        replay_args.push_back(args[i]);
    }

    try {
        if (*gen) cmd_generate(o, replay_args);
        if (*train) cmd_train(o, replay_args);
        if (*cv) cmd_cv(o, replay_args);
        if (*search) cmd_search(o, replay_args);
        if (*diag) cmd_diagnose(o, replay_args);
        if (*report) cmd_report(o, replay_args);
        if (*replay) return cmd_replay(manifest, replay_out);
    } catch (const DivergenceError& e) {
        std::cerr << "zegnn: divergence at epoch " << e.epoch() << ": " << e.what() << '\n';
        return kExitDivergence;
    } catch (const Error& e) {
        std::cerr << "zegnn: " << e.what() << '\n';
        return kExitUsage;
    } catch (const json::exception& e) {
        std::cerr << "zegnn: malformed JSON input: " << e.what() << '\n';
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "zegnn: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return run_cli(args);
    } catch (const std::exception& e) {
        std::cerr << "zegnn: " << e.what() << '\n';
        return 1;
    }
}
