#include "support.hpp"

#include "zegnn/baselines.hpp"
#include "zegnn/error.hpp"
#include "zegnn/synthetic_data.hpp"
#include "zegnn/training.hpp"

#include <algorithm>
#include <numeric>

using namespace zegnn;
using namespace zegnn::test;

namespace {

ForwardOutputs uniform_outputs(int n, int K) {
    ForwardOutputs out;
    out.E_reg = random_matrix(n, K, 1);
    out.S_reg = random_matrix(n, K, 2);
    out.T = Vector::Ones(K);
    out.P = Matrix::Constant(n, K, 1.0 / K);
    assemble_mixture(out, 1e-12);
    return out;
}

std::vector<int> all_ids(int n) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

Scenario small_scenario(ScenarioKind kind, int side, std::uint64_t seed) {
    ScenarioSpec spec;
    spec.kind = kind;
    spec.lattice_side = side;
    spec.seed = seed;
    return generate_scenario(spec);
}

ModelConfig model_for(int K) {
    ModelConfig m;
    m.regimes = K;
    return m;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("perfect predictions with zero lambdas give zero loss") {
    ForwardOutputs out = uniform_outputs(10, 3);
    TrainConfig cfg;
    const LossTerms t = loss(out, out.F, all_ids(10), cfg);
    CHECK(t.total == 0.0);
    CHECK(t.mse == 0.0);
}

TEST_CASE("uniform gating sparse penalty closed form") {
    for (int K : {2, 3, 5}) {
        ForwardOutputs out = uniform_outputs(12, K);
        check_forward_invariants(out);
        TrainConfig cfg;
        cfg.lambda_sparse = 1.0;
        const LossTerms t = loss(out, Vector::Zero(12), all_ids(12), cfg);
        CHECK(std::abs(t.sparse + K * std::log(1.0 / K + cfg.eps_occupancy)) <= 1e-9);
    }
    ForwardOutputs out = uniform_outputs(4, 5);
    const LossTerms t = loss(out, Vector::Zero(4), all_ids(4), TrainConfig{});
    CHECK(t.sparse == doctest::Approx(-5.0 * std::log(0.2)).epsilon(1e-7));
}

TEST_CASE("collapsing occupancy blows up the barrier") {
    double prev = 0.0;
    for (double tiny : {1e-2, 1e-4, 1e-6, 1e-8, 0.0}) {
        ForwardOutputs out = uniform_outputs(2, 2);
        out.P << 1.0 - tiny, tiny, 1.0 - tiny, tiny;
        assemble_mixture(out, 1e-12);
        const double s = loss(out, Vector::Zero(2), all_ids(2), TrainConfig{}).sparse;
        CHECK(s > prev);
        prev = s;
    }
    CHECK(prev >= -std::log(1e-8) - 1e-6);
}

TEST_CASE("loss decomposition, restriction to ids and zero-lambda total") {
    ForwardOutputs out = uniform_outputs(20, 3);
    const Vector z = random_matrix(20, 1, 3).col(0);
    const std::vector<int> ids{0, 3, 5, 8, 13};
    TrainConfig cfg;
    cfg.lambda_sparse = 0.37;
    cfg.lambda_mag = 0.011;
    const LossTerms t = loss(out, z, ids, cfg);
    CHECK(t.total - (t.mse + cfg.lambda_sparse * t.sparse + cfg.lambda_mag * t.mag) == 0.0);
    double mse = 0.0, mag = 0.0;
    for (int i : ids) {
        mse += (out.F(i) - z(i)) * (out.F(i) - z(i));
        mag += out.E_reg.row(i).squaredNorm() + out.S_reg.row(i).squaredNorm();
    }
    CHECK(t.mse == doctest::Approx(mse / 5).epsilon(1e-14));
    CHECK(t.mag == doctest::Approx(mag / 5).epsilon(1e-14));
    cfg.lambda_sparse = cfg.lambda_mag = 0.0;
    CHECK(loss(out, z, ids, cfg).total == loss(out, z, ids, cfg).mse);
    CHECK_THROWS_AS(loss(out, z, std::vector<int>{}, cfg), ParameterError);
}

TEST_CASE("total-loss parameter gradients match central differences") {
    Instance inst = make_instance(40, 2, 2, 4, 31);
    ModelConfig mc;
    mc.p_burden = mc.p_capacity = 2;
    mc.regimes = 3;
    mc.hidden = mc.gate_hidden = 16;
    ZegnnParams p = init_params(mc, 31);
    const Vector z = random_matrix(40, 1, 32).col(0);
    const std::vector<int> ids{1, 2, 4, 7, 9, 11, 15, 20, 22, 30, 33, 39};
    TrainConfig cfg;
    cfg.lambda_sparse = 0.05;
    cfg.lambda_mag = 0.02;
    const ForwardPass pass = forward_pass(p, inst.in);
    const Vector g = backward(p, inst.in, pass, loss_sensitivities(pass.out, z, ids, cfg)).params.flatten();
    const Vector theta = p.flatten();
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index t = 0; t < theta.size(); ++t) {
        Vector tp = theta, tm = theta;
        tp(t) += h;
        tm(t) -= h;
        ZegnnParams a = p, b = p;
        a.assign(tp);
        b.assign(tm);
        const double num =
            (loss(forward(a, inst.in), z, ids, cfg).total - loss(forward(b, inst.in), z, ids, cfg).total) / (2 * h);
        worst = std::max(worst, std::abs(num - g(t)) / std::max({std::abs(num), std::abs(g(t)), 1e-3}));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
    Adam adam(3, 0.1);
    Vector theta = Vector::Zero(3);
    Vector grad(3);
    grad << 2.0, -0.5, 0.0;
    adam.step(theta, grad);
    CHECK(theta(0) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(theta(1) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(theta(2) == 0.0);
    CHECK(adam.steps() == 1);
}

TEST_CASE("max_epochs=1 gives one update and traces of length one") {
    const Scenario sc = small_scenario(ScenarioKind::Nonlinear, 10, 2);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 6);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    cfg.patience = 1;
    const auto [fitted, report] = fit(sc.data, g, model_for(3), cfg);
    CHECK(report.epochs_run == 1);
    CHECK(report.train_loss.size() == 1);
    CHECK(report.val_loss.size() == 1);
    CHECK(report.best_epoch == 0);
    CHECK(init_params(fitted.params.config, cfg.seed).flatten() != fitted.params.flatten());
}

TEST_CASE("early stopping restores the best state and is deterministic") {
    const Scenario sc = small_scenario(ScenarioKind::Nonlinear, 14, 3);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 8);
    TrainConfig cfg;
    cfg.max_epochs = 300;
    cfg.patience = 20;
    cfg.lambda_sparse = 0.001;
    cfg.lambda_mag = 0.001;
    cfg.seed = 5;
    const auto [fitted, report] = fit(sc.data, g, model_for(3), cfg);
    REQUIRE(report.best_epoch >= 0);
    CHECK(report.best_epoch < report.epochs_run);
    for (double v : report.val_loss) CHECK(report.best_val_loss <= v);
    CHECK(report.val_loss[report.best_epoch] == report.best_val_loss);
    if (report.epochs_run < cfg.max_epochs) CHECK(report.epochs_run - 1 - report.best_epoch == cfg.patience);

    const ModelInputs in = fitted.scaler.inputs(sc.data, g);
    const ForwardOutputs out = checked_forward(fitted.params, in);
    const Vector z = fitted.scaler.standardize_y(sc.data.y);
    double mse = 0.0;
    for (int i : report.validation_ids) mse += (out.F(i) - z(i)) * (out.F(i) - z(i));
    CHECK(std::abs(mse / report.validation_ids.size() - report.best_val_loss) <= 1e-9);

    std::vector<int> merged = report.validation_ids;
    merged.insert(merged.end(), report.gradient_ids.begin(), report.gradient_ids.end());
    std::sort(merged.begin(), merged.end());
    CHECK(merged == all_ids(sc.data.n()));
    CHECK(report.validation_ids.size() == static_cast<size_t>(std::lround(0.15 * sc.data.n())));

    const auto [again, report2] = fit(sc.data, g, model_for(3), cfg);
    CHECK(fitted_to_json(again).dump() == fitted_to_json(fitted).dump());
    CHECK(report2.trace_csv() == report.trace_csv());
    CHECK(report.trace_csv().rfind("epoch,train_loss,val_loss,mse,sparse,mag\n", 0) == 0);
}

TEST_CASE("GlobalLinear, K=1: training MSE below the OLS training MSE") {
    const Scenario sc = small_scenario(ScenarioKind::GlobalLinear, 20, 4);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 8);
    TrainConfig cfg;
    cfg.val_fraction = 0.0;
    cfg.max_epochs = 800;
    cfg.patience = 800;
    const auto [fitted, report] = fit(sc.data, g, model_for(1), cfg);
    const Vector z = fitted.scaler.standardize_y(sc.data.y);
    const ForwardOutputs out = checked_forward(fitted.params, fitted.scaler.inputs(sc.data, g));
    const double zegnn_mse = (out.F - z).squaredNorm() / z.size();
    const Matrix X = ols_design(fitted.scaler.covariates(sc.data));
    const double ols_mse = (fit_ols(X, z).predict(X) - z).squaredNorm() / z.size();
    CHECK(zegnn_mse < ols_mse);
}

TEST_CASE("prediction destandardizes, shifts with y, stays finite on isolated nodes") {
    const Scenario sc = small_scenario(ScenarioKind::LocalLinear, 10, 6);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 5);
    TrainConfig cfg;
    cfg.max_epochs = 30;
    const auto [fitted, report] = fit(sc.data, g, model_for(2), cfg);
    const ForwardOutputs out = predict_outputs(fitted, sc.data, g);
    const Vector yhat = predict(fitted, sc.data, g);
    CHECK(((yhat - (fitted.scaler.y_mean + fitted.scaler.y_sd * out.F.array()).matrix()).cwiseAbs().maxCoeff()) <=
          1e-12);

    FittedZegnn unit = fitted;
    unit.scaler.y_mean = 0.0;
    unit.scaler.y_sd = 1.0;
    CHECK(predict(unit, sc.data, g) == out.F);

    SpatialDataset shifted = sc.data;
    shifted.y.array() += 3.25;
    const auto [fs, rs] = fit(shifted, g, model_for(2), cfg);
    CHECK(((predict(fs, shifted, g).array() - 3.25) - yhat.array()).abs().maxCoeff() <= 1e-9);

    const std::vector<int> test{0, 1, 2, 10, 11, 12, 20, 21, 22};
    const SpatialGraph sub = training_subgraph(g, test);
    std::vector<int> train_ids;
    for (int i = 0; i < sc.data.n(); ++i) {
        if (std::find(test.begin(), test.end(), i) == test.end()) train_ids.push_back(i);
    }
    const auto [ft, rt] = fit(subset(sc.data, train_ids), sub, model_for(2), cfg);
    const SpatialGraph isolated = edgeless_graph(sc.data.n());
    CHECK(predict(ft, sc.data, isolated).allFinite());
    for (int id : rt.accessed_nodes) CHECK(std::find(test.begin(), test.end(), id) == test.end());
}

TEST_CASE("divergence is reported with its epoch") {
    const Scenario sc = small_scenario(ScenarioKind::Nonlinear, 8, 1);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 4);
    TrainConfig cfg;
    cfg.lr = 1e300;
    cfg.max_epochs = 50;
    try {
        fit(sc.data, g, model_for(2), cfg);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.epoch() >= 1);
    }
}

TEST_CASE("config validation and fitted json round trip") {
    TrainConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = TrainConfig{};
    bad.lambda_mag = -1.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    CHECK(TrainConfig::from_json(TrainConfig{}.to_json()).to_json() == TrainConfig{}.to_json());

    const Scenario sc = small_scenario(ScenarioKind::Nonlinear, 8, 2);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 4);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    const auto [fitted, report] = fit(sc.data, g, model_for(3), cfg);
    const FittedZegnn back = fitted_from_json(fitted_to_json(fitted));
    CHECK(predict(back, sc.data, g) == predict(fitted, sc.data, g));
    CHECK(back.graph_k == 4);
}

}  // TEST_SUITE
