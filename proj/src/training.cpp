#include "zegnn/training.hpp"

#include "zegnn/error.hpp"
#include "zegnn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace zegnn {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ParameterError("train: lr must be positive");
    if (max_epochs < 0) throw ParameterError("train: max_epochs must be >= 0");
    if (patience < 1) throw ParameterError("train: patience must be >= 1");
    if (!(lambda_sparse >= 0.0) || !(lambda_mag >= 0.0)) throw ParameterError("train: lambdas must be >= 0");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ParameterError("train: val_fraction must lie in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr", lr},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"lambda_sparse", lambda_sparse},
            {"lambda_mag", lambda_mag},
            {"eps_occupancy", eps_occupancy},
            {"val_fraction", val_fraction},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.lambda_sparse = j.value("lambda_sparse", c.lambda_sparse);
    c.lambda_mag = j.value("lambda_mag", c.lambda_mag);
    c.eps_occupancy = j.value("eps_occupancy", c.eps_occupancy);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    return c;
}

LossTerms loss(const ForwardOutputs& out, const Vector& z, std::span<const int> ids, const TrainConfig& cfg) {
    if (ids.empty()) throw ParameterError("loss: empty id set");
    const double m = static_cast<double>(ids.size());
    const auto K = out.P.cols();
    LossTerms t;
    Vector pbar = Vector::Zero(K);
    for (int i : ids) {
        const double r = out.F(i) - z(i);
        t.mse += r * r;
        pbar += out.P.row(i).transpose();
        t.mag += out.E_reg.row(i).squaredNorm() + out.S_reg.row(i).squaredNorm();
    }
    t.mse /= m;
    t.mag /= m;
    pbar /= m;
    for (Eigen::Index k = 0; k < K; ++k) t.sparse -= std::log(pbar(k) + cfg.eps_occupancy);
    t.total = t.mse + cfg.lambda_sparse * t.sparse + cfg.lambda_mag * t.mag;
    return t;
}

OutputSensitivities loss_sensitivities(const ForwardOutputs& out, const Vector& z, std::span<const int> ids,
                                       const TrainConfig& cfg) {
    const auto n = out.F.size();
    const auto K = out.P.cols();
    const double m = static_cast<double>(ids.size());
    OutputSensitivities up;
    up.dF = Vector::Zero(n);
    for (int i : ids) up.dF(i) = 2.0 * (out.F(i) - z(i)) / m;
    if (cfg.lambda_sparse != 0.0) {
        Vector pbar = Vector::Zero(K);
        for (int i : ids) pbar += out.P.row(i).transpose();
        pbar /= m;
        const Vector coef = (-cfg.lambda_sparse / m) * (pbar.array() + cfg.eps_occupancy).inverse().matrix();
        up.dP = Matrix::Zero(n, K);
        for (int i : ids) up.dP.row(i) = coef.transpose();
    }
    if (cfg.lambda_mag != 0.0) {
        up.dE_reg = Matrix::Zero(n, K);
        up.dS_reg = Matrix::Zero(n, K);
        const double c = 2.0 * cfg.lambda_mag / m;
        for (int i : ids) {
            up.dE_reg.row(i) = c * out.E_reg.row(i);
            up.dS_reg.row(i) = c * out.S_reg.row(i);
        }
    }
    return up;
}

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

void Adam::step(Vector& theta, const Vector& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    theta.array() -= lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
}

FeatureScaler FeatureScaler::fit(const SpatialDataset& train) {
    FeatureScaler s;
    s.burden = ColumnMoments::fit(train.x_burden);
    s.capacity = ColumnMoments::fit(train.x_capacity);
    s.coords = ColumnMoments::fit(train.coords);
    const Standardized y = standardize(train.y);
    s.y_mean = y.mean;
    s.y_sd = y.sd;
    return s;
}

ModelInputs FeatureScaler::inputs(const SpatialDataset& data, const SpatialGraph& graph) const {
    ModelInputs in;
    in.x_burden = burden.apply(data.x_burden);
    in.x_capacity = capacity.apply(data.x_capacity);
    in.coords = coords.apply(data.coords);
    in.graph = &graph;
    return in;
}

Vector FeatureScaler::standardize_y(const Vector& y) const { return (y.array() - y_mean) / y_sd; }

Vector FeatureScaler::destandardize_y(const Vector& z) const { return destandardize(z, y_mean, y_sd); }

Matrix FeatureScaler::covariates(const SpatialDataset& data) const {
    Matrix x(data.n(), data.p());
    x << burden.apply(data.x_burden), capacity.apply(data.x_capacity);
    return x;
}

namespace {

nlohmann::json moments_json(const ColumnMoments& m) {
    return {{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
            {"sd", std::vector<double>(m.sd.data(), m.sd.data() + m.sd.size())}};
}

ColumnMoments moments_from_json(const nlohmann::json& j) {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto sd = j.at("sd").get<std::vector<double>>();
    if (mean.size() != sd.size()) throw SchemaError("scaler: mean/sd length mismatch");
    ColumnMoments m;
    m.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.sd = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    return m;
}

void check_finite(const LossTerms& t, int epoch) {
    if (std::isfinite(t.total)) return;
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (mse=" + format_double(t.mse) +
                              ", sparse=" + format_double(t.sparse) + ", mag=" + format_double(t.mag) + ")",
                          epoch);
}

double mse_on(const ForwardOutputs& out, const Vector& z, std::span<const int> ids) {
    double acc = 0.0;
    for (int i : ids) {
        const double r = out.F(i) - z(i);
        acc += r * r;
    }
    return acc / static_cast<double>(ids.size());
}

}  // namespace

nlohmann::json FeatureScaler::to_json() const {
    return {{"burden", moments_json(burden)},
            {"capacity", moments_json(capacity)},
            {"coords", moments_json(coords)},
            {"y_mean", y_mean},
            {"y_sd", y_sd}};
}

FeatureScaler FeatureScaler::from_json(const nlohmann::json& j) {
    FeatureScaler s;
    s.burden = moments_from_json(j.at("burden"));
    s.capacity = moments_from_json(j.at("capacity"));
    s.coords = moments_from_json(j.at("coords"));
    s.y_mean = j.at("y_mean").get<double>();
    s.y_sd = j.at("y_sd").get<double>();
    return s;
}

std::string TrainReport::trace_csv() const {
    std::string out = "epoch,train_loss,val_loss,mse,sparse,mag\n";
    for (size_t e = 0; e < train_loss.size(); ++e) {
        out += std::to_string(e) + "," + format_double(train_loss[e]) + "," + format_double(val_loss[e]) + "," +
               format_double(components[e].mse) + "," + format_double(components[e].sparse) + "," +
               format_double(components[e].mag) + "\n";
    }
    return out;
}

std::pair<FittedZegnn, TrainReport> fit(const SpatialDataset& train, const SpatialGraph& graph,
                                        const ModelConfig& model, const TrainConfig& cfg) {
    cfg.validate();
    const int n = train.n();
    if (graph.n() != n) throw ParameterError("fit: graph does not match the training rows");
    if (n < 2) throw ParameterError("fit: need at least two training rows");

    ModelConfig mc = model;
    mc.p_burden = train.p_burden();
    mc.p_capacity = train.p_capacity();
    mc.validate();

    FittedZegnn fitted;
    fitted.scaler = FeatureScaler::fit(train);
    fitted.graph_k = graph.k();
    fitted.params = init_params(mc, cfg.seed);
    const ModelInputs in = fitted.scaler.inputs(train, graph);
    const Vector z = fitted.scaler.standardize_y(train.y);

    TrainReport report;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_stream(cfg.seed, 77);
    std::shuffle(order.begin(), order.end(), rng);
    int n_val = static_cast<int>(std::lround(cfg.val_fraction * n));
    if (cfg.val_fraction > 0.0) n_val = std::clamp(n_val, 1, n - 1);
    report.validation_ids.assign(order.begin(), order.begin() + n_val);
    report.gradient_ids.assign(order.begin() + n_val, order.end());
    std::sort(report.validation_ids.begin(), report.validation_ids.end());
    std::sort(report.gradient_ids.begin(), report.gradient_ids.end());
    // Without a validation split, early stopping monitors the training loss.
    const std::vector<int>& monitor_ids = n_val > 0 ? report.validation_ids : report.gradient_ids;

    {
        std::set<int> touched;
        for (int i = 0; i < n; ++i) {
            touched.insert(graph.origin()[i]);
            for (int j : graph.neighbors(i)) touched.insert(graph.origin()[j]);
        }
        report.accessed_nodes.assign(touched.begin(), touched.end());
    }

    ZegnnParams& params = fitted.params;
    Vector theta = params.flatten();
    Adam adam(theta.size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

    ForwardPass pass = forward_pass(params, in);
    LossTerms current = loss(pass.out, z, report.gradient_ids, cfg);
    check_finite(current, 0);
    Vector best_theta = theta;
    report.best_val_loss = mse_on(pass.out, z, monitor_ids);
    report.best_components = current;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const OutputSensitivities up = loss_sensitivities(pass.out, z, report.gradient_ids, cfg);
        const Gradients g = backward(params, in, pass, up);
        adam.step(theta, g.params.flatten());
        params.assign(theta);

        pass = forward_pass(params, in);
        current = loss(pass.out, z, report.gradient_ids, cfg);
        check_finite(current, epoch + 1);
        const double val = mse_on(pass.out, z, monitor_ids);
        report.train_loss.push_back(current.total);
        report.val_loss.push_back(val);
        report.components.push_back(current);
        report.epochs_run = epoch + 1;

        if (report.best_epoch < 0 || val < report.best_val_loss) {
            report.best_epoch = epoch;
            report.best_val_loss = val;
            report.best_components = current;
            best_theta = theta;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (since_best >= cfg.patience) break;
    }
    params.assign(best_theta);
    return {std::move(fitted), std::move(report)};
}

ForwardOutputs predict_outputs(const FittedZegnn& fitted, const SpatialDataset& data, const SpatialGraph& graph) {
    const ModelInputs in = fitted.scaler.inputs(data, graph);
    return forward(fitted.params, in);
}

Vector predict(const FittedZegnn& fitted, const SpatialDataset& data, const SpatialGraph& graph) {
    return fitted.scaler.destandardize_y(predict_outputs(fitted, data, graph).F);
}

nlohmann::json fitted_to_json(const FittedZegnn& fitted) {
    nlohmann::json j = params_to_json(fitted.params);
    j["scaler"] = fitted.scaler.to_json();
    j["graph_k"] = fitted.graph_k;
    return j;
}

FittedZegnn fitted_from_json(const nlohmann::json& j) {
    FittedZegnn f;
    f.params = params_from_json(j);
    if (!j.contains("scaler")) throw SchemaError("checkpoint: missing scaler statistics");
    f.scaler = FeatureScaler::from_json(j.at("scaler"));
    f.graph_k = j.value("graph_k", 0);
    return f;
}

}  // namespace zegnn
