#pragma once

#include "zegnn/model.hpp"
#include "zegnn/spatial_graph.hpp"
#include "zegnn/tabular_io.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace zegnn {

struct TrainConfig {
    double lr = 0.005;
    int max_epochs = 800;
    int patience = 60;
    double lambda_sparse = 0.0;
    double lambda_mag = 0.0;
    double eps_occupancy = 1e-8;
    double val_fraction = 0.15;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct LossTerms {
    double total = 0.0;
    double mse = 0.0;
    double sparse = 0.0;
    double mag = 0.0;
};

// Composite objective restricted to `ids`:
// mse + lambda_sparse * (-sum_k log(pbar_k + eps)) + lambda_mag * mean_i sum_k (E_ik^2 + S_ik^2).
LossTerms loss(const ForwardOutputs& out, const Vector& z, std::span<const int> ids, const TrainConfig& cfg);
// d loss / d outputs, for backward().
OutputSensitivities loss_sensitivities(const ForwardOutputs& out, const Vector& z, std::span<const int> ids,
                                       const TrainConfig& cfg);

// Moment-based first-order optimizer over a flat parameter vector.
class Adam {
public:
    Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(Vector& theta, const Vector& grad);
    int steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    Vector m_, v_;
};

// Training-fold moments; applied unchanged to every other row.
struct FeatureScaler {
    ColumnMoments burden;
    ColumnMoments capacity;
    ColumnMoments coords;
    double y_mean = 0.0;
    double y_sd = 1.0;

    static FeatureScaler fit(const SpatialDataset& train);
    ModelInputs inputs(const SpatialDataset& data, const SpatialGraph& graph) const;
    Vector standardize_y(const Vector& y) const;
    Vector destandardize_y(const Vector& z) const;
    // [burden | capacity], standardized.
    Matrix covariates(const SpatialDataset& data) const;

    nlohmann::json to_json() const;
    static FeatureScaler from_json(const nlohmann::json& j);
};

struct FittedZegnn {
    ZegnnParams params;
    FeatureScaler scaler;
    int graph_k = 0;
};

struct TrainReport {
    int best_epoch = -1;  // 0-based; params after best_epoch + 1 updates
    int epochs_run = 0;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<LossTerms> components;
    LossTerms best_components;
    double best_val_loss = 0.0;
    std::vector<int> gradient_ids;    // local ids used in the loss
    std::vector<int> validation_ids;  // local ids of the inner validation split
    // Original node ids (graph.origin()) of every node and edge endpoint read during training.
    std::vector<int> accessed_nodes;

    std::string trace_csv() const;
};

// Full-batch training with early stopping on the inner validation split.
// `train` holds only training-fold rows and `graph` is its leakage-safe graph.
std::pair<FittedZegnn, TrainReport> fit(const SpatialDataset& train, const SpatialGraph& graph,
                                        const ModelConfig& model, const TrainConfig& cfg);

// Original-scale predictions mu_y + sigma_y * F.
Vector predict(const FittedZegnn& fitted, const SpatialDataset& data, const SpatialGraph& graph);
ForwardOutputs predict_outputs(const FittedZegnn& fitted, const SpatialDataset& data, const SpatialGraph& graph);

nlohmann::json fitted_to_json(const FittedZegnn& fitted);
FittedZegnn fitted_from_json(const nlohmann::json& j);

}  // namespace zegnn
