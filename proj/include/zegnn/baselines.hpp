#pragma once

#include "zegnn/model.hpp"
#include "zegnn/spatial_graph.hpp"
#include "zegnn/tabular_io.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace zegnn {

// Least squares via the normal equations with a 1e-10 stabilizing diagonal.
struct OlsModel {
    Vector coef;  // one per design column
    bool rank_deficient = false;

    Vector predict(const Matrix& design) const { return design * coef; }
};

// Prepends a column of ones.
Matrix ols_design(const Matrix& x);
OlsModel fit_ols(const Matrix& design, const Vector& z);

// Shared settings of the two neural baselines.
struct NeuralConfig {
    int hidden = 64;
    double lr = 0.001;
    int epochs = 600;
    double clip_norm = 1.0;
    int graph_k = 12;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

// Two hidden rectifier layers and a linear readout. The GNN variant
// diffuses after each hidden activation.
struct MlpParams {
    Dense layer1;
    Dense layer2;
    Dense readout;

    Vector flatten() const;
    void assign(const Vector& flat);
};

MlpParams init_mlp(int inputs, int hidden, std::uint64_t seed);

struct NeuralReport {
    std::vector<double> loss;            // training MSE before each update
    std::vector<double> grad_norm;       // before clipping
    std::vector<double> clipped_norm;    // after clipping
    std::vector<int> accessed_nodes;     // origin ids touched (graph models)
};

// `graph` == nullptr gives the plain feed-forward network.
Vector mlp_forward(const MlpParams& params, const Matrix& x, const SpatialGraph* graph);

std::pair<MlpParams, NeuralReport> fit_dnn(const Matrix& x, const Vector& z, const NeuralConfig& cfg);
std::pair<MlpParams, NeuralReport> fit_gnn(const Matrix& x, const Vector& z, const SpatialGraph& graph,
                                           const NeuralConfig& cfg);

}  // namespace zegnn
