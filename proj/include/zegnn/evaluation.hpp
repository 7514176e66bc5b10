#pragma once

#include "zegnn/baselines.hpp"
#include "zegnn/model.hpp"
#include "zegnn/spatial_graph.hpp"
#include "zegnn/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace zegnn {

enum class ModelKind { Zegnn, Ols, Dnn, Gnn };
enum class Protocol { Random, SpatialBlock, InSample };

std::string to_string(ModelKind kind);
std::string to_string(Protocol protocol);
ModelKind parse_model_kind(const std::string& text);
// "random", "spatial" / "spatial_block", "in_sample".
Protocol parse_protocol(const std::string& text);

// One point of the ZeGNN search space.
struct HyperParams {
    int k = 8;
    int regimes = 3;
    double lambda_sparse = 0.001;
    double lambda_mag = 0.001;

    nlohmann::json to_json() const;
};

struct RegimeUsage {
    double n_eff_global = 0.0;
    double n_eff_local = 0.0;
    double max_dominant_share = 0.0;
};

// Perplexity of the mean regime weights, mean per-row perplexity, and the
// largest share of nodes whose argmax (lowest index on ties) is one regime.
RegimeUsage regime_usage(const Matrix& P);

double r2_score(const Vector& y, const Vector& yhat);
double rmse(const Vector& y, const Vector& yhat);

struct CvOptions {
    TrainConfig train;   // lambdas are overwritten from HyperParams
    ModelConfig model;   // regimes overwritten from HyperParams
    NeuralConfig neural;
    int folds = 5;
    int grid = 5;
    int moran_k = 8;
    bool in_sample = true;  // refit on all rows for in-sample metrics and residual Moran's I
    int threads = 1;
};

struct FoldResult {
    int fold = 0;
    int n_test = 0;
    int n_train = 0;
    double r2 = 0.0;
    double rmse = 0.0;
    // Test nodes read while training this fold; must be zero.
    int leaked_nodes = 0;
};

struct CvReport {
    ModelKind model = ModelKind::Ols;
    Protocol protocol = Protocol::Random;
    HyperParams hyper;
    std::uint64_t seed = 0;
    std::vector<int> fold_id;
    std::vector<FoldResult> folds;
    double mean_r2 = 0.0;
    double se_r2 = 0.0;
    double mean_rmse = 0.0;
    double se_rmse = 0.0;
    // Moran's I (k = moran_k) of the pooled held-out residuals.
    std::optional<double> heldout_morans_i;
    std::optional<double> r2_in_sample;
    std::optional<double> rmse_in_sample;
    std::optional<double> residual_morans_i;  // in-sample refit
    std::optional<RegimeUsage> regimes;        // ZeGNN in-sample refit
    int graph_k = 0;

    int leaked_nodes() const;
    nlohmann::json to_json() const;
    std::string folds_csv() const;
};

// Fold labels 0..folds-1 for the protocol (InSample: all zeros).
std::vector<int> make_folds(const SpatialDataset& data, Protocol protocol, int folds, int grid, std::uint64_t seed);

// Original-scale predictions of a model trained on `train_ids` and evaluated
// on every node. Graph models train on the leakage-safe subgraph of `graph`
// and predict through `graph`.
struct HoldoutFit {
    Vector yhat;
    std::vector<int> accessed_nodes;
    std::optional<Matrix> P;
};

HoldoutFit fit_and_predict(ModelKind kind, const SpatialDataset& data, const SpatialGraph* graph,
                           std::span<const int> test_ids, const HyperParams& hyper, const CvOptions& options);

CvReport run_cv(ModelKind kind, const SpatialDataset& data, Protocol protocol, const HyperParams& hyper,
                std::uint64_t seed, const CvOptions& options);

struct SearchGrid {
    std::vector<int> k_candidates{8, 10, 12, 14, 16};
    std::vector<int> regime_candidates{3};
    std::vector<double> lambda_sparse{0.0, 0.001, 0.005};
    std::vector<double> lambda_mag{0.001, 0.01};

    void validate() const;
    std::vector<HyperParams> points() const;
    nlohmann::json to_json() const;
    static SearchGrid from_json(const nlohmann::json& j);
};

struct SearchRow {
    HyperParams hyper;
    double mean_r2 = 0.0;
    double se_r2 = 0.0;
    double mean_rmse = 0.0;
    double heldout_morans_i = 0.0;
    bool admissible = false;
    bool selected = false;
};

struct SearchResult {
    HyperParams selected;
    std::vector<SearchRow> table;

    std::string table_csv() const;
    nlohmann::json to_json() const;
};

// 1-SE rule: admissible rows have mean_r2 >= best mean - best SE; pick the
// smallest k, then smallest lambda_sparse + lambda_mag, then smallest K.
// Marks admissible/selected in place and returns the selected index.
size_t select_one_se(std::vector<SearchRow>& rows);

SearchResult hyper_search(const SpatialDataset& data, const SearchGrid& grid, std::uint64_t seed,
                          const CvOptions& options);

// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index owns
// its output slot, so results do not depend on the thread count.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

// ZEGNN_THREADS, defaulting to 1.
int thread_cap_from_env();

}  // namespace zegnn
