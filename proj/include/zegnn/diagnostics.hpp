#pragma once

#include "zegnn/training.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace zegnn {

// Per-location sensitivities in standardized-input units. Column j is the
// response to a unit shift of covariate j at every node (burden block first).
struct SensitivityAtlas {
    Matrix gF;  // N x p
    Matrix gE;
    Matrix gS;
    Vector H_norm;
    std::vector<std::string> names;

    int n() const { return static_cast<int>(gF.rows()); }
    int p() const { return static_cast<int>(gF.cols()); }
};

SensitivityAtlas sensitivity_fields(const FittedZegnn& fitted, const SpatialDataset& data, const SpatialGraph& graph);
SensitivityAtlas sensitivity_fields(const ZegnnParams& params, const ModelInputs& in,
                                    std::vector<std::string> names = {});

struct FiniteDifferenceResult {
    double delta = 0.0;
    Matrix delta_F;                            // N x p, F(x + delta e_j) - F(x)
    std::vector<std::optional<double>> corr;  // corr(delta_F[:,j], gF[:,j]); missing for zero variance
    std::vector<double> mean_abs_error;       // mean_i |delta_F / delta - gF|
    std::vector<double> max_abs_error;
};

FiniteDifferenceResult finite_difference_check(const ZegnnParams& params, const ModelInputs& in,
                                               const SensitivityAtlas& atlas, double delta = 0.1);
FiniteDifferenceResult finite_difference_check(const FittedZegnn& fitted, const SpatialDataset& data,
                                               const SpatialGraph& graph, const SensitivityAtlas& atlas,
                                               double delta = 0.1);

// Pearson correlation; missing when either side has zero variance.
std::optional<double> pearson(const Vector& a, const Vector& b);

struct VariableSummary {
    std::string name;
    double I_F = 0.0;
    double I_E = 0.0;
    double I_S = 0.0;
    std::optional<double> D_E;
    std::optional<double> I_core;
    double RRI = 0.0;
    double median_abs_gF = 0.0;
};

// I_F, I_E, I_S (mean absolute sensitivities) and D_E = I_E / (I_E + I_S).
std::vector<VariableSummary> importance_summary(const SensitivityAtlas& atlas);
// sum_i w_i |gF_ij| / sum_i w_i with w = 1 - H_norm.
std::vector<std::optional<double>> core_importance(const SensitivityAtlas& atlas, const Vector& H_norm);
// 2 min(q+, q-) over locations with |g| > tol.
double role_reversal_index(const Vector& g, double tol);
// Default screen: 0.01 * median |gF[:,j]|.
std::vector<double> role_reversal_index(const SensitivityAtlas& atlas);
// importance_summary plus I_core and RRI.
std::vector<VariableSummary> full_summary(const SensitivityAtlas& atlas);

struct GradientMatch {
    std::string name;
    std::optional<double> corr_F;
    std::optional<double> corr_E;
    std::optional<double> corr_S;
    // Share of core nodes (H_norm < core_threshold, nonzero true gradient) whose gF sign matches.
    std::optional<double> core_sign_agreement;
    int core_nodes = 0;
};

std::vector<GradientMatch> gradient_matching(const SensitivityAtlas& atlas,
                                             const std::optional<GroundTruthFields>& truth,
                                             double core_threshold = 0.2);

std::string atlas_long_csv(const SensitivityAtlas& atlas, const Matrix& coords);
std::string summary_csv(const std::vector<VariableSummary>& rows);
std::string regime_probability_csv(const Matrix& P);
std::string entropy_csv(const Vector& H_norm, const Matrix& coords);
std::string finite_difference_csv(const FiniteDifferenceResult& fd, const std::vector<std::string>& names);
std::string gradient_matching_csv(const std::vector<GradientMatch>& rows);

}  // namespace zegnn
