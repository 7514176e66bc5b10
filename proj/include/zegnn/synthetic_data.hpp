#pragma once

#include "zegnn/spatial_graph.hpp"
#include "zegnn/tabular_io.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace zegnn {

enum class ScenarioKind { GlobalLinear, LocalLinear, Nonlinear };

std::string to_string(ScenarioKind kind);
// Accepts "global-linear", "local-linear", "nonlinear" (and the enum spelling).
ScenarioKind parse_scenario_kind(const std::string& text);

// Simulation settings. The three scenarios share the lattice and the
// covariate fields for a given seed; only the potentials differ.
struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::Nonlinear;
    int lattice_side = 50;
    int p = 5;
    double jitter_scale = 0.2 / 49.0;  // 20% of the lattice spacing
    int smoothing_k = 15;              // neighbourhood size including the point itself
    double rho = 0.1;
    double noise_sd = 0.12;
    double eta_scale = 0.3;
    int spillover_k = 8;
    std::uint64_t seed = 0;

    int n() const { return lattice_side * lattice_side; }
    void validate() const;
    nlohmann::json to_json() const;
    static ScenarioSpec from_json(const nlohmann::json& j);
};

// Fixed linear laws of the linear scenarios: E = burden . x1..x3, S = capacity . x4..x5.
struct LinearLaw {
    double e1, e2, e3, s4, s5;
};
// Regime 1..3 of the local-linear scenario; the global-linear law equals regime 1.
LinearLaw local_linear_law(int regime);

Matrix generate_lattice(const ScenarioSpec& spec);

// One KNN-smoothed standard-normal field, z-standardized. `stream` selects
// an independent random stream of spec.seed.
Vector smoothed_field(const Matrix& coords, int smoothing_k, std::uint64_t seed, std::uint64_t stream);

// N x p covariates, column j drawn from stream j.
Matrix generate_covariates(const Matrix& coords, const ScenarioSpec& spec);

// Labels in {1,2,3}. Nonlinear: Voronoi cells of three seeded points,
// redrawn until every cell holds at least 5% of the nodes.
std::vector<int> assign_regimes(const Matrix& coords, const ScenarioSpec& spec);
// The three Voronoi seed points used by assign_regimes (3 x 2).
Matrix voronoi_seeds(const Matrix& coords, const ScenarioSpec& spec);

struct Potentials {
    Vector E;
    Vector S;
};

// Closed-form burden/capacity potentials per regime (T = 1 in the ground truth).
Potentials compute_potentials(const Matrix& x, const std::vector<int>& regimes, ScenarioKind kind);

struct TrueGradients {
    Matrix grad_E;
    Matrix grad_S;
    Matrix grad_F;
};

TrueGradients true_gradients(const Matrix& x, const std::vector<int>& regimes, ScenarioKind kind);

// y = F + rho * (D^-1 A F) + eta_scale * eta + eps; single pass.
Vector generate_outcome(const Vector& E, const Vector& S, const SpatialGraph& graph,
                        const Matrix& coords, const ScenarioSpec& spec);

struct Scenario {
    ScenarioSpec spec;
    SpatialDataset data;  // burden x1..x3, capacity x4..x5, truth attached
    RoleSchema schema;
};

Scenario generate_scenario(const ScenarioSpec& spec);

// Metadata/truth document that accompanies the exported CSV.
nlohmann::json scenario_truth_json(const Scenario& scenario);
// Restores truth and labels from scenario_truth_json output.
void attach_truth(SpatialDataset& data, const nlohmann::json& truth);

}  // namespace zegnn
