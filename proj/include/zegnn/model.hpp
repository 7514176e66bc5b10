#pragma once

#include "zegnn/spatial_graph.hpp"
#include "zegnn/tabular_io.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>

namespace zegnn {

struct ModelConfig {
    int p_burden = 1;
    int p_capacity = 1;
    int regimes = 1;          // K_upper
    int hidden = 64;          // burden / capacity encoder width
    int gate_hidden = 64;     // both gating hidden layers
    int diffusion_steps = 1;  // applications of D^-1 A to the gating logits
    double entropy_eps = 1e-12;

    int gate_inputs() const { return p_burden + p_capacity + 2; }
    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Affine map applied to row vectors: x -> x W + b.
struct Dense {
    Matrix W;  // in x out
    Vector b;  // out
};

// Every learnable weight. Also used as the gradient container (same shapes).
struct ZegnnParams {
    ModelConfig config;
    Dense burden_encoder;    // p_E -> hidden
    Dense burden_head;       // hidden -> K
    Dense capacity_encoder;  // p_S -> hidden
    Dense capacity_head;     // hidden -> K
    Dense gate1;             // p_E + p_S + 2 -> gate_hidden
    Dense gate2;             // gate_hidden -> gate_hidden
    Dense gate3;             // gate_hidden -> K
    Vector tau_raw;          // K, unconstrained temperatures
    std::uint64_t seed = 0;

    // Zero-valued parameters of the given shape.
    static ZegnnParams zeros(const ModelConfig& config);

    Eigen::Index size() const;
    Vector flatten() const;
    void assign(const Vector& flat);
};

// Fan-in uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); tau_raw such that T = 1.
ZegnnParams init_params(const ModelConfig& config, std::uint64_t seed);

// log(1 + exp(v)), elementwise, overflow-safe.
Vector positive_transform(const Vector& tau_raw);
// Inverse of positive_transform for t > 0.
double inverse_positive_transform(double t);

// Standardized model inputs; the graph must cover the same N nodes.
struct ModelInputs {
    Matrix x_burden;    // N x p_E
    Matrix x_capacity;  // N x p_S
    Matrix coords;      // N x 2
    const SpatialGraph* graph = nullptr;

    int n() const { return static_cast<int>(x_burden.rows()); }
};

struct ForwardOutputs {
    Vector F;       // standardized prediction
    Vector E_mix;   // sum_k p_ik E_ik
    Vector S_mix;   // sum_k p_ik S_ik
    Matrix P;       // N x K regime probabilities
    Vector H_norm;  // normalized gating entropy
    Matrix E_reg;   // N x K
    Matrix S_reg;   // N x K
    Matrix F_reg;   // E_reg - T_k S_reg
    Vector T;       // K temperatures
    Vector T_eff;   // sum_k p_ik T_k
};

// Forward outputs plus the activations backward() needs.
struct ForwardPass {
    ForwardOutputs out;
    Matrix burden_pre;  // pre-activation of the burden encoder
    Matrix capacity_pre;
    Matrix gate_in;  // [x_E | x_S | coords]
    Matrix gate1_pre;
    Matrix gate2_pre;
};

ForwardPass forward_pass(const ZegnnParams& params, const ModelInputs& in);
ForwardOutputs forward(const ZegnnParams& params, const ModelInputs& in);

// Assembles P, H_norm, T_eff, F_reg, F, E_mix, S_mix from the regime channels
// and probabilities. Shared by forward and by tests that hand-set P.
void assemble_mixture(ForwardOutputs& out, double entropy_eps);

// Upstream derivatives of a scalar objective with respect to forward outputs.
// Empty members count as zero.
struct OutputSensitivities {
    Vector dF;
    Vector dE_mix;
    Vector dS_mix;
    Matrix dP;
    Matrix dE_reg;
    Matrix dS_reg;
};

struct Gradients {
    ZegnnParams params;
    Matrix d_burden;    // N x p_E
    Matrix d_capacity;  // N x p_S
    Matrix d_coords;    // N x 2
};

// Reverse-mode pass through the full graph (channels, temperatures, entropy
// term, softmax, logit diffusion, gating MLP).
Gradients backward(const ZegnnParams& params, const ModelInputs& in, const ForwardPass& pass,
                   const OutputSensitivities& upstream);

// Directional derivatives of F, E_mix, S_mix along an input perturbation
// (forward mode). Coordinates are held fixed.
struct OutputTangents {
    Vector dF;
    Vector dE_mix;
    Vector dS_mix;
};

OutputTangents input_tangents(const ZegnnParams& params, const ModelInputs& in, const ForwardPass& pass,
                              const Matrix& dir_burden, const Matrix& dir_capacity);

// Versioned JSON checkpoint: config, layer shapes, flat weights, seed, config hash.
nlohmann::json params_to_json(const ZegnnParams& params);
ZegnnParams params_from_json(const nlohmann::json& j);

// FNV-1a over a canonical JSON dump; used as config hash in checkpoints and manifests.
std::string config_hash(const nlohmann::json& j);

}  // namespace zegnn
