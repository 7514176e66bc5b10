#include "zegnn/model.hpp"

#include "zegnn/error.hpp"
#include "zegnn/rng.hpp"

#include <cmath>
#include <cstdio>

namespace zegnn {

namespace {

Matrix affine(const Matrix& x, const Dense& layer) {
    Matrix out = x * layer.W;
    out.rowwise() += layer.b.transpose();
    return out;
}

Matrix relu(const Matrix& pre) { return pre.cwiseMax(0.0); }

// Zeroes entries of `grad` whose pre-activation was not positive.
void relu_mask(Matrix& grad, const Matrix& pre) {
    grad.array() *= (pre.array() > 0.0).cast<double>();
}

Dense init_dense(int in, int out, std::uint64_t seed, std::uint64_t stream) {
    auto rng = make_stream(seed, stream);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Dense d{Matrix(in, out), Vector(out)};
    for (int c = 0; c < out; ++c) {
        for (int r = 0; r < in; ++r) d.W(r, c) = u(rng);
    }
    for (int c = 0; c < out; ++c) d.b(c) = u(rng);
    return d;
}

Dense zero_dense(int in, int out) { return {Matrix::Zero(in, out), Vector::Zero(out)}; }

template <typename Fn>
void for_each_layer(ZegnnParams& p, Fn&& fn) {
    fn(p.burden_encoder);
    fn(p.burden_head);
    fn(p.capacity_encoder);
    fn(p.capacity_head);
    fn(p.gate1);
    fn(p.gate2);
    fn(p.gate3);
}

template <typename Fn>
void for_each_layer(const ZegnnParams& p, Fn&& fn) {
    fn(p.burden_encoder);
    fn(p.burden_head);
    fn(p.capacity_encoder);
    fn(p.capacity_head);
    fn(p.gate1);
    fn(p.gate2);
    fn(p.gate3);
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

void check_inputs(const ZegnnParams& params, const ModelInputs& in) {
    const auto& c = params.config;
    const int n = in.n();
    if (in.graph == nullptr) throw ParameterError("forward: graph is required");
    if (in.graph->n() != n) throw ParameterError("forward: graph size does not match inputs");
    if (in.x_burden.cols() != c.p_burden || in.x_capacity.cols() != c.p_capacity) {
        throw ParameterError("forward: covariate block widths do not match the model");
    }
    if (in.x_capacity.rows() != n || in.coords.rows() != n || in.coords.cols() != 2) {
        throw ParameterError("forward: input row counts disagree");
    }
    if (!in.x_burden.allFinite() || !in.x_capacity.allFinite() || !in.coords.allFinite()) {
        throw ParameterError("forward: non-finite input");
    }
}

// d H_i / d p_ik for the normalized entropy; zero when K = 1.
Matrix entropy_jacobian(const Matrix& P, double eps) {
    const auto K = P.cols();
    if (K < 2) return Matrix::Zero(P.rows(), K);
    const double inv_log_k = 1.0 / std::log(static_cast<double>(K));
    Matrix out(P.rows(), K);
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        for (Eigen::Index k = 0; k < K; ++k) {
            const double p = P(i, k);
            out(i, k) = -inv_log_k * (std::log(p + eps) + p / (p + eps));
        }
    }
    return out;
}

double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

void ModelConfig::validate() const {
    if (p_burden < 1 || p_capacity < 1) throw ParameterError("model: both covariate blocks need at least one column");
    if (regimes < 1) throw ParameterError("model: K_upper must be >= 1");
    if (hidden < 1 || gate_hidden < 1) throw ParameterError("model: hidden widths must be positive");
    if (diffusion_steps < 0) throw ParameterError("model: diffusion_steps must be >= 0");
    if (!(entropy_eps >= 0.0)) throw ParameterError("model: entropy_eps must be >= 0");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"p_burden", p_burden},       {"p_capacity", p_capacity},         {"regimes", regimes},
            {"hidden", hidden},           {"gate_hidden", gate_hidden},       {"diffusion_steps", diffusion_steps},
            {"entropy_eps", entropy_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.p_burden = j.at("p_burden").get<int>();
    c.p_capacity = j.at("p_capacity").get<int>();
    c.regimes = j.at("regimes").get<int>();
    c.hidden = j.value("hidden", c.hidden);
    c.gate_hidden = j.value("gate_hidden", c.gate_hidden);
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
    c.entropy_eps = j.value("entropy_eps", c.entropy_eps);
    c.validate();
    return c;
}

ZegnnParams ZegnnParams::zeros(const ModelConfig& c) {
    c.validate();
    ZegnnParams p;
    p.config = c;
    p.burden_encoder = zero_dense(c.p_burden, c.hidden);
    p.burden_head = zero_dense(c.hidden, c.regimes);
    p.capacity_encoder = zero_dense(c.p_capacity, c.hidden);
    p.capacity_head = zero_dense(c.hidden, c.regimes);
    p.gate1 = zero_dense(c.gate_inputs(), c.gate_hidden);
    p.gate2 = zero_dense(c.gate_hidden, c.gate_hidden);
    p.gate3 = zero_dense(c.gate_hidden, c.regimes);
    p.tau_raw = Vector::Zero(c.regimes);
    return p;
}

Eigen::Index ZegnnParams::size() const {
    Eigen::Index total = tau_raw.size();
    for_each_layer(*this, [&](const Dense& d) { total += d.W.size() + d.b.size(); });
    return total;
}

Vector ZegnnParams::flatten() const {
    Vector flat(size());
    Eigen::Index at = 0;
    for_each_layer(*this, [&](const Dense& d) {
        flat.segment(at, d.W.size()) = Eigen::Map<const Vector>(d.W.data(), d.W.size());
        at += d.W.size();
        flat.segment(at, d.b.size()) = d.b;
        at += d.b.size();
    });
    flat.segment(at, tau_raw.size()) = tau_raw;
    return flat;
}

void ZegnnParams::assign(const Vector& flat) {
    if (flat.size() != size()) throw ParameterError("ZegnnParams::assign: size mismatch");
    Eigen::Index at = 0;
    for_each_layer(*this, [&](Dense& d) {
        Eigen::Map<Vector>(d.W.data(), d.W.size()) = flat.segment(at, d.W.size());
        at += d.W.size();
        d.b = flat.segment(at, d.b.size());
        at += d.b.size();
    });
    tau_raw = flat.segment(at, tau_raw.size());
}

ZegnnParams init_params(const ModelConfig& c, std::uint64_t seed) {
    ZegnnParams p = ZegnnParams::zeros(c);
    p.seed = seed;
    p.burden_encoder = init_dense(c.p_burden, c.hidden, seed, 1);
    p.burden_head = init_dense(c.hidden, c.regimes, seed, 2);
    p.capacity_encoder = init_dense(c.p_capacity, c.hidden, seed, 3);
    p.capacity_head = init_dense(c.hidden, c.regimes, seed, 4);
    p.gate1 = init_dense(c.gate_inputs(), c.gate_hidden, seed, 5);
    p.gate2 = init_dense(c.gate_hidden, c.gate_hidden, seed, 6);
    p.gate3 = init_dense(c.gate_hidden, c.regimes, seed, 7);
    p.tau_raw = Vector::Constant(c.regimes, inverse_positive_transform(1.0));
    return p;
}

Vector positive_transform(const Vector& tau_raw) {
    Vector t(tau_raw.size());
    for (Eigen::Index k = 0; k < tau_raw.size(); ++k) {
        const double v = tau_raw(k);
        t(k) = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    return t;
}

double inverse_positive_transform(double t) {
    if (!(t > 0.0)) throw ParameterError("inverse_positive_transform: t must be positive");
    // log(exp(t) - 1) = t + log(1 - exp(-t))
    return t + std::log(-std::expm1(-t));
}

void assemble_mixture(ForwardOutputs& out, double entropy_eps) {
    const auto n = out.E_reg.rows();
    const auto K = out.E_reg.cols();
    out.F_reg = out.E_reg - out.S_reg * out.T.asDiagonal();
    out.T_eff = out.P * out.T;
    out.H_norm = Vector::Zero(n);
    if (K >= 2) {
        const double inv_log_k = 1.0 / std::log(static_cast<double>(K));
        for (Eigen::Index i = 0; i < n; ++i) {
            double h = 0.0;
            for (Eigen::Index k = 0; k < K; ++k) h += out.P(i, k) * std::log(out.P(i, k) + entropy_eps);
            out.H_norm(i) = -inv_log_k * h;
        }
    }
    out.E_mix = out.P.cwiseProduct(out.E_reg).rowwise().sum();
    out.S_mix = out.P.cwiseProduct(out.S_reg).rowwise().sum();
    out.F = out.P.cwiseProduct(out.F_reg).rowwise().sum() + out.T_eff.cwiseProduct(out.H_norm);
}

ForwardPass forward_pass(const ZegnnParams& params, const ModelInputs& in) {
    check_inputs(params, in);
    const auto& c = params.config;
    const int n = in.n();
    ForwardPass pass;
    auto& out = pass.out;

    pass.burden_pre = affine(in.x_burden, params.burden_encoder);
    out.E_reg = affine(relu(pass.burden_pre), params.burden_head);
    pass.capacity_pre = affine(in.x_capacity, params.capacity_encoder);
    out.S_reg = affine(relu(pass.capacity_pre), params.capacity_head);
    out.T = positive_transform(params.tau_raw);

    if (c.regimes == 1) {
        out.P = Matrix::Ones(n, 1);
    } else {
        pass.gate_in.resize(n, c.gate_inputs());
        pass.gate_in << in.x_burden, in.x_capacity, in.coords;
        pass.gate1_pre = affine(pass.gate_in, params.gate1);
        pass.gate2_pre = affine(relu(pass.gate1_pre), params.gate2);
        Matrix logits = affine(relu(pass.gate2_pre), params.gate3);
        for (int s = 0; s < c.diffusion_steps; ++s) logits = diffuse(*in.graph, logits);
        out.P = softmax_rows(logits);
    }
    assemble_mixture(out, c.entropy_eps);
    return pass;
}

ForwardOutputs forward(const ZegnnParams& params, const ModelInputs& in) {
    return forward_pass(params, in).out;
}

Gradients backward(const ZegnnParams& params, const ModelInputs& in, const ForwardPass& pass,
                   const OutputSensitivities& up) {
    const auto& c = params.config;
    const auto& out = pass.out;
    const Eigen::Index n = in.n();
    const Eigen::Index K = c.regimes;

    const Vector dF = up.dF.size() ? up.dF : Vector::Zero(n);
    const Vector dEm = up.dE_mix.size() ? up.dE_mix : Vector::Zero(n);
    const Vector dSm = up.dS_mix.size() ? up.dS_mix : Vector::Zero(n);

    Gradients g;
    g.params = ZegnnParams::zeros(c);
    g.params.seed = params.seed;

    // Mixture assembly.
    const Matrix dH_dP = entropy_jacobian(out.P, c.entropy_eps);
    Matrix dP = up.dP.size() ? up.dP : Matrix::Zero(n, K);
    Matrix dE_reg = up.dE_reg.size() ? up.dE_reg : Matrix::Zero(n, K);
    Matrix dS_reg = up.dS_reg.size() ? up.dS_reg : Matrix::Zero(n, K);
    Vector dT = Vector::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = out.H_norm(i);
        const double teff = out.T_eff(i);
        for (Eigen::Index k = 0; k < K; ++k) {
            const double p = out.P(i, k);
            dP(i, k) += dF(i) * (out.F_reg(i, k) + out.T(k) * h + teff * dH_dP(i, k)) + dEm(i) * out.E_reg(i, k) +
                        dSm(i) * out.S_reg(i, k);
            const double dFreg = dF(i) * p;
            dE_reg(i, k) += dFreg + dEm(i) * p;
            dS_reg(i, k) += -dFreg * out.T(k) + dSm(i) * p;
            dT(k) += dF(i) * p * h - dFreg * out.S_reg(i, k);
        }
    }
    for (Eigen::Index k = 0; k < K; ++k) g.params.tau_raw(k) = dT(k) * sigmoid(params.tau_raw(k));

    // Burden channel.
    g.params.burden_head.W = relu(pass.burden_pre).transpose() * dE_reg;
    g.params.burden_head.b = dE_reg.colwise().sum().transpose();
    Matrix dh = dE_reg * params.burden_head.W.transpose();
    relu_mask(dh, pass.burden_pre);
    g.params.burden_encoder.W = in.x_burden.transpose() * dh;
    g.params.burden_encoder.b = dh.colwise().sum().transpose();
    g.d_burden = dh * params.burden_encoder.W.transpose();

    // Capacity channel.
    g.params.capacity_head.W = relu(pass.capacity_pre).transpose() * dS_reg;
    g.params.capacity_head.b = dS_reg.colwise().sum().transpose();
    dh = dS_reg * params.capacity_head.W.transpose();
    relu_mask(dh, pass.capacity_pre);
    g.params.capacity_encoder.W = in.x_capacity.transpose() * dh;
    g.params.capacity_encoder.b = dh.colwise().sum().transpose();
    g.d_capacity = dh * params.capacity_encoder.W.transpose();

    g.d_coords = Matrix::Zero(n, 2);
    if (K == 1) return g;

    // Softmax, then the adjoint of the logit diffusion.
    Matrix dlogits(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double dot = out.P.row(i).dot(dP.row(i));
        dlogits.row(i) = out.P.row(i).array() * (dP.row(i).array() - dot);
    }
    for (int s = 0; s < c.diffusion_steps; ++s) dlogits = diffuse_transpose(*in.graph, dlogits);

    // Gating MLP.
    g.params.gate3.W = relu(pass.gate2_pre).transpose() * dlogits;
    g.params.gate3.b = dlogits.colwise().sum().transpose();
    Matrix dg = dlogits * params.gate3.W.transpose();
    relu_mask(dg, pass.gate2_pre);
    g.params.gate2.W = relu(pass.gate1_pre).transpose() * dg;
    g.params.gate2.b = dg.colwise().sum().transpose();
    dg = dg * params.gate2.W.transpose();
    relu_mask(dg, pass.gate1_pre);
    g.params.gate1.W = pass.gate_in.transpose() * dg;
    g.params.gate1.b = dg.colwise().sum().transpose();
    const Matrix dgate_in = dg * params.gate1.W.transpose();
    g.d_burden += dgate_in.leftCols(c.p_burden);
    g.d_capacity += dgate_in.middleCols(c.p_burden, c.p_capacity);
    g.d_coords = dgate_in.rightCols(2);
    return g;
}

OutputTangents input_tangents(const ZegnnParams& params, const ModelInputs& in, const ForwardPass& pass,
                              const Matrix& dir_burden, const Matrix& dir_capacity) {
    const auto& c = params.config;
    const auto& out = pass.out;
    const Eigen::Index n = in.n();
    const Eigen::Index K = c.regimes;
    if (dir_burden.rows() != n || dir_burden.cols() != c.p_burden || dir_capacity.rows() != n ||
        dir_capacity.cols() != c.p_capacity) {
        throw ParameterError("input_tangents: direction shape mismatch");
    }

    Matrix dh = dir_burden * params.burden_encoder.W;
    relu_mask(dh, pass.burden_pre);
    const Matrix dE_reg = dh * params.burden_head.W;
    dh = dir_capacity * params.capacity_encoder.W;
    relu_mask(dh, pass.capacity_pre);
    const Matrix dS_reg = dh * params.capacity_head.W;

    Matrix dP = Matrix::Zero(n, K);
    if (K > 1) {
        Matrix dg = dir_burden * params.gate1.W.topRows(c.p_burden) +
                    dir_capacity * params.gate1.W.middleRows(c.p_burden, c.p_capacity);
        relu_mask(dg, pass.gate1_pre);
        dg = dg * params.gate2.W;
        relu_mask(dg, pass.gate2_pre);
        Matrix dlogits = dg * params.gate3.W;
        for (int s = 0; s < c.diffusion_steps; ++s) dlogits = diffuse(*in.graph, dlogits);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double dot = out.P.row(i).dot(dlogits.row(i));
            dP.row(i) = out.P.row(i).array() * (dlogits.row(i).array() - dot);
        }
    }

    const Matrix dH_dP = entropy_jacobian(out.P, c.entropy_eps);
    const Matrix dF_reg = dE_reg - dS_reg * out.T.asDiagonal();
    OutputTangents t;
    const Vector dH = dP.cwiseProduct(dH_dP).rowwise().sum();
    const Vector dTeff = dP * out.T;
    t.dF = dP.cwiseProduct(out.F_reg).rowwise().sum() + out.P.cwiseProduct(dF_reg).rowwise().sum() +
           dTeff.cwiseProduct(out.H_norm) + out.T_eff.cwiseProduct(dH);
    t.dE_mix = dP.cwiseProduct(out.E_reg).rowwise().sum() + out.P.cwiseProduct(dE_reg).rowwise().sum();
    t.dS_mix = dP.cwiseProduct(out.S_reg).rowwise().sum() + out.P.cwiseProduct(dS_reg).rowwise().sum();
    return t;
}

namespace {

nlohmann::json dense_json(const std::string& name, const Dense& d) {
    return {{"name", name},
            {"shape", {d.W.rows(), d.W.cols()}},
            {"weight", std::vector<double>(d.W.data(), d.W.data() + d.W.size())},
            {"bias", std::vector<double>(d.b.data(), d.b.data() + d.b.size())}};
}

void dense_from_json(const nlohmann::json& j, Dense& d) {
    const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != d.W.rows() || shape[1] != d.W.cols()) {
        throw SchemaError("checkpoint: layer '" + j.value("name", "?") + "' has the wrong shape");
    }
    const auto w = j.at("weight").get<std::vector<double>>();
    const auto b = j.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != d.W.size() || static_cast<Eigen::Index>(b.size()) != d.b.size()) {
        throw SchemaError("checkpoint: layer '" + j.value("name", "?") + "' has the wrong length");
    }
    d.W = Eigen::Map<const Matrix>(w.data(), d.W.rows(), d.W.cols());
    d.b = Eigen::Map<const Vector>(b.data(), d.b.size());
}

}  // namespace

nlohmann::json params_to_json(const ZegnnParams& p) {
    nlohmann::json j;
    j["format"] = "zegnn-checkpoint";
    j["version"] = 1;
    j["config"] = p.config.to_json();
    j["config_hash"] = config_hash(j["config"]);
    j["seed"] = p.seed;
    j["layers"] = nlohmann::json::array({
        dense_json("burden_encoder", p.burden_encoder),
        dense_json("burden_head", p.burden_head),
        dense_json("capacity_encoder", p.capacity_encoder),
        dense_json("capacity_head", p.capacity_head),
        dense_json("gate1", p.gate1),
        dense_json("gate2", p.gate2),
        dense_json("gate3", p.gate3),
    });
    j["tau_raw"] = std::vector<double>(p.tau_raw.data(), p.tau_raw.data() + p.tau_raw.size());
    return j;
}

ZegnnParams params_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "zegnn-checkpoint") throw SchemaError("checkpoint: unrecognised format");
    if (j.value("version", 0) != 1) throw SchemaError("checkpoint: unsupported version");
    if (j.contains("config_hash") && j.at("config_hash") != config_hash(j.at("config"))) {
        throw SchemaError("checkpoint: config hash mismatch");
    }
    ZegnnParams p = ZegnnParams::zeros(ModelConfig::from_json(j.at("config")));
    p.seed = j.value("seed", std::uint64_t{0});
    const auto& layers = j.at("layers");
    if (layers.size() != 7) throw SchemaError("checkpoint: expected 7 layers");
    Dense* targets[] = {&p.burden_encoder, &p.burden_head, &p.capacity_encoder, &p.capacity_head,
                        &p.gate1,          &p.gate2,       &p.gate3};
    for (size_t l = 0; l < 7; ++l) dense_from_json(layers[l], *targets[l]);
    const auto tau = j.at("tau_raw").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(tau.size()) != p.tau_raw.size()) throw SchemaError("checkpoint: tau_raw length");
    p.tau_raw = Eigen::Map<const Vector>(tau.data(), p.tau_raw.size());
    return p;
}

std::string config_hash(const nlohmann::json& j) {
    const std::string text = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace zegnn
