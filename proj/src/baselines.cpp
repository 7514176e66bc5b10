#include "zegnn/baselines.hpp"

#include "zegnn/error.hpp"
#include "zegnn/rng.hpp"
#include "zegnn/training.hpp"

#include <cmath>
#include <set>

namespace zegnn {

Matrix ols_design(const Matrix& x) {
    Matrix d(x.rows(), x.cols() + 1);
    d << Vector::Ones(x.rows()), x;
    return d;
}

OlsModel fit_ols(const Matrix& design, const Vector& z) {
    if (design.rows() != z.size()) throw ParameterError("fit_ols: row count mismatch");
    if (design.rows() == 0 || design.cols() == 0) throw ParameterError("fit_ols: empty design");
    OlsModel m;
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    m.rank_deficient = qr.rank() < design.cols();
    Matrix gram = design.transpose() * design;
    gram.diagonal().array() += 1e-10;
    m.coef = gram.ldlt().solve(design.transpose() * z);
    return m;
}

nlohmann::json NeuralConfig::to_json() const {
    return {{"hidden", hidden}, {"lr", lr},           {"epochs", epochs},
            {"clip_norm", clip_norm}, {"graph_k", graph_k}, {"seed", seed}};
}

namespace {

Dense init_layer(int in, int out, std::uint64_t seed, std::uint64_t stream) {
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

Matrix affine(const Matrix& x, const Dense& layer) {
    Matrix out = x * layer.W;
    out.rowwise() += layer.b.transpose();
    return out;
}

struct MlpCache {
    Matrix pre1, act1, pre2, act2;
    Vector out;
};

MlpCache run(const MlpParams& p, const Matrix& x, const SpatialGraph* graph) {
    MlpCache c;
    c.pre1 = affine(x, p.layer1);
    c.act1 = c.pre1.cwiseMax(0.0);
    if (graph) c.act1 = diffuse(*graph, c.act1);
    c.pre2 = affine(c.act1, p.layer2);
    c.act2 = c.pre2.cwiseMax(0.0);
    if (graph) c.act2 = diffuse(*graph, c.act2);
    c.out = affine(c.act2, p.readout).col(0);
    return c;
}

MlpParams gradient(const MlpParams& p, const Matrix& x, const Vector& z, const SpatialGraph* graph,
                   const MlpCache& c) {
    const double n = static_cast<double>(x.rows());
    MlpParams g;
    const Vector dout = 2.0 * (c.out - z) / n;
    g.readout.W = c.act2.transpose() * dout;
    g.readout.b = Vector::Constant(1, dout.sum());
    Matrix d = dout * p.readout.W.transpose();
    if (graph) d = diffuse_transpose(*graph, d);
    d.array() *= (c.pre2.array() > 0.0).cast<double>();
    g.layer2.W = c.act1.transpose() * d;
    g.layer2.b = d.colwise().sum().transpose();
    d = d * p.layer2.W.transpose();
    if (graph) d = diffuse_transpose(*graph, d);
    d.array() *= (c.pre1.array() > 0.0).cast<double>();
    g.layer1.W = x.transpose() * d;
    g.layer1.b = d.colwise().sum().transpose();
    return g;
}

std::pair<MlpParams, NeuralReport> train(const Matrix& x, const Vector& z, const SpatialGraph* graph,
                                         const NeuralConfig& cfg) {
    if (x.rows() != z.size()) throw ParameterError("neural baseline: row count mismatch");
    if (graph && graph->n() != x.rows()) throw ParameterError("neural baseline: graph size mismatch");
    if (cfg.epochs < 0 || !(cfg.lr > 0.0) || !(cfg.clip_norm > 0.0)) {
        throw ParameterError("neural baseline: invalid configuration");
    }
    MlpParams params = init_mlp(static_cast<int>(x.cols()), cfg.hidden, cfg.seed);
    NeuralReport report;
    if (graph) {
        std::set<int> touched;
        for (int i = 0; i < graph->n(); ++i) {
            touched.insert(graph->origin()[i]);
            for (int j : graph->neighbors(i)) touched.insert(graph->origin()[j]);
        }
        report.accessed_nodes.assign(touched.begin(), touched.end());
    }
    Vector theta = params.flatten();
    Adam adam(theta.size(), cfg.lr);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const MlpCache c = run(params, x, graph);
        const double mse = (c.out - z).squaredNorm() / static_cast<double>(x.rows());
        if (!std::isfinite(mse)) {
            throw DivergenceError("neural baseline diverged at epoch " + std::to_string(epoch), epoch);
        }
        Vector grad = gradient(params, x, z, graph, c).flatten();
        const double norm = grad.norm();
        if (norm > cfg.clip_norm) grad *= cfg.clip_norm / norm;
        report.loss.push_back(mse);
        report.grad_norm.push_back(norm);
        report.clipped_norm.push_back(grad.norm());
        adam.step(theta, grad);
        params.assign(theta);
    }
    return {params, report};
}

}  // namespace

Vector MlpParams::flatten() const {
    const Dense* layers[] = {&layer1, &layer2, &readout};
    Eigen::Index total = 0;
    for (const Dense* d : layers) total += d->W.size() + d->b.size();
    Vector flat(total);
    Eigen::Index at = 0;
    for (const Dense* d : layers) {
        flat.segment(at, d->W.size()) = Eigen::Map<const Vector>(d->W.data(), d->W.size());
        at += d->W.size();
        flat.segment(at, d->b.size()) = d->b;
        at += d->b.size();
    }
    return flat;
}

void MlpParams::assign(const Vector& flat) {
    Dense* layers[] = {&layer1, &layer2, &readout};
    Eigen::Index at = 0;
    for (Dense* d : layers) {
        Eigen::Map<Vector>(d->W.data(), d->W.size()) = flat.segment(at, d->W.size());
        at += d->W.size();
        d->b = flat.segment(at, d->b.size());
        at += d->b.size();
    }
    if (at != flat.size()) throw ParameterError("MlpParams::assign: size mismatch");
}

MlpParams init_mlp(int inputs, int hidden, std::uint64_t seed) {
    if (inputs < 1 || hidden < 1) throw ParameterError("init_mlp: dimensions must be positive");
    return {init_layer(inputs, hidden, seed, 11), init_layer(hidden, hidden, seed, 12),
            init_layer(hidden, 1, seed, 13)};
}

Vector mlp_forward(const MlpParams& params, const Matrix& x, const SpatialGraph* graph) {
    if (graph && graph->n() != x.rows()) throw ParameterError("mlp_forward: graph size mismatch");
    return run(params, x, graph).out;
}

std::pair<MlpParams, NeuralReport> fit_dnn(const Matrix& x, const Vector& z, const NeuralConfig& cfg) {
    return train(x, z, nullptr, cfg);
}

std::pair<MlpParams, NeuralReport> fit_gnn(const Matrix& x, const Vector& z, const SpatialGraph& graph,
                                           const NeuralConfig& cfg) {
    return train(x, z, &graph, cfg);
}

}  // namespace zegnn
