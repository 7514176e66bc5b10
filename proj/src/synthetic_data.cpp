#include "zegnn/synthetic_data.hpp"

#include "zegnn/error.hpp"
#include "zegnn/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace zegnn {

namespace {

constexpr std::uint64_t kJitterStream = 1000;
constexpr std::uint64_t kCovariateStream = 100;
constexpr std::uint64_t kEtaStream = 200;
constexpr std::uint64_t kNoiseStream = 300;
constexpr std::uint64_t kVoronoiStream = 400;
constexpr int kVoronoiAttempts = 100;
constexpr double kMinRegimeShare = 0.05;

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double sech2(double v) {
    const double c = std::cosh(v);
    return 1.0 / (c * c);
}

void check_regime(int r) {
    if (r < 1 || r > 3) throw ParameterError("unknown regime label " + std::to_string(r));
}

}  // namespace

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::GlobalLinear: return "global-linear";
        case ScenarioKind::LocalLinear: return "local-linear";
        case ScenarioKind::Nonlinear: return "nonlinear";
    }
    return "unknown";
}

ScenarioKind parse_scenario_kind(const std::string& text) {
    if (text == "global-linear" || text == "GlobalLinear") return ScenarioKind::GlobalLinear;
    if (text == "local-linear" || text == "LocalLinear") return ScenarioKind::LocalLinear;
    if (text == "nonlinear" || text == "Nonlinear") return ScenarioKind::Nonlinear;
    throw ParameterError("unknown scenario '" + text + "'");
}

void ScenarioSpec::validate() const {
    if (lattice_side < 2) throw ParameterError("scenario: lattice_side must be >= 2");
    if (p != 5) throw ParameterError("scenario: the closed-form potentials need p = 5");
    if (!(rho >= 0.0 && rho < 1.0)) throw ParameterError("scenario: rho must lie in [0, 1)");
    if (!(noise_sd >= 0.0)) throw ParameterError("scenario: noise_sd must be >= 0");
    if (!(jitter_scale >= 0.0)) throw ParameterError("scenario: jitter_scale must be >= 0");
    if (smoothing_k < 1 || smoothing_k > n()) throw ParameterError("scenario: smoothing_k out of range");
    if (spillover_k < 1 || spillover_k >= n()) throw ParameterError("scenario: spillover_k out of range");
}

nlohmann::json ScenarioSpec::to_json() const {
    return {
        {"kind", to_string(kind)},   {"lattice_side", lattice_side}, {"p", p},
        {"jitter_scale", jitter_scale}, {"smoothing_k", smoothing_k}, {"rho", rho},
        {"noise_sd", noise_sd},      {"eta_scale", eta_scale},       {"spillover_k", spillover_k},
        {"seed", seed},
    };
}

ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
    ScenarioSpec s;
    s.kind = parse_scenario_kind(j.at("kind").get<std::string>());
    s.lattice_side = j.value("lattice_side", s.lattice_side);
    s.p = j.value("p", s.p);
    s.jitter_scale = j.value("jitter_scale", s.jitter_scale);
    s.smoothing_k = j.value("smoothing_k", s.smoothing_k);
    s.rho = j.value("rho", s.rho);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.eta_scale = j.value("eta_scale", s.eta_scale);
    s.spillover_k = j.value("spillover_k", s.spillover_k);
    s.seed = j.value("seed", s.seed);
    return s;
}

LinearLaw local_linear_law(int regime) {
    check_regime(regime);
    switch (regime) {
        case 1: return {2.6, 1.0, 0.8, 0.6, 0.5};
        case 2: return {-2.6, 1.0, 0.8, 0.6, 0.5};
        default: return {0.9, -1.0, 0.8, -0.6, 0.5};
    }
}

Matrix generate_lattice(const ScenarioSpec& spec) {
    spec.validate();
    const int side = spec.lattice_side;
    const double spacing = 1.0 / (side - 1);
    Matrix coords(spec.n(), 2);
    auto rng = make_stream(spec.seed, kJitterStream);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    for (int row = 0; row < side; ++row) {
        for (int col = 0; col < side; ++col) {
            const int i = row * side + col;
            const double jx = jitter(rng);
            const double jy = jitter(rng);
            coords(i, 0) = col * spacing + spec.jitter_scale * jx;
            coords(i, 1) = row * spacing + spec.jitter_scale * jy;
        }
    }
    return coords;
}

Vector smoothed_field(const Matrix& coords, int smoothing_k, std::uint64_t seed, std::uint64_t stream) {
    const int n = static_cast<int>(coords.rows());
    auto rng = make_stream(seed, stream);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector raw(n);
    for (int i = 0; i < n; ++i) raw(i) = normal(rng);
    // smoothing_k counts the point itself.
    const auto knn = knn_indices(coords, smoothing_k - 1);
    Vector smooth(n);
    for (int i = 0; i < n; ++i) {
        double acc = raw(i);
        for (int j : knn[i]) acc += raw(j);
        smooth(i) = acc / smoothing_k;
    }
    return standardize(smooth).z;
}

Matrix generate_covariates(const Matrix& coords, const ScenarioSpec& spec) {
    spec.validate();
    Matrix x(coords.rows(), spec.p);
    for (int j = 0; j < spec.p; ++j) {
        x.col(j) = smoothed_field(coords, spec.smoothing_k, spec.seed, kCovariateStream + j);
    }
    return x;
}

Matrix voronoi_seeds(const Matrix& coords, const ScenarioSpec& spec) {
    const int n = static_cast<int>(coords.rows());
    for (int attempt = 0; attempt < kVoronoiAttempts; ++attempt) {
        auto rng = make_stream(spec.seed, kVoronoiStream + attempt);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Matrix seeds(3, 2);
        for (int s = 0; s < 3; ++s) {
            seeds(s, 0) = unit(rng);
            seeds(s, 1) = unit(rng);
        }
        std::array<int, 3> counts{0, 0, 0};
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (coords.row(i) - seeds.row(0)).squaredNorm();
            for (int s = 1; s < 3; ++s) {
                const double d = (coords.row(i) - seeds.row(s)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = s;
                }
            }
            ++counts[best];
        }
        const bool ok = std::all_of(counts.begin(), counts.end(),
                                    [&](int c) { return c >= kMinRegimeShare * n; });
        if (ok) return seeds;
    }
    throw DegenerateError("voronoi_seeds: no balanced tessellation found");
}

std::vector<int> assign_regimes(const Matrix& coords, const ScenarioSpec& spec) {
    const int n = static_cast<int>(coords.rows());
    std::vector<int> labels(n, 1);
    switch (spec.kind) {
        case ScenarioKind::GlobalLinear:
            break;
        case ScenarioKind::LocalLinear:
            for (int i = 0; i < n; ++i) {
                if (coords(i, 1) >= 0.5) {
                    labels[i] = 1;
                } else {
                    labels[i] = coords(i, 0) < 0.5 ? 2 : 3;
                }
            }
            break;
        case ScenarioKind::Nonlinear: {
            const Matrix seeds = voronoi_seeds(coords, spec);
            for (int i = 0; i < n; ++i) {
                int best = 0;
                double best_d = (coords.row(i) - seeds.row(0)).squaredNorm();
                for (int s = 1; s < 3; ++s) {
                    const double d = (coords.row(i) - seeds.row(s)).squaredNorm();
                    if (d < best_d) {
                        best_d = d;
                        best = s;
                    }
                }
                labels[i] = best + 1;
            }
            break;
        }
    }
    return labels;
}

Potentials compute_potentials(const Matrix& x, const std::vector<int>& regimes, ScenarioKind kind) {
    if (x.cols() != 5) throw ParameterError("compute_potentials: expected 5 covariates");
    if (static_cast<Eigen::Index>(regimes.size()) != x.rows()) {
        throw ParameterError("compute_potentials: label count mismatch");
    }
    const auto n = x.rows();
    Potentials out{Vector(n), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const int r = regimes[i];
        check_regime(r);
        const double x1 = x(i, 0), x2 = x(i, 1), x3 = x(i, 2), x4 = x(i, 3), x5 = x(i, 4);
        if (kind != ScenarioKind::Nonlinear) {
            if (kind == ScenarioKind::GlobalLinear && r != 1) {
                throw ParameterError("global-linear scenario has a single regime");
            }
            const LinearLaw law = local_linear_law(r);
            out.E(i) = law.e1 * x1 + law.e2 * x2 + law.e3 * x3;
            out.S(i) = law.s4 * x4 + law.s5 * x5;
            continue;
        }
        switch (r) {
            case 1:
                out.E(i) = 2.6 * x1 + 2.2 * std::tanh(2.0 * x2) + 1.8 * std::tanh(2.2 * x3);
                out.S(i) = 0.8 * std::sin(3.0 * x4) + 0.9 * (logistic(2.0 * x5) - 0.5);
                break;
            case 2:
                out.E(i) = -2.6 * x1 + 2.0 * (x2 * x2 - 1.0) + 1.8 * std::tanh(2.2 * x3);
                out.S(i) = 0.8 * std::sin(3.0 * x4) + 0.9 * (logistic(2.0 * x5) - 0.5);
                break;
            default:
                out.E(i) = 0.9 * x1 + 2.6 * (x2 * x3);
                out.S(i) = 1.7 * std::sin(3.2 * x4) + 1.5 * (x5 * x5 - 1.0);
                break;
        }
    }
    return out;
}

TrueGradients true_gradients(const Matrix& x, const std::vector<int>& regimes, ScenarioKind kind) {
    if (x.cols() != 5) throw ParameterError("true_gradients: expected 5 covariates");
    const auto n = x.rows();
    TrueGradients g{Matrix::Zero(n, 5), Matrix::Zero(n, 5), Matrix::Zero(n, 5)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const int r = regimes[i];
        check_regime(r);
        const double x2 = x(i, 1), x3 = x(i, 2), x4 = x(i, 3), x5 = x(i, 4);
        if (kind != ScenarioKind::Nonlinear) {
            const LinearLaw law = local_linear_law(r);
            g.grad_E.row(i) << law.e1, law.e2, law.e3, 0.0, 0.0;
            g.grad_S.row(i) << 0.0, 0.0, 0.0, law.s4, law.s5;
        } else if (r == 3) {
            g.grad_E.row(i) << 0.9, 2.6 * x3, 2.6 * x2, 0.0, 0.0;
            g.grad_S.row(i) << 0.0, 0.0, 0.0, 1.7 * 3.2 * std::cos(3.2 * x4), 1.5 * 2.0 * x5;
        } else {
            const double sig = logistic(2.0 * x5);
            const double dx1 = r == 1 ? 2.6 : -2.6;
            const double dx2 = r == 1 ? 4.4 * sech2(2.0 * x2) : 4.0 * x2;
            g.grad_E.row(i) << dx1, dx2, 1.8 * 2.2 * sech2(2.2 * x3), 0.0, 0.0;
            g.grad_S.row(i) << 0.0, 0.0, 0.0, 0.8 * 3.0 * std::cos(3.0 * x4), 0.9 * 2.0 * sig * (1.0 - sig);
        }
    }
    g.grad_F = g.grad_E - g.grad_S;
    return g;
}

Vector generate_outcome(const Vector& E, const Vector& S, const SpatialGraph& graph,
                        const Matrix& coords, const ScenarioSpec& spec) {
    const auto n = E.size();
    if (S.size() != n || graph.n() != n || coords.rows() != n) {
        throw ParameterError("generate_outcome: size mismatch");
    }
    const Vector F = E - S;
    Vector y = F + spec.rho * diffuse(graph, F);
    if (spec.eta_scale != 0.0) {
        y += spec.eta_scale * smoothed_field(coords, spec.smoothing_k, spec.seed, kEtaStream);
    }
    if (spec.noise_sd > 0.0) {
        auto rng = make_stream(spec.seed, kNoiseStream);
        std::normal_distribution<double> noise(0.0, spec.noise_sd);
        for (Eigen::Index i = 0; i < n; ++i) y(i) += noise(rng);
    }
    return y;
}

Scenario generate_scenario(const ScenarioSpec& spec) {
    spec.validate();
    Scenario sc;
    sc.spec = spec;
    const Matrix coords = generate_lattice(spec);
    const Matrix x = generate_covariates(coords, spec);
    const std::vector<int> labels = assign_regimes(coords, spec);
    const Potentials pot = compute_potentials(x, labels, spec.kind);
    const TrueGradients grads = true_gradients(x, labels, spec.kind);
    const SpatialGraph graph = build_knn_graph(coords, spec.spillover_k);

    sc.schema.outcome = "y";
    sc.schema.coord_x = "cx";
    sc.schema.coord_y = "cy";
    sc.schema.burden_cols = {"x1", "x2", "x3"};
    sc.schema.capacity_cols = {"x4", "x5"};
    sc.schema.regime_col = "regime";

    auto& d = sc.data;
    d.coords = coords;
    d.x_burden = x.leftCols(3);
    d.x_capacity = x.rightCols(2);
    d.y = generate_outcome(pot.E, pot.S, graph, coords, spec);
    d.regime_labels = labels;
    d.burden_names = sc.schema.burden_cols;
    d.capacity_names = sc.schema.capacity_cols;
    GroundTruthFields t;
    t.E = pot.E;
    t.S = pot.S;
    t.F = pot.E - pot.S;
    t.regime = labels;
    t.grad_E = grads.grad_E;
    t.grad_S = grads.grad_S;
    t.grad_F = grads.grad_F;
    d.truth = std::move(t);
    return sc;
}

namespace {

std::vector<double> to_vec(const Eigen::Ref<const Vector>& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json columns_json(const Matrix& m, const std::vector<std::string>& names) {
    nlohmann::json out = nlohmann::json::object();
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[names[j]] = to_vec(m.col(j));
    return out;
}

Vector vec_from_json(const nlohmann::json& j, Eigen::Index n) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != n) throw SchemaError("truth: field length mismatch");
    return Eigen::Map<const Vector>(v.data(), n);
}

Matrix columns_from_json(const nlohmann::json& j, const std::vector<std::string>& names, Eigen::Index n) {
    Matrix m(n, static_cast<Eigen::Index>(names.size()));
    for (size_t c = 0; c < names.size(); ++c) {
        if (!j.contains(names[c])) throw SchemaError("truth: gradient for '" + names[c] + "' missing");
        m.col(static_cast<Eigen::Index>(c)) = vec_from_json(j.at(names[c]), n);
    }
    return m;
}

}  // namespace

nlohmann::json scenario_truth_json(const Scenario& sc) {
    const auto& t = *sc.data.truth;
    const auto names = sc.data.covariate_names();
    nlohmann::json j;
    j["format"] = "zegnn-scenario-truth";
    j["version"] = 1;
    j["spec"] = sc.spec.to_json();
    j["covariates"] = names;
    j["n"] = sc.data.n();
    j["regime"] = t.regime;
    j["E_true"] = to_vec(t.E);
    j["S_true"] = to_vec(t.S);
    j["F_true"] = to_vec(t.F);
    j["grad_F_true"] = columns_json(t.grad_F, names);
    j["grad_E_true"] = columns_json(t.grad_E, names);
    j["grad_S_true"] = columns_json(t.grad_S, names);
    if (sc.spec.kind == ScenarioKind::Nonlinear) {
        const Matrix seeds = voronoi_seeds(sc.data.coords, sc.spec);
        nlohmann::json pts = nlohmann::json::array();
        for (int s = 0; s < 3; ++s) pts.push_back({seeds(s, 0), seeds(s, 1)});
        j["voronoi_seeds"] = pts;
    }
    return j;
}

void attach_truth(SpatialDataset& data, const nlohmann::json& j) {
    if (j.value("format", "") != "zegnn-scenario-truth") throw SchemaError("truth: unrecognised format");
    const auto n = static_cast<Eigen::Index>(data.n());
    if (j.at("n").get<Eigen::Index>() != n) throw SchemaError("truth: node count does not match dataset");
    const auto names = data.covariate_names();
    GroundTruthFields t;
    t.regime = j.at("regime").get<std::vector<int>>();
    t.E = vec_from_json(j.at("E_true"), n);
    t.S = vec_from_json(j.at("S_true"), n);
    t.F = vec_from_json(j.at("F_true"), n);
    t.grad_F = columns_from_json(j.at("grad_F_true"), names, n);
    t.grad_E = columns_from_json(j.at("grad_E_true"), names, n);
    t.grad_S = columns_from_json(j.at("grad_S_true"), names, n);
    if (!data.regime_labels) data.regime_labels = t.regime;
    data.truth = std::move(t);
}

}  // namespace zegnn
