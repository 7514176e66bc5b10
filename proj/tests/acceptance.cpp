// Acceptance run: one line per criterion, exit status 0 when every criterion
// passes or fails only for a recorded, oracle-bounded reason.
//
//   zegnn_acceptance            all criteria
//   zegnn_acceptance 1 6 7      a subset

#include "zegnn/baselines.hpp"
#include "zegnn/diagnostics.hpp"
#include "zegnn/error.hpp"
#include "zegnn/evaluation.hpp"
#include "zegnn/synthetic_data.hpp"
#include "zegnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace zegnn;

namespace {

constexpr std::uint64_t kReferenceSeed = 1;

struct Outcome {
    bool pass = false;
    std::string detail;
    // Fails only where the ground truth itself cannot meet the threshold.
    bool oracle_bounded = false;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) m(r, c) = nd(rng);
    }
    return m;
}

Matrix random_coords(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix m(n, 2);
    for (int i = 0; i < n; ++i) {
        m(i, 0) = u(rng);
        m(i, 1) = u(rng);
    }
    return m;
}

Scenario scenario(ScenarioKind kind, std::uint64_t seed, int side = 50) {
    ScenarioSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    spec.lattice_side = side;
    return generate_scenario(spec);
}

// Largest violation of the mixture identities over all nodes.
double invariant_violation(const ForwardOutputs& out) {
    double worst = 0.0;
    const auto K = out.P.cols();
    auto bump = [&](double v) { worst = std::max(worst, std::isfinite(v) ? v : 1e300); };
    for (Eigen::Index k = 0; k < K; ++k) bump(out.T(k) > 0.0 ? 0.0 : 1.0);
    for (Eigen::Index i = 0; i < out.F.size(); ++i) {
        bump(std::abs(out.P.row(i).sum() - 1.0));
        bump(std::max(0.0, -out.P.row(i).minCoeff()));
        bump(std::max(0.0, -out.H_norm(i)));
        bump(std::max(0.0, out.H_norm(i) - 1.0));
        double f = 0.0, e = 0.0, s = 0.0, t = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            bump(std::abs(out.F_reg(i, k) - (out.E_reg(i, k) - out.T(k) * out.S_reg(i, k))));
            f += out.P(i, k) * out.F_reg(i, k);
            e += out.P(i, k) * out.E_reg(i, k);
            s += out.P(i, k) * out.S_reg(i, k);
            t += out.P(i, k) * out.T(k);
        }
        bump(std::abs(out.T_eff(i) - t));
        bump(std::abs(out.F(i) - (f + out.T_eff(i) * out.H_norm(i))));
        bump(std::abs(out.E_mix(i) - e));
        bump(std::abs(out.S_mix(i) - s));
        if (K == 1) {
            bump(std::abs(out.H_norm(i)));
            bump(std::abs(out.F(i) - (out.E_reg(i, 0) - out.T(0) * out.S_reg(i, 0))));
        }
    }
    return worst;
}

// The reference ZeGNN fit of one scenario: seed 1, k = 8, K_upper = 3, lambdas 0.001.
struct ReferenceFit {
    Scenario sc;
    SpatialGraph graph;
    FittedZegnn fitted;
    TrainReport report;
};

const ReferenceFit& reference_fit(ScenarioKind kind) {
    static std::map<ScenarioKind, ReferenceFit> cache;
    auto it = cache.find(kind);
    if (it != cache.end()) return it->second;
    ReferenceFit r;
    r.sc = scenario(kind, kReferenceSeed);
    r.graph = build_knn_graph(r.sc.data.coords, 8);
    ModelConfig mc;
    mc.p_burden = r.sc.data.p_burden();
    mc.p_capacity = r.sc.data.p_capacity();
    mc.regimes = 3;
    TrainConfig tc;
    tc.lambda_sparse = 0.001;
    tc.lambda_mag = 0.001;
    tc.seed = kReferenceSeed;
    auto [fitted, report] = fit(r.sc.data, r.graph, mc, tc);
    fitted.graph_k = 8;
    r.fitted = std::move(fitted);
    r.report = std::move(report);
    return cache.emplace(kind, std::move(r)).first->second;
}

// ---------------------------------------------------------------------------

Outcome gradient_exactness() {
    const auto t0 = std::chrono::steady_clock::now();
    const int n = 100;
    const SpatialGraph graph = build_knn_graph(random_coords(n, 101), 6);
    ModelInputs in;
    in.x_burden = random_matrix(n, 3, 102);
    in.x_capacity = random_matrix(n, 2, 103);
    in.coords = random_matrix(n, 2, 104);
    in.graph = &graph;
    ModelConfig mc;
    mc.p_burden = 3;
    mc.p_capacity = 2;
    mc.regimes = 3;
    ZegnnParams p = init_params(mc, 105);
    p.tau_raw << -0.3, 0.2, 0.9;
    const Vector z = random_matrix(n, 1, 106).col(0);
    std::vector<int> ids;
    for (int i = 0; i < n; i += 2) ids.push_back(i);
    TrainConfig cfg;
    cfg.lambda_sparse = 0.01;
    cfg.lambda_mag = 0.01;

    const ForwardPass pass = forward_pass(p, in);
    const Vector g = backward(p, in, pass, loss_sensitivities(pass.out, z, ids, cfg)).params.flatten();
    const Vector theta = p.flatten();
    auto pattern = [](const ForwardPass& fp) {
        std::vector<bool> on;
        for (const Matrix* m : {&fp.burden_pre, &fp.capacity_pre, &fp.gate1_pre, &fp.gate2_pre}) {
            for (Eigen::Index i = 0; i < m->size(); ++i) on.push_back(m->data()[i] > 0.0);
        }
        return on;
    };
    const std::vector<bool> base = pattern(pass);
    struct Probe {
        double rel_err;
        bool smooth;
    };
    auto probe = [&](Eigen::Index t, double h) {
        Vector tp = theta, tm = theta;
        tp(t) += h;
        tm(t) -= h;
        ZegnnParams a = p, b = p;
        a.assign(tp);
        b.assign(tm);
        const ForwardPass fa = forward_pass(a, in), fb = forward_pass(b, in);
        const double num = (loss(fa.out, z, ids, cfg).total - loss(fb.out, z, ids, cfg).total) / (2 * h);
        const double err = std::abs(num - g(t)) / std::max({std::abs(num), std::abs(g(t)), 1e-3});
        return Probe{err, pattern(fa) == base && pattern(fb) == base};
    };
    double raw = 0.0, worst = 0.0;
    int kinked = 0, unresolved = 0;
    for (Eigen::Index t = 0; t < theta.size(); ++t) {
        const Probe coarse = probe(t, 1e-4);
        raw = std::max(raw, coarse.rel_err);
        if (coarse.smooth) {
            worst = std::max(worst, coarse.rel_err);
            continue;
        }
        ++kinked;
        bool resolved = false;
        for (double h : {1e-5, 1e-6, 1e-7}) {
            const Probe fine = probe(t, h);
            if (fine.smooth) {
                worst = std::max(worst, fine.rel_err);
                resolved = true;
                break;
            }
        }
        unresolved += resolved ? 0 : 1;
    }

    const SensitivityAtlas atlas = sensitivity_fields(p, in);
    const FiniteDifferenceResult fd = finite_difference_check(p, in, atlas, 1e-6);
    const double input_err = *std::max_element(fd.mean_abs_error.begin(), fd.mean_abs_error.end());
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst <= 1e-4 && unresolved == 0 && input_err <= 1e-3 && secs < 30.0;
    o.detail = std::to_string(theta.size()) + " parameters, max rel err " + fmt(worst, 8) + " (<= 1e-4; " +
               std::to_string(kinked) + " steps of h = 1e-4 cross a ReLU kink and were rechecked at the largest kink-free h in {1e-5, 1e-6, 1e-7}, " +
               std::to_string(unresolved) + " unresolved; raw h = 1e-4 max " + fmt(raw, 4) + "); input grads mean abs err " + fmt(input_err, 8) + " (<= 1e-3); " + fmt(secs, 1) +
               " s (< 30 s)";
    return o;
}

// Forward differences of the ground-truth F along standardized covariate j.
std::vector<double> oracle_fd_correlations(const Scenario& sc, double delta) {
    const SpatialDataset& d = sc.data;
    const FeatureScaler scaler = FeatureScaler::fit(d);
    const Matrix x = d.covariates();
    const std::vector<int>& regimes = d.truth->regime;
    const Potentials base = compute_potentials(x, regimes, sc.spec.kind);
    const Vector F0 = base.E - base.S;
    std::vector<double> out;
    for (int j = 0; j < d.p(); ++j) {
        const double sd = j < d.p_burden() ? scaler.burden.sd(j) : scaler.capacity.sd(j - d.p_burden());
        Matrix xs = x;
        xs.col(j).array() += delta * sd;
        const Potentials shifted = compute_potentials(xs, regimes, sc.spec.kind);
        const Vector dF = (shifted.E - shifted.S) - F0;
        const auto c = pearson(dF, d.truth->grad_F.col(j));
        out.push_back(c ? *c : 1.0);
    }
    return out;
}

Outcome finite_difference_protocol() {
    const ReferenceFit& r = reference_fit(ScenarioKind::Nonlinear);
    const SensitivityAtlas atlas = sensitivity_fields(r.fitted, r.sc.data, r.graph);
    const FiniteDifferenceResult fd = finite_difference_check(r.fitted, r.sc.data, r.graph, atlas, 0.1);
    const std::vector<double> oracle = oracle_fd_correlations(r.sc, 0.1);
    bool all = true;
    bool bounded = true;
    std::ostringstream os;
    for (int j = 0; j < atlas.p(); ++j) {
        const double c = fd.corr[j] ? *fd.corr[j] : -1.0;
        const bool ok = c >= 0.99;
        all = all && ok;
        if (!ok && oracle[j] >= 0.99) bounded = false;
        os << atlas.names[j] << " " << fmt(c) << (ok ? "" : "*") << " [oracle " << fmt(oracle[j]) << "]  ";
    }
    Outcome o;
    o.pass = all;
    o.oracle_bounded = !all && bounded;
    o.detail = os.str() + "(threshold 0.99, seed " + std::to_string(kReferenceSeed) + ")";
    return o;
}

Outcome gradient_matching_criterion() {
    const ReferenceFit& r = reference_fit(ScenarioKind::Nonlinear);
    const SensitivityAtlas atlas = sensitivity_fields(r.fitted, r.sc.data, r.graph);
    const auto rows = gradient_matching(atlas, r.sc.data.truth);
    const GradientMatch& x1 = rows[0];
    const double corr = x1.corr_F.value_or(-1.0);
    const double sign = x1.core_sign_agreement.value_or(0.0);

    const Vector tg = r.sc.data.truth->grad_F.col(0);
    int pos = 0, neg = 0, truth_pos = 0, truth_neg = 0, agree_pos = 0, agree_neg = 0;
    for (int i = 0; i < atlas.n(); ++i) {
        (atlas.gF(i, 0) > 0.0 ? pos : neg)++;
        if (tg(i) > 0.0) {
            ++truth_pos;
            agree_pos += atlas.gF(i, 0) > 0.0 ? 1 : 0;
        } else if (tg(i) < 0.0) {
            ++truth_neg;
            agree_neg += atlas.gF(i, 0) < 0.0 ? 1 : 0;
        }
    }
    const double rri = role_reversal_index(atlas)[0];
    const double rri_true = role_reversal_index(tg, 0.01 * tg.cwiseAbs().mean());
    Outcome o;
    o.pass = corr >= 0.7 && sign >= 0.8 && pos > 0 && neg > 0;
    o.detail = "x1 corr " + fmt(corr) + " (>= 0.7), core sign agreement " + fmt(sign) + " over " +
               std::to_string(x1.core_nodes) + " core nodes (>= 0.8), gF signs +" + std::to_string(pos) + "/-" +
               std::to_string(neg) + " (sign agreement " + std::to_string(agree_pos) + "/" + std::to_string(truth_pos) +
               " where truth > 0, " + std::to_string(agree_neg) + "/" + std::to_string(truth_neg) +
               " where truth < 0), RRI " + fmt(rri, 3) + " vs oracle " + fmt(rri_true, 3) + " (seed " +
               std::to_string(kReferenceSeed) + ")";
    return o;
}

Outcome spatial_transfer() {
    const auto t0 = std::chrono::steady_clock::now();
    CvOptions opts;
    opts.in_sample = false;
    opts.threads = thread_cap_from_env();
    const HyperParams hyper{8, 3, 0.001, 0.001};
    int held = 0;
    std::ostringstream os;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Scenario sc = scenario(ScenarioKind::Nonlinear, seed);
        auto r2 = [&](ModelKind m, Protocol p) { return run_cv(m, sc.data, p, hyper, seed, opts).mean_r2; };
        const double z_rand = r2(ModelKind::Zegnn, Protocol::Random);
        const double z_spat = r2(ModelKind::Zegnn, Protocol::SpatialBlock);
        const double o_spat = r2(ModelKind::Ols, Protocol::SpatialBlock);
        const double d_rand = r2(ModelKind::Dnn, Protocol::Random);
        const double d_spat = r2(ModelKind::Dnn, Protocol::SpatialBlock);
        const bool ok = z_spat > o_spat && (z_rand - z_spat) <= (d_rand - d_spat);
        held += ok ? 1 : 0;
        os << "\n      seed " << seed << ": zegnn " << fmt(z_rand, 3) << "/" << fmt(z_spat, 3) << " ols spatial "
           << fmt(o_spat, 3) << " dnn " << fmt(d_rand, 3) << "/" << fmt(d_spat, 3) << " gaps " << fmt(z_rand - z_spat, 3)
           << " vs " << fmt(d_rand - d_spat, 3) << (ok ? " ok" : " violated");
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = held >= 4 && secs < 1800.0;
    o.detail = std::to_string(held) + "/5 seeds hold (>= 4), " + fmt(secs / 60.0, 1) + " min (< 30)" + os.str();
    return o;
}

Outcome residual_attenuation() {
    bool all = true;
    std::ostringstream os;
    CvOptions opts;
    for (ScenarioKind kind : {ScenarioKind::GlobalLinear, ScenarioKind::LocalLinear, ScenarioKind::Nonlinear}) {
        const ReferenceFit& r = reference_fit(kind);
        const SpatialGraph w8 = build_knn_graph(r.sc.data.coords, 8);
        const double mz = morans_i(r.sc.data.y - predict(r.fitted, r.sc.data, r.graph), w8);
        const CvReport ols = run_cv(ModelKind::Ols, r.sc.data, Protocol::InSample, HyperParams{}, kReferenceSeed, opts);
        const double mo = *ols.residual_morans_i;
        const bool ok = std::abs(mz) < std::abs(mo);
        all = all && ok;
        os << to_string(kind) << " zegnn " << fmt(mz) << " ols " << fmt(mo) << (ok ? "" : "*") << "  ";
    }
    Outcome o;
    o.pass = all;
    o.detail = os.str() + "(in-sample residual Moran's I, k = 8)";
    return o;
}

Outcome mixture_identities() {
    int calls = 0;
    double worst = 0.0;
    for (int K : {1, 2, 3, 5}) {
        for (int rep = 0; rep < 12; ++rep) {
            const int n = 20 + 7 * rep;
            const std::uint64_t seed = 1000 + 31 * K + rep;
            const SpatialGraph graph = build_knn_graph(random_coords(n, seed), 3 + rep % 5);
            ModelInputs in;
            in.x_burden = random_matrix(n, 1 + rep % 3, seed + 1);
            in.x_capacity = random_matrix(n, 1 + rep % 2, seed + 2);
            in.coords = random_matrix(n, 2, seed + 3);
            in.graph = &graph;
            ModelConfig mc;
            mc.p_burden = static_cast<int>(in.x_burden.cols());
            mc.p_capacity = static_cast<int>(in.x_capacity.cols());
            mc.regimes = K;
            mc.hidden = 16;
            mc.gate_hidden = 16;
            ZegnnParams p = init_params(mc, seed + 4);
            // saturate the gate on odd repetitions
            if (rep % 2) p.assign(p.flatten() * (1.0 + rep));
            worst = std::max(worst, invariant_violation(forward(p, in)));
            ++calls;
        }
    }
    const ReferenceFit& r = reference_fit(ScenarioKind::Nonlinear);
    worst = std::max(worst, invariant_violation(predict_outputs(r.fitted, r.sc.data, r.graph)));
    ++calls;
    Outcome o;
    o.pass = worst <= 1e-9;
    o.detail = std::to_string(calls) + " forward calls (K in {1,2,3,5}, saturated gates, reference fit), max violation " +
               fmt(worst, 12) + " (<= 1e-9)";
    return o;
}

Outcome loss_closed_forms() {
    double worst = 0.0;
    bool exact = true;
    for (int K : {2, 3, 5}) {
        ForwardOutputs out;
        const int n = 40;
        out.E_reg = random_matrix(n, K, 7 + K);
        out.S_reg = random_matrix(n, K, 8 + K);
        out.T = Vector::Ones(K);
        out.P = Matrix::Constant(n, K, 1.0 / K);
        assemble_mixture(out, 1e-12);
        const Vector z = random_matrix(n, 1, 9 + K).col(0);
        std::vector<int> ids(n);
        for (int i = 0; i < n; ++i) ids[i] = i;
        TrainConfig cfg;
        cfg.lambda_sparse = 1.0;
        const LossTerms terms = loss(out, z, ids, cfg);
        worst = std::max(worst, std::abs(terms.sparse - (-K * std::log(1.0 / K + cfg.eps_occupancy))));
        TrainConfig zero;
        zero.lambda_sparse = 0.0;
        zero.lambda_mag = 0.0;
        const LossTerms plain = loss(out, z, ids, zero);
        exact = exact && plain.total == plain.mse;
    }
    Outcome o;
    o.pass = worst <= 1e-9 && exact;
    o.detail = "uniform-gate sparse penalty max err " + fmt(worst, 14) + " (<= 1e-9, K in {2,3,5}); zero-lambda total " +
               (exact ? "==" : "!=") + " MSE";
    return o;
}

double brute_morans(const Vector& v, const Matrix& W) {
    const double n = static_cast<double>(v.size());
    const double mean = v.sum() / n;
    double num = 0.0, den = 0.0, wsum = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        den += (v(i) - mean) * (v(i) - mean);
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            num += W(i, j) * (v(i) - mean) * (v(j) - mean);
            wsum += W(i, j);
        }
    }
    return n / wsum * num / den;
}

Outcome morans_oracle() {
    std::mt19937_64 rng(8);
    int trials = 0;
    double worst = 0.0;
    for (int n = 3; n <= 12; ++n) {
        for (int rep = 0; rep < 200; ++rep) {
            std::bernoulli_distribution coin(0.15 + 0.7 * (rep % 10) / 10.0);
            std::vector<std::vector<int>> adj(n);
            for (int i = 0; i < n; ++i) {
                for (int j = i + 1; j < n; ++j) {
                    if (coin(rng)) {
                        adj[i].push_back(j);
                        adj[j].push_back(i);
                    }
                }
            }
            const SpatialGraph g(0, adj);
            if (g.edge_count() == 0) continue;
            std::normal_distribution<double> nd(0.0, 1.0 + rep % 4);
            Vector v(n);
            for (int i = 0; i < n; ++i) v(i) = nd(rng);
            worst = std::max(worst, std::abs(morans_i(v, g) - brute_morans(v, g.adjacency_dense())));
            ++trials;
        }
    }

    const Scenario sc = scenario(ScenarioKind::Nonlinear, kReferenceSeed, 20);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 8);
    const int n = g.n();
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> draws;
    for (int d = 0; d < 200; ++d) {
        Vector v(n);
        for (int i = 0; i < n; ++i) v(i) = nd(rng);
        draws.push_back(morans_i(v, g));
    }
    double mean = 0.0;
    for (double x : draws) mean += x;
    mean /= draws.size();
    double var = 0.0;
    for (double x : draws) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / (draws.size() - 1)) / std::sqrt(static_cast<double>(draws.size()));
    const double expect = -1.0 / (n - 1);
    Outcome o;
    o.pass = worst <= 1e-10 && std::abs(mean - expect) <= 3.0 * se;
    o.detail = std::to_string(trials) + " graphs N = 3..12, max |I - brute| " + fmt(worst, 14) +
               " (<= 1e-10); null mean " + fmt(mean, 5) + " vs " + fmt(expect, 5) + " (3 SE = " + fmt(3 * se, 5) + ")";
    return o;
}

Outcome leakage_audit() {
    CvOptions opts;
    opts.train.max_epochs = 60;
    opts.train.patience = 60;
    opts.neural.epochs = 60;
    const HyperParams hyper{8, 3, 0.001, 0.001};
    long long leaked = 0;
    long long audited = 0;
    int fits = 0;
    bool instrumented = true;
    for (ScenarioKind kind : {ScenarioKind::GlobalLinear, ScenarioKind::LocalLinear, ScenarioKind::Nonlinear}) {
        const Scenario sc = scenario(kind, kReferenceSeed);
        const std::vector<int> folds = make_folds(sc.data, Protocol::SpatialBlock, 5, 5, kReferenceSeed);
        for (ModelKind model : {ModelKind::Zegnn, ModelKind::Gnn}) {
            const int k = model == ModelKind::Gnn ? opts.neural.graph_k : hyper.k;
            const SpatialGraph graph = build_knn_graph(sc.data.coords, k);
            for (int f = 0; f < 5; ++f) {
                std::vector<int> test;
                for (int i = 0; i < sc.data.n(); ++i) {
                    if (folds[i] == f) test.push_back(i);
                }
                const HoldoutFit h = fit_and_predict(model, sc.data, &graph, test, hyper, opts);
                const std::set<int> test_set(test.begin(), test.end());
                const std::set<int> touched(h.accessed_nodes.begin(), h.accessed_nodes.end());
                for (int id : touched) leaked += test_set.count(id);
                audited += static_cast<long long>(touched.size());
                instrumented = instrumented && touched.size() + test.size() == static_cast<size_t>(sc.data.n());
                ++fits;
            }
        }
    }
    Outcome o;
    o.pass = leaked == 0 && instrumented;
    o.detail = std::to_string(fits) + " fold fits (ZeGNN + GNN x 3 scenarios x 5 spatial folds), " +
               std::to_string(audited) + " node reads audited, " + std::to_string(leaked) +
               " test-node reads; every training node " + (instrumented ? "observed" : "NOT observed");
    return o;
}

Outcome determinism() {
    const int threads = thread_cap_from_env();
    bool ok = true;
    std::vector<std::string> failed;
    auto check = [&](const std::string& what, const std::string& a, const std::string& b) {
        if (a != b) {
            ok = false;
            failed.push_back(what);
        }
    };

    auto gen = [] {
        const Scenario sc = scenario(ScenarioKind::Nonlinear, kReferenceSeed);
        return format_dataset_csv(sc.data, sc.schema) + scenario_truth_json(sc).dump();
    };
    check("generate", gen(), gen());

    const Scenario small = scenario(ScenarioKind::Nonlinear, kReferenceSeed, 20);
    auto fit_once = [&] {
        const SpatialGraph g = build_knn_graph(small.data.coords, 8);
        ModelConfig mc;
        mc.p_burden = 3;
        mc.p_capacity = 2;
        mc.regimes = 3;
        TrainConfig tc;
        tc.max_epochs = 120;
        tc.seed = kReferenceSeed;
        auto [fitted, report] = fit(small.data, g, mc, tc);
        return fitted_to_json(fitted).dump() + report.trace_csv();
    };
    check("fit", fit_once(), fit_once());

    CvOptions opts;
    opts.train.max_epochs = 40;
    opts.neural.epochs = 40;
    opts.threads = threads;
    auto cv_once = [&](ModelKind m) {
        return run_cv(m, small.data, Protocol::SpatialBlock, HyperParams{}, kReferenceSeed, opts).to_json().dump();
    };
    for (ModelKind m : {ModelKind::Zegnn, ModelKind::Ols, ModelKind::Dnn, ModelKind::Gnn}) {
        check("cv/" + to_string(m), cv_once(m), cv_once(m));
    }

    SearchGrid grid;
    grid.k_candidates = {6, 8};
    grid.lambda_sparse = {0.0, 0.005};
    grid.lambda_mag = {0.001};
    auto search_once = [&] {
        const SearchResult r = hyper_search(small.data, grid, kReferenceSeed, opts);
        return r.to_json().dump() + r.table_csv();
    };
    check("search", search_once(), search_once());

    Outcome o;
    o.pass = ok;
    std::string bad;
    for (const auto& f : failed) bad += " " + f;
    o.detail = std::string("generate, fit, cv (4 models), search byte-identical across reruns at thread cap ") +
               std::to_string(threads) + (ok ? "" : "; differing:" + bad);
    return o;
}

Outcome desk_runtime() {
    const Scenario sc = scenario(ScenarioKind::Nonlinear, kReferenceSeed);
    const SpatialGraph g = build_knn_graph(sc.data.coords, 8);
    ModelConfig mc;
    mc.p_burden = 3;
    mc.p_capacity = 2;
    mc.regimes = 3;
    TrainConfig tc;
    tc.max_epochs = 800;
    tc.patience = 100000;
    tc.lambda_sparse = 0.001;
    tc.lambda_mag = 0.001;
    tc.seed = kReferenceSeed;
    auto t0 = std::chrono::steady_clock::now();
    const auto [fitted, report] = fit(sc.data, g, mc, tc);
    const double fit_secs = seconds_since(t0);

    CvOptions opts;
    opts.threads = thread_cap_from_env();
    const SearchGrid grid;
    t0 = std::chrono::steady_clock::now();
    const SearchResult res = hyper_search(sc.data, grid, kReferenceSeed, opts);
    const double grid_secs = seconds_since(t0);
    Outcome o;
    o.pass = report.epochs_run == 800 && fit_secs < 300.0 && grid_secs < 7200.0;
    o.detail = "800-epoch fit (N = 2500, K = 3) " + fmt(fit_secs, 1) + " s (< 300, " +
               std::to_string(report.epochs_run) + " epochs run); full grid " + std::to_string(res.table.size()) +
               " points x 5 folds " + fmt(grid_secs / 60.0, 1) + " min (< 120) at " + std::to_string(opts.threads) +
               " thread(s), selected k = " + std::to_string(res.selected.k) +
               ", lambda_sparse = " + format_double(res.selected.lambda_sparse) +
               ", lambda_mag = " + format_double(res.selected.lambda_mag);
    return o;
}

struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "gradient exactness", gradient_exactness},
        {2, "finite-difference protocol (delta = 0.1)", finite_difference_protocol},
        {3, "ground-truth gradient matching", gradient_matching_criterion},
        {4, "spatial-transfer ordering", spatial_transfer},
        {5, "residual autocorrelation attenuation", residual_attenuation},
        {6, "mixture identities", mixture_identities},
        {7, "loss closed forms", loss_closed_forms},
        {8, "Moran's I oracle", morans_oracle},
        {9, "leakage audit", leakage_audit},
        {10, "determinism", determinism},
        {11, "desk-scale runtime", desk_runtime},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));

    int hard_failures = 0;
    int bounded = 0;
    for (const Criterion& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        const std::string status = o.pass ? "PASS" : "FAIL";
        std::cout << "criterion " << c.id << " [" << status << "] " << c.title << ": " << o.detail;
        if (!o.pass && o.oracle_bounded) std::cout << " -- known failure: the ground truth itself misses the threshold";
        std::cout << " (" << fmt(seconds_since(t0), 1) << " s)" << std::endl;
        if (!o.pass) (o.oracle_bounded ? bounded : hard_failures)++;
    }
    std::cout << "summary: " << hard_failures << " failing, " << bounded << " oracle-bounded known failure(s)"
              << std::endl;
    return hard_failures == 0 ? 0 : 1;
}
