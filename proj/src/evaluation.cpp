#include "zegnn/evaluation.hpp"

#include "zegnn/error.hpp"
#include "zegnn/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace zegnn {

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::Zegnn: return "zegnn";
        case ModelKind::Ols: return "ols";
        case ModelKind::Dnn: return "dnn";
        case ModelKind::Gnn: return "gnn";
    }
    return "unknown";
}

std::string to_string(Protocol protocol) {
    switch (protocol) {
        case Protocol::Random: return "random";
        case Protocol::SpatialBlock: return "spatial_block";
        case Protocol::InSample: return "in_sample";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& text) {
    if (text == "zegnn") return ModelKind::Zegnn;
    if (text == "ols") return ModelKind::Ols;
    if (text == "dnn") return ModelKind::Dnn;
    if (text == "gnn") return ModelKind::Gnn;
    throw ParameterError("unknown model '" + text + "' (expected zegnn, ols, dnn, gnn)");
}

Protocol parse_protocol(const std::string& text) {
    if (text == "random") return Protocol::Random;
    if (text == "spatial" || text == "spatial_block" || text == "spatial-block") return Protocol::SpatialBlock;
    if (text == "in_sample" || text == "in-sample") return Protocol::InSample;
    throw ParameterError("unknown protocol '" + text + "' (expected random, spatial, in_sample)");
}

nlohmann::json HyperParams::to_json() const {
    return {{"k", k}, {"K_upper", regimes}, {"lambda_sparse", lambda_sparse}, {"lambda_mag", lambda_mag}};
}

namespace {

double shannon(const Eigen::Ref<const Vector>& p) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (p(k) > 0.0) h -= p(k) * std::log(p(k));
    }
    return h;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

Vector gather(const Vector& v, std::span<const int> ids) {
    Vector out(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) out(i) = v(ids[i]);
    return out;
}

std::optional<double> safe_morans(const Vector& values, const SpatialGraph& graph) {
    try {
        return morans_i(values, graph);
    } catch (const DegenerateError&) {
        return std::nullopt;
    }
}

nlohmann::json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

RegimeUsage regime_usage(const Matrix& P) {
    if (P.rows() == 0 || P.cols() == 0) throw ParameterError("regime_usage: empty probability matrix");
    RegimeUsage u;
    const Vector pbar = P.colwise().mean().transpose();
    u.n_eff_global = std::exp(shannon(pbar));
    double local = 0.0;
    std::vector<int> counts(P.cols(), 0);
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        const Vector row = P.row(i).transpose();
        local += std::exp(shannon(row));
        Eigen::Index arg = 0;
        for (Eigen::Index k = 1; k < P.cols(); ++k) {
            if (P(i, k) > P(i, arg)) arg = k;
        }
        ++counts[arg];
    }
    u.n_eff_local = local / static_cast<double>(P.rows());
    u.max_dominant_share =
        static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(P.rows());
    return u;
}

double r2_score(const Vector& y, const Vector& yhat) {
    if (y.size() != yhat.size() || y.size() == 0) throw ParameterError("r2_score: size mismatch or empty");
    const double ss_res = (y - yhat).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
    if (ss_tot == 0.0) throw DegenerateError("r2_score: constant held-out outcome");
    return 1.0 - ss_res / ss_tot;
}

double rmse(const Vector& y, const Vector& yhat) {
    if (y.size() != yhat.size() || y.size() == 0) throw ParameterError("rmse: size mismatch or empty");
    return std::sqrt((y - yhat).squaredNorm() / static_cast<double>(y.size()));
}

int CvReport::leaked_nodes() const {
    int total = 0;
    for (const FoldResult& f : folds) total += f.leaked_nodes;
    return total;
}

nlohmann::json CvReport::to_json() const {
    nlohmann::json fj = nlohmann::json::array();
    for (const FoldResult& f : folds) {
        fj.push_back({{"fold", f.fold},
                      {"n_train", f.n_train},
                      {"n_test", f.n_test},
                      {"r2", f.r2},
                      {"rmse", f.rmse},
                      {"leaked_nodes", f.leaked_nodes}});
    }
    nlohmann::json j = {{"format", "zegnn-cv-report"},
                        {"version", 1},
                        {"model", to_string(model)},
                        {"protocol", to_string(protocol)},
                        {"seed", seed},
                        {"graph_k", graph_k},
                        {"hyperparameters", hyper.to_json()},
                        {"folds", fj},
                        {"mean_r2", mean_r2},
                        {"se_r2", se_r2},
                        {"mean_rmse", mean_rmse},
                        {"se_rmse", se_rmse},
                        {"heldout_morans_i", opt_json(heldout_morans_i)},
                        {"r2_in_sample", opt_json(r2_in_sample)},
                        {"rmse_in_sample", opt_json(rmse_in_sample)},
                        {"residual_morans_i", opt_json(residual_morans_i)},
                        {"leaked_nodes", leaked_nodes()},
                        {"fold_id", fold_id}};
    if (regimes) {
        j["regime_usage"] = {{"n_eff_global", regimes->n_eff_global},
                             {"n_eff_local", regimes->n_eff_local},
                             {"max_dominant_share", regimes->max_dominant_share}};
    } else {
        j["regime_usage"] = nullptr;
    }
    return j;
}

std::string CvReport::folds_csv() const {
    std::ostringstream os;
    os << "model,protocol,fold,n_train,n_test,r2,rmse,leaked_nodes\n";
    for (const FoldResult& f : folds) {
        os << to_string(model) << ',' << to_string(protocol) << ',' << f.fold << ',' << f.n_train << ','
           << f.n_test << ',' << format_double(f.r2) << ',' << format_double(f.rmse) << ',' << f.leaked_nodes
           << '\n';
    }
    return os.str();
}

std::vector<int> make_folds(const SpatialDataset& data, Protocol protocol, int folds, int grid, std::uint64_t seed) {
    const int n = data.n();
    if (protocol == Protocol::InSample) return std::vector<int>(n, 0);
    if (folds < 2) throw ParameterError("make_folds: need at least 2 folds");
    if (protocol == Protocol::SpatialBlock) return block_partition(data.coords, grid, folds, seed).fold_id;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_stream(seed, 500);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> fold(n);
    for (int r = 0; r < n; ++r) fold[order[r]] = r % folds;
    return fold;
}

HoldoutFit fit_and_predict(ModelKind kind, const SpatialDataset& data, const SpatialGraph* graph,
                           std::span<const int> test_ids, const HyperParams& hyper, const CvOptions& options) {
    const int n = data.n();
    std::vector<char> is_test(n, 0);
    for (int i : test_ids) {
        if (i < 0 || i >= n) throw ParameterError("fit_and_predict: test id out of range");
        is_test[i] = 1;
    }
    std::vector<int> train_ids;
    for (int i = 0; i < n; ++i) {
        if (!is_test[i]) train_ids.push_back(i);
    }
    if (train_ids.size() < 2) throw ParameterError("fit_and_predict: fewer than 2 training nodes");
    const SpatialDataset train = subset(data, train_ids);
    const bool graph_model = kind == ModelKind::Zegnn || kind == ModelKind::Gnn;
    if (graph_model && (!graph || graph->n() != n)) throw ParameterError("fit_and_predict: graph required");

    HoldoutFit result;
    if (kind == ModelKind::Zegnn) {
        const SpatialGraph sub = training_subgraph(*graph, test_ids);
        ModelConfig mc = options.model;
        mc.p_burden = data.p_burden();
        mc.p_capacity = data.p_capacity();
        mc.regimes = hyper.regimes;
        TrainConfig tc = options.train;
        tc.lambda_sparse = hyper.lambda_sparse;
        tc.lambda_mag = hyper.lambda_mag;
        auto [fitted, report] = fit(train, sub, mc, tc);
        fitted.graph_k = graph->k();
        const ForwardOutputs out = predict_outputs(fitted, data, *graph);
        result.yhat = fitted.scaler.destandardize_y(out.F);
        result.P = out.P;
        result.accessed_nodes = std::move(report.accessed_nodes);
        return result;
    }

    const FeatureScaler scaler = FeatureScaler::fit(train);
    const Matrix x_train = scaler.covariates(train);
    const Matrix x_all = scaler.covariates(data);
    const Vector z = scaler.standardize_y(train.y);
    Vector zhat;
    switch (kind) {
        case ModelKind::Ols: {
            const OlsModel m = fit_ols(ols_design(x_train), z);
            zhat = m.predict(ols_design(x_all));
            break;
        }
        case ModelKind::Dnn: {
            auto [params, report] = fit_dnn(x_train, z, options.neural);
            zhat = mlp_forward(params, x_all, nullptr);
            break;
        }
        case ModelKind::Gnn: {
            const SpatialGraph sub = training_subgraph(*graph, test_ids);
            auto [params, report] = fit_gnn(x_train, z, sub, options.neural);
            zhat = mlp_forward(params, x_all, graph);
            result.accessed_nodes = std::move(report.accessed_nodes);
            break;
        }
        case ModelKind::Zegnn: break;
    }
    result.yhat = scaler.destandardize_y(zhat);
    return result;
}

CvReport run_cv(ModelKind kind, const SpatialDataset& data, Protocol protocol, const HyperParams& hyper,
                std::uint64_t seed, const CvOptions& options) {
    const int n = data.n();
    CvReport report;
    report.model = kind;
    report.protocol = protocol;
    report.hyper = hyper;
    report.seed = seed;

    std::optional<SpatialGraph> graph;
    if (kind == ModelKind::Zegnn) graph = build_knn_graph(data.coords, hyper.k);
    if (kind == ModelKind::Gnn) graph = build_knn_graph(data.coords, options.neural.graph_k);
    report.graph_k = graph ? graph->k() : 0;
    const SpatialGraph moran_graph = build_knn_graph(data.coords, options.moran_k);

    CvOptions opts = options;
    opts.train.seed = seed;
    opts.neural.seed = seed;

    report.fold_id = make_folds(data, protocol, options.folds, options.grid, seed);
    const int n_folds = protocol == Protocol::InSample ? 0 : options.folds;
    std::vector<std::vector<int>> test_sets(n_folds);
    for (int i = 0; i < n; ++i) {
        if (n_folds > 0) test_sets[report.fold_id[i]].push_back(i);
    }
    for (int f = 0; f < n_folds; ++f) {
        if (test_sets[f].size() < 2) {
            throw ParameterError("run_cv: fold " + std::to_string(f) + " has fewer than 2 held-out nodes");
        }
    }

    const bool refit = protocol == Protocol::InSample || options.in_sample;
    const int tasks = n_folds + (refit ? 1 : 0);
    std::vector<HoldoutFit> fits(tasks);
    parallel_for(tasks, options.threads, [&](int t) {
        const std::vector<int> none;
        const std::vector<int>& test = t < n_folds ? test_sets[t] : none;
        fits[t] = fit_and_predict(kind, data, graph ? &*graph : nullptr, test, hyper, opts);
    });

    Vector oof = Vector::Zero(n);
    std::vector<double> r2s, rmses;
    for (int f = 0; f < n_folds; ++f) {
        const std::vector<int>& test = test_sets[f];
        const Vector y_test = gather(data.y, test);
        const Vector yhat_test = gather(fits[f].yhat, test);
        for (int i : test) oof(i) = fits[f].yhat(i);
        FoldResult fr;
        fr.fold = f;
        fr.n_test = static_cast<int>(test.size());
        fr.n_train = n - fr.n_test;
        fr.r2 = r2_score(y_test, yhat_test);
        fr.rmse = rmse(y_test, yhat_test);
        const std::set<int> test_set(test.begin(), test.end());
        for (int id : fits[f].accessed_nodes) fr.leaked_nodes += test_set.count(id) ? 1 : 0;
        r2s.push_back(fr.r2);
        rmses.push_back(fr.rmse);
        report.folds.push_back(fr);
    }
    if (n_folds > 0) {
        report.mean_r2 = mean_of(r2s);
        report.se_r2 = standard_error(r2s);
        report.mean_rmse = mean_of(rmses);
        report.se_rmse = standard_error(rmses);
        report.heldout_morans_i = safe_morans(data.y - oof, moran_graph);
    }
    if (refit) {
        const HoldoutFit& full = fits[tasks - 1];
        report.r2_in_sample = r2_score(data.y, full.yhat);
        report.rmse_in_sample = rmse(data.y, full.yhat);
        report.residual_morans_i = safe_morans(data.y - full.yhat, moran_graph);
        if (full.P) report.regimes = regime_usage(*full.P);
        if (protocol == Protocol::InSample) {
            report.mean_r2 = *report.r2_in_sample;
            report.mean_rmse = *report.rmse_in_sample;
        }
    }
    return report;
}

void SearchGrid::validate() const {
    if (k_candidates.empty() || regime_candidates.empty() || lambda_sparse.empty() || lambda_mag.empty()) {
        throw ParameterError("search grid: every axis must be non-empty");
    }
    for (int k : k_candidates) {
        if (k < 1) throw ParameterError("search grid: k must be >= 1");
    }
    for (int r : regime_candidates) {
        if (r < 1) throw ParameterError("search grid: K_upper must be >= 1");
    }
    for (double v : lambda_sparse) {
        if (!(v >= 0.0)) throw ParameterError("search grid: lambda_sparse must be >= 0");
    }
    for (double v : lambda_mag) {
        if (!(v >= 0.0)) throw ParameterError("search grid: lambda_mag must be >= 0");
    }
}

std::vector<HyperParams> SearchGrid::points() const {
    validate();
    std::vector<HyperParams> pts;
    for (int k : k_candidates) {
        for (int r : regime_candidates) {
            for (double ls : lambda_sparse) {
                for (double lm : lambda_mag) pts.push_back({k, r, ls, lm});
            }
        }
    }
    return pts;
}

nlohmann::json SearchGrid::to_json() const {
    return {{"k", k_candidates}, {"K_upper", regime_candidates}, {"lambda_sparse", lambda_sparse},
            {"lambda_mag", lambda_mag}};
}

SearchGrid SearchGrid::from_json(const nlohmann::json& j) {
    SearchGrid g;
    try {
        if (j.contains("k")) g.k_candidates = j.at("k").get<std::vector<int>>();
        if (j.contains("K_upper")) g.regime_candidates = j.at("K_upper").get<std::vector<int>>();
        if (j.contains("lambda_sparse")) g.lambda_sparse = j.at("lambda_sparse").get<std::vector<double>>();
        if (j.contains("lambda_mag")) g.lambda_mag = j.at("lambda_mag").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("search grid: ") + e.what());
    }
    g.validate();
    return g;
}

std::string SearchResult::table_csv() const {
    std::ostringstream os;
    os << "k,K_upper,lambda_sparse,lambda_mag,mean_spatial_r2,se_spatial_r2,mean_spatial_rmse,heldout_morans_i,"
          "admissible,selected\n";
    for (const SearchRow& r : table) {
        os << r.hyper.k << ',' << r.hyper.regimes << ',' << format_double(r.hyper.lambda_sparse) << ','
           << format_double(r.hyper.lambda_mag) << ',' << format_double(r.mean_r2) << ',' << format_double(r.se_r2)
           << ',' << format_double(r.mean_rmse) << ',' << format_double(r.heldout_morans_i) << ','
           << (r.admissible ? 1 : 0) << ',' << (r.selected ? 1 : 0) << '\n';
    }
    return os.str();
}

nlohmann::json SearchResult::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const SearchRow& r : table) {
        nlohmann::json row = r.hyper.to_json();
        row["mean_spatial_r2"] = r.mean_r2;
        row["se_spatial_r2"] = r.se_r2;
        row["mean_spatial_rmse"] = r.mean_rmse;
        row["heldout_morans_i"] = r.heldout_morans_i;
        row["admissible"] = r.admissible;
        row["selected"] = r.selected;
        rows.push_back(row);
    }
    return {{"format", "zegnn-search"}, {"version", 1}, {"selected", selected.to_json()}, {"table", rows}};
}

size_t select_one_se(std::vector<SearchRow>& rows) {
    if (rows.empty()) throw ParameterError("select_one_se: empty grid");
    size_t best = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].mean_r2 > rows[best].mean_r2) best = i;
    }
    const double threshold = rows[best].mean_r2 - rows[best].se_r2;
    std::optional<size_t> pick;
    auto key = [](const SearchRow& r) {
        return std::make_tuple(r.hyper.k, r.hyper.lambda_sparse + r.hyper.lambda_mag, r.hyper.regimes);
    };
    for (size_t i = 0; i < rows.size(); ++i) {
        rows[i].admissible = rows[i].mean_r2 >= threshold;
        rows[i].selected = false;
        if (rows[i].admissible && (!pick || key(rows[i]) < key(rows[*pick]))) pick = i;
    }
    rows[*pick].selected = true;
    return *pick;
}

SearchResult hyper_search(const SpatialDataset& data, const SearchGrid& grid, std::uint64_t seed,
                          const CvOptions& options) {
    const std::vector<HyperParams> pts = grid.points();
    CvOptions inner = options;
    inner.in_sample = false;
    inner.threads = 1;
    std::vector<SearchRow> rows(pts.size());
    parallel_for(static_cast<int>(pts.size()), options.threads, [&](int i) {
        const CvReport r = run_cv(ModelKind::Zegnn, data, Protocol::SpatialBlock, pts[i], seed, inner);
        rows[i].hyper = pts[i];
        rows[i].mean_r2 = r.mean_r2;
        rows[i].se_r2 = r.se_r2;
        rows[i].mean_rmse = r.mean_rmse;
        rows[i].heldout_morans_i = r.heldout_morans_i.value_or(std::nan(""));
    });
    SearchResult result;
    const size_t pick = select_one_se(rows);
    result.selected = rows[pick].hyper;
    result.table = std::move(rows);
    return result;
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    const int workers = std::max(1, std::min(threads, count));
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

int thread_cap_from_env() {
    const char* v = std::getenv("ZEGNN_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw ParameterError("ZEGNN_THREADS must be a positive integer");
    return static_cast<int>(n);
}

}  // namespace zegnn
