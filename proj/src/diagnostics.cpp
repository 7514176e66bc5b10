#include "zegnn/diagnostics.hpp"

#include "zegnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace zegnn {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
    }
    return m;
}

std::vector<double> abs_column(const Matrix& m, int j) {
    std::vector<double> v(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) v[i] = std::abs(m(i, j));
    return v;
}

std::string opt_csv(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string name_of(const SensitivityAtlas& atlas, int j) {
    return j < static_cast<int>(atlas.names.size()) ? atlas.names[j] : "x" + std::to_string(j + 1);
}

}  // namespace

SensitivityAtlas sensitivity_fields(const ZegnnParams& params, const ModelInputs& in, std::vector<std::string> names) {
    const int n = in.n();
    const int pe = params.config.p_burden;
    const int ps = params.config.p_capacity;
    const ForwardPass pass = forward_pass(params, in);
    SensitivityAtlas atlas;
    atlas.gF.resize(n, pe + ps);
    atlas.gE.resize(n, pe + ps);
    atlas.gS.resize(n, pe + ps);
    atlas.H_norm = pass.out.H_norm;
    atlas.names = std::move(names);
    for (int j = 0; j < pe + ps; ++j) {
        Matrix db = Matrix::Zero(n, pe);
        Matrix dc = Matrix::Zero(n, ps);
        if (j < pe) {
            db.col(j).setOnes();
        } else {
            dc.col(j - pe).setOnes();
        }
        const OutputTangents t = input_tangents(params, in, pass, db, dc);
        atlas.gF.col(j) = t.dF;
        atlas.gE.col(j) = t.dE_mix;
        atlas.gS.col(j) = t.dS_mix;
    }
    return atlas;
}

SensitivityAtlas sensitivity_fields(const FittedZegnn& fitted, const SpatialDataset& data, const SpatialGraph& graph) {
    return sensitivity_fields(fitted.params, fitted.scaler.inputs(data, graph), data.covariate_names());
}

std::optional<double> pearson(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ParameterError("pearson: size mismatch");
    if (a.size() < 2) return std::nullopt;
    const Vector ca = a.array() - a.mean();
    const Vector cb = b.array() - b.mean();
    const double va = ca.squaredNorm();
    const double vb = cb.squaredNorm();
    if (va == 0.0 || vb == 0.0) return std::nullopt;
    return ca.dot(cb) / std::sqrt(va * vb);
}

FiniteDifferenceResult finite_difference_check(const ZegnnParams& params, const ModelInputs& in,
                                               const SensitivityAtlas& atlas, double delta) {
    if (!(delta > 0.0)) throw ParameterError("finite_difference_check: delta must be positive");
    const int pe = params.config.p_burden;
    const int p = pe + params.config.p_capacity;
    if (atlas.p() != p || atlas.n() != in.n()) throw ParameterError("finite_difference_check: atlas shape mismatch");
    const Vector F0 = forward(params, in).F;
    FiniteDifferenceResult r;
    r.delta = delta;
    r.delta_F.resize(in.n(), p);
    for (int j = 0; j < p; ++j) {
        ModelInputs shifted = in;
        if (j < pe) {
            shifted.x_burden.col(j).array() += delta;
        } else {
            shifted.x_capacity.col(j - pe).array() += delta;
        }
        r.delta_F.col(j) = forward(params, shifted).F - F0;
        r.corr.push_back(pearson(r.delta_F.col(j), atlas.gF.col(j)));
        const Vector err = (r.delta_F.col(j) / delta - atlas.gF.col(j)).cwiseAbs();
        r.mean_abs_error.push_back(err.mean());
        r.max_abs_error.push_back(err.maxCoeff());
    }
    return r;
}

FiniteDifferenceResult finite_difference_check(const FittedZegnn& fitted, const SpatialDataset& data,
                                               const SpatialGraph& graph, const SensitivityAtlas& atlas,
                                               double delta) {
    return finite_difference_check(fitted.params, fitted.scaler.inputs(data, graph), atlas, delta);
}

std::vector<VariableSummary> importance_summary(const SensitivityAtlas& atlas) {
    std::vector<VariableSummary> rows;
    for (int j = 0; j < atlas.p(); ++j) {
        VariableSummary s;
        s.name = name_of(atlas, j);
        s.I_F = atlas.gF.col(j).cwiseAbs().mean();
        s.I_E = atlas.gE.col(j).cwiseAbs().mean();
        s.I_S = atlas.gS.col(j).cwiseAbs().mean();
        if (s.I_E + s.I_S > 0.0) s.D_E = s.I_E / (s.I_E + s.I_S);
        s.median_abs_gF = median(abs_column(atlas.gF, j));
        rows.push_back(s);
    }
    return rows;
}

std::vector<std::optional<double>> core_importance(const SensitivityAtlas& atlas, const Vector& H_norm) {
    if (H_norm.size() != atlas.n()) throw ParameterError("core_importance: entropy length mismatch");
    const Vector w = (1.0 - H_norm.array()).matrix();
    const double total = w.sum();
    std::vector<std::optional<double>> out(atlas.p());
    if (total <= 0.0) return out;
    for (int j = 0; j < atlas.p(); ++j) out[j] = w.dot(atlas.gF.col(j).cwiseAbs()) / total;
    return out;
}

double role_reversal_index(const Vector& g, double tol) {
    if (tol < 0.0) throw ParameterError("role_reversal_index: tol must be >= 0");
    int pos = 0;
    int neg = 0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (std::abs(g(i)) <= tol) continue;
        (g(i) > 0.0 ? pos : neg)++;
    }
    if (pos + neg == 0) return 0.0;
    return 2.0 * static_cast<double>(std::min(pos, neg)) / static_cast<double>(pos + neg);
}

std::vector<double> role_reversal_index(const SensitivityAtlas& atlas) {
    std::vector<double> out;
    for (int j = 0; j < atlas.p(); ++j) {
        const double tol = 0.01 * median(abs_column(atlas.gF, j));
        out.push_back(role_reversal_index(atlas.gF.col(j), tol));
    }
    return out;
}

std::vector<VariableSummary> full_summary(const SensitivityAtlas& atlas) {
    std::vector<VariableSummary> rows = importance_summary(atlas);
    const auto core = core_importance(atlas, atlas.H_norm);
    const auto rri = role_reversal_index(atlas);
    for (int j = 0; j < atlas.p(); ++j) {
        rows[j].I_core = core[j];
        rows[j].RRI = rri[j];
    }
    return rows;
}

std::vector<GradientMatch> gradient_matching(const SensitivityAtlas& atlas,
                                             const std::optional<GroundTruthFields>& truth, double core_threshold) {
    if (!truth) throw DegenerateError("gradient matching unavailable: dataset has no ground truth");
    if (truth->grad_F.rows() != atlas.n() || truth->grad_F.cols() != atlas.p()) {
        throw ParameterError("gradient_matching: truth shape does not match atlas");
    }
    std::vector<GradientMatch> rows;
    for (int j = 0; j < atlas.p(); ++j) {
        GradientMatch m;
        m.name = name_of(atlas, j);
        m.corr_F = pearson(atlas.gF.col(j), truth->grad_F.col(j));
        m.corr_E = pearson(atlas.gE.col(j), truth->grad_E.col(j));
        m.corr_S = pearson(atlas.gS.col(j), truth->grad_S.col(j));
        int agree = 0;
        for (int i = 0; i < atlas.n(); ++i) {
            const double t = truth->grad_F(i, j);
            if (!(atlas.H_norm(i) < core_threshold) || t == 0.0) continue;
            ++m.core_nodes;
            if ((atlas.gF(i, j) > 0.0) == (t > 0.0) && atlas.gF(i, j) != 0.0) ++agree;
        }
        if (m.core_nodes > 0) m.core_sign_agreement = static_cast<double>(agree) / m.core_nodes;
        rows.push_back(m);
    }
    return rows;
}

std::string atlas_long_csv(const SensitivityAtlas& atlas, const Matrix& coords) {
    if (coords.rows() != atlas.n()) throw ParameterError("atlas_long_csv: coordinate rows mismatch");
    std::ostringstream os;
    os << "node_id,x,y,variable,gF,gE,gS\n";
    for (int i = 0; i < atlas.n(); ++i) {
        for (int j = 0; j < atlas.p(); ++j) {
            os << i << ',' << format_double(coords(i, 0)) << ',' << format_double(coords(i, 1)) << ','
               << name_of(atlas, j) << ',' << format_double(atlas.gF(i, j)) << ',' << format_double(atlas.gE(i, j))
               << ',' << format_double(atlas.gS(i, j)) << '\n';
        }
    }
    return os.str();
}

std::string summary_csv(const std::vector<VariableSummary>& rows) {
    std::ostringstream os;
    os << "variable,I_F,I_E,I_S,D_E,I_core,RRI,median_abs_gF\n";
    for (const VariableSummary& r : rows) {
        os << r.name << ',' << format_double(r.I_F) << ',' << format_double(r.I_E) << ',' << format_double(r.I_S)
           << ',' << opt_csv(r.D_E) << ',' << opt_csv(r.I_core) << ',' << format_double(r.RRI) << ','
           << format_double(r.median_abs_gF) << '\n';
    }
    return os.str();
}

std::string regime_probability_csv(const Matrix& P) {
    std::ostringstream os;
    os << "node_id,k,p\n";
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        for (Eigen::Index k = 0; k < P.cols(); ++k) os << i << ',' << k + 1 << ',' << format_double(P(i, k)) << '\n';
    }
    return os.str();
}

std::string entropy_csv(const Vector& H_norm, const Matrix& coords) {
    if (coords.rows() != H_norm.size()) throw ParameterError("entropy_csv: coordinate rows mismatch");
    std::ostringstream os;
    os << "node_id,x,y,H_norm\n";
    for (Eigen::Index i = 0; i < H_norm.size(); ++i) {
        os << i << ',' << format_double(coords(i, 0)) << ',' << format_double(coords(i, 1)) << ','
           << format_double(H_norm(i)) << '\n';
    }
    return os.str();
}

std::string finite_difference_csv(const FiniteDifferenceResult& fd, const std::vector<std::string>& names) {
    std::ostringstream os;
    os << "variable,delta,corr,mean_abs_error,max_abs_error\n";
    for (size_t j = 0; j < fd.corr.size(); ++j) {
        os << (j < names.size() ? names[j] : "x" + std::to_string(j + 1)) << ',' << format_double(fd.delta) << ','
           << opt_csv(fd.corr[j]) << ',' << format_double(fd.mean_abs_error[j]) << ','
           << format_double(fd.max_abs_error[j]) << '\n';
    }
    return os.str();
}

std::string gradient_matching_csv(const std::vector<GradientMatch>& rows) {
    std::ostringstream os;
    os << "variable,corr_F,corr_E,corr_S,core_sign_agreement,core_nodes\n";
    for (const GradientMatch& m : rows) {
        os << m.name << ',' << opt_csv(m.corr_F) << ',' << opt_csv(m.corr_E) << ',' << opt_csv(m.corr_S) << ','
           << opt_csv(m.core_sign_agreement) << ',' << m.core_nodes << '\n';
    }
    return os.str();
}

}  // namespace zegnn
