#include "zegnn/diagnostics.hpp"
#include "zegnn/error.hpp"
#include "zegnn/evaluation.hpp"
#include "zegnn/synthetic_data.hpp"
#include "zegnn/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace zegnn;

namespace {

std::vector<std::string> default_names(const std::string& prefix, Eigen::Index count, Eigen::Index offset) {
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < count; ++j) names.push_back(prefix + std::to_string(offset + j + 1));
    return names;
}

SpatialDataset make_dataset(const Matrix& coords, const Matrix& x_burden, const Matrix& x_capacity, const Vector& y,
                            std::vector<std::string> burden_names, std::vector<std::string> capacity_names) {
    const Eigen::Index n = y.size();
    if (coords.rows() != n || coords.cols() != 2) throw SchemaError("coords must be N x 2");
    if (x_burden.rows() != n || x_capacity.rows() != n) throw SchemaError("covariate blocks must have N rows");
    if (x_burden.cols() == 0 || x_capacity.cols() == 0) throw SchemaError("covariate blocks must be non-empty");
    if (burden_names.empty()) burden_names = default_names("x", x_burden.cols(), 0);
    if (capacity_names.empty()) capacity_names = default_names("x", x_capacity.cols(), x_burden.cols());
    if (static_cast<Eigen::Index>(burden_names.size()) != x_burden.cols() ||
        static_cast<Eigen::Index>(capacity_names.size()) != x_capacity.cols()) {
        throw SchemaError("name count does not match covariate columns");
    }
    if (!coords.allFinite() || !x_burden.allFinite() || !x_capacity.allFinite() || !y.allFinite()) {
        throw ParseError("non-finite value in dataset arrays");
    }
    SpatialDataset d;
    d.coords = coords;
    d.x_burden = x_burden;
    d.x_capacity = x_capacity;
    d.y = y;
    d.burden_names = std::move(burden_names);
    d.capacity_names = std::move(capacity_names);
    return d;
}

struct Model {
    FittedZegnn fitted;
    TrainReport report;

    SpatialGraph graph(const SpatialDataset& data) const { return build_knn_graph(data.coords, fitted.graph_k); }
};

Model fit_model(const SpatialDataset& data, int k, int regimes, double lambda_sparse, double lambda_mag,
                int max_epochs, int patience, double lr, std::uint64_t seed) {
    const SpatialGraph graph = build_knn_graph(data.coords, k);
    ModelConfig mc;
    mc.p_burden = data.p_burden();
    mc.p_capacity = data.p_capacity();
    mc.regimes = regimes;
    TrainConfig tc;
    tc.lambda_sparse = lambda_sparse;
    tc.lambda_mag = lambda_mag;
    tc.max_epochs = max_epochs;
    tc.patience = patience;
    tc.lr = lr;
    tc.seed = seed;
    Model m;
    py::gil_scoped_release release;
    auto [fitted, report] = fit(data, graph, mc, tc);
    fitted.graph_k = k;
    m.fitted = std::move(fitted);
    m.report = std::move(report);
    return m;
}

py::dict outputs_dict(const ForwardOutputs& out) {
    py::dict d;
    d["F"] = out.F;
    d["P"] = out.P;
    d["H_norm"] = out.H_norm;
    d["T"] = out.T;
    d["T_eff"] = out.T_eff;
    d["E_reg"] = out.E_reg;
    d["S_reg"] = out.S_reg;
    d["F_reg"] = out.F_reg;
    d["E_mix"] = out.E_mix;
    d["S_mix"] = out.S_mix;
    return d;
}

py::object optional_value(const std::optional<double>& v) { return v ? py::cast(*v) : py::none(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Thermodynamic regime-mixture spatial regression";
    m.attr("__version__") = ZEGNN_VERSION;

    const auto& base = py::register_exception<Error>(m, "ZegnnError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

    py::class_<SpatialDataset>(m, "Dataset")
        .def(py::init(&make_dataset), py::arg("coords"), py::arg("x_burden"), py::arg("x_capacity"), py::arg("y"),
             py::arg("burden_names") = std::vector<std::string>{},
             py::arg("capacity_names") = std::vector<std::string>{})
        .def_readonly("coords", &SpatialDataset::coords)
        .def_readonly("x_burden", &SpatialDataset::x_burden)
        .def_readonly("x_capacity", &SpatialDataset::x_capacity)
        .def_readonly("y", &SpatialDataset::y)
        .def_readonly("burden_names", &SpatialDataset::burden_names)
        .def_readonly("capacity_names", &SpatialDataset::capacity_names)
        .def_property_readonly("n", &SpatialDataset::n)
        .def_property_readonly("regime_labels", [](const SpatialDataset& d) { return d.regime_labels; })
        .def_property_readonly("truth", [](const SpatialDataset& d) -> py::object {
            if (!d.truth) return py::none();
            py::dict t;
            t["E"] = d.truth->E;
            t["S"] = d.truth->S;
            t["F"] = d.truth->F;
            t["regime"] = d.truth->regime;
            t["grad_F"] = d.truth->grad_F;
            t["grad_E"] = d.truth->grad_E;
            t["grad_S"] = d.truth->grad_S;
            return t;
        });

    m.def(
        "generate_scenario",
        [](const std::string& kind, std::uint64_t seed, int side) {
            ScenarioSpec spec;
            spec.kind = parse_scenario_kind(kind);
            spec.seed = seed;
            spec.lattice_side = side;
            return generate_scenario(spec).data;
        },
        py::arg("kind") = "nonlinear", py::arg("seed") = 1, py::arg("side") = 50);

    m.def(
        "load_dataset",
        [](const std::string& csv_path, const std::string& schema_path, const std::string& truth_path) {
            SpatialDataset d = load_dataset(csv_path, load_schema(schema_path));
            if (!truth_path.empty()) attach_truth(d, nlohmann::json::parse(read_file(truth_path)));
            return d;
        },
        py::arg("csv_path"), py::arg("schema_path"), py::arg("truth_path") = "");

    m.def(
        "morans_i",
        [](const Vector& values, const Matrix& coords, int k) {
            if (values.size() != coords.rows()) throw SchemaError("values and coords differ in length");
            return morans_i(values, build_knn_graph(coords, k));
        },
        py::arg("values"), py::arg("coords"), py::arg("k") = 8);

    py::class_<Model>(m, "Model")
        .def_static("fit", &fit_model, py::arg("data"), py::arg("k") = 8, py::arg("regimes") = 3,
                    py::arg("lambda_sparse") = 0.001, py::arg("lambda_mag") = 0.001, py::arg("max_epochs") = 800,
                    py::arg("patience") = 60, py::arg("lr") = 0.005, py::arg("seed") = 1)
        .def_static(
            "from_json",
            [](const std::string& text) {
                Model model;
                model.fitted = fitted_from_json(nlohmann::json::parse(text));
                return model;
            },
            py::arg("text"))
        .def("to_json", [](const Model& self) { return fitted_to_json(self.fitted).dump(); })
        .def_property_readonly("graph_k", [](const Model& self) { return self.fitted.graph_k; })
        .def_property_readonly("regimes", [](const Model& self) { return self.fitted.params.config.regimes; })
        .def_property_readonly("temperatures",
                               [](const Model& self) { return Vector(positive_transform(self.fitted.params.tau_raw)); })
        .def_property_readonly("best_epoch", [](const Model& self) { return self.report.best_epoch; })
        .def_property_readonly("epochs_run", [](const Model& self) { return self.report.epochs_run; })
        .def_property_readonly("train_loss", [](const Model& self) { return self.report.train_loss; })
        .def_property_readonly("val_loss", [](const Model& self) { return self.report.val_loss; })
        .def(
            "predict", [](const Model& self, const SpatialDataset& d) { return predict(self.fitted, d, self.graph(d)); },
            py::arg("data"))
        .def(
            "outputs",
            [](const Model& self, const SpatialDataset& d) {
                return outputs_dict(predict_outputs(self.fitted, d, self.graph(d)));
            },
            py::arg("data"))
        .def(
            "sensitivity",
            [](const Model& self, const SpatialDataset& d) {
                const SensitivityAtlas a = sensitivity_fields(self.fitted, d, self.graph(d));
                py::dict out;
                out["names"] = a.names;
                out["gF"] = a.gF;
                out["gE"] = a.gE;
                out["gS"] = a.gS;
                out["H_norm"] = a.H_norm;
                py::list rows;
                for (const VariableSummary& s : full_summary(a)) {
                    py::dict r;
                    r["name"] = s.name;
                    r["I_F"] = s.I_F;
                    r["I_E"] = s.I_E;
                    r["I_S"] = s.I_S;
                    r["D_E"] = optional_value(s.D_E);
                    r["I_core"] = optional_value(s.I_core);
                    r["RRI"] = s.RRI;
                    rows.append(r);
                }
                out["summary"] = rows;
                if (d.truth) {
                    py::list matches;
                    for (const GradientMatch& g : gradient_matching(a, d.truth)) {
                        py::dict r;
                        r["name"] = g.name;
                        r["corr_F"] = optional_value(g.corr_F);
                        r["corr_E"] = optional_value(g.corr_E);
                        r["corr_S"] = optional_value(g.corr_S);
                        r["core_sign_agreement"] = optional_value(g.core_sign_agreement);
                        r["core_nodes"] = g.core_nodes;
                        matches.append(r);
                    }
                    out["gradient_matching"] = matches;
                }
                return out;
            },
            py::arg("data"))
        .def(
            "finite_difference",
            [](const Model& self, const SpatialDataset& d, double delta) {
                const SpatialGraph g = self.graph(d);
                const SensitivityAtlas a = sensitivity_fields(self.fitted, d, g);
                const FiniteDifferenceResult fd = finite_difference_check(self.fitted, d, g, a, delta);
                py::dict out;
                out["delta_F"] = fd.delta_F;
                py::list corr;
                for (const auto& c : fd.corr) corr.append(optional_value(c));
                out["corr"] = corr;
                out["mean_abs_error"] = fd.mean_abs_error;
                out["max_abs_error"] = fd.max_abs_error;
                return out;
            },
            py::arg("data"), py::arg("delta") = 0.1);

    m.def(
        "cross_validate",
        [](const SpatialDataset& d, const std::string& model, const std::string& protocol, int k, int regimes,
           double lambda_sparse, double lambda_mag, std::uint64_t seed, int max_epochs, int nn_epochs, bool in_sample,
           int threads) {
            CvOptions o;
            o.train.max_epochs = max_epochs;
            o.neural.epochs = nn_epochs;
            o.in_sample = in_sample;
            o.threads = threads > 0 ? threads : thread_cap_from_env();
            const HyperParams hyper{k, regimes, lambda_sparse, lambda_mag};
            py::gil_scoped_release release;
            return run_cv(parse_model_kind(model), d, parse_protocol(protocol), hyper, seed, o).to_json().dump();
        },
        py::arg("data"), py::arg("model") = "zegnn", py::arg("protocol") = "spatial", py::arg("k") = 8,
        py::arg("regimes") = 3, py::arg("lambda_sparse") = 0.001, py::arg("lambda_mag") = 0.001, py::arg("seed") = 1,
        py::arg("max_epochs") = 800, py::arg("nn_epochs") = 600, py::arg("in_sample") = true, py::arg("threads") = 0);
}
