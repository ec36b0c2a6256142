#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "labelclean/cleaning.hpp"
#include "labelclean/errors.hpp"
#include "labelclean/evalx.hpp"
#include "labelclean/influence.hpp"
#include "labelclean/nnet.hpp"
#include "labelclean/service.hpp"

namespace py = pybind11;
using namespace labelclean;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<data::Example> to_examples(const RowMatrix& X, const std::vector<int>& y) {
    if (static_cast<std::size_t>(X.rows()) != y.size())
        throw ConfigError("X has " + std::to_string(X.rows()) + " rows but y has " + std::to_string(y.size()));
    std::vector<data::Example> out;
    out.reserve(y.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        data::Example e;
        e.id = static_cast<int>(i);
        e.x = X.row(i).transpose();
        e.label = e.hidden.true_label = y[static_cast<std::size_t>(i)];
        out.push_back(std::move(e));
    }
    return out;
}

data::Example single(const Eigen::VectorXd& x, int y) {
    data::Example e;
    e.id = -1;
    e.x = x;
    e.label = e.hidden.true_label = y;
    return e;
}

/// A parameter vector plus its training configuration.
struct Model {
    nnet::ArchitectureSpec arch;
    nnet::TrainConfig train;
    nnet::ParameterVector params;

    Model(nnet::ArchitectureSpec a, nnet::TrainConfig t) : arch(std::move(a)), train(t), params(nnet::initialize(arch, arch.seed)) {}

    void fit(const RowMatrix& X, const std::vector<int>& y) {
        const auto data = to_examples(X, y);
        params = nnet::fit(data, arch, train);
    }

    RowMatrix predict_proba(const RowMatrix& X) const {
        RowMatrix out(X.rows(), arch.num_classes);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            out.row(i) = nnet::predict_proba(params, X.row(i).transpose()).probs.transpose();
        return out;
    }
};

Model make_model(const std::string& kind, int input_dim, int num_classes, std::vector<int> hidden, double dropout,
                 std::uint64_t seed, std::optional<int> epochs, std::optional<double> l2, bool newton,
                 std::optional<double> early_stop, bool disable_early_stop) {
    const auto k = nnet::parse_model_kind(kind);
    auto arch = k == nnet::ModelKind::Mlp ? nnet::ArchitectureSpec::mlp(input_dim, std::move(hidden), num_classes, dropout, seed)
                                          : nnet::ArchitectureSpec::linear(input_dim, num_classes, seed);
    arch.validate();
    auto train = nnet::TrainConfig::defaults_for(k);
    train.seed = seed;
    if (epochs) train.epochs = *epochs;
    if (l2) train.l2 = *l2;
    if (newton) train.optimizer = nnet::Optimizer::Newton;
    if (early_stop) train.early_stop_train_accuracy = *early_stop;
    if (disable_early_stop) train.early_stop_train_accuracy.reset();
    train.validate();
    return Model(std::move(arch), train);
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json py_to_json(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Label cleaning with counter-examples: numeric core bindings";

    // translators run newest first, so the base class is registered first
    const auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());

    py::class_<Model>(m, "Model")
        .def(py::init(&make_model), py::arg("kind"), py::arg("input_dim"), py::arg("num_classes"),
             py::arg("hidden_dims") = std::vector<int>{16, 16}, py::arg("dropout") = 0.2, py::arg("seed") = 0,
             py::arg("epochs") = py::none(), py::arg("l2") = py::none(), py::arg("newton") = false,
             py::arg("early_stop") = py::none(), py::arg("disable_early_stop") = false)
        .def("fit", &Model::fit, py::arg("X"), py::arg("y"))
        .def("predict_proba", &Model::predict_proba, py::arg("X"))
        .def(
            "loss_gradient",
            [](const Model& self, const Eigen::VectorXd& x, int y) { return nnet::loss_and_gradient(self.params, x, y).gradient; },
            py::arg("x"), py::arg("y"))
        .def(
            "prob_gradient", [](const Model& self, const Eigen::VectorXd& x, int y) { return nnet::prob_gradient(self.params, x, y); },
            py::arg("x"), py::arg("y"))
        .def(
            "margin",
            [](const Model& self, const Eigen::VectorXd& x, int y, double tau) {
                const auto r = cleaning::margin(self.params, single(x, y), tau);
                return py::make_tuple(r.margin, r.suspicious);
            },
            py::arg("x"), py::arg("y"), py::arg("tau") = 0.2)
        .def_property(
            "parameters", [](const Model& self) { return self.params.values; },
            [](Model& self, const Eigen::VectorXd& v) {
                if (v.size() != self.params.values.size()) throw ConfigError("parameter vector has the wrong length");
                self.params.values = v;
            })
        .def_property_readonly("num_parameters", [](const Model& self) { return self.params.size(); });

    m.def(
        "score_counterexamples",
        [](const Model& model, const RowMatrix& X, const std::vector<int>& y, const Eigen::VectorXd& x_t, int y_t,
           const std::string& backend, double damping, bool pertinent) {
            const auto data = to_examples(X, y);
            const auto suspicious = single(x_t, y_t);
            auto b = influence::CurvatureBackend::make(influence::parse_curvature_kind(backend));
            b.damping = damping;
            const int prediction = nnet::predict(model.params, x_t);
            const auto candidates = influence::filter_candidates(data, suspicious, prediction, {pertinent, {}});
            std::vector<std::pair<int, double>> out;
            for (const auto& s : influence::score_counterexamples(model.params, suspicious, candidates, b, data))
                out.emplace_back(s.candidate_id, s.score);
            return out;
        },
        py::arg("model"), py::arg("X"), py::arg("y"), py::arg("x_t"), py::arg("y_t"), py::arg("backend") = "top-fisher",
        py::arg("damping") = 0.01, py::arg("pertinent") = true,
        "(row index, score) pairs sorted by descending score; ties go to the lower index.");

    m.def(
        "run_experiment",
        [](const std::filesystem::path& config, std::optional<std::filesystem::path> output_dir) {
            auto cfg = evalx::ExperimentConfig::load(config);
            if (output_dir) cfg.output_dir = *output_dir;
            cfg.validate();
            evalx::run_experiment(cfg);
            return cfg.output_dir;
        },
        py::arg("config"), py::arg("output_dir") = py::none(), "Runs a config file and returns the output directory.");

    py::class_<service::Service>(m, "Service")
        .def(py::init<>())
        .def("add_manifest", &service::Service::add_manifest, py::arg("path"))
        .def("dataset_names", &service::Service::dataset_names)
        .def(
            "handle",
            [](service::Service& self, const std::string& method, const std::string& path, const py::object& body) {
                const std::string text = body.is_none() ? std::string() : py_to_json(body).dump();
                service::Response r;
                {
                    py::gil_scoped_release release;
                    r = self.handle(method, path, text);
                }
                return py::make_tuple(r.status, json_to_py(r.body));
            },
            py::arg("method"), py::arg("path"), py::arg("body") = py::none(),
            "Dispatches one API call; returns (status, body).");
}
