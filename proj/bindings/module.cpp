// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "funlora/core.hpp"
#include "funlora/flow.hpp"
#include "funlora/pipeline.hpp"

namespace py = pybind11;
using namespace funlora;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor::from(std::move(data), shape);
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

FunctionalKind make_kind(const std::string& kind, int p, bool trainable) {
    FunctionalKind k;
    k.kind = kind_from_name(kind);
    k.p = p;
    k.trainable = trainable;
    return k;
}

SolverConfig make_solver(const std::string& method, int steps, double abs_tol, double rel_tol) {
    SolverConfig cfg;
    cfg.method = solver_from_name(method);
    cfg.steps = steps;
    cfg.abs_tol = abs_tol;
    cfg.rel_tol = rel_tol;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_funlora, m) {
    m.doc() = "Per-class functional LoRA adapters with conditional flow matching";

    py::class_<Adapter>(m, "Adapter")
        .def_property_readonly("A", [](const Adapter& a) { return array_from_tensor(a.A); })
        .def_property_readonly("B", [](const Adapter& a) { return array_from_tensor(a.B); })
        .def_property_readonly("alphas",
                               [](const Adapter& a) {
                                   return a.kind.is_functional() ? array_from_tensor(a.alphas)
                                                                 : py::array_t<double>(0);
                               })
        .def_property_readonly("kind", [](const Adapter& a) { return kind_name(a.kind.kind); })
        .def_property_readonly("p", [](const Adapter& a) { return a.kind.p; })
        .def_property_readonly("combine",
                               [](const Adapter& a) { return combine_name(a.combine); })
        .def("matrix", [](const Adapter& a) { return array_from_tensor(funlora_matrix(a)); })
        .def("importance", [](const Adapter& a) { return importance(a); });

    m.def(
        "init_adapter",
        [](const std::string& kind, int p, bool trainable, std::size_t c_out, std::size_t c_in,
           const std::string& combine, bool calibrate, std::uint64_t seed) {
            return init_adapter(make_kind(kind, p, trainable), c_out, c_in,
                                combine_from_name(combine), calibrate, seed);
        },
        py::arg("kind"), py::arg("p"), py::arg("trainable"), py::arg("c_out"), py::arg("c_in"),
        py::arg("combine") = "mul", py::arg("calibrate") = true, py::arg("seed") = 0);

    m.def(
        "rshift",
        [](const py::array_t<double>& v, long i) {
            return array_from_tensor(rshift(tensor_from_array(v), i));
        },
        py::arg("v"), py::arg("i"));

    m.def(
        "singular_values",
        [](const py::array_t<double>& mat) { return singular_values(tensor_from_array(mat)); },
        py::arg("matrix"));

    m.def(
        "numerical_rank",
        [](const py::array_t<double>& mat, double rel_tol) {
            return numerical_rank(tensor_from_array(mat), rel_tol);
        },
        py::arg("matrix"), py::arg("rel_tol") = 1e-8);

    m.def(
        "param_count",
        [](const std::string& kind, int p, bool trainable,
           const std::vector<std::pair<std::size_t, std::size_t>>& dims) {
            return param_count(make_kind(kind, p, trainable), dims);
        },
        py::arg("kind"), py::arg("p"), py::arg("trainable"), py::arg("layer_dims"));

    m.def(
        "ot_path",
        [](const std::vector<double>& x0, const std::vector<double>& z, double t) {
            PathSample s = ot_path(x0, z, t);
            return py::make_tuple(s.x_t, s.u_target);
        },
        py::arg("x0"), py::arg("z"), py::arg("t"),
        "Returns (x_t, u_target) for the straight-line path.");

    m.def(
        "integrate",
        [](const std::function<std::vector<double>(double, const std::vector<double>&)>& field,
           const std::vector<double>& x_start, const std::string& method, int steps,
           double abs_tol, double rel_tol) {
            IntegrationResult r = integrate(field, x_start, make_solver(method, steps, abs_tol, rel_tol));
            return py::make_tuple(r.x_end, r.nfe);
        },
        py::arg("field"), py::arg("x_start"), py::arg("method") = "dopri5", py::arg("steps") = 50,
        py::arg("abs_tol") = 1e-4, py::arg("rel_tol") = 1e-4,
        "Integrates dx/dt = field(t, x) from t=1 to t=0; returns (x_end, nfe).");

    m.def("aa", &aa, py::arg("scores"), "Average accuracy over per-task scores.");
    m.def("aia", &aia, py::arg("running_aa"), "Average incremental accuracy.");

    m.def(
        "make_task_stream",
        [](int tasks, int classes_per_task, int train_per_class, int test_per_class,
           const std::string& family, double radius, double sigma, double elongation,
           std::uint64_t seed) {
            StreamSpec spec;
            spec.tasks = tasks;
            spec.classes_per_task = classes_per_task;
            spec.train_per_class = train_per_class;
            spec.test_per_class = test_per_class;
            spec.family = family == "rings" ? DataFamily::Rings : DataFamily::Gaussian;
            spec.radius = radius;
            spec.sigma = sigma;
            spec.elongation = elongation;
            spec.seed = seed;
            TaskStream stream = make_task_stream(spec);
            py::list out;
            for (const auto& task : stream.tasks) {
                py::dict d;
                d["labels"] = task.labels;
                d["train_x"] = array_from_tensor(task.train.x);
                d["train_y"] = task.train.labels;
                d["test_x"] = array_from_tensor(task.test.x);
                d["test_y"] = task.test.labels;
                out.append(d);
            }
            return out;
        },
        py::arg("tasks") = 5, py::arg("classes_per_task") = 2, py::arg("train_per_class") = 250,
        py::arg("test_per_class") = 200, py::arg("family") = "gaussian", py::arg("radius") = 4.0,
        py::arg("sigma") = 0.2, py::arg("elongation") = 8.0, py::arg("seed") = 0);

    m.def(
        "run_continual",
        [](int tasks, int classes_per_task, int train_per_class, int test_per_class,
           int hidden_width, int hidden_layers, int task1_epochs, int incr_epochs,
           const std::string& kind, int p, bool trainable, std::uint64_t seed) {
            ExperimentConfig cfg;
            cfg.stream.tasks = tasks;
            cfg.stream.classes_per_task = classes_per_task;
            cfg.stream.train_per_class = train_per_class;
            cfg.stream.test_per_class = test_per_class;
            cfg.stream.seed = seed;
            cfg.net.hidden_width = static_cast<std::size_t>(hidden_width);
            cfg.net.hidden_layers = static_cast<std::size_t>(hidden_layers);
            cfg.net.kind = make_kind(kind, p, trainable);
            cfg.task1_epochs = task1_epochs;
            cfg.incr_epochs = incr_epochs;
            cfg.seed = seed;
            RunResult r = run_algorithm1(cfg);
            py::dict out;
            out["per_task_accuracy"] = r.metrics.per_task_accuracy;
            out["running_aa"] = r.metrics.running_aa;
            out["la"] = r.metrics.la;
            out["aia"] = r.metrics.aia;
            return out;
        },
        py::arg("tasks") = 3, py::arg("classes_per_task") = 1, py::arg("train_per_class") = 40,
        py::arg("test_per_class") = 20, py::arg("hidden_width") = 8, py::arg("hidden_layers") = 4,
        py::arg("task1_epochs") = 2, py::arg("incr_epochs") = 2, py::arg("kind") = "cos",
        py::arg("p") = 4, py::arg("trainable") = true, py::arg("seed") = 0,
        "Class-incremental run with per-class adapters; returns the metrics.");
}
