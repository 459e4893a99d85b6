// Python bindings for the gridtop core.
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gridtop/errors.hpp"
#include "gridtop/experiment.hpp"
#include "gridtop/generators.hpp"
#include "gridtop/io.hpp"
#include "gridtop/learner.hpp"
#include "gridtop/moments.hpp"
#include "gridtop/powerflow.hpp"

namespace py = pybind11;
using namespace gridtop;

namespace {

/// A grid together with its declared operational forest, if any.
struct PyGrid {
    std::string name;
    std::shared_ptr<const GridGraph> grid;
    std::optional<ForestConfig> forest;

    const ForestConfig& require_forest() const {
        if (!forest) {
            throw domain_error("grid declares no closed lines, so it has no operational forest");
        }
        return *forest;
    }
};

PyGrid from_file(GridFile gf) { return {gf.name, gf.grid, std::move(gf.forest)}; }

std::vector<NodeId> ids_of(const GridGraph& g, std::span<const NodeIndex> nodes) {
    std::vector<NodeId> out;
    out.reserve(nodes.size());
    for (const NodeIndex u : nodes) {
        out.push_back(g.node(u).id);
    }
    return out;
}

InjectionModel model_for(const PyGrid& g, const std::optional<std::string>& model_json) {
    return model_from_json(model_json ? nlohmann::json::parse(*model_json) : nlohmann::json::object(), *g.grid);
}

Eigen::MatrixXd simulate(const PyGrid& g, std::size_t m, std::uint64_t seed, const std::string& engine,
                         const std::optional<std::string>& model_json) {
    const ForestConfig& forest = g.require_forest();
    const InjectionModel model = model_for(g, model_json);
    const PowerFlowEngine e = parse_engine(engine);
    const auto inj = sample_injections(model, m, seed);
    Eigen::MatrixXd eps(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(g.grid->load_count()));
    for (std::size_t s = 0; s < inj.size(); ++s) {
        Eigen::VectorXd row;
        switch (e) {
            case PowerFlowEngine::lc:
                row = lcpf_solve(forest, inj[s]).eps;
                break;
            case PowerFlowEngine::dc_resistive:
                row = dc_resistive_solve(forest, inj[s]).eps;
                break;
            case PowerFlowEngine::distflow:
                row = distflow_solve(forest, inj[s]).state.eps;
                break;
        }
        eps.row(static_cast<Eigen::Index>(s)) = row.transpose();
    }
    return eps;
}

Eigen::MatrixXd sigma_eps(const PyGrid& g, const std::string& variant, const std::optional<std::string>& model_json) {
    const InjectionModel model = model_for(g, model_json);
    return parse_variant(variant) == LearnerVariant::dc_resistive ? analytic_sigma_eps_dc(g.require_forest(), model)
                                                                  : analytic_sigma_eps(g.require_forest(), model);
}

py::dict learn(const PyGrid& g, const std::optional<Eigen::MatrixXd>& samples, bool analytic, double tau,
               const std::string& variant, const std::string& candidates, const std::string& rule,
               const std::optional<std::string>& model_json) {
    const InjectionModel model = model_for(g, model_json);
    LearnerConfig cfg;
    cfg.tau = tau;
    cfg.variant = parse_variant(variant);
    cfg.candidates = parse_candidates(candidates);
    cfg.rule = parse_rule(rule);
    cfg.record_trace = false;
    if (analytic == samples.has_value()) {
        throw std::invalid_argument("pass exactly one of samples= or analytic=True");
    }
    ReconstructionResult r;
    {
        py::gil_scoped_release release;
        if (analytic) {
            r = reconstruct(ExactMoments(*g.grid, sigma_eps(g, variant, model_json)), model, *g.grid, cfg);
        } else {
            r = reconstruct(SampleMoments(*g.grid, *samples), model, *g.grid, cfg);
        }
    }
    py::list edges;
    for (const LearnedEdge& e : r.edges) {
        edges.append(py::make_tuple(e.child, e.parent));
    }
    py::dict out;
    out["edges"] = edges;
    out["orphans"] = r.orphans;
    out["tests"] = r.tests;
    out["relative_error"] = g.forest ? py::cast(relative_error(r, *g.forest)) : py::none();
    return out;
}

std::string experiment_csv(const std::string& plan_json, const std::string& base_dir) {
    const ExperimentPlan plan = ExperimentPlan::from_json(nlohmann::json::parse(plan_json), base_dir);
    ExperimentResult res;
    {
        py::gil_scoped_release release;
        res = run_experiment(plan);
    }
    std::ostringstream out;
    write_experiment_csv(out, res, plan.timing);
    return out.str();
}

}  // namespace

PYBIND11_MODULE(_gridtop, m) {
    m.doc() = "Topology reconstruction of radial distribution grids from voltage statistics";

    py::register_exception<gridtop::error>(m, "GridtopError", PyExc_RuntimeError);

    py::class_<PyGrid>(m, "Grid")
        .def_readonly("name", &PyGrid::name)
        .def_property_readonly("load_ids", [](const PyGrid& g) { return ids_of(*g.grid, g.grid->loads()); })
        .def_property_readonly("substation_ids",
                               [](const PyGrid& g) { return ids_of(*g.grid, g.grid->substations()); })
        .def_property_readonly("line_count", [](const PyGrid& g) { return g.grid->line_count(); })
        .def_property_readonly("has_forest", [](const PyGrid& g) { return g.forest.has_value(); })
        .def_property_readonly("operational_edges",
                               [](const PyGrid& g) {
                                   std::vector<std::pair<NodeId, NodeId>> out;
                                   const ForestConfig& f = g.require_forest();
                                   for (const NodeIndex u : g.grid->loads()) {
                                       out.emplace_back(g.grid->node(u).id, g.grid->node(*f.parent(u)).id);
                                   }
                                   return out;
                               })
        .def("to_json", [](const PyGrid& g) { return serialize_grid(*g.grid, g.forest ? &*g.forest : nullptr, g.name); })
        .def("__repr__", [](const PyGrid& g) {
            return "<Grid " + g.name + ": " + std::to_string(g.grid->load_count()) + " loads, " +
                   std::to_string(g.grid->substation_count()) + " substations>";
        });

    m.def("load_grid", [](const std::string& path) { return from_file(parse_grid(path)); }, py::arg("path"),
          "Read a grid JSON file.");
    m.def("parse_grid", [](const std::string& text) { return from_file(parse_grid_text(text)); }, py::arg("text"),
          "Parse grid JSON text.");
    m.def(
        "generate_grid",
        [](std::size_t loads, std::size_t substations, std::size_t ties, std::size_t extra, std::uint64_t seed,
           const std::string& name) {
            GridSpec spec;
            spec.loads = loads;
            spec.substations = substations;
            spec.tie_switches = ties;
            spec.extra_lines = extra;
            spec.seed = seed;
            GeneratedGrid g = generate_random_grid(spec);
            return PyGrid{name, g.grid, std::move(g.forest)};
        },
        py::arg("loads"), py::arg("substations") = 1, py::arg("ties") = 0, py::arg("extra") = 0, py::arg("seed") = 1,
        py::arg("name") = "random", "Random grid with an operational forest.");
    m.def("simulate", &simulate, py::arg("grid"), py::arg("samples"), py::arg("seed") = 1, py::arg("engine") = "lc",
          py::arg("model") = py::none(),
          "Voltage deviation samples, one row per sample and one column per load (ordered as load_ids).");
    m.def("sigma_eps", &sigma_eps, py::arg("grid"), py::arg("variant") = "lc", py::arg("model") = py::none(),
          "Exact second-moment matrix of voltage deviations.");
    m.def("learn", &learn, py::arg("grid"), py::arg("samples") = py::none(), py::arg("analytic") = false,
          py::arg("tau") = 0.05, py::arg("variant") = "lc", py::arg("candidates") = "grid",
          py::arg("rule") = "relative", py::arg("model") = py::none(), "Reconstruct the operational forest.");
    m.def("experiment_csv", &experiment_csv, py::arg("plan"), py::arg("base_dir") = "",
          "Run an experiment plan given as JSON text and return the summary CSV.");
}
