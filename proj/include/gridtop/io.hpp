#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridtop/grid_model.hpp"
#include "gridtop/moments.hpp"

namespace gridtop {

/// A grid plus the forest declared by its `closed` flags.
///
/// JSON layout:
///   {"meta": {"name": ...},
///    "nodes": [{"id": 1, "kind": "load" | "substation"}, ...],
///    "edges": [{"from": 1, "to": 2, "r": 0.01, "x": 0.02, "closed": true,
///               "switchable": false, "role": "feeder" | "tie" | "added"}, ...]}
/// `switchable` and `role` are optional. A forest is declared when at least
/// one edge is closed.
struct GridFile {
    std::string name;
    std::shared_ptr<const GridGraph> grid;
    std::optional<ForestConfig> forest;
};

/// Parses grid JSON text. Throws parse_error for malformed JSON and
/// validation_error (with the line of the offending element) for schema or
/// invariant violations.
GridFile parse_grid_text(const std::string& text);
GridFile parse_grid(const std::filesystem::path& path);

nlohmann::ordered_json grid_to_json(const GridGraph& grid, const ForestConfig* forest, const std::string& name);
std::string serialize_grid(const GridGraph& grid, const ForestConfig* forest, const std::string& name);
void write_grid(const std::filesystem::path& path, const GridGraph& grid, const ForestConfig* forest,
                const std::string& name);

/// Voltage sample CSV: header of load node ids, one row per sample of eps.
/// Values are written in shortest round-trip form.
void write_samples_csv(std::ostream& out, const GridGraph& grid, const Eigen::MatrixXd& eps);
/// Reads a sample CSV and reorders its columns into load-position order.
Eigen::MatrixXd read_samples_csv(std::istream& in, const GridGraph& grid);
/// Reads a sample CSV without a grid; returns the header ids and the data.
std::pair<std::vector<NodeId>, Eigen::MatrixXd> read_samples_csv(std::istream& in);

/// Injection model JSON, either parametric
///   {"mu_p": -0.005, "sigma_ratio": 0.2, "rho": 0.1, "q_ratio": 0.3, "q_noise_ratio": 0.2}
/// or explicit over load nodes
///   {"node_ids": [...], "mu_p": [...], "mu_q": [...], "cov_p": [[...]], "cov_q": [[...]], "cov_pq": [[...]]}.
InjectionModel model_from_json(const nlohmann::json& j, const GridGraph& grid);
GaussianLoadParams load_params_from_json(const nlohmann::json& j);
nlohmann::ordered_json load_params_to_json(const GaussianLoadParams& params);
nlohmann::ordered_json model_to_json(const InjectionModel& model, const GridGraph& grid);

/// Shortest decimal representation that round-trips.
std::string format_double(double v);

}  // namespace gridtop
