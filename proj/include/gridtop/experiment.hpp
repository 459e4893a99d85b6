#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridtop/generators.hpp"
#include "gridtop/grid_model.hpp"
#include "gridtop/learner.hpp"
#include "gridtop/moments.hpp"

namespace gridtop {

/// Power flow used to turn injection samples into voltages.
enum class PowerFlowEngine { lc, distflow, dc_resistive };

/// Sample count standing for the infinite-sample limit (analytic moments).
inline constexpr std::size_t analytic_samples = 0;

/// A Monte-Carlo sweep over sample counts and tolerances.
///
/// JSON layout (relative paths resolve against the plan file's directory):
///   {"name": "bus_13_3",
///    "grid": {"file": "grid.json"} | {"generator": {"loads": 13, "substations": 3, "tie_switches": 3,
///                                                  "extra_lines": 10, "seed": 1}},
///    "forest": "file" | {"closed": [[from, to], ...]} | {"random_seed": 7},
///    "model": {...parametric or explicit injection model...},
///    "samples": [200, 800, "inf"], "taus": [0.05], "trials": 20, "seed": 1,
///    "engine": "lc" | "distflow" | "dc", "variant": "lc" | "dc",
///    "candidates": "grid" | "all", "rule": "relative" | "literal",
///    "output": "out.csv", "verbose": false, "gnuplot": false, "timing": false, "threads": 1}
/// A missing seed falls back to GRIDTOP_SEED, then to 1.
struct ExperimentPlan {
    std::string name;
    std::optional<std::filesystem::path> grid_file;
    std::optional<GridSpec> generator;
    std::optional<std::vector<std::pair<NodeId, NodeId>>> closed_edges;
    std::optional<std::uint64_t> forest_seed;
    nlohmann::json model = nlohmann::json::object();
    std::vector<std::size_t> samples{200, 800, 3200, 12800};
    std::vector<double> taus{0.4, 0.2, 0.1, 0.05, 0.01};
    std::size_t trials = 20;
    std::uint64_t seed = 1;
    PowerFlowEngine engine = PowerFlowEngine::lc;
    LearnerVariant variant = LearnerVariant::lc;
    CandidateEdges candidates = CandidateEdges::restrict_to_grid;
    ToleranceRule rule = ToleranceRule::relative;
    std::optional<std::filesystem::path> output;
    bool verbose = false;
    bool gnuplot = false;
    bool timing = false;
    std::size_t threads = 1;

    /// Throws validation_error on malformed plans.
    static ExperimentPlan from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static ExperimentPlan load(const std::filesystem::path& path);
    nlohmann::ordered_json to_json() const;
    /// Throws domain_error unless every count is at least one and every tau lies in (0, 1).
    void validate() const;
};

/// Grid, operational forest and injection model an experiment runs on.
struct ExperimentSetup {
    std::string name;
    std::shared_ptr<const GridGraph> grid;
    std::shared_ptr<const ForestConfig> forest;
    std::shared_ptr<const InjectionModel> model;
};

ExperimentSetup resolve_setup(const ExperimentPlan& plan);

struct ExperimentRow {
    std::string grid;
    std::string variant;
    std::size_t m = 0;
    double tau = 0.0;
    std::size_t trials = 0;
    double mean_error = 0.0;
    double std_error = 0.0;  ///< standard error of the mean over successful trials
    double seconds = 0.0;
    std::size_t failed = 0;
};

struct TrialRow {
    std::size_t m = 0;
    double tau = 0.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double error = 0.0;
    std::string failure;  ///< empty when the trial succeeded
};

struct ExperimentResult {
    std::vector<ExperimentRow> rows;
    std::vector<TrialRow> trials;
    std::size_t failed_trials = 0;
};

/// Runs every (m, tau) point. Each trial draws fresh injections from a seed
/// derived from (master seed, m index, trial); the same voltages are reused for
/// every tau. Failed trials are recorded and the run continues.
ExperimentResult run_experiment(const ExperimentPlan& plan);
ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentSetup& setup);

/// Seed of one trial, a pure function of its coordinates.
std::uint64_t trial_seed(std::uint64_t master, std::size_t m_index, std::size_t trial);

/// Columns grid,variant,m,tau,trials,mean_error,std_error,seconds,failed.
/// `seconds` is left empty unless `timing` is set, which keeps output byte-stable.
void write_experiment_csv(std::ostream& out, const ExperimentResult& result, bool timing);
void write_trials_csv(std::ostream& out, const ExperimentResult& result);
/// Gnuplot script drawing mean error against m, one curve per tau.
void write_gnuplot_script(std::ostream& out, const ExperimentResult& result, const std::string& csv_name);

std::string to_string(PowerFlowEngine e);
std::string to_string(LearnerVariant v);
PowerFlowEngine parse_engine(const std::string& s);
LearnerVariant parse_variant(const std::string& s);
CandidateEdges parse_candidates(const std::string& s);
ToleranceRule parse_rule(const std::string& s);

}  // namespace gridtop
