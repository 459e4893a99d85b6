// gridtop command line tool.
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "gridtop/errors.hpp"
#include "gridtop/experiment.hpp"
#include "gridtop/generators.hpp"
#include "gridtop/io.hpp"
#include "gridtop/learner.hpp"
#include "gridtop/moments.hpp"
#include "gridtop/powerflow.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace gridtop;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;

/// A usage problem detected after CLI parsing (missing combination of flags).
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
    const char* s = std::getenv("GRIDTOP_SEED");
    if (s == nullptr || *s == '\0') {
        return 1;
    }
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw usage_error(std::string("GRIDTOP_SEED is not an unsigned integer: ") + s);
    }
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw domain_error("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw parse_error(path.string() + ": " + e.what(), 0);
    }
}

InjectionModel load_model(const std::string& path, const GridGraph& grid) {
    return model_from_json(path.empty() ? json::object() : read_json_file(path), grid);
}

/// Writes to the named file, or to stdout for "" and "-".
template <class F>
void with_output(const std::string& path, F&& write) {
    if (path.empty() || path == "-") {
        write(std::cout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw domain_error("cannot write " + path);
    }
    write(out);
}

const ForestConfig& require_forest(const GridFile& gf) {
    if (!gf.forest) {
        throw domain_error("grid declares no closed lines, so it has no operational forest");
    }
    return *gf.forest;
}

// ---------------------------------------------------------------------------

struct GenGridArgs {
    std::size_t loads = 13;
    std::size_t substations = 1;
    std::size_t ties = 0;
    std::size_t extra = 0;
    std::optional<std::uint64_t> seed;
    double r_min = 0.01, r_max = 0.05, x_min = 0.01, x_max = 0.05;
    std::string base;
    std::size_t add = 0;
    std::string name;
    std::string output;
};

int cmd_gen_grid(const GenGridArgs& a, bool as_json) {
    const std::uint64_t seed = a.seed.value_or(default_seed());
    GeneratedGrid g = [&] {
        if (!a.base.empty()) {
            GridFile gf = parse_grid(a.base);
            GeneratedGrid base{gf.grid, require_forest(gf)};
            return add_open_lines(base, a.add, seed);
        }
        GridSpec spec;
        spec.loads = a.loads;
        spec.substations = a.substations;
        spec.tie_switches = a.ties;
        spec.extra_lines = a.extra;
        spec.seed = seed;
        spec.impedance = {a.r_min, a.r_max, a.x_min, a.x_max};
        return generate_random_grid(spec);
    }();
    const std::string name =
        a.name.empty() ? fmt::format("random_{}_{}", g.grid->load_count(), g.grid->substation_count()) : a.name;
    with_output(a.output, [&](std::ostream& out) { out << serialize_grid(*g.grid, &g.forest, name); });
    if (as_json && !(a.output.empty() || a.output == "-")) {
        ordered_json j{{"ok", true},
                       {"output", a.output},
                       {"name", name},
                       {"loads", g.grid->load_count()},
                       {"substations", g.grid->substation_count()},
                       {"lines", g.grid->line_count()}};
        std::cout << j.dump() << "\n";
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string grid;
    std::string model;
    std::size_t samples = 1000;
    std::optional<std::uint64_t> seed;
    std::string engine = "lc";
    std::string output;
};

int cmd_simulate(const SimulateArgs& a, bool as_json) {
    const GridFile gf = parse_grid(a.grid);
    const ForestConfig& forest = require_forest(gf);
    const InjectionModel model = load_model(a.model, *gf.grid);
    const PowerFlowEngine engine = parse_engine(a.engine);
    const auto inj = sample_injections(model, a.samples, a.seed.value_or(default_seed()));
    Eigen::MatrixXd eps(static_cast<Eigen::Index>(a.samples), static_cast<Eigen::Index>(gf.grid->load_count()));
    for (std::size_t s = 0; s < inj.size(); ++s) {
        Eigen::VectorXd e;
        switch (engine) {
            case PowerFlowEngine::lc:
                e = lcpf_solve(forest, inj[s]).eps;
                break;
            case PowerFlowEngine::dc_resistive:
                e = dc_resistive_solve(forest, inj[s]).eps;
                break;
            case PowerFlowEngine::distflow:
                e = distflow_solve(forest, inj[s]).state.eps;
                break;
        }
        eps.row(static_cast<Eigen::Index>(s)) = e.transpose();
    }
    with_output(a.output, [&](std::ostream& out) { write_samples_csv(out, *gf.grid, eps); });
    if (as_json && !(a.output.empty() || a.output == "-")) {
        std::cout << ordered_json{{"ok", true}, {"output", a.output}, {"samples", a.samples}}.dump() << "\n";
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct MomentsArgs {
    std::string samples;
    std::string grid;
    std::string model;
    bool analytic = false;
    bool dc = false;
    std::string output;
};

void write_matrix_csv(std::ostream& out, const std::vector<NodeId>& ids, const Eigen::MatrixXd& m) {
    out << "id";
    for (const NodeId id : ids) {
        out << ',' << id;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << ',' << format_double(m(i, j));
        }
        out << '\n';
    }
}

int cmd_moments(const MomentsArgs& a, bool as_json) {
    std::vector<NodeId> ids;
    Eigen::MatrixXd sigma;
    std::size_t count = 0;
    if (a.analytic) {
        if (a.grid.empty()) {
            throw usage_error("--analytic needs --grid");
        }
        const GridFile gf = parse_grid(a.grid);
        const ForestConfig& forest = require_forest(gf);
        const InjectionModel model = load_model(a.model, *gf.grid);
        sigma = a.dc ? analytic_sigma_eps_dc(forest, model) : analytic_sigma_eps(forest, model);
        for (const NodeIndex u : gf.grid->loads()) {
            ids.push_back(gf.grid->node(u).id);
        }
    } else {
        if (a.samples.empty()) {
            throw usage_error("moments needs --samples or --analytic");
        }
        std::ifstream in(a.samples);
        if (!in) {
            throw domain_error("cannot open " + a.samples);
        }
        auto [hdr, eps] = read_samples_csv(in);
        ids = std::move(hdr);
        count = static_cast<std::size_t>(eps.rows());
        sigma = eps.transpose() * eps / static_cast<double>(eps.rows());
    }
    if (as_json) {
        ordered_json j{{"ok", true}, {"kind", a.analytic ? "analytic" : "empirical"}, {"samples", count},
                       {"node_ids", ids}};
        std::vector<std::vector<double>> rows;
        for (Eigen::Index i = 0; i < sigma.rows(); ++i) {
            rows.emplace_back(sigma.row(i).begin(), sigma.row(i).end());
        }
        j["sigma_eps"] = rows;
        with_output(a.output, [&](std::ostream& out) { out << j.dump() << "\n"; });
    } else {
        with_output(a.output, [&](std::ostream& out) { write_matrix_csv(out, ids, sigma); });
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct LearnArgs {
    std::string grid;
    std::string samples;
    std::string model;
    bool analytic = false;
    double tau = 0.05;
    std::string variant = "lc";
    std::string candidates = "grid";
    std::string rule = "relative";
    std::string trace;
};

int cmd_learn(const LearnArgs& a, bool as_json) {
    const GridFile gf = parse_grid(a.grid);
    const GridGraph& grid = *gf.grid;
    const InjectionModel model = load_model(a.model, grid);
    LearnerConfig cfg;
    cfg.tau = a.tau;
    cfg.variant = parse_variant(a.variant);
    cfg.candidates = parse_candidates(a.candidates);
    cfg.rule = parse_rule(a.rule);
    cfg.record_trace = !a.trace.empty();

    ReconstructionResult result;
    std::size_t m = 0;
    if (a.analytic) {
        const ForestConfig& forest = require_forest(gf);
        Eigen::MatrixXd sigma = cfg.variant == LearnerVariant::dc_resistive ? analytic_sigma_eps_dc(forest, model)
                                                                            : analytic_sigma_eps(forest, model);
        result = reconstruct(ExactMoments(grid, std::move(sigma)), model, grid, cfg);
    } else {
        if (a.samples.empty()) {
            throw usage_error("learn needs --samples or --analytic");
        }
        std::ifstream in(a.samples);
        if (!in) {
            throw domain_error("cannot open " + a.samples);
        }
        Eigen::MatrixXd eps = read_samples_csv(in, grid);
        m = static_cast<std::size_t>(eps.rows());
        result = reconstruct(SampleMoments(grid, std::move(eps)), model, grid, cfg);
    }
    if (gf.forest) {
        result.relative_error = relative_error(result, *gf.forest);
    }
    if (!a.trace.empty()) {
        with_output(a.trace, [&](std::ostream& out) { write_trace_csv(out, result); });
    }

    if (as_json) {
        ordered_json j{{"ok", true}, {"tau", a.tau}, {"variant", a.variant}, {"samples", m}};
        ordered_json edges = ordered_json::array();
        for (const LearnedEdge& e : result.edges) {
            edges.push_back({e.child, e.parent});
        }
        j["edges"] = edges;
        j["orphans"] = result.orphans;
        j["tests"] = result.tests;
        j["relative_error"] = result.relative_error ? ordered_json(*result.relative_error) : ordered_json(nullptr);
        std::cout << j.dump() << "\n";
    } else {
        std::cout << "child,parent\n";
        for (const LearnedEdge& e : result.edges) {
            std::cout << e.child << ',' << e.parent << '\n';
        }
        if (!result.orphans.empty()) {
            std::cout << "# orphans:";
            for (const NodeId id : result.orphans) {
                std::cout << ' ' << id;
            }
            std::cout << '\n';
        }
        if (result.relative_error) {
            std::cout << "# relative_error: " << format_double(*result.relative_error) << '\n';
        }
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
    std::string plan;
    std::optional<std::uint64_t> seed;
    std::string output;
    bool verbose = false;
    bool gnuplot = false;
    bool timing = false;
    std::optional<std::size_t> threads;
};

int cmd_experiment(const ExperimentArgs& a, bool as_json) {
    ExperimentPlan plan = ExperimentPlan::load(a.plan);
    if (a.seed) {
        plan.seed = *a.seed;
    }
    if (!a.output.empty()) {
        plan.output = a.output == "-" ? std::nullopt : std::optional<fs::path>(a.output);
    }
    plan.verbose = plan.verbose || a.verbose;
    plan.gnuplot = plan.gnuplot || a.gnuplot;
    plan.timing = plan.timing || a.timing;
    if (a.threads) {
        plan.threads = *a.threads;
    }
    plan.validate();

    const ExperimentResult result = run_experiment(plan);
    const std::string out = plan.output ? plan.output->string() : std::string{};
    with_output(out, [&](std::ostream& o) { write_experiment_csv(o, result, plan.timing); });
    std::vector<std::string> written;
    if (!out.empty()) {
        written.push_back(out);
    }
    // With the summary on stdout the side files are named after the plan.
    const std::string stem = plan.name.empty() ? std::string("experiment") : plan.name;
    if (plan.verbose) {
        const std::string path = out.empty() ? stem + ".trials.csv" : out + ".trials.csv";
        with_output(path, [&](std::ostream& o) { write_trials_csv(o, result); });
        written.push_back(path);
    }
    if (plan.gnuplot) {
        const std::string csv = out.empty() ? stem + ".csv" : fs::path(out).filename().string();
        const std::string path = out.empty() ? stem + ".gp" : out + ".gp";
        with_output(path, [&](std::ostream& o) { write_gnuplot_script(o, result, csv); });
        written.push_back(path);
    }
    if (as_json && !out.empty()) {
        std::cout << ordered_json{{"ok", result.failed_trials == 0},
                                  {"rows", result.rows.size()},
                                  {"failed_trials", result.failed_trials},
                                  {"written", written}}
                         .dump()
                  << "\n";
    }
    if (result.failed_trials > 0) {
        std::cerr << "warning: " << result.failed_trials << " trial(s) failed\n";
        return exit_failure;
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::string grid;
    std::string model;
    bool strict = false;
};

int cmd_validate(const ValidateArgs& a, bool as_json) {
    const GridFile gf = parse_grid(a.grid);
    ordered_json j{{"ok", true},
                   {"name", gf.name},
                   {"loads", gf.grid->load_count()},
                   {"substations", gf.grid->substation_count()},
                   {"lines", gf.grid->line_count()},
                   {"forest", gf.forest.has_value()}};
    std::vector<std::string> warnings;
    if (gf.forest) {
        const InjectionModel model = load_model(a.model, *gf.grid);
        for (const PositivityViolation& v : check_positive_moments(*gf.forest, model)) {
            warnings.push_back(fmt::format("pair ({}, {}) violates positivity of Sigma_{}: {}", v.a, v.b, v.moment,
                                           format_double(v.value)));
        }
        for (const FlowModel flow : {FlowModel::lc, FlowModel::dc_resistive}) {
            const OrderingReport rep = verify_moment_ordering(*gf.forest, model, flow);
            for (const auto& [desc, anc] : rep.violations) {
                warnings.push_back(fmt::format("{} moments: Sigma_eps of descendant {} not above that of ancestor {}",
                                               flow == FlowModel::lc ? "lc" : "dc", desc, anc));
            }
        }
    } else {
        warnings.emplace_back("no closed lines declared; forest checks skipped");
    }
    j["warnings"] = warnings;
    if (as_json) {
        std::cout << j.dump() << "\n";
    } else {
        std::cout << fmt::format("{}: {} loads, {} substations, {} lines{}\n", gf.name, gf.grid->load_count(),
                                 gf.grid->substation_count(), gf.grid->line_count(),
                                 gf.forest ? ", forest valid" : "");
        for (const std::string& w : warnings) {
            std::cerr << "warning: " << w << '\n';
        }
    }
    return a.strict && !warnings.empty() ? exit_failure : exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topology reconstruction of radial distribution grids from voltage statistics"};
    app.require_subcommand(1);
    app.fallthrough();
    bool as_json = false;
    app.add_flag("--json", as_json, "Machine-readable output");

    GenGridArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-grid", "Generate a random grid with an operational forest");
    gen_cmd->add_option("--loads", gen.loads, "Load nodes")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--substations", gen.substations, "Substations")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--ties", gen.ties, "Open tie switches");
    gen_cmd->add_option("--extra", gen.extra, "Open added lines");
    gen_cmd->add_option("--seed", gen.seed, "Seed (default GRIDTOP_SEED or 1)");
    gen_cmd->add_option("--r-min", gen.r_min);
    gen_cmd->add_option("--r-max", gen.r_max);
    gen_cmd->add_option("--x-min", gen.x_min);
    gen_cmd->add_option("--x-max", gen.x_max);
    gen_cmd->add_option("--base", gen.base, "Augment an existing grid instead of generating one")
        ->check(CLI::ExistingFile);
    gen_cmd->add_option("--add", gen.add, "Open lines to add to --base");
    gen_cmd->add_option("--name", gen.name, "Grid name stored in meta");
    gen_cmd->add_option("-o,--output", gen.output, "Output file (default stdout)");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Draw injections and write voltage samples");
    sim_cmd->add_option("--grid", sim.grid, "Grid JSON")->required()->check(CLI::ExistingFile);
    sim_cmd->add_option("--model", sim.model, "Injection model JSON (default parameters)")->check(CLI::ExistingFile);
    sim_cmd->add_option("-m,--samples", sim.samples, "Number of samples")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim.seed, "Seed (default GRIDTOP_SEED or 1)");
    sim_cmd->add_option("--engine", sim.engine, "lc, distflow or dc")->check(CLI::IsMember({"lc", "distflow", "dc"}));
    sim_cmd->add_option("-o,--output", sim.output, "Sample CSV (default stdout)");

    MomentsArgs mom;
    auto* mom_cmd = app.add_subcommand("moments", "Second moments of voltage deviations");
    mom_cmd->add_option("--samples", mom.samples, "Sample CSV")->check(CLI::ExistingFile);
    mom_cmd->add_option("--grid", mom.grid, "Grid JSON (for --analytic)")->check(CLI::ExistingFile);
    mom_cmd->add_option("--model", mom.model, "Injection model JSON")->check(CLI::ExistingFile);
    mom_cmd->add_flag("--analytic", mom.analytic, "Compute the exact moments instead of sample averages");
    mom_cmd->add_flag("--dc", mom.dc, "Use the resistive DC model for --analytic");
    mom_cmd->add_option("-o,--output", mom.output, "Output file (default stdout)");

    LearnArgs lrn;
    auto* lrn_cmd = app.add_subcommand("learn", "Reconstruct the operational forest");
    lrn_cmd->add_option("--grid", lrn.grid, "Grid JSON")->required()->check(CLI::ExistingFile);
    lrn_cmd->add_option("--samples", lrn.samples, "Sample CSV")->check(CLI::ExistingFile);
    lrn_cmd->add_option("--model", lrn.model, "Injection model JSON")->check(CLI::ExistingFile);
    lrn_cmd->add_flag("--analytic", lrn.analytic, "Use exact moments of the declared forest");
    lrn_cmd->add_option("--tau", lrn.tau, "Acceptance tolerance")->check(CLI::Range(0.0, 1.0));
    lrn_cmd->add_option("--variant", lrn.variant, "lc or dc")->check(CLI::IsMember({"lc", "dc"}));
    lrn_cmd->add_option("--candidates", lrn.candidates, "grid or all")->check(CLI::IsMember({"grid", "all"}));
    lrn_cmd->add_option("--rule", lrn.rule, "relative or literal")->check(CLI::IsMember({"relative", "literal"}));
    lrn_cmd->add_option("--trace", lrn.trace, "Write every tested pair to this CSV");

    ExperimentArgs exp;
    auto* exp_cmd = app.add_subcommand("experiment", "Run a Monte-Carlo sweep from a plan");
    exp_cmd->add_option("--plan", exp.plan, "Plan JSON")->required()->check(CLI::ExistingFile);
    exp_cmd->add_option("--seed", exp.seed, "Override the master seed");
    exp_cmd->add_option("-o,--output", exp.output, "Override the CSV path ('-' for stdout)");
    exp_cmd->add_flag("--verbose", exp.verbose, "Also write per-trial rows");
    exp_cmd->add_flag("--gnuplot", exp.gnuplot, "Also write a gnuplot script");
    exp_cmd->add_flag("--timing", exp.timing, "Fill the seconds column");
    exp_cmd->add_option("--threads", exp.threads, "Worker threads")->check(CLI::PositiveNumber);

    ValidateArgs val;
    auto* val_cmd = app.add_subcommand("validate", "Check a grid and an injection model");
    val_cmd->add_option("--grid", val.grid, "Grid JSON")->required()->check(CLI::ExistingFile);
    val_cmd->add_option("--model", val.model, "Injection model JSON")->check(CLI::ExistingFile);
    val_cmd->add_flag("--strict", val.strict, "Exit nonzero when there are warnings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*gen_cmd) {
            return cmd_gen_grid(gen, as_json);
        }
        if (*sim_cmd) {
            return cmd_simulate(sim, as_json);
        }
        if (*mom_cmd) {
            return cmd_moments(mom, as_json);
        }
        if (*lrn_cmd) {
            return cmd_learn(lrn, as_json);
        }
        if (*exp_cmd) {
            return cmd_experiment(exp, as_json);
        }
        if (*val_cmd) {
            return cmd_validate(val, as_json);
        }
    } catch (const usage_error& e) {
        if (as_json) {
            std::cout << ordered_json{{"ok", false}, {"error", e.what()}, {"kind", "usage"}}.dump() << "\n";
        }
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        if (as_json) {
            std::cout << ordered_json{{"ok", false}, {"error", e.what()}}.dump() << "\n";
        }
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return exit_usage;
}
