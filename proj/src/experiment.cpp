#include "gridtop/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <ostream>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "gridtop/errors.hpp"
#include "gridtop/io.hpp"
#include "gridtop/powerflow.hpp"

namespace gridtop {

using json = nlohmann::json;

std::string to_string(PowerFlowEngine e) {
    switch (e) {
        case PowerFlowEngine::lc:
            return "lc";
        case PowerFlowEngine::distflow:
            return "distflow";
        case PowerFlowEngine::dc_resistive:
            return "dc";
    }
    return "lc";
}

std::string to_string(LearnerVariant v) { return v == LearnerVariant::lc ? "lc" : "dc"; }

PowerFlowEngine parse_engine(const std::string& s) {
    if (s == "lc") {
        return PowerFlowEngine::lc;
    }
    if (s == "distflow") {
        return PowerFlowEngine::distflow;
    }
    if (s == "dc") {
        return PowerFlowEngine::dc_resistive;
    }
    throw domain_error("unknown power flow engine '" + s + "' (expected lc, distflow or dc)");
}

LearnerVariant parse_variant(const std::string& s) {
    if (s == "lc") {
        return LearnerVariant::lc;
    }
    if (s == "dc") {
        return LearnerVariant::dc_resistive;
    }
    throw domain_error("unknown learner variant '" + s + "' (expected lc or dc)");
}

CandidateEdges parse_candidates(const std::string& s) {
    if (s == "grid") {
        return CandidateEdges::restrict_to_grid;
    }
    if (s == "all") {
        return CandidateEdges::all_pairs;
    }
    throw domain_error("unknown candidate set '" + s + "' (expected grid or all)");
}

ToleranceRule parse_rule(const std::string& s) {
    if (s == "relative") {
        return ToleranceRule::relative;
    }
    if (s == "literal") {
        return ToleranceRule::literal;
    }
    throw domain_error("unknown tolerance rule '" + s + "' (expected relative or literal)");
}

// ---------------------------------------------------------------------------
// Plan

namespace {

std::uint64_t env_seed() {
    const char* s = std::getenv("GRIDTOP_SEED");
    if (s == nullptr || *s == '\0') {
        return 1;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') {
        throw domain_error(std::string("GRIDTOP_SEED is not an unsigned integer: ") + s);
    }
    return v;
}

GridSpec generator_from_json(const json& g) {
    GridSpec spec;
    spec.loads = g.value("loads", spec.loads);
    spec.substations = g.value("substations", spec.substations);
    spec.tie_switches = g.value("tie_switches", spec.tie_switches);
    spec.extra_lines = g.value("extra_lines", spec.extra_lines);
    spec.seed = g.value("seed", spec.seed);
    if (g.contains("impedance")) {
        const json& imp = g.at("impedance");
        spec.impedance.r_min = imp.value("r_min", spec.impedance.r_min);
        spec.impedance.r_max = imp.value("r_max", spec.impedance.r_max);
        spec.impedance.x_min = imp.value("x_min", spec.impedance.x_min);
        spec.impedance.x_max = imp.value("x_max", spec.impedance.x_max);
    }
    return spec;
}

json generator_to_json(const GridSpec& spec) {
    return {{"loads", spec.loads},
            {"substations", spec.substations},
            {"tie_switches", spec.tie_switches},
            {"extra_lines", spec.extra_lines},
            {"seed", spec.seed},
            {"impedance",
             {{"r_min", spec.impedance.r_min},
              {"r_max", spec.impedance.r_max},
              {"x_min", spec.impedance.x_min},
              {"x_max", spec.impedance.x_max}}}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ExperimentPlan ExperimentPlan::from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) {
        throw validation_error("experiment plan must be a JSON object");
    }
    ExperimentPlan plan;
    try {
        plan.name = j.value("name", std::string{});
        if (!j.contains("grid")) {
            throw validation_error("experiment plan needs a 'grid' entry");
        }
        const json& g = j.at("grid");
        if (g.contains("file")) {
            plan.grid_file = resolve(base_dir, g.at("file").get<std::string>());
        } else if (g.contains("generator")) {
            plan.generator = generator_from_json(g.at("generator"));
        } else {
            throw validation_error("'grid' needs either 'file' or 'generator'");
        }
        if (j.contains("forest")) {
            const json& f = j.at("forest");
            if (f.is_string()) {
                if (f.get<std::string>() != "file") {
                    throw validation_error("'forest' string must be \"file\"");
                }
            } else if (f.contains("closed")) {
                plan.closed_edges = f.at("closed").get<std::vector<std::pair<NodeId, NodeId>>>();
            } else if (f.contains("random_seed")) {
                plan.forest_seed = f.at("random_seed").get<std::uint64_t>();
            } else {
                throw validation_error("'forest' needs 'closed' or 'random_seed'");
            }
        }
        if (j.contains("model")) {
            plan.model = j.at("model");
        }
        if (j.contains("samples")) {
            plan.samples.clear();
            for (const json& m : j.at("samples")) {
                if (m.is_string()) {
                    if (m.get<std::string>() != "inf") {
                        throw validation_error("sample counts must be positive integers or \"inf\"");
                    }
                    plan.samples.push_back(analytic_samples);
                } else {
                    const auto v = m.get<std::int64_t>();
                    if (v < 1) {
                        throw validation_error("sample counts must be at least 1");
                    }
                    plan.samples.push_back(static_cast<std::size_t>(v));
                }
            }
        }
        if (j.contains("taus")) {
            plan.taus = j.at("taus").get<std::vector<double>>();
        }
        plan.trials = j.value("trials", plan.trials);
        plan.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : env_seed();
        plan.engine = parse_engine(j.value("engine", std::string("lc")));
        plan.variant = parse_variant(j.value("variant", std::string("lc")));
        plan.candidates = parse_candidates(j.value("candidates", std::string("grid")));
        plan.rule = parse_rule(j.value("rule", std::string("relative")));
        if (j.contains("output")) {
            plan.output = resolve(base_dir, j.at("output").get<std::string>());
        }
        plan.verbose = j.value("verbose", false);
        plan.gnuplot = j.value("gnuplot", false);
        plan.timing = j.value("timing", false);
        plan.threads = j.value("threads", std::size_t{1});
    } catch (const json::exception& e) {
        throw validation_error(std::string("bad experiment plan: ") + e.what());
    } catch (const domain_error& e) {
        throw validation_error(e.what());
    }
    try {
        plan.validate();
    } catch (const domain_error& e) {
        throw validation_error(e.what());
    }
    return plan;
}

ExperimentPlan ExperimentPlan::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw domain_error("cannot open plan " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw parse_error(std::string("malformed plan JSON: ") + e.what(), 0);
    }
    return from_json(j, path.parent_path());
}

nlohmann::ordered_json ExperimentPlan::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    if (grid_file) {
        j["grid"] = {{"file", grid_file->string()}};
    } else if (generator) {
        j["grid"] = {{"generator", generator_to_json(*generator)}};
    }
    if (closed_edges) {
        j["forest"] = {{"closed", *closed_edges}};
    } else if (forest_seed) {
        j["forest"] = {{"random_seed", *forest_seed}};
    } else {
        j["forest"] = "file";
    }
    j["model"] = model;
    nlohmann::ordered_json ms = nlohmann::ordered_json::array();
    for (const std::size_t m : samples) {
        if (m == analytic_samples) {
            ms.push_back("inf");
        } else {
            ms.push_back(m);
        }
    }
    j["samples"] = ms;
    j["taus"] = taus;
    j["trials"] = trials;
    j["seed"] = seed;
    j["engine"] = to_string(engine);
    j["variant"] = to_string(variant);
    j["candidates"] = candidates == CandidateEdges::all_pairs ? "all" : "grid";
    j["rule"] = rule == ToleranceRule::literal ? "literal" : "relative";
    if (output) {
        j["output"] = output->string();
    }
    j["verbose"] = verbose;
    j["gnuplot"] = gnuplot;
    j["timing"] = timing;
    j["threads"] = threads;
    return j;
}

void ExperimentPlan::validate() const {
    if (!grid_file && !generator) {
        throw domain_error("plan has no grid source");
    }
    if (samples.empty() || taus.empty()) {
        throw domain_error("plan needs at least one sample count and one tau");
    }
    if (trials < 1) {
        throw domain_error("trials must be at least 1");
    }
    if (threads < 1) {
        throw domain_error("threads must be at least 1");
    }
    for (const double t : taus) {
        if (!(t > 0.0 && t < 1.0)) {
            throw domain_error("tau must lie in (0, 1), got " + format_double(t));
        }
    }
}

// ---------------------------------------------------------------------------
// Setup

ExperimentSetup resolve_setup(const ExperimentPlan& plan) {
    plan.validate();
    ExperimentSetup setup;
    std::optional<ForestConfig> file_forest;
    if (plan.grid_file) {
        GridFile gf = parse_grid(*plan.grid_file);
        setup.name = gf.name;
        setup.grid = gf.grid;
        file_forest = std::move(gf.forest);
    } else {
        GeneratedGrid gen = generate_random_grid(*plan.generator);
        setup.name = fmt::format("random_{}_{}", plan.generator->loads, plan.generator->substations);
        setup.grid = gen.grid;
        file_forest = std::move(gen.forest);
    }
    if (!plan.name.empty()) {
        setup.name = plan.name;
    }
    const GridGraph& g = *setup.grid;
    if (plan.closed_edges) {
        std::vector<LineIndex> closed;
        for (const auto& [a, b] : *plan.closed_edges) {
            const auto line = g.find_line(g.index_of(a), g.index_of(b));
            if (!line) {
                throw domain_error(fmt::format("closed edge ({}, {}) is not a line of the grid", a, b));
            }
            closed.push_back(*line);
        }
        setup.forest = std::make_shared<const ForestConfig>(ForestConfig::from_closed_lines(setup.grid, closed));
    } else if (plan.forest_seed) {
        setup.forest = std::make_shared<const ForestConfig>(random_spanning_forest(setup.grid, *plan.forest_seed));
    } else if (file_forest) {
        setup.forest = std::make_shared<const ForestConfig>(std::move(*file_forest));
    } else {
        throw domain_error("grid declares no closed lines and the plan selects no forest");
    }
    setup.model = std::make_shared<const InjectionModel>(model_from_json(plan.model, g));
    return setup;
}

// ---------------------------------------------------------------------------
// Run

std::uint64_t trial_seed(std::uint64_t master, std::size_t m_index, std::size_t trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32U),
                      static_cast<std::uint32_t>(m_index), static_cast<std::uint32_t>(trial),
                      static_cast<std::uint32_t>(static_cast<std::uint64_t>(trial) >> 32U)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32U) | out[1];
}

namespace {

Eigen::MatrixXd simulate_eps(const ExperimentSetup& setup, const InjectionSampler& sampler, PowerFlowEngine engine,
                             std::size_t m, std::uint64_t seed) {
    auto rng = InjectionSampler::make_engine(seed, 0);
    const auto n = static_cast<Eigen::Index>(setup.grid->load_count());
    Eigen::MatrixXd eps(static_cast<Eigen::Index>(m), n);
    for (std::size_t s = 0; s < m; ++s) {
        const InjectionVector inj = sampler.draw(rng);
        Eigen::VectorXd e;
        switch (engine) {
            case PowerFlowEngine::lc:
                e = lcpf_solve(*setup.forest, inj).eps;
                break;
            case PowerFlowEngine::dc_resistive:
                e = dc_resistive_solve(*setup.forest, inj).eps;
                break;
            case PowerFlowEngine::distflow:
                e = distflow_solve(*setup.forest, inj).state.eps;
                break;
        }
        eps.row(static_cast<Eigen::Index>(s)) = e.transpose();
    }
    return eps;
}

struct TrialOutcome {
    std::vector<double> errors;  // one per tau
    std::string failure;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan) { return run_experiment(plan, resolve_setup(plan)); }

ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentSetup& setup) {
    plan.validate();
    const InjectionSampler sampler(*setup.model);
    const std::size_t nt = plan.taus.size();
    ExperimentResult result;

    auto learn = [&](const VoltageMomentSource& src, double tau) {
        LearnerConfig cfg;
        cfg.tau = tau;
        cfg.variant = plan.variant;
        cfg.candidates = plan.candidates;
        cfg.rule = plan.rule;
        cfg.record_trace = false;
        return relative_error(reconstruct(src, *setup.model, *setup.grid, cfg), *setup.forest);
    };

    for (std::size_t mi = 0; mi < plan.samples.size(); ++mi) {
        const std::size_t m = plan.samples[mi];
        const auto start = std::chrono::steady_clock::now();
        std::vector<TrialOutcome> outcomes(plan.trials);
        std::vector<std::uint64_t> seeds(plan.trials);
        for (std::size_t t = 0; t < plan.trials; ++t) {
            seeds[t] = trial_seed(plan.seed, mi, t);
        }

        auto run_trial = [&](std::size_t t) {
            TrialOutcome& out = outcomes[t];
            try {
                std::unique_ptr<VoltageMomentSource> src;
                if (m == analytic_samples) {
                    Eigen::MatrixXd sigma = plan.engine == PowerFlowEngine::dc_resistive
                                                ? analytic_sigma_eps_dc(*setup.forest, *setup.model)
                                                : analytic_sigma_eps(*setup.forest, *setup.model);
                    src = std::make_unique<ExactMoments>(*setup.grid, std::move(sigma));
                } else {
                    src = std::make_unique<SampleMoments>(*setup.grid,
                                                          simulate_eps(setup, sampler, plan.engine, m, seeds[t]));
                }
                for (const double tau : plan.taus) {
                    out.errors.push_back(learn(*src, tau));
                }
            } catch (const std::exception& e) {
                out.errors.assign(nt, std::nan(""));
                out.failure = e.what();
            }
        };

        if (m == analytic_samples) {
            // Analytic moments do not depend on the trial; solve once and replicate.
            run_trial(0);
            for (std::size_t t = 1; t < plan.trials; ++t) {
                outcomes[t] = outcomes[0];
            }
        } else if (plan.threads <= 1 || plan.trials == 1) {
            for (std::size_t t = 0; t < plan.trials; ++t) {
                run_trial(t);
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            const std::size_t workers = std::min(plan.threads, plan.trials);
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t t = next++; t < plan.trials; t = next++) {
                        run_trial(t);
                    }
                });
            }
            for (std::thread& th : pool) {
                th.join();
            }
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        for (std::size_t ti = 0; ti < nt; ++ti) {
            ExperimentRow row;
            row.grid = setup.name;
            row.variant = to_string(plan.variant);
            row.m = m;
            row.tau = plan.taus[ti];
            row.trials = plan.trials;
            row.seconds = seconds;
            std::vector<double> ok;
            for (std::size_t t = 0; t < plan.trials; ++t) {
                const TrialOutcome& o = outcomes[t];
                if (o.failure.empty()) {
                    ok.push_back(o.errors[ti]);
                } else {
                    ++row.failed;
                }
                result.trials.push_back({m, plan.taus[ti], t, seeds[t], o.errors[ti], o.failure});
            }
            if (ok.empty()) {
                row.mean_error = std::nan("");
                row.std_error = std::nan("");
            } else {
                double sum = 0.0;
                for (const double e : ok) {
                    sum += e;
                }
                row.mean_error = sum / static_cast<double>(ok.size());
                // Shifted by the first value so identical errors give exactly zero.
                double shift_sum = 0.0;
                double shift_sq = 0.0;
                for (const double e : ok) {
                    shift_sum += e - ok.front();
                    shift_sq += (e - ok.front()) * (e - ok.front());
                }
                const double ss =
                    std::max(0.0, shift_sq - shift_sum * shift_sum / static_cast<double>(ok.size()));
                row.std_error = ok.size() < 2 ? 0.0
                                              : std::sqrt(ss / static_cast<double>(ok.size() - 1)) /
                                                    std::sqrt(static_cast<double>(ok.size()));
            }
            result.failed_trials += row.failed;
            result.rows.push_back(row);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string m_label(std::size_t m) { return m == analytic_samples ? "inf" : std::to_string(m); }

std::string number(double v) { return std::isnan(v) ? std::string{} : format_double(v); }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (const char c : s) {
        out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
    }
    return out + "\"";
}

}  // namespace

void write_experiment_csv(std::ostream& out, const ExperimentResult& result, bool timing) {
    out << "grid,variant,m,tau,trials,mean_error,std_error,seconds,failed\n";
    for (const ExperimentRow& r : result.rows) {
        fmt::print(out, "{},{},{},{},{},{},{},{},{}\n", csv_field(r.grid), r.variant, m_label(r.m), number(r.tau),
                   r.trials, number(r.mean_error), number(r.std_error), timing ? fmt::format("{:.3f}", r.seconds) : "",
                   r.failed);
    }
}

void write_trials_csv(std::ostream& out, const ExperimentResult& result) {
    out << "m,tau,trial,seed,error,failure\n";
    for (const TrialRow& r : result.trials) {
        fmt::print(out, "{},{},{},{},{},{}\n", m_label(r.m), number(r.tau), r.trial, r.seed, number(r.error),
                   csv_field(r.failure));
    }
}

void write_gnuplot_script(std::ostream& out, const ExperimentResult& result, const std::string& csv_name) {
    std::set<double> taus;
    for (const ExperimentRow& r : result.rows) {
        taus.insert(r.tau);
    }
    out << "set datafile separator ','\n"
           "set logscale x\n"
           "set xlabel 'samples m'\n"
           "set ylabel 'mean relative error'\n"
           "set key top right\n";
    out << "plot ";
    bool first = true;
    for (auto it = taus.rbegin(); it != taus.rend(); ++it) {
        if (!first) {
            out << ", \\\n     ";
        }
        first = false;
        const std::string t = format_double(*it);
        fmt::print(out, "'{}' using (strcol(4) eq '{}' && strcol(3) ne 'inf' ? $3 : 1/0):6:7 with yerrorlines title 'tau={}'",
                   csv_name, t, t);
    }
    out << "\n";
}

}  // namespace gridtop
