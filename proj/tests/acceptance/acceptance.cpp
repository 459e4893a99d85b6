// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>

#include "gridtop/experiment.hpp"
#include "gridtop/generators.hpp"
#include "gridtop/io.hpp"
#include "gridtop/learner.hpp"
#include "gridtop/moments.hpp"
#include "gridtop/powerflow.hpp"
#include "oracles.hpp"

#ifndef GRIDTOP_FIXTURE_DIR
#error "GRIDTOP_FIXTURE_DIR must be defined"
#endif
#ifndef GRIDTOP_CLI
#error "GRIDTOP_CLI must be defined"
#endif

using namespace gridtop;
namespace gt = gridtop::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixture(const char* name) { return std::string(GRIDTOP_FIXTURE_DIR) + "/" + name; }

GeneratedGrid load_fixture(const char* name) {
    GridFile gf = parse_grid(fixture(name));
    return {gf.grid, std::move(*gf.forest)};
}

std::size_t rand_between(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Random connected instance with N <= max_n loads.
GeneratedGrid random_grid(std::mt19937_64& rng, std::size_t min_n, std::size_t max_n) {
    GridSpec spec;
    spec.loads = rand_between(rng, min_n, max_n);
    spec.substations = rand_between(rng, 1, std::max<std::size_t>(1, spec.loads / 8));
    // Node pairs left for open lines: all pairs minus substation pairs minus the forest.
    const std::size_t nodes = spec.loads + spec.substations;
    const std::size_t free_pairs =
        nodes * (nodes - 1) / 2 - spec.substations * (spec.substations - 1) / 2 - spec.loads;
    spec.tie_switches = spec.substations - 1 + rand_between(rng, 0, std::min<std::size_t>(3, free_pairs - (spec.substations - 1)));
    spec.extra_lines = rand_between(rng, 0, std::min(spec.loads, free_pairs - spec.tie_switches));
    spec.seed = rng();
    return generate_random_grid(spec);
}

/// Chain with shuffled ids and random impedances below one substation.
GeneratedGrid random_chain(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> impedance(0.01, 0.05);
    std::vector<NodeId> order(n);
    std::iota(order.begin(), order.end(), NodeId{1});
    std::shuffle(order.begin(), order.end(), rng);
    const auto root = static_cast<NodeId>(n + 1);
    std::vector<Node> nodes{{root, NodeKind::substation}};
    std::vector<Line> lines;
    NodeId prev = root;
    for (const NodeId id : order) {
        nodes.push_back({id, NodeKind::load});
        Line l;
        l.from = id;
        l.to = prev;
        l.r = impedance(rng);
        l.x = impedance(rng);
        lines.push_back(l);
        prev = id;
    }
    std::vector<LineIndex> closed(n);
    std::iota(closed.begin(), closed.end(), LineIndex{0});
    auto grid = std::make_shared<const GridGraph>(std::move(nodes), std::move(lines));
    auto forest = ForestConfig::from_closed_lines(grid, std::move(closed));
    return {std::move(grid), std::move(forest)};
}

// 1 -------------------------------------------------------------------------
Outcome exact_recovery() {
    std::vector<GeneratedGrid> grids;
    for (const char* f : {"bus_13_3.json", "bus_29_1.json", "bus_83_11.json"}) {
        grids.push_back(load_fixture(f));
    }
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        grids.push_back(random_grid(rng, 2, 100));
    }
    double worst_err = 0.0;
    double worst_time = 0.0;
    for (std::size_t i = 0; i < grids.size(); ++i) {
        const auto& g = grids[i];
        const auto t0 = Clock::now();
        const InjectionModel model = make_gaussian_load_model(g.grid->load_count());
        LearnerConfig cfg;
        cfg.tau = 1e-9;
        cfg.record_trace = false;
        const auto r =
            reconstruct(ExactMoments(*g.grid, analytic_sigma_eps(g.forest, model)), model, *g.grid, cfg);
        const double err = relative_error(r, g.forest);
        worst_time = std::max(worst_time, seconds_since(t0));
        worst_err = std::max(worst_err, err);
    }
    return {worst_err == 0.0 && worst_time < 1.0,
            fmt::format("{} grids, max relative_error {}, max time {:.4f} s", grids.size(), worst_err, worst_time)};
}

// 2 -------------------------------------------------------------------------
Outcome error_decay() {
    ExperimentPlan plan;
    plan.name = "bus_13_3";
    plan.grid_file = fixture("bus_13_3.json");
    plan.samples = {200, 800, 3200, 12800};
    plan.taus = {0.05};
    plan.trials = 200;
    plan.seed = 2024;
    const auto t0 = Clock::now();
    const auto res = run_experiment(plan);
    const double secs = seconds_since(t0);
    std::vector<double> errs;
    for (const auto& row : res.rows) {
        errs.push_back(row.mean_error);
    }
    bool strictly = true;
    for (std::size_t i = 1; i < errs.size(); ++i) {
        strictly = strictly && errs[i] < errs[i - 1];
    }
    const bool pass = strictly && errs.back() < 0.05 && secs < 120.0 && res.failed_trials == 0;
    return {pass, fmt::format("mean errors {} (strictly decreasing: {}), {:.1f} s", fmt::join(errs, ", "),
                              strictly ? "yes" : "no", secs)};
}

// 3 -------------------------------------------------------------------------
Outcome threshold_floor() {
    ExperimentPlan plan;
    plan.name = "bus_13_3_x50";
    plan.grid_file = fixture("bus_13_3_x50.json");
    plan.samples = {12800};
    plan.taus = {0.4, 0.01};
    plan.trials = 200;
    plan.seed = 2024;
    const auto t0 = Clock::now();
    const auto res = run_experiment(plan);
    const double secs = seconds_since(t0);
    const double large = res.rows[0].mean_error;
    const double small = res.rows[1].mean_error;
    const bool pass = large >= 2.0 * small && secs < 180.0 && res.failed_trials == 0;
    return {pass, fmt::format("tau=0.4 error {}, tau=0.01 error {}, {:.1f} s", large, small, secs)};
}

// 4 -------------------------------------------------------------------------
Outcome ordering() {
    std::mt19937_64 rng(4);
    std::size_t lc = 0;
    std::size_t dc = 0;
    std::size_t precondition = 0;
    for (int i = 0; i < 100; ++i) {
        const auto g = random_grid(rng, 2, 30);
        const auto model = gt::random_positive_model(g.grid->load_count(), rng());
        const auto rl = verify_moment_ordering(g.forest, model, FlowModel::lc);
        const auto rd = verify_moment_ordering(g.forest, model, FlowModel::dc_resistive);
        precondition += rl.precondition_holds ? 0 : 1;
        lc += rl.violations.size();
        dc += rd.violations.size();
    }
    return {lc == 0 && dc == 0 && precondition == 0,
            fmt::format("100 forests: {} LC violations, {} DC violations, {} failed preconditions", lc, dc,
                        precondition)};
}

// 5 -------------------------------------------------------------------------
Outcome lemma_identities() {
    std::mt19937_64 rng(5);
    double worst = 0.0;
    std::size_t pairs = 0;
    for (int i = 0; i < 50; ++i) {
        const auto g = random_grid(rng, 2, 40);
        const GridGraph& grid = *g.grid;
        const auto model = gt::random_positive_model(grid.load_count(), rng());
        const Eigen::MatrixXd lc = analytic_sigma_eps(g.forest, model);
        const Eigen::MatrixXd dc = analytic_sigma_eps_dc(g.forest, model);
        auto quad = [&](const Eigen::MatrixXd& s, NodeIndex a, NodeIndex b) {
            const auto pa = grid.load_position(a);
            const auto pb = grid.load_position(b);
            auto at = [&](const std::optional<std::size_t>& x, const std::optional<std::size_t>& y) {
                return x && y ? s(static_cast<Eigen::Index>(*x), static_cast<Eigen::Index>(*y)) : 0.0;
            };
            return at(pa, pa) - 2.0 * at(pa, pb) + at(pb, pb);
        };
        for (const NodeIndex u : grid.loads()) {
            const NodeIndex p = *g.forest.parent(u);
            const NodeId a = grid.node(u).id;
            const NodeId b = grid.node(p).id;
            worst = std::max(worst, gt::rel_diff(expected_sq_diff_lc(g.forest, model, a, b), quad(lc, u, p)));
            worst = std::max(worst, gt::rel_diff(expected_sq_diff_dc(g.forest, model, a, b), quad(dc, u, p)));
            ++pairs;
        }
    }
    return {worst <= 1e-10, fmt::format("{} adjacent pairs, max relative deviation {:.3g}", pairs, worst)};
}

// 6 -------------------------------------------------------------------------
Outcome incidence_structure() {
    std::mt19937_64 rng(6);
    bool entries_ok = true;
    double worst = 0.0;
    for (int i = 0; i < 30; ++i) {
        const auto g = random_grid(rng, 2, 50);
        const GridGraph& grid = *g.grid;
        const auto m = build_reduced_incidence(g.forest);
        for (std::size_t k = 0; k < m.blocks.size(); ++k) {
            const Eigen::MatrixXd bk = m.block(k);
            if (bk.size() == 0) {
                continue;
            }
            const Eigen::MatrixXd inv = bk.inverse();
            for (Eigen::Index r = 0; r < inv.rows(); ++r) {
                for (Eigen::Index c = 0; c < inv.cols(); ++c) {
                    const double v = inv(r, c);
                    const double nearest = std::round(v);
                    entries_ok = entries_ok && std::abs(v - nearest) < 1e-12 && std::abs(nearest) <= 1.0;
                }
            }
        }
        const auto w = line_weights(grid, WeightKind::conductance);
        const Eigen::MatrixXd dense = gt::dense_laplacian_inverse(g.forest, gt::conductance(g.forest));
        for (std::size_t a = 0; a < grid.load_count(); ++a) {
            for (std::size_t b = 0; b < grid.load_count(); ++b) {
                const double v = laplacian_inverse_entry(g.forest, w, grid.node(grid.loads()[a]).id,
                                                         grid.node(grid.loads()[b]).id);
                worst = std::max(worst,
                                 gt::rel_diff(v, dense(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))));
            }
        }
    }
    return {entries_ok && worst <= 1e-10,
            fmt::format("30 forests: block inverse entries in {{-1,0,1}}: {}, max entry deviation {:.3g}",
                        entries_ok ? "yes" : "no", worst)};
}

// 7 -------------------------------------------------------------------------
Outcome powerflow_consistency() {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (int i = 0; i < 30; ++i) {
        const auto g = random_grid(rng, 2, 60);
        const auto n = static_cast<Eigen::Index>(g.grid->load_count());
        const auto inj = sample_injections(make_gaussian_load_model(g.grid->load_count()), 1, rng()).front();
        const Eigen::MatrixXd a = gt::dense_laplacian_inverse(g.forest, gt::inv_r(g.forest));
        const Eigen::MatrixXd b = gt::dense_laplacian_inverse(g.forest, gt::inv_x(g.forest));
        const auto s = lcpf_solve(g.forest, inj);
        const Eigen::VectorXd eps = a * inj.p + b * inj.q;
        const Eigen::VectorXd theta = b * inj.p - a * inj.q;
        worst = std::max(worst, (s.eps - eps).cwiseAbs().maxCoeff() / std::max(eps.cwiseAbs().maxCoeff(), 1e-300));
        worst = std::max(worst,
                         (s.theta - theta).cwiseAbs().maxCoeff() / std::max(theta.cwiseAbs().maxCoeff(), 1e-300));
        (void)n;
    }

    const auto f = load_fixture("bus_13_3.json");
    auto base = sample_injections(make_gaussian_load_model(f.grid->load_count()), 1, 77).front();
    const double peak = std::max(base.p.cwiseAbs().maxCoeff(), base.q.cwiseAbs().maxCoeff());
    base.p /= peak;
    base.q /= peak;
    auto gap = [&](double scale) {
        const InjectionVector inj{scale * base.p, scale * base.q};
        return (distflow_solve(f.forest, inj).state.eps - lcpf_solve(f.forest, inj).eps).cwiseAbs().maxCoeff();
    };
    const double ratio = gap(1e-2) / gap(1e-3);
    const bool pass = worst <= 1e-10 && ratio >= 30.0 && ratio <= 300.0;
    return {pass, fmt::format("LC sweep vs dense max relative deviation {:.3g}; gap(1e-2)/gap(1e-3) = {:.2f}", worst,
                              ratio)};
}

// 8 -------------------------------------------------------------------------
Outcome complexity() {
    std::vector<double> xs;
    std::vector<double> ys;
    for (const std::size_t n : {100U, 200U, 400U}) {
        const auto c = random_chain(n, n);
        const auto model = make_gaussian_load_model(n);
        const ExactMoments src(*c.grid, analytic_sigma_eps(c.forest, model));
        // Every pair is a candidate so the full quadratic search runs. Deep
        // chains lose about 1e-5 relative precision in the moment differences,
        // so tau sits above that floor.
        LearnerConfig cfg;
        cfg.tau = 1e-4;
        cfg.candidates = CandidateEdges::all_pairs;
        cfg.record_trace = false;
        double best = 1e300;
        for (int rep = 0; rep < 7; ++rep) {
            const auto t0 = Clock::now();
            const auto r = reconstruct(src, model, *c.grid, cfg);
            best = std::min(best, seconds_since(t0));
            if (relative_error(r, c.forest) != 0.0) {
                return {false, fmt::format("chain of {} was not recovered", n)};
            }
        }
        xs.push_back(std::log(static_cast<double>(n)));
        ys.push_back(std::log(best));
    }
    const double mx = (xs[0] + xs[1] + xs[2]) / 3.0;
    const double my = (ys[0] + ys[1] + ys[2]) / 3.0;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxy / sxx;
    return {slope <= 2.5, fmt::format("fitted exponent {:.2f} (times {:.4g}, {:.4g}, {:.4g} s)", slope,
                                      std::exp(ys[0]), std::exp(ys[1]), std::exp(ys[2]))};
}

// 9 -------------------------------------------------------------------------
Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / fmt::format("gridtop_accept_{}", ::getpid());
    fs::create_directories(dir);
    {
        std::ofstream plan(dir / "plan.json");
        plan << R"({"name": "bus_13_3", "grid": {"file": ")" << fixture("bus_13_3.json") << R"("},
  "samples": [200, 800, "inf"], "taus": [0.2, 0.05], "trials": 10, "seed": 99})";
    }
    auto run = [&](const std::string& out, const std::string& extra) {
        const std::string cmd = fmt::format("\"{}\" experiment --plan \"{}\" -o \"{}\" {}", GRIDTOP_CLI,
                                            (dir / "plan.json").string(), (dir / out).string(), extra);
        return std::system(cmd.c_str());
    };
    const int rc1 = run("a.csv", "");
    const int rc2 = run("b.csv", "");
    const int rc3 = run("c.csv", "--threads 3");
    auto slurp = [&](const std::string& name) {
        std::ifstream in(dir / name, std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        return s.str();
    };
    const std::string a = slurp("a.csv");
    const bool same = !a.empty() && a == slurp("b.csv") && a == slurp("c.csv");
    fs::remove_all(dir);
    return {rc1 == 0 && rc2 == 0 && rc3 == 0 && same,
            fmt::format("three CLI runs (exit {}, {}, {}), byte-identical: {}, {} bytes", rc1, rc2, rc3,
                        same ? "yes" : "no", a.size())};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"exact recovery from analytic moments", exact_recovery},
        {"error decay with samples", error_decay},
        {"threshold floor for large tau", threshold_floor},
        {"second-moment ordering", ordering},
        {"adjacent-pair identities", lemma_identities},
        {"incidence inverse and Laplacian inverse structure", incidence_structure},
        {"power flow consistency", powerflow_consistency},
        {"learner complexity", complexity},
        {"determinism of experiment CSV", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
