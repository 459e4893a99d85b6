#include <doctest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "gridtop/errors.hpp"
#include "gridtop/experiment.hpp"

using namespace gridtop;
using nlohmann::json;

namespace {

json small_plan() {
    return json::parse(R"({
  "name": "tiny",
  "grid": {"generator": {"loads": 8, "substations": 2, "tie_switches": 1, "extra_lines": 4, "seed": 3}},
  "samples": [100, 400, "inf"],
  "taus": [0.2, 0.05],
  "trials": 4,
  "seed": 77
})");
}

std::string csv(const ExperimentResult& r, bool timing = false) {
    std::ostringstream out;
    write_experiment_csv(out, r, timing);
    return out.str();
}

}  // namespace

TEST_SUITE("experiment") {
    TEST_CASE("plan parsing and validation") {
        const auto plan = ExperimentPlan::from_json(small_plan());
        CHECK(plan.samples == std::vector<std::size_t>{100, 400, analytic_samples});
        CHECK(plan.seed == 77);
        CHECK(plan.generator->loads == 8);
        const auto again = ExperimentPlan::from_json(json::parse(plan.to_json().dump()));
        CHECK(again.to_json() == plan.to_json());

        auto bad = small_plan();
        bad["trials"] = 0;
        CHECK_THROWS_AS(ExperimentPlan::from_json(bad), validation_error);
        bad = small_plan();
        bad["taus"] = {1.5};
        CHECK_THROWS_AS(ExperimentPlan::from_json(bad), validation_error);
        bad = small_plan();
        bad["samples"] = {0};
        CHECK_THROWS_AS(ExperimentPlan::from_json(bad), validation_error);
        bad = small_plan();
        bad["engine"] = "ac";
        CHECK_THROWS_AS(ExperimentPlan::from_json(bad), validation_error);
        bad = small_plan();
        bad.erase("grid");
        CHECK_THROWS_AS(ExperimentPlan::from_json(bad), validation_error);
    }

    TEST_CASE("seed falls back to the environment") {
        auto j = small_plan();
        j.erase("seed");
        ::setenv("GRIDTOP_SEED", "4242", 1);
        CHECK(ExperimentPlan::from_json(j).seed == 4242);
        ::unsetenv("GRIDTOP_SEED");
        CHECK(ExperimentPlan::from_json(j).seed == 1);
    }

    TEST_CASE("trial seeds are distinct") {
        std::set<std::uint64_t> seen;
        for (std::size_t m = 0; m < 4; ++m) {
            for (std::size_t t = 0; t < 50; ++t) {
                seen.insert(trial_seed(9, m, t));
            }
        }
        CHECK(seen.size() == 200);
        CHECK(trial_seed(9, 1, 2) == trial_seed(9, 1, 2));
        CHECK(trial_seed(9, 1, 2) != trial_seed(10, 1, 2));
    }

    TEST_CASE("runs are deterministic and independent of threads") {
        auto plan = ExperimentPlan::from_json(small_plan());
        const auto a = run_experiment(plan);
        const auto b = run_experiment(plan);
        plan.threads = 3;
        const auto c = run_experiment(plan);
        CHECK(csv(a) == csv(b));
        CHECK(csv(a) == csv(c));
        CHECK(a.rows.size() == 6);
        CHECK(a.trials.size() == 24);
        CHECK(csv(a).rfind("grid,variant,m,tau,trials,mean_error,std_error,seconds,failed\n", 0) == 0);
    }

    TEST_CASE("analytic rows are exact and seconds stay empty without timing") {
        auto j = small_plan();
        j["taus"] = {1e-6, 1e-9};
        j["samples"] = {"inf"};
        const auto r = run_experiment(ExperimentPlan::from_json(j));
        for (const ExperimentRow& row : r.rows) {
            CHECK(row.mean_error == 0.0);
            CHECK(row.failed == 0);
        }
        CHECK(csv(r) == "grid,variant,m,tau,trials,mean_error,std_error,seconds,failed\n"
                        "tiny,lc,inf,1e-06,4,0,0,,0\n"
                        "tiny,lc,inf,1e-09,4,0,0,,0\n");
    }

    TEST_CASE("failed trials are recorded and the run continues") {
        auto j = small_plan();
        j["engine"] = "distflow";
        j["model"] = {{"mu_p", -20.0}};
        j["samples"] = {50, "inf"};
        const auto r = run_experiment(ExperimentPlan::from_json(j));
        CHECK(r.failed_trials == 8);
        CHECK(r.rows.front().failed == 4);
        CHECK(r.rows.back().failed == 0);
        for (const TrialRow& t : r.trials) {
            if (t.m != analytic_samples) {
                CHECK_FALSE(t.failure.empty());
            }
        }
        std::ostringstream out;
        write_trials_csv(out, r);
        CHECK(out.str().rfind("m,tau,trial,seed,error,failure\n", 0) == 0);
    }

    TEST_CASE("gnuplot script names every tau") {
        const auto r = run_experiment(ExperimentPlan::from_json(small_plan()));
        std::ostringstream out;
        write_gnuplot_script(out, r, "out.csv");
        CHECK(out.str().find("tau=0.2") != std::string::npos);
        CHECK(out.str().find("tau=0.05") != std::string::npos);
    }
}
