#include <doctest.h>

#include <cmath>

#include "gridtop/errors.hpp"
#include "gridtop/generators.hpp"
#include "gridtop/moments.hpp"
#include "oracles.hpp"

using namespace gridtop;
namespace gt = gridtop::testing;

TEST_SUITE("moments") {
    TEST_CASE("model construction validates shapes and symmetry") {
        const Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
        Eigen::MatrixXd asym(2, 2);
        asym << 1, 0.5, 0, 1;
        CHECK_THROWS_AS(InjectionModel(mu, mu, asym, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2)),
                        model_error);
        CHECK_THROWS_AS(InjectionModel(mu, Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(2, 2),
                                       Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2)),
                        model_error);
    }

    TEST_CASE("non-PSD covariance is rejected by the sampler") {
        Eigen::MatrixXd cov(2, 2);
        cov << 1, 2, 2, 1;
        const auto m = InjectionModel::from_covariances(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), cov,
                                                        Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2));
        CHECK_THROWS_AS(InjectionSampler{m}, model_error);
    }

    TEST_CASE("degenerate model draws its mean") {
        Eigen::VectorXd mu(3);
        mu << -0.1, 0.2, -0.3;
        const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 3);
        const auto m = InjectionModel::from_covariances(mu, 0.5 * mu, z, z, z);
        for (const auto& s : sample_injections(m, 10, 4)) {
            CHECK((s.p - mu).cwiseAbs().maxCoeff() < 1e-15);
            CHECK((s.q - 0.5 * mu).cwiseAbs().maxCoeff() < 1e-15);
        }
    }

    TEST_CASE("sampling is deterministic in the seed") {
        const auto m = make_gaussian_load_model(6);
        const auto a = sample_injections(m, 5, 11);
        const auto b = sample_injections(m, 5, 11);
        const auto c = sample_injections(m, 5, 12);
        bool differs = false;
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(a[i].p == b[i].p);
            CHECK(a[i].q == b[i].q);
            differs = differs || a[i].p != c[i].p;
        }
        CHECK(differs);
        auto e1 = InjectionSampler::make_engine(3, 0);
        auto e2 = InjectionSampler::make_engine(3, 1);
        CHECK(e1() != e2());
    }

    TEST_CASE("sample second moments converge to the model") {
        const std::size_t n = 4;
        const auto model = gt::random_positive_model(n, 9);
        const std::size_t m = 100000;
        const auto draws = sample_injections(model, m, 21);
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);
        Eigen::MatrixXd acc_sq = Eigen::MatrixXd::Zero(4, 4);
        for (const auto& d : draws) {
            const Eigen::MatrixXd outer = d.p * d.p.transpose();
            acc += outer;
            acc_sq += outer.cwiseProduct(outer);
        }
        const double md = static_cast<double>(m);
        const Eigen::MatrixXd mean = acc / md;
        const Eigen::MatrixXd var = acc_sq / md - mean.cwiseProduct(mean);
        for (Eigen::Index i = 0; i < 4; ++i) {
            for (Eigen::Index j = 0; j < 4; ++j) {
                const double se = std::sqrt(var(i, j) / md);
                CHECK(std::abs(mean(i, j) - model.sigma_p()(i, j)) < 5.0 * se);
            }
        }
    }

    TEST_CASE("empirical moments") {
        SUBCASE("single outer product") {
            VoltageState s{Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d::Zero()};
            const auto ms = empirical_moments(std::span<const VoltageState>(&s, 1));
            Eigen::Matrix2d expected;
            expected << 1, 2, 2, 4;
            CHECK(ms.sigma_eps == expected);
            CHECK(ms.samples == 1);
            CHECK(ms.kind == MomentKind::empirical);
        }
        SUBCASE("zero samples give zero") {
            std::vector<VoltageState> v(3, VoltageState{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)});
            CHECK(empirical_moments(v).sigma_eps.isZero());
        }
        SUBCASE("empty accumulator") { CHECK_THROWS_AS(MomentAccumulator(2).result(), domain_error); }
    }

    TEST_CASE("analytic moments match the dense oracle") {
        for (std::uint64_t seed = 1; seed <= 15; ++seed) {
            const std::size_t n = 4 + 2 * seed;
            const auto inst = gt::random_instance(n, 1 + seed % 3, 200 + seed, 3);
            const auto model = gt::random_positive_model(n, seed);
            CHECK(gt::max_rel_diff(analytic_sigma_eps(inst.forest, model), gt::dense_sigma_eps(inst.forest, model)) <
                  1e-10);
            CHECK(gt::max_rel_diff(analytic_sigma_theta(inst.forest, model),
                                   gt::dense_sigma_theta(inst.forest, model)) < 1e-10);
            CHECK(gt::max_rel_diff(analytic_sigma_theta_eps(inst.forest, model),
                                   gt::dense_sigma_theta_eps(inst.forest, model)) < 1e-10);
            const Eigen::MatrixXd hg = gt::dense_laplacian_inverse(inst.forest, gt::conductance(inst.forest));
            CHECK(gt::max_rel_diff(analytic_sigma_eps_dc(inst.forest, model), hg * model.sigma_p() * hg) < 1e-10);
            const auto all = analytic_moments(inst.forest, model);
            CHECK(all.kind == MomentKind::analytic);
            CHECK(all.sigma_eps == analytic_sigma_eps(inst.forest, model));
        }
    }

    TEST_CASE("theta moments are the eps moments under the (r,x),(p,q) swap") {
        // theta = B p - A q is eps with (A, B, p, q) -> (B, A, p, -q); swapping r and x
        // exchanges A and B, so Sigma_theta equals Sigma_eps of the swapped grid for (p, -q).
        const auto inst = gt::random_instance(11, 2, 31);
        const auto model = gt::random_positive_model(11, 8);
        std::vector<Node> nodes(inst.grid->nodes().begin(), inst.grid->nodes().end());
        std::vector<Line> lines(inst.grid->lines().begin(), inst.grid->lines().end());
        for (Line& l : lines) {
            std::swap(l.r, l.x);
        }
        auto swapped = std::make_shared<const GridGraph>(std::move(nodes), std::move(lines));
        const auto f2 = ForestConfig::from_closed_lines(
            swapped, {inst.forest.closed_lines().begin(), inst.forest.closed_lines().end()});
        const InjectionModel flipped(model.mu_p(), -model.mu_q(), model.sigma_p(), model.sigma_q(),
                                     -model.sigma_pq());
        CHECK(gt::max_rel_diff(analytic_sigma_theta(inst.forest, model), analytic_sigma_eps(f2, flipped)) < 1e-12);
    }

    TEST_CASE("empirical moments converge to analytic ones") {
        const auto inst = gt::random_instance(8, 2, 17);
        const auto model = make_gaussian_load_model(8);
        const Eigen::MatrixXd exact = analytic_sigma_eps(inst.forest, model);
        const Eigen::MatrixXd exact_theta = analytic_sigma_theta(inst.forest, model);
        double prev = 1e300;
        for (const std::size_t m : {1000U, 16000U, 256000U}) {
            MomentAccumulator acc(8);
            for (const auto& d : sample_injections(model, m, 5)) {
                acc.add(lcpf_solve(inst.forest, d));
            }
            const auto ms = acc.result();
            const double err = gt::max_rel_diff(ms.sigma_eps, exact);
            CHECK(err < prev);
            prev = err;
            if (m == 256000U) {
                CHECK(err < 0.01);
                CHECK(gt::max_rel_diff(ms.sigma_theta, exact_theta) < 0.02);
            }
        }
    }

    TEST_CASE("two-node path, unit resistances") {
        // a(1) - b(2) - root(0), r = 1 and x -> 0 so g = 1.
        std::vector<Node> nodes{{0, NodeKind::substation}, {1, NodeKind::load}, {2, NodeKind::load}};
        std::vector<Line> lines(2);
        lines[0] = {1, 2, 1.0, 1e-300, false, LineRole::feeder};
        lines[1] = {2, 0, 1.0, 1e-300, false, LineRole::feeder};
        auto g = std::make_shared<const GridGraph>(nodes, lines);
        const auto f = ForestConfig::from_closed_lines(g, {0, 1});
        const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 2);
        const InjectionModel model(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2),
                                   z, z);
        Eigen::Matrix2d expected;
        expected << 5, 3, 3, 2;
        CHECK((analytic_sigma_eps_dc(f, model) - expected).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((analytic_sigma_eps(f, model) - expected).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(verify_moment_ordering(f, model, FlowModel::dc_resistive).violations.empty());
        CHECK(analytic_sigma_eps(f, InjectionModel::zero(2)).isZero());
    }

    TEST_CASE("expected squared difference of adjacent nodes") {
        SUBCASE("leaf under the root") {
            const auto c = make_chain(1, 0.3, 0.7);
            const auto model = gt::random_positive_model(1, 3);
            const double expected = 0.09 * model.sigma_p()(0, 0) + 0.49 * model.sigma_q()(0, 0) +
                                    2 * 0.3 * 0.7 * model.sigma_pq()(0, 0);
            CHECK(expected_sq_diff_lc(c.forest, model, 1, 0) == doctest::Approx(expected).epsilon(1e-14));
        }
        SUBCASE("quadratic form identity on random trees") {
            for (std::uint64_t seed = 1; seed <= 10; ++seed) {
                const auto inst = gt::random_instance(15, 2, 300 + seed);
                const auto model = gt::random_positive_model(15, seed);
                const GridGraph& g = *inst.grid;
                const Eigen::MatrixXd s = analytic_sigma_eps(inst.forest, model);
                const Eigen::MatrixXd sdc = analytic_sigma_eps_dc(inst.forest, model);
                auto at = [&](const Eigen::MatrixXd& m, NodeIndex u, NodeIndex v) {
                    const auto pu = g.load_position(u);
                    const auto pv = g.load_position(v);
                    return pu && pv ? m(static_cast<Eigen::Index>(*pu), static_cast<Eigen::Index>(*pv)) : 0.0;
                };
                for (const NodeIndex u : g.loads()) {
                    const NodeIndex p = *inst.forest.parent(u);
                    const NodeId a = g.node(u).id;
                    const NodeId b = g.node(p).id;
                    const double lc = at(s, u, u) - 2 * at(s, u, p) + at(s, p, p);
                    CHECK(gt::rel_diff(expected_sq_diff_lc(inst.forest, model, a, b), lc) < 1e-10);
                    const double dc = at(sdc, u, u) - 2 * at(sdc, u, p) + at(sdc, p, p);
                    CHECK(gt::rel_diff(expected_sq_diff_dc(inst.forest, model, a, b), dc) < 1e-10);
                    // DC form: block sum of Sigma_p over descendants divided by g_ab^2.
                    std::vector<std::size_t> pos;
                    for (const NodeId d : descendants(inst.forest, a)) {
                        pos.push_back(*g.load_position(g.index_of(d)));
                    }
                    const double gab = g.conductance(*inst.forest.parent_line(u));
                    CHECK(gt::rel_diff(expected_sq_diff_dc(inst.forest, model, a, b),
                                       block_sum(model.sigma_p(), pos) / (gab * gab)) < 1e-12);
                }
            }
        }
        SUBCASE("non-adjacent pair is rejected") {
            const auto c = make_chain(3);
            CHECK_THROWS_AS(expected_sq_diff_lc(c.forest, make_gaussian_load_model(3), 3, 1), domain_error);
        }
    }

    TEST_CASE("moment ordering") {
        SUBCASE("chains never violate") {
            for (const std::size_t n : {2U, 5U, 12U}) {
                const auto c = make_chain(n);
                const auto model = make_gaussian_load_model(n);
                CHECK(check_positive_moments(c.forest, model).empty());
                CHECK(verify_moment_ordering(c.forest, model).violations.empty());
                CHECK(verify_moment_ordering(c.forest, model, FlowModel::dc_resistive).violations.empty());
            }
        }
        SUBCASE("negative cross moment fails the precondition") {
            const auto c = make_chain(3);
            Eigen::MatrixXd sp = make_gaussian_load_model(3).sigma_p();
            sp(0, 2) = sp(2, 0) = -1e-6;
            const auto base = make_gaussian_load_model(3);
            const InjectionModel model(base.mu_p(), base.mu_q(), sp, base.sigma_q(), base.sigma_pq());
            const auto rep = verify_moment_ordering(c.forest, model);
            CHECK_FALSE(rep.precondition_holds);
            REQUIRE_FALSE(rep.precondition_failures.empty());
            CHECK(std::string(rep.precondition_failures.front().moment) == "p");
        }
    }
}
