#include "gridtop/moments.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridtop/errors.hpp"

namespace gridtop {

namespace {

void check_square(const Eigen::MatrixXd& m, Eigen::Index n, const char* name) {
    if (m.rows() != n || m.cols() != n) {
        throw model_error(std::string(name) + " must be " + std::to_string(n) + "x" + std::to_string(n));
    }
    if (!m.allFinite()) {
        throw model_error(std::string(name) + " has non-finite entries");
    }
}

void check_model_size(const ForestConfig& forest, const InjectionModel& model) {
    if (model.size() != forest.grid().load_count()) {
        throw domain_error("injection model covers " + std::to_string(model.size()) + " nodes, grid has " +
                           std::to_string(forest.grid().load_count()) + " load nodes");
    }
}

/// H_left^{-1} S H_right^{-1} using two rounds of O(N) column sweeps.
Eigen::MatrixXd sandwich(const ForestConfig& forest, std::span<const double> left, const Eigen::MatrixXd& s,
                         std::span<const double> right) {
    const Eigen::MatrixXd ls = apply_laplacian_inverse_columns(forest, left, s);
    // (L S) R = (R (L S)^T)^T since R is symmetric.
    const Eigen::MatrixXd lst = ls.transpose();
    return apply_laplacian_inverse_columns(forest, right, lst).transpose();
}

struct PathWeights {
    std::vector<double> inv_r;
    std::vector<double> inv_x;
};

PathWeights path_weights(const ForestConfig& forest) {
    return {line_weights(forest.grid(), WeightKind::inverse_resistance),
            line_weights(forest.grid(), WeightKind::inverse_reactance)};
}

std::vector<std::size_t> descendant_positions(const ForestConfig& forest, NodeIndex a) {
    std::vector<std::size_t> out;
    for (const NodeIndex u : forest.descendants(a)) {
        if (const auto pos = forest.grid().load_position(u)) {
            out.push_back(*pos);
        }
    }
    return out;
}

/// Resolves (child, parent) ids to a child index and the line joining them.
std::pair<NodeIndex, LineIndex> child_parent_line(const ForestConfig& forest, NodeId a, NodeId b) {
    const GridGraph& g = forest.grid();
    const NodeIndex ua = g.index_of(a);
    const NodeIndex ub = g.index_of(b);
    if (g.is_substation(ua) || forest.parent(ua) != ub) {
        throw domain_error("node " + std::to_string(b) + " is not the parent of node " + std::to_string(a));
    }
    return {ua, *forest.parent_line(ua)};
}

}  // namespace

// ---------------------------------------------------------------------------
// InjectionModel

InjectionModel::InjectionModel(Eigen::VectorXd mu_p, Eigen::VectorXd mu_q, Eigen::MatrixXd sigma_p,
                               Eigen::MatrixXd sigma_q, Eigen::MatrixXd sigma_pq)
    : mu_p_(std::move(mu_p)),
      mu_q_(std::move(mu_q)),
      sigma_p_(std::move(sigma_p)),
      sigma_q_(std::move(sigma_q)),
      sigma_pq_(std::move(sigma_pq)) {
    const Eigen::Index n = mu_p_.size();
    if (mu_q_.size() != n) {
        throw model_error("mu_p and mu_q differ in length");
    }
    if (!mu_p_.allFinite() || !mu_q_.allFinite()) {
        throw model_error("means must be finite");
    }
    check_square(sigma_p_, n, "Sigma_p");
    check_square(sigma_q_, n, "Sigma_q");
    check_square(sigma_pq_, n, "Sigma_pq");
    const double scale = std::max({1.0, sigma_p_.cwiseAbs().maxCoeff(), sigma_q_.cwiseAbs().maxCoeff()});
    if ((sigma_p_ - sigma_p_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale ||
        (sigma_q_ - sigma_q_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw model_error("Sigma_p and Sigma_q must be symmetric");
    }
}

InjectionModel InjectionModel::from_covariances(Eigen::VectorXd mu_p, Eigen::VectorXd mu_q,
                                                const Eigen::MatrixXd& cov_p, const Eigen::MatrixXd& cov_q,
                                                const Eigen::MatrixXd& cov_pq) {
    const Eigen::Index n = mu_p.size();
    check_square(cov_p, n, "cov_p");
    check_square(cov_q, n, "cov_q");
    check_square(cov_pq, n, "cov_pq");
    Eigen::MatrixXd sp = cov_p + mu_p * mu_p.transpose();
    Eigen::MatrixXd sq = cov_q + mu_q * mu_q.transpose();
    Eigen::MatrixXd spq = cov_pq + mu_p * mu_q.transpose();
    return {std::move(mu_p), std::move(mu_q), std::move(sp), std::move(sq), std::move(spq)};
}

InjectionModel InjectionModel::zero(std::size_t n) {
    const auto sz = static_cast<Eigen::Index>(n);
    return {Eigen::VectorXd::Zero(sz), Eigen::VectorXd::Zero(sz), Eigen::MatrixXd::Zero(sz, sz),
            Eigen::MatrixXd::Zero(sz, sz), Eigen::MatrixXd::Zero(sz, sz)};
}

Eigen::MatrixXd InjectionModel::joint_covariance() const {
    const Eigen::Index n = mu_p_.size();
    Eigen::MatrixXd c(2 * n, 2 * n);
    c.topLeftCorner(n, n) = cov_p();
    c.topRightCorner(n, n) = cov_pq();
    c.bottomLeftCorner(n, n) = cov_pq().transpose();
    c.bottomRightCorner(n, n) = cov_q();
    return c;
}

InjectionModel make_gaussian_load_model(std::size_t n, const GaussianLoadParams& params) {
    if (n == 0) {
        throw model_error("load model needs at least one node");
    }
    if (!(params.rho > -1.0 / static_cast<double>(n)) || params.sigma_ratio < 0.0 || params.q_noise_ratio < 0.0) {
        throw model_error("load model parameters give a non-PSD covariance");
    }
    const auto sz = static_cast<Eigen::Index>(n);
    const double sd = params.sigma_ratio * std::abs(params.mu_p);
    const double mu_q = params.q_ratio * params.mu_p;
    const double noise_sd = params.q_noise_ratio * std::abs(mu_q);

    Eigen::MatrixXd cov_p = Eigen::MatrixXd::Identity(sz, sz) + params.rho * Eigen::MatrixXd::Ones(sz, sz);
    cov_p *= sd * sd;
    const Eigen::MatrixXd cov_q =
        params.q_ratio * params.q_ratio * cov_p + noise_sd * noise_sd * Eigen::MatrixXd::Identity(sz, sz);
    const Eigen::MatrixXd cov_pq = params.q_ratio * cov_p;
    return InjectionModel::from_covariances(Eigen::VectorXd::Constant(sz, params.mu_p),
                                            Eigen::VectorXd::Constant(sz, mu_q), cov_p, cov_q, cov_pq);
}

std::vector<PositivityViolation> check_positive_moments(const ForestConfig& forest, const InjectionModel& model) {
    check_model_size(forest, model);
    const GridGraph& g = forest.grid();
    std::vector<PositivityViolation> out;
    const auto loads = g.loads();
    for (std::size_t i = 0; i < loads.size(); ++i) {
        for (std::size_t j = i; j < loads.size(); ++j) {
            if (forest.tree_of(loads[i]) != forest.tree_of(loads[j])) {
                continue;
            }
            const auto ei = static_cast<Eigen::Index>(i);
            const auto ej = static_cast<Eigen::Index>(j);
            const NodeId a = g.node(loads[i]).id;
            const NodeId b = g.node(loads[j]).id;
            if (!(model.sigma_p()(ei, ej) > 0.0)) {
                out.push_back({a, b, "p", model.sigma_p()(ei, ej)});
            }
            if (!(model.sigma_q()(ei, ej) > 0.0)) {
                out.push_back({a, b, "q", model.sigma_q()(ei, ej)});
            }
            if (!(model.sigma_pq()(ei, ej) > 0.0)) {
                out.push_back({a, b, "pq", model.sigma_pq()(ei, ej)});
            }
            if (i != j && !(model.sigma_pq()(ej, ei) > 0.0)) {
                out.push_back({b, a, "pq", model.sigma_pq()(ej, ei)});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

InjectionSampler::InjectionSampler(const InjectionModel& model) {
    const Eigen::Index n = static_cast<Eigen::Index>(model.size());
    mean_.resize(2 * n);
    mean_ << model.mu_p(), model.mu_q();
    Eigen::MatrixXd cov = model.joint_covariance();
    cov = 0.5 * (cov + cov.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw model_error("eigendecomposition of the injection covariance failed");
    }
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double scale = std::max(lambda.cwiseAbs().maxCoeff(), 1e-300);
    if (lambda.minCoeff() < -1e-10 * scale) {
        throw model_error("joint covariance of (p, q) is not positive semi-definite (eigenvalue " +
                          std::to_string(lambda.minCoeff()) + ")");
    }
    factor_ = eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

std::mt19937_64 InjectionSampler::make_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32U),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32U)};
    return std::mt19937_64(seq);
}

InjectionVector InjectionSampler::draw(std::mt19937_64& engine) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(factor_.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z(i) = normal(engine);
    }
    const Eigen::VectorXd y = mean_ + factor_ * z;
    const Eigen::Index n = y.size() / 2;
    return {y.head(n), y.tail(n)};
}

std::vector<InjectionVector> sample_injections(const InjectionModel& model, std::size_t m, std::uint64_t seed) {
    if (m == 0) {
        throw domain_error("sample count must be at least 1");
    }
    const InjectionSampler sampler(model);
    auto engine = InjectionSampler::make_engine(seed);
    std::vector<InjectionVector> out;
    out.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        out.push_back(sampler.draw(engine));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Empirical moments

MomentAccumulator::MomentAccumulator(std::size_t n) {
    const auto sz = static_cast<Eigen::Index>(n);
    eps_eps_ = Eigen::MatrixXd::Zero(sz, sz);
    theta_theta_ = Eigen::MatrixXd::Zero(sz, sz);
    theta_eps_ = Eigen::MatrixXd::Zero(sz, sz);
}

void MomentAccumulator::add(const VoltageState& s) {
    if (s.eps.size() != eps_eps_.rows() || s.theta.size() != eps_eps_.rows()) {
        throw domain_error("voltage sample has the wrong dimension");
    }
    eps_eps_.selfadjointView<Eigen::Lower>().rankUpdate(s.eps);
    theta_theta_.selfadjointView<Eigen::Lower>().rankUpdate(s.theta);
    theta_eps_.noalias() += s.theta * s.eps.transpose();
    ++count_;
}

MomentSet MomentAccumulator::result() const {
    if (count_ == 0) {
        throw domain_error("no voltage samples");
    }
    const double inv = 1.0 / static_cast<double>(count_);
    MomentSet out;
    out.sigma_eps = eps_eps_.selfadjointView<Eigen::Lower>();
    out.sigma_theta = theta_theta_.selfadjointView<Eigen::Lower>();
    out.sigma_eps *= inv;
    out.sigma_theta *= inv;
    out.sigma_theta_eps = theta_eps_ * inv;
    out.kind = MomentKind::empirical;
    out.samples = count_;
    return out;
}

MomentSet empirical_moments(std::span<const VoltageState> samples) {
    if (samples.empty()) {
        throw domain_error("no voltage samples");
    }
    MomentAccumulator acc(static_cast<std::size_t>(samples.front().eps.size()));
    for (const VoltageState& s : samples) {
        acc.add(s);
    }
    return acc.result();
}

// ---------------------------------------------------------------------------
// Analytic moments

Eigen::MatrixXd analytic_sigma_eps(const ForestConfig& forest, const InjectionModel& model) {
    check_model_size(forest, model);
    const PathWeights w = path_weights(forest);
    const Eigen::MatrixXd cross = sandwich(forest, w.inv_r, model.sigma_pq(), w.inv_x);
    Eigen::MatrixXd out = sandwich(forest, w.inv_r, model.sigma_p(), w.inv_r) +
                          sandwich(forest, w.inv_x, model.sigma_q(), w.inv_x) + cross + cross.transpose();
    return out;
}

Eigen::MatrixXd analytic_sigma_theta(const ForestConfig& forest, const InjectionModel& model) {
    check_model_size(forest, model);
    const PathWeights w = path_weights(forest);
    const Eigen::MatrixXd cross = sandwich(forest, w.inv_x, model.sigma_pq(), w.inv_r);
    Eigen::MatrixXd out = sandwich(forest, w.inv_x, model.sigma_p(), w.inv_x) +
                          sandwich(forest, w.inv_r, model.sigma_q(), w.inv_r) - cross - cross.transpose();
    return out;
}

Eigen::MatrixXd analytic_sigma_theta_eps(const ForestConfig& forest, const InjectionModel& model) {
    check_model_size(forest, model);
    const PathWeights w = path_weights(forest);
    return sandwich(forest, w.inv_x, model.sigma_p(), w.inv_r) - sandwich(forest, w.inv_r, model.sigma_q(), w.inv_x) +
           sandwich(forest, w.inv_x, model.sigma_pq(), w.inv_x) - sandwich(forest, w.inv_r, model.sigma_qp(), w.inv_r);
}

MomentSet analytic_moments(const ForestConfig& forest, const InjectionModel& model) {
    MomentSet out;
    out.sigma_eps = analytic_sigma_eps(forest, model);
    out.sigma_theta = analytic_sigma_theta(forest, model);
    out.sigma_theta_eps = analytic_sigma_theta_eps(forest, model);
    out.kind = MomentKind::analytic;
    return out;
}

Eigen::MatrixXd analytic_sigma_eps_dc(const ForestConfig& forest, const InjectionModel& model) {
    check_model_size(forest, model);
    const std::vector<double> g = line_weights(forest.grid(), WeightKind::conductance);
    return sandwich(forest, g, model.sigma_p(), g);
}

double block_sum(const Eigen::MatrixXd& m, std::span<const std::size_t> positions) {
    double sum = 0.0;
    for (const std::size_t c : positions) {
        for (const std::size_t d : positions) {
            sum += m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d));
        }
    }
    return sum;
}

double expected_sq_diff_lc(const ForestConfig& forest, const InjectionModel& model, NodeId a, NodeId b) {
    check_model_size(forest, model);
    const auto [ua, line] = child_parent_line(forest, a, b);
    const Line& l = forest.grid().line(line);
    const auto pos = descendant_positions(forest, ua);
    return l.r * l.r * block_sum(model.sigma_p(), pos) + l.x * l.x * block_sum(model.sigma_q(), pos) +
           2.0 * l.r * l.x * block_sum(model.sigma_pq(), pos);
}

double expected_sq_diff_dc(const ForestConfig& forest, const InjectionModel& model, NodeId a, NodeId b) {
    check_model_size(forest, model);
    const auto [ua, line] = child_parent_line(forest, a, b);
    const double g = forest.grid().conductance(line);
    const auto pos = descendant_positions(forest, ua);
    return block_sum(model.sigma_p(), pos) / (g * g);
}

OrderingReport verify_moment_ordering(const ForestConfig& forest, const InjectionModel& model, FlowModel flow) {
    OrderingReport report;
    report.precondition_failures = check_positive_moments(forest, model);
    if (!report.precondition_failures.empty()) {
        report.precondition_holds = false;
        return report;
    }
    const Eigen::MatrixXd sigma =
        flow == FlowModel::lc ? analytic_sigma_eps(forest, model) : analytic_sigma_eps_dc(forest, model);
    const GridGraph& g = forest.grid();
    auto diag = [&](NodeIndex u) {
        const auto pos = g.load_position(u);
        return pos ? sigma(static_cast<Eigen::Index>(*pos), static_cast<Eigen::Index>(*pos)) : 0.0;
    };
    for (const NodeIndex u : g.loads()) {
        const double own = diag(u);
        for (auto anc = forest.parent(u); anc; anc = forest.parent(*anc)) {
            if (!(own > diag(*anc))) {
                report.violations.emplace_back(g.node(u).id, g.node(*anc).id);
            }
        }
    }
    return report;
}

}  // namespace gridtop
