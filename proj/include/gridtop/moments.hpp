#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gridtop/grid_model.hpp"
#include "gridtop/powerflow.hpp"

namespace gridtop {

/// Statistics of nodal injections in load-position order.
///
/// All Sigma matrices are non-central second moments E[y z^T]; covariances are
/// derived from them.
class InjectionModel {
  public:
    InjectionModel(Eigen::VectorXd mu_p, Eigen::VectorXd mu_q, Eigen::MatrixXd sigma_p, Eigen::MatrixXd sigma_q,
                   Eigen::MatrixXd sigma_pq);

    /// Builds the model from means and covariances (Omega), Sigma = Omega + mu mu^T.
    static InjectionModel from_covariances(Eigen::VectorXd mu_p, Eigen::VectorXd mu_q, const Eigen::MatrixXd& cov_p,
                                           const Eigen::MatrixXd& cov_q, const Eigen::MatrixXd& cov_pq);

    static InjectionModel zero(std::size_t n);

    std::size_t size() const noexcept { return static_cast<std::size_t>(mu_p_.size()); }
    const Eigen::VectorXd& mu_p() const noexcept { return mu_p_; }
    const Eigen::VectorXd& mu_q() const noexcept { return mu_q_; }
    const Eigen::MatrixXd& sigma_p() const noexcept { return sigma_p_; }
    const Eigen::MatrixXd& sigma_q() const noexcept { return sigma_q_; }
    const Eigen::MatrixXd& sigma_pq() const noexcept { return sigma_pq_; }
    Eigen::MatrixXd sigma_qp() const { return sigma_pq_.transpose(); }

    Eigen::MatrixXd cov_p() const { return sigma_p_ - mu_p_ * mu_p_.transpose(); }
    Eigen::MatrixXd cov_q() const { return sigma_q_ - mu_q_ * mu_q_.transpose(); }
    Eigen::MatrixXd cov_pq() const { return sigma_pq_ - mu_p_ * mu_q_.transpose(); }
    /// Covariance of the stacked vector (p, q), 2N x 2N.
    Eigen::MatrixXd joint_covariance() const;

  private:
    Eigen::VectorXd mu_p_;
    Eigen::VectorXd mu_q_;
    Eigen::MatrixXd sigma_p_;
    Eigen::MatrixXd sigma_q_;
    Eigen::MatrixXd sigma_pq_;
};

/// Parameters of the equicorrelated Gaussian load model used by the harness.
///
/// p ~ N(mu_p 1, sd^2 (I + rho 11^T)) with sd = sigma_ratio |mu_p|, and
/// q = q_ratio p + eta with independent eta ~ N(0, (q_noise_ratio |q_ratio mu_p|)^2 I).
struct GaussianLoadParams {
    double mu_p = -0.005;
    double sigma_ratio = 0.2;
    double rho = 0.1;
    double q_ratio = 0.3;
    double q_noise_ratio = 0.2;
};

InjectionModel make_gaussian_load_model(std::size_t n, const GaussianLoadParams& params = {});

/// A same-tree pair that violates positivity of some second moment.
struct PositivityViolation {
    NodeId a = 0;
    NodeId b = 0;
    const char* moment = "";  ///< "p", "q" or "pq"
    double value = 0.0;
};

/// Pairs (a, b) on the same tree with Sigma_p, Sigma_q or Sigma_pq not strictly positive.
std::vector<PositivityViolation> check_positive_moments(const ForestConfig& forest, const InjectionModel& model);

/// Draws jointly Gaussian (p, q) vectors. The covariance is factored once.
class InjectionSampler {
  public:
    /// Throws model_error when the joint covariance is not positive semi-definite.
    explicit InjectionSampler(const InjectionModel& model);

    /// Stream for (seed, stream) pairs; distinct streams are independent.
    static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0);

    InjectionVector draw(std::mt19937_64& engine) const;

  private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd factor_;
};

/// `m` independent draws, deterministic in `seed`.
std::vector<InjectionVector> sample_injections(const InjectionModel& model, std::size_t m, std::uint64_t seed);

enum class MomentKind { analytic, empirical };

struct MomentSet {
    Eigen::MatrixXd sigma_eps;
    Eigen::MatrixXd sigma_theta;
    Eigen::MatrixXd sigma_theta_eps;
    MomentKind kind = MomentKind::analytic;
    std::size_t samples = 0;
};

/// Streaming accumulator of non-central second moments; memory O(N^2).
class MomentAccumulator {
  public:
    explicit MomentAccumulator(std::size_t n);

    void add(const VoltageState& s);
    std::size_t count() const noexcept { return count_; }
    /// Throws domain_error when nothing was added.
    MomentSet result() const;

  private:
    Eigen::MatrixXd eps_eps_;
    Eigen::MatrixXd theta_theta_;
    Eigen::MatrixXd theta_eps_;
    std::size_t count_ = 0;
};

MomentSet empirical_moments(std::span<const VoltageState> samples);

/// Sigma_eps of the LC model from the path-sum structure of H_{1/r}^{-1}, H_{1/x}^{-1}.
Eigen::MatrixXd analytic_sigma_eps(const ForestConfig& forest, const InjectionModel& model);
Eigen::MatrixXd analytic_sigma_theta(const ForestConfig& forest, const InjectionModel& model);
Eigen::MatrixXd analytic_sigma_theta_eps(const ForestConfig& forest, const InjectionModel& model);
MomentSet analytic_moments(const ForestConfig& forest, const InjectionModel& model);

/// Sigma_eps = H_g^{-1} Sigma_p H_g^{-1} of the DC-resistive model.
Eigen::MatrixXd analytic_sigma_eps_dc(const ForestConfig& forest, const InjectionModel& model);

/// Sum of M(c, d) over c, d in a node set given by load positions.
double block_sum(const Eigen::MatrixXd& m, std::span<const std::size_t> positions);

/// E[(eps_a - eps_b)^2] of the LC model for child `a` and parent `b`, by a
/// double sum over the descendants of `a`.
double expected_sq_diff_lc(const ForestConfig& forest, const InjectionModel& model, NodeId a, NodeId b);

/// DC-resistive counterpart: sum over descendants of Sigma_p / g_ab^2.
double expected_sq_diff_dc(const ForestConfig& forest, const InjectionModel& model, NodeId a, NodeId b);

enum class FlowModel { lc, dc_resistive };

struct OrderingReport {
    /// False when the model does not have strictly positive same-tree moments;
    /// `violations` is then left empty because the ordering is not guaranteed.
    bool precondition_holds = true;
    std::vector<PositivityViolation> precondition_failures;
    /// (descendant, ancestor) pairs where Sigma_eps(desc, desc) <= Sigma_eps(anc, anc).
    std::vector<std::pair<NodeId, NodeId>> violations;
};

/// Checks that every strict descendant has a strictly larger diagonal entry of
/// the analytic Sigma_eps than each of its load-node ancestors.
OrderingReport verify_moment_ordering(const ForestConfig& forest, const InjectionModel& model,
                                      FlowModel flow = FlowModel::lc);

}  // namespace gridtop
