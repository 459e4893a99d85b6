#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gridtop/grid_model.hpp"
#include "gridtop/moments.hpp"
#include "gridtop/powerflow.hpp"

namespace gridtop {

enum class LearnerVariant { lc, dc_resistive };

enum class CandidateEdges {
    restrict_to_grid,  ///< only pairs joined by a line of the grid are tested
    all_pairs,         ///< every pair is tested; pairs without a line are rejected
};

enum class ToleranceRule {
    relative,  ///< |1 - LHS/RHS| < tau
    literal,   ///< 1 - |LHS/RHS| < tau, as printed; accepts any ratio above one
};

struct LearnerConfig {
    double tau = 0.05;
    LearnerVariant variant = LearnerVariant::lc;
    CandidateEdges candidates = CandidateEdges::restrict_to_grid;
    ToleranceRule rule = ToleranceRule::relative;
    bool record_trace = true;

    /// Throws domain_error unless tau lies in (0, 1).
    void validate() const;
};

/// Voltage-deviation statistics consumed by the learner. Indices are grid
/// node indices; substations always report zero.
class VoltageMomentSource {
  public:
    virtual ~VoltageMomentSource() = default;
    /// E[eps_a^2]
    virtual double second_moment(NodeIndex a) const = 0;
    /// E[(eps_a - eps_b)^2]
    virtual double mean_sq_diff(NodeIndex a, NodeIndex b) const = 0;
};

/// Raw sample averages over an (m x N) matrix of deviations.
class SampleMoments final : public VoltageMomentSource {
  public:
    /// `eps` has one row per sample and one column per load position.
    SampleMoments(const GridGraph& grid, Eigen::MatrixXd eps);
    SampleMoments(const GridGraph& grid, std::span<const VoltageState> samples);

    double second_moment(NodeIndex a) const override;
    double mean_sq_diff(NodeIndex a, NodeIndex b) const override;
    std::size_t sample_count() const noexcept { return static_cast<std::size_t>(eps_.rows()); }
    const Eigen::MatrixXd& samples() const noexcept { return eps_; }

  private:
    std::vector<std::ptrdiff_t> column_;
    Eigen::MatrixXd eps_;
    Eigen::VectorXd diag_;
};

/// The infinite-sample limit: statistics read off an exact Sigma_eps.
class ExactMoments final : public VoltageMomentSource {
  public:
    ExactMoments(const GridGraph& grid, Eigen::MatrixXd sigma_eps);

    double second_moment(NodeIndex a) const override;
    double mean_sq_diff(NodeIndex a, NodeIndex b) const override;

  private:
    std::vector<std::ptrdiff_t> column_;
    Eigen::MatrixXd sigma_;
};

enum class Decision { accepted, rejected, no_line };

struct DecisionRecord {
    NodeId leaf = 0;
    NodeId candidate = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    double deviation = 0.0;  ///< NaN when RHS is zero or no line exists
    Decision decision = Decision::rejected;
};

struct LearnedEdge {
    NodeId child = 0;
    NodeId parent = 0;
    std::optional<LineIndex> line;
};

struct ReconstructionResult {
    std::vector<LearnedEdge> edges;
    std::vector<DecisionRecord> trace;
    /// Order in which undiscovered nodes were popped.
    std::vector<NodeId> pop_order;
    /// Load nodes that never found a parent.
    std::vector<NodeId> orphans;
    /// Number of leaf/candidate tests performed.
    std::size_t tests = 0;
    std::optional<double> relative_error;

    std::optional<NodeId> parent_of(NodeId child) const;
};

/// Bottom-up reconstruction of the operational forest from voltage statistics,
/// known injection moments and the impedances of every grid line.
ReconstructionResult reconstruct(const VoltageMomentSource& moments, const InjectionModel& model,
                                 const GridGraph& grid, const LearnerConfig& config);

/// Convenience overload for raw samples.
ReconstructionResult reconstruct(std::span<const VoltageState> samples, const InjectionModel& model,
                                 const GridGraph& grid, const LearnerConfig& config);

/// Mislabeled lines (symmetric difference of undirected edge sets) divided by
/// the number of operational lines of `truth`.
double relative_error(const ReconstructionResult& result, const ForestConfig& truth);

/// CSV rows (leaf,candidate,lhs,rhs,deviation,accepted) with a header.
void write_trace_csv(std::ostream& out, const ReconstructionResult& result);

}  // namespace gridtop
