#include "gridtop/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <utility>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "gridtop/errors.hpp"

namespace gridtop {

void LearnerConfig::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) {
        throw domain_error("tau must lie in (0, 1), got " + std::to_string(tau));
    }
}

namespace {

std::vector<std::ptrdiff_t> load_columns(const GridGraph& grid) {
    std::vector<std::ptrdiff_t> col(grid.node_count(), -1);
    for (NodeIndex u = 0; u < grid.node_count(); ++u) {
        if (const auto pos = grid.load_position(u)) {
            col[u] = static_cast<std::ptrdiff_t>(*pos);
        }
    }
    return col;
}

Eigen::MatrixXd stack_samples(const GridGraph& grid, std::span<const VoltageState> samples) {
    if (samples.empty()) {
        throw domain_error("no voltage samples");
    }
    const auto n = static_cast<Eigen::Index>(grid.load_count());
    Eigen::MatrixXd eps(static_cast<Eigen::Index>(samples.size()), n);
    for (std::size_t j = 0; j < samples.size(); ++j) {
        if (samples[j].eps.size() != n) {
            throw domain_error("voltage sample " + std::to_string(j) + " has the wrong dimension");
        }
        eps.row(static_cast<Eigen::Index>(j)) = samples[j].eps.transpose();
    }
    return eps;
}

/// Descendant set of a node during reconstruction, with cached block sums of
/// the injection moments over it.
struct Cluster {
    std::vector<std::size_t> positions;  // load positions only
    double sum_p = 0.0;
    double sum_q = 0.0;
    double sum_pq = 0.0;
};

/// Merges `from` into `into`, updating the block sums with the cross terms.
void merge(Cluster& into, Cluster& from, const InjectionModel& model) {
    const Eigen::MatrixXd& sp = model.sigma_p();
    const Eigen::MatrixXd& sq = model.sigma_q();
    const Eigen::MatrixXd& spq = model.sigma_pq();
    double cp = 0.0;
    double cq = 0.0;
    double cpq = 0.0;
    for (const std::size_t c : from.positions) {
        const auto ec = static_cast<Eigen::Index>(c);
        for (const std::size_t d : into.positions) {
            const auto ed = static_cast<Eigen::Index>(d);
            cp += sp(ec, ed);
            cq += sq(ec, ed);
            cpq += spq(ec, ed) + spq(ed, ec);
        }
    }
    into.sum_p += from.sum_p + 2.0 * cp;
    into.sum_q += from.sum_q + 2.0 * cq;
    into.sum_pq += from.sum_pq + cpq;
    into.positions.insert(into.positions.end(), from.positions.begin(), from.positions.end());
    from.positions.clear();
    from.positions.shrink_to_fit();
}

}  // namespace

// ---------------------------------------------------------------------------
// Moment sources

SampleMoments::SampleMoments(const GridGraph& grid, Eigen::MatrixXd eps)
    : column_(load_columns(grid)), eps_(std::move(eps)) {
    if (eps_.rows() < 1) {
        throw domain_error("no voltage samples");
    }
    if (eps_.cols() != static_cast<Eigen::Index>(grid.load_count())) {
        throw domain_error("sample matrix has " + std::to_string(eps_.cols()) + " columns, grid has " +
                           std::to_string(grid.load_count()) + " load nodes");
    }
    diag_ = eps_.colwise().squaredNorm().transpose() / static_cast<double>(eps_.rows());
}

SampleMoments::SampleMoments(const GridGraph& grid, std::span<const VoltageState> samples)
    : SampleMoments(grid, stack_samples(grid, samples)) {}

double SampleMoments::second_moment(NodeIndex a) const {
    const std::ptrdiff_t c = column_.at(a);
    return c < 0 ? 0.0 : diag_(c);
}

double SampleMoments::mean_sq_diff(NodeIndex a, NodeIndex b) const {
    const std::ptrdiff_t ca = column_.at(a);
    const std::ptrdiff_t cb = column_.at(b);
    if (ca < 0 && cb < 0) {
        return 0.0;
    }
    if (ca < 0) {
        return diag_(cb);
    }
    if (cb < 0) {
        return diag_(ca);
    }
    return (eps_.col(ca) - eps_.col(cb)).squaredNorm() / static_cast<double>(eps_.rows());
}

ExactMoments::ExactMoments(const GridGraph& grid, Eigen::MatrixXd sigma_eps)
    : column_(load_columns(grid)), sigma_(std::move(sigma_eps)) {
    const auto n = static_cast<Eigen::Index>(grid.load_count());
    if (sigma_.rows() != n || sigma_.cols() != n) {
        throw domain_error("Sigma_eps must be " + std::to_string(n) + "x" + std::to_string(n));
    }
}

double ExactMoments::second_moment(NodeIndex a) const {
    const std::ptrdiff_t c = column_.at(a);
    return c < 0 ? 0.0 : sigma_(c, c);
}

double ExactMoments::mean_sq_diff(NodeIndex a, NodeIndex b) const {
    const std::ptrdiff_t ca = column_.at(a);
    const std::ptrdiff_t cb = column_.at(b);
    const double aa = ca < 0 ? 0.0 : sigma_(ca, ca);
    const double bb = cb < 0 ? 0.0 : sigma_(cb, cb);
    const double ab = (ca < 0 || cb < 0) ? 0.0 : sigma_(ca, cb);
    return aa - 2.0 * ab + bb;
}

// ---------------------------------------------------------------------------
// Reconstruction

std::optional<NodeId> ReconstructionResult::parent_of(NodeId child) const {
    for (const LearnedEdge& e : edges) {
        if (e.child == child) {
            return e.parent;
        }
    }
    return std::nullopt;
}

ReconstructionResult reconstruct(const VoltageMomentSource& moments, const InjectionModel& model,
                                 const GridGraph& grid, const LearnerConfig& config) {
    config.validate();
    if (model.size() != grid.load_count()) {
        throw domain_error("injection model covers " + std::to_string(model.size()) + " nodes, grid has " +
                           std::to_string(grid.load_count()) + " load nodes");
    }
    const std::size_t n = grid.node_count();
    ReconstructionResult result;

    // Popping the undiscovered node with the largest second moment each round is
    // a single sort; ties go to the smaller id (node index order is id order).
    std::vector<double> diag(n);
    for (NodeIndex u = 0; u < n; ++u) {
        diag[u] = moments.second_moment(u);
    }
    std::vector<NodeIndex> order(n);
    std::iota(order.begin(), order.end(), NodeIndex{0});
    std::stable_sort(order.begin(), order.end(), [&](NodeIndex a, NodeIndex b) { return diag[a] > diag[b]; });

    std::vector<Cluster> clusters(n);
    for (NodeIndex u = 0; u < n; ++u) {
        if (const auto pos = grid.load_position(u)) {
            const auto e = static_cast<Eigen::Index>(*pos);
            clusters[u].positions.push_back(*pos);
            clusters[u].sum_p = model.sigma_p()(e, e);
            clusters[u].sum_q = model.sigma_q()(e, e);
            clusters[u].sum_pq = model.sigma_pq()(e, e);
        }
    }

    std::vector<NodeIndex> leaves;
    std::vector<NodeIndex> attached;
    for (const NodeIndex b : order) {
        result.pop_order.push_back(grid.node(b).id);
        attached.clear();
        std::size_t keep = 0;
        for (const NodeIndex a : leaves) {
            ++result.tests;
            DecisionRecord rec{grid.node(a).id, grid.node(b).id, 0.0, 0.0, std::numeric_limits<double>::quiet_NaN(),
                               Decision::no_line};
            const auto line = grid.find_line(a, b);
            bool accept = false;
            if (line) {
                const Line& l = grid.line(*line);
                const Cluster& d = clusters[a];
                if (config.variant == LearnerVariant::lc) {
                    rec.rhs = l.r * l.r * d.sum_p + l.x * l.x * d.sum_q + 2.0 * l.r * l.x * d.sum_pq;
                } else {
                    const double g = grid.conductance(*line);
                    rec.rhs = d.sum_p / (g * g);
                }
                rec.lhs = moments.mean_sq_diff(a, b);
                rec.decision = Decision::rejected;
                if (rec.rhs > 0.0) {
                    const double ratio = rec.lhs / rec.rhs;
                    rec.deviation = config.rule == ToleranceRule::relative ? std::abs(1.0 - ratio)
                                                                           : 1.0 - std::abs(ratio);
                    accept = rec.deviation < config.tau;
                }
                if (accept) {
                    rec.decision = Decision::accepted;
                    result.edges.push_back({grid.node(a).id, grid.node(b).id, line});
                    attached.push_back(a);
                }
            } else if (config.candidates == CandidateEdges::all_pairs) {
                rec.decision = Decision::rejected;
                rec.lhs = moments.mean_sq_diff(a, b);
            }
            if (config.record_trace) {
                result.trace.push_back(rec);
            }
            if (!accept) {
                leaves[keep++] = a;
            }
        }
        leaves.resize(keep);
        for (const NodeIndex a : attached) {
            merge(clusters[b], clusters[a], model);
        }
        // Substations are roots by definition and never wait for a parent.
        if (!grid.is_substation(b)) {
            leaves.push_back(b);
        }
    }
    for (const NodeIndex a : leaves) {
        result.orphans.push_back(grid.node(a).id);
    }
    return result;
}

ReconstructionResult reconstruct(std::span<const VoltageState> samples, const InjectionModel& model,
                                 const GridGraph& grid, const LearnerConfig& config) {
    const SampleMoments source(grid, samples);
    return reconstruct(source, model, grid, config);
}

double relative_error(const ReconstructionResult& result, const ForestConfig& truth) {
    const GridGraph& g = truth.grid();
    auto key = [](NodeId a, NodeId b) { return a < b ? std::pair{a, b} : std::pair{b, a}; };
    std::set<std::pair<NodeId, NodeId>> real;
    for (const LineIndex e : truth.closed_lines()) {
        const auto [u, v] = g.ends(e);
        real.insert(key(g.node(u).id, g.node(v).id));
    }
    std::set<std::pair<NodeId, NodeId>> learned;
    for (const LearnedEdge& e : result.edges) {
        learned.insert(key(e.child, e.parent));
    }
    std::size_t mislabeled = 0;
    for (const auto& e : learned) {
        mislabeled += real.contains(e) ? 0 : 1;
    }
    for (const auto& e : real) {
        mislabeled += learned.contains(e) ? 0 : 1;
    }
    return static_cast<double>(mislabeled) / static_cast<double>(real.size());
}

void write_trace_csv(std::ostream& out, const ReconstructionResult& result) {
    out << "leaf,candidate,lhs,rhs,deviation,accepted\n";
    for (const DecisionRecord& r : result.trace) {
        const char* verdict = r.decision == Decision::accepted ? "1" : (r.decision == Decision::no_line ? "no_line" : "0");
        fmt::print(out, "{},{},{},{},{},{}\n", r.leaf, r.candidate, r.lhs, r.rhs, r.deviation, verdict);
    }
}

}  // namespace gridtop
