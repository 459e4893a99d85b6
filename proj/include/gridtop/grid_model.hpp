#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gridtop {

using NodeId = std::int64_t;
using NodeIndex = std::size_t;
using LineIndex = std::size_t;

enum class NodeKind { substation, load };

/// Why a line exists in the as-designed grid. Only used for bookkeeping of
/// fixtures; the algorithms never look at it.
enum class LineRole { feeder, tie, added };

struct Node {
    NodeId id = 0;
    NodeKind kind = NodeKind::load;
};

/// A line of the meshed grid. Impedances are per-unit.
struct Line {
    NodeId from = 0;
    NodeId to = 0;
    double r = 0.0;
    double x = 0.0;
    bool switchable = false;
    LineRole role = LineRole::feeder;
};

/// The as-designed meshed network with every switch closed.
///
/// Nodes are stored sorted by id; a `NodeIndex` is a position in that order.
/// Load nodes additionally get a dense "load position" 0..N-1 (ascending id)
/// which is the index used by every vector and matrix in the library.
class GridGraph {
  public:
    /// Validates all invariants; throws structural_error on violation.
    GridGraph(std::vector<Node> nodes, std::vector<Line> lines);

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t load_count() const noexcept { return loads_.size(); }
    std::size_t substation_count() const noexcept { return substations_.size(); }
    std::size_t line_count() const noexcept { return lines_.size(); }

    const Node& node(NodeIndex i) const { return nodes_.at(i); }
    std::span<const Node> nodes() const noexcept { return nodes_; }
    bool contains(NodeId id) const noexcept { return index_.contains(id); }
    /// Throws domain_error for unknown ids.
    NodeIndex index_of(NodeId id) const;
    bool is_substation(NodeIndex i) const { return nodes_.at(i).kind == NodeKind::substation; }

    const Line& line(LineIndex e) const { return lines_.at(e); }
    std::span<const Line> lines() const noexcept { return lines_; }
    /// Endpoints of a line as node indices, in the listed order.
    std::pair<NodeIndex, NodeIndex> ends(LineIndex e) const { return ends_.at(e); }
    std::optional<LineIndex> find_line(NodeIndex a, NodeIndex b) const;
    std::span<const LineIndex> incident_lines(NodeIndex i) const { return adjacency_.at(i); }

    /// Load nodes in ascending id order; position in this span is the load position.
    std::span<const NodeIndex> loads() const noexcept { return loads_; }
    std::span<const NodeIndex> substations() const noexcept { return substations_; }
    /// Load position of a node, or nullopt for substations.
    std::optional<std::size_t> load_position(NodeIndex i) const;

    double conductance(LineIndex e) const;
    double susceptance(LineIndex e) const;

  private:
    static std::uint64_t pair_key(NodeIndex a, NodeIndex b) noexcept;

    std::vector<Node> nodes_;
    std::vector<Line> lines_;
    std::vector<std::pair<NodeIndex, NodeIndex>> ends_;
    std::vector<std::vector<LineIndex>> adjacency_;
    std::unordered_map<NodeId, NodeIndex> index_;
    std::unordered_map<std::uint64_t, LineIndex> line_lookup_;
    std::vector<NodeIndex> loads_;
    std::vector<NodeIndex> substations_;
    std::vector<std::ptrdiff_t> load_pos_;
};

/// A base-constrained spanning forest of a GridGraph: the closed lines form
/// exactly K trees, each rooted at one substation.
///
/// Trees are numbered by ascending substation id. Every node carries its tree,
/// parent, depth, and a preorder interval so descendant queries are O(1).
class ForestConfig {
  public:
    /// Throws structural_error when the closed lines do not form a valid
    /// base-constrained spanning forest of `grid`.
    static ForestConfig from_closed_lines(std::shared_ptr<const GridGraph> grid,
                                          std::vector<LineIndex> closed);

    const GridGraph& grid() const noexcept { return *grid_; }
    const std::shared_ptr<const GridGraph>& grid_ptr() const noexcept { return grid_; }

    std::span<const LineIndex> closed_lines() const noexcept { return closed_; }
    bool is_closed(LineIndex e) const { return closed_mask_.at(e); }

    std::size_t tree_count() const noexcept { return roots_.size(); }
    std::size_t tree_of(NodeIndex i) const { return tree_.at(i); }
    NodeIndex root(std::size_t tree) const { return roots_.at(tree); }

    std::optional<NodeIndex> parent(NodeIndex i) const;
    /// The closed line joining a load node to its parent.
    std::optional<LineIndex> parent_line(NodeIndex i) const;
    std::size_t depth(NodeIndex i) const { return depth_.at(i); }
    std::span<const NodeIndex> children(NodeIndex i) const { return children_.at(i); }

    /// All nodes, tree by tree, each tree in depth-first preorder (children by
    /// ascending id). Parents always precede their children.
    std::span<const NodeIndex> preorder() const noexcept { return preorder_; }
    /// True when `ancestor` lies on the root path of `node` (or equals it).
    bool is_ancestor(NodeIndex ancestor, NodeIndex node) const;
    /// Descendant set of a node, itself included, in preorder.
    std::span<const NodeIndex> descendants(NodeIndex i) const;
    /// Lines on the path from a node to its substation, starting at the node.
    std::vector<LineIndex> root_path(NodeIndex i) const;
    /// Lowest common ancestor; nullopt when the nodes lie on different trees.
    std::optional<NodeIndex> common_ancestor(NodeIndex a, NodeIndex b) const;

  private:
    ForestConfig() = default;

    std::shared_ptr<const GridGraph> grid_;
    std::vector<LineIndex> closed_;
    std::vector<bool> closed_mask_;
    std::vector<NodeIndex> roots_;
    std::vector<std::size_t> tree_;
    std::vector<std::ptrdiff_t> parent_;
    std::vector<std::ptrdiff_t> parent_line_;
    std::vector<std::size_t> depth_;
    std::vector<std::vector<NodeIndex>> children_;
    std::vector<NodeIndex> preorder_;
    std::vector<std::size_t> enter_;
    std::vector<std::size_t> leave_;
};

/// How rows of the incidence matrix are signed.
enum class EdgeOrientation {
    child_to_parent,  ///< +1 on the child column, -1 on the parent column
    as_listed,        ///< +1 on Line::from, -1 on Line::to
};

/// Reduced (substation columns removed) directed incidence matrix of a forest.
///
/// Rows follow `edge_order` and columns follow `node_order`; both are sorted by
/// (tree, child node id) so the matrix is block diagonal with one square block
/// per tree. Row i is the line joining node_order[i] to its parent.
struct ReducedIncidence {
    struct Block {
        std::size_t tree = 0;
        std::size_t offset = 0;
        std::size_t size = 0;
    };

    Eigen::MatrixXd matrix;
    std::vector<LineIndex> edge_order;
    std::vector<NodeIndex> node_order;
    std::vector<Block> blocks;
    EdgeOrientation orientation = EdgeOrientation::child_to_parent;

    Eigen::MatrixXd block(std::size_t k) const;
    /// M^{-1} assembled from the path structure (entries in {-1, 0, +1}),
    /// not by numerical inversion.
    Eigen::MatrixXd inverse(const ForestConfig& forest) const;
};

ReducedIncidence build_reduced_incidence(const ForestConfig& forest,
                                         EdgeOrientation orientation = EdgeOrientation::child_to_parent);

/// Entry M^{-1}(a, r) for load node `a` and closed line `r`.
int inverse_incidence_entry(const ForestConfig& forest, NodeId a, LineIndex r,
                            EdgeOrientation orientation = EdgeOrientation::child_to_parent);

/// Which per-line quantity weights a reduced Laplacian.
enum class WeightKind { conductance, susceptance, inverse_resistance, inverse_reactance };

/// Per-line weight vector over all grid lines for the given kind.
std::vector<double> line_weights(const GridGraph& grid, WeightKind kind);

/// H_w^{-1}(a, b): sum of 1/w over lines shared by the root paths of a and b,
/// zero across trees and for substations (their deviation is pinned at zero).
/// O(depth) via the common ancestor.
double laplacian_inverse_entry(const ForestConfig& forest, std::span<const double> weights, NodeId a,
                               NodeId b);

/// H_w^{-1}(a, c) - H_w^{-1}(b, c) for a child `a` and its parent `b`:
/// 1/w_ab when c descends from a, zero otherwise.
double laplacian_row_difference(const ForestConfig& forest, std::span<const double> weights, NodeId a,
                                NodeId b, NodeId c);

/// Descendants of `a` (itself included), ascending id.
std::vector<NodeId> descendants(const ForestConfig& forest, NodeId a);

/// The four reduced weighted Laplacians of a forest, dense, in load-position order.
struct WeightedLaplacians {
    Eigen::MatrixXd conductance;         ///< H_g
    Eigen::MatrixXd susceptance;         ///< H_beta
    Eigen::MatrixXd inverse_resistance;  ///< H_{1/r}
    Eigen::MatrixXd inverse_reactance;   ///< H_{1/x}
};

/// Dense reduced Laplacian M^T diag(w) M in load-position order.
Eigen::MatrixXd reduced_laplacian(const ForestConfig& forest, std::span<const double> weights);

WeightedLaplacians build_weighted_laplacians(const ForestConfig& forest);

/// y = H_w^{-1} v in O(N) by subtree aggregation followed by root-to-leaf
/// accumulation. `v` and the result are in load-position order.
Eigen::VectorXd apply_laplacian_inverse(const ForestConfig& forest, std::span<const double> weights,
                                        const Eigen::Ref<const Eigen::VectorXd>& v);

/// H_w^{-1} X applied column by column, O(N) per column.
Eigen::MatrixXd apply_laplacian_inverse_columns(const ForestConfig& forest, std::span<const double> weights,
                                        const Eigen::Ref<const Eigen::MatrixXd>& x);

}  // namespace gridtop
