#include "gridtop/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gridtop/errors.hpp"

namespace gridtop {

namespace {

std::string node_label(NodeId id) { return "node " + std::to_string(id); }

}  // namespace

// ---------------------------------------------------------------------------
// GridGraph

GridGraph::GridGraph(std::vector<Node> nodes, std::vector<Line> lines)
    : nodes_(std::move(nodes)), lines_(std::move(lines)) {
    std::sort(nodes_.begin(), nodes_.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!index_.emplace(nodes_[i].id, i).second) {
            throw structural_error("duplicate " + node_label(nodes_[i].id));
        }
    }

    load_pos_.assign(nodes_.size(), -1);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].kind == NodeKind::substation) {
            substations_.push_back(i);
        } else {
            load_pos_[i] = static_cast<std::ptrdiff_t>(loads_.size());
            loads_.push_back(i);
        }
    }
    if (substations_.empty()) {
        throw structural_error("grid has no substation");
    }
    if (loads_.empty()) {
        throw structural_error("grid has no load node");
    }

    adjacency_.resize(nodes_.size());
    ends_.reserve(lines_.size());
    for (std::size_t e = 0; e < lines_.size(); ++e) {
        const Line& l = lines_[e];
        const auto ia = index_.find(l.from);
        const auto ib = index_.find(l.to);
        if (ia == index_.end() || ib == index_.end()) {
            throw structural_error("line " + std::to_string(e) + " references unknown " +
                                   node_label(ia == index_.end() ? l.from : l.to));
        }
        if (ia->second == ib->second) {
            throw structural_error("line " + std::to_string(e) + " is a self loop at " + node_label(l.from));
        }
        if (!(std::isfinite(l.r) && l.r > 0.0 && std::isfinite(l.x) && l.x > 0.0)) {
            throw structural_error("line " + std::to_string(e) + " (" + std::to_string(l.from) + "-" +
                                   std::to_string(l.to) + ") needs finite positive r and x");
        }
        if (!line_lookup_.emplace(pair_key(ia->second, ib->second), e).second) {
            throw structural_error("duplicate line between " + node_label(l.from) + " and " + node_label(l.to));
        }
        ends_.emplace_back(ia->second, ib->second);
        adjacency_[ia->second].push_back(e);
        adjacency_[ib->second].push_back(e);
    }

    // Connectivity with all switches closed.
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<NodeIndex> stack{0};
    seen[0] = true;
    std::size_t reached = 1;
    while (!stack.empty()) {
        const NodeIndex u = stack.back();
        stack.pop_back();
        for (const LineIndex e : adjacency_[u]) {
            const NodeIndex v = ends_[e].first == u ? ends_[e].second : ends_[e].first;
            if (!seen[v]) {
                seen[v] = true;
                ++reached;
                stack.push_back(v);
            }
        }
    }
    if (reached != nodes_.size()) {
        const auto it = std::find(seen.begin(), seen.end(), false);
        throw structural_error("grid is not connected: " +
                               node_label(nodes_[static_cast<std::size_t>(it - seen.begin())].id) +
                               " is unreachable");
    }
}

std::uint64_t GridGraph::pair_key(NodeIndex a, NodeIndex b) noexcept {
    if (a > b) {
        std::swap(a, b);
    }
    return (static_cast<std::uint64_t>(a) << 32U) | static_cast<std::uint64_t>(b);
}

NodeIndex GridGraph::index_of(NodeId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
        throw domain_error("unknown " + node_label(id));
    }
    return it->second;
}

std::optional<LineIndex> GridGraph::find_line(NodeIndex a, NodeIndex b) const {
    const auto it = line_lookup_.find(pair_key(a, b));
    if (it == line_lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<std::size_t> GridGraph::load_position(NodeIndex i) const {
    const std::ptrdiff_t p = load_pos_.at(i);
    if (p < 0) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(p);
}

double GridGraph::conductance(LineIndex e) const {
    const Line& l = lines_.at(e);
    return l.r / (l.r * l.r + l.x * l.x);
}

double GridGraph::susceptance(LineIndex e) const {
    const Line& l = lines_.at(e);
    return l.x / (l.r * l.r + l.x * l.x);
}

// ---------------------------------------------------------------------------
// ForestConfig

ForestConfig ForestConfig::from_closed_lines(std::shared_ptr<const GridGraph> grid, std::vector<LineIndex> closed) {
    if (!grid) {
        throw structural_error("forest needs a grid");
    }
    const GridGraph& g = *grid;
    const std::size_t n = g.node_count();

    ForestConfig f;
    f.grid_ = std::move(grid);
    std::sort(closed.begin(), closed.end());
    if (std::adjacent_find(closed.begin(), closed.end()) != closed.end()) {
        throw structural_error("closed line listed twice");
    }
    f.closed_mask_.assign(g.line_count(), false);
    std::vector<std::vector<LineIndex>> adj(n);
    for (const LineIndex e : closed) {
        if (e >= g.line_count()) {
            throw structural_error("closed line " + std::to_string(e) + " is not a grid line");
        }
        f.closed_mask_[e] = true;
        adj[g.ends(e).first].push_back(e);
        adj[g.ends(e).second].push_back(e);
    }
    f.closed_ = std::move(closed);

    f.tree_.assign(n, 0);
    f.parent_.assign(n, -1);
    f.parent_line_.assign(n, -1);
    f.depth_.assign(n, 0);
    f.children_.assign(n, {});
    f.enter_.assign(n, 0);
    f.leave_.assign(n, 0);
    f.preorder_.reserve(n);

    std::vector<bool> seen(n, false);
    const auto subs = g.substations();
    f.roots_.assign(subs.begin(), subs.end());  // already ascending by id

    for (std::size_t k = 0; k < f.roots_.size(); ++k) {
        const NodeIndex root = f.roots_[k];
        if (seen[root]) {
            throw structural_error("tree " + std::to_string(k) + " contains two substations (" +
                                   node_label(g.node(root).id) + " is reachable from another substation)");
        }
        // Iterative DFS that visits children by ascending id.
        struct Frame {
            NodeIndex node;
            std::size_t next_child;
        };
        seen[root] = true;
        f.tree_[root] = k;
        f.enter_[root] = f.preorder_.size();
        f.preorder_.push_back(root);
        std::vector<Frame> stack{{root, 0}};
        auto expand = [&](NodeIndex u) {
            std::vector<NodeIndex>& kids = f.children_[u];
            for (const LineIndex e : adj[u]) {
                if (f.parent_line_[u] == static_cast<std::ptrdiff_t>(e)) {
                    continue;
                }
                const NodeIndex v = g.ends(e).first == u ? g.ends(e).second : g.ends(e).first;
                if (seen[v]) {
                    if (g.is_substation(v) && f.tree_[v] != k) {
                        throw structural_error("tree " + std::to_string(k) + " contains two substations");
                    }
                    throw structural_error("closed lines contain a cycle through " + node_label(g.node(v).id));
                }
                if (g.is_substation(v)) {
                    throw structural_error("tree " + std::to_string(k) + " contains two substations (" +
                                           node_label(g.node(root).id) + " and " + node_label(g.node(v).id) +
                                           ")");
                }
                seen[v] = true;
                f.parent_[v] = static_cast<std::ptrdiff_t>(u);
                f.parent_line_[v] = static_cast<std::ptrdiff_t>(e);
                f.tree_[v] = k;
                f.depth_[v] = f.depth_[u] + 1;
                kids.push_back(v);
            }
            std::sort(kids.begin(), kids.end());  // node index order == id order
        };
        expand(root);
        while (!stack.empty()) {
            Frame& top = stack.back();
            const auto& kids = f.children_[top.node];
            if (top.next_child == kids.size()) {
                f.leave_[top.node] = f.preorder_.size();
                stack.pop_back();
                continue;
            }
            const NodeIndex v = kids[top.next_child++];
            f.enter_[v] = f.preorder_.size();
            f.preorder_.push_back(v);
            expand(v);
            stack.push_back({v, 0});
        }
    }

    for (NodeIndex i = 0; i < n; ++i) {
        if (!seen[i]) {
            throw structural_error(node_label(g.node(i).id) + " is not connected to any substation");
        }
    }
    // A base-constrained spanning forest on N + K nodes has exactly N lines.
    if (f.closed_.size() != g.load_count()) {
        throw structural_error("closed lines do not form a spanning forest");
    }
    return f;
}

std::optional<NodeIndex> ForestConfig::parent(NodeIndex i) const {
    const std::ptrdiff_t p = parent_.at(i);
    if (p < 0) {
        return std::nullopt;
    }
    return static_cast<NodeIndex>(p);
}

std::optional<LineIndex> ForestConfig::parent_line(NodeIndex i) const {
    const std::ptrdiff_t p = parent_line_.at(i);
    if (p < 0) {
        return std::nullopt;
    }
    return static_cast<LineIndex>(p);
}

bool ForestConfig::is_ancestor(NodeIndex ancestor, NodeIndex node) const {
    return enter_.at(ancestor) <= enter_.at(node) && leave_.at(node) <= leave_.at(ancestor);
}

std::span<const NodeIndex> ForestConfig::descendants(NodeIndex i) const {
    return std::span<const NodeIndex>(preorder_).subspan(enter_.at(i), leave_.at(i) - enter_.at(i));
}

std::vector<LineIndex> ForestConfig::root_path(NodeIndex i) const {
    std::vector<LineIndex> path;
    path.reserve(depth_.at(i));
    for (std::ptrdiff_t u = static_cast<std::ptrdiff_t>(i); parent_[static_cast<std::size_t>(u)] >= 0;
         u = parent_[static_cast<std::size_t>(u)]) {
        path.push_back(static_cast<LineIndex>(parent_line_[static_cast<std::size_t>(u)]));
    }
    return path;
}

std::optional<NodeIndex> ForestConfig::common_ancestor(NodeIndex a, NodeIndex b) const {
    if (tree_.at(a) != tree_.at(b)) {
        return std::nullopt;
    }
    while (depth_[a] > depth_[b]) {
        a = static_cast<NodeIndex>(parent_[a]);
    }
    while (depth_[b] > depth_[a]) {
        b = static_cast<NodeIndex>(parent_[b]);
    }
    while (a != b) {
        a = static_cast<NodeIndex>(parent_[a]);
        b = static_cast<NodeIndex>(parent_[b]);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Reduced incidence

namespace {

/// Sign of the row of `line` at its child endpoint.
int child_sign(const GridGraph& g, LineIndex line, NodeIndex child, EdgeOrientation orientation) {
    if (orientation == EdgeOrientation::child_to_parent) {
        return 1;
    }
    return g.ends(line).first == child ? 1 : -1;
}

NodeIndex load_node(const ForestConfig& forest, NodeId id) {
    const NodeIndex a = forest.grid().index_of(id);
    if (forest.grid().is_substation(a)) {
        throw domain_error("node " + std::to_string(id) + " is a substation, expected a load node");
    }
    return a;
}

void check_weights(const ForestConfig& forest, std::span<const double> weights) {
    if (weights.size() != forest.grid().line_count()) {
        throw domain_error("weight vector has " + std::to_string(weights.size()) + " entries, grid has " +
                           std::to_string(forest.grid().line_count()) + " lines");
    }
}

double weight_of(std::span<const double> weights, LineIndex e) {
    const double w = weights[e];
    if (!(std::isfinite(w) && w > 0.0)) {
        throw domain_error("missing or non-positive weight for line " + std::to_string(e));
    }
    return w;
}

}  // namespace

Eigen::MatrixXd ReducedIncidence::block(std::size_t k) const {
    const Block& b = blocks.at(k);
    const auto off = static_cast<Eigen::Index>(b.offset);
    const auto sz = static_cast<Eigen::Index>(b.size);
    return matrix.block(off, off, sz, sz);
}

Eigen::MatrixXd ReducedIncidence::inverse(const ForestConfig& forest) const {
    const auto n = static_cast<Eigen::Index>(node_order.size());
    Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(n, n);
    std::vector<std::ptrdiff_t> column_of(forest.grid().line_count(), -1);
    for (std::size_t j = 0; j < edge_order.size(); ++j) {
        column_of[edge_order[j]] = static_cast<std::ptrdiff_t>(j);
    }
    const GridGraph& g = forest.grid();
    for (Eigen::Index i = 0; i < n; ++i) {
        NodeIndex u = node_order[static_cast<std::size_t>(i)];
        while (const auto pl = forest.parent_line(u)) {
            inv(i, column_of[*pl]) = child_sign(g, *pl, u, orientation);
            u = *forest.parent(u);
        }
    }
    return inv;
}

ReducedIncidence build_reduced_incidence(const ForestConfig& forest, EdgeOrientation orientation) {
    const GridGraph& g = forest.grid();
    ReducedIncidence out;
    out.orientation = orientation;
    out.node_order.reserve(g.load_count());
    for (std::size_t k = 0; k < forest.tree_count(); ++k) {
        const std::size_t offset = out.node_order.size();
        for (const NodeIndex u : forest.descendants(forest.root(k))) {
            if (!g.is_substation(u)) {
                out.node_order.push_back(u);
            }
        }
        std::sort(out.node_order.begin() + static_cast<std::ptrdiff_t>(offset), out.node_order.end());
        out.blocks.push_back({k, offset, out.node_order.size() - offset});
    }

    const auto n = static_cast<Eigen::Index>(out.node_order.size());
    std::vector<std::ptrdiff_t> column(g.node_count(), -1);
    for (std::size_t j = 0; j < out.node_order.size(); ++j) {
        column[out.node_order[j]] = static_cast<std::ptrdiff_t>(j);
    }
    out.matrix = Eigen::MatrixXd::Zero(n, n);
    out.edge_order.reserve(out.node_order.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const NodeIndex child = out.node_order[static_cast<std::size_t>(i)];
        const LineIndex e = *forest.parent_line(child);
        const NodeIndex par = *forest.parent(child);
        const int s = child_sign(g, e, child, orientation);
        out.edge_order.push_back(e);
        out.matrix(i, column[child]) = s;
        if (column[par] >= 0) {
            out.matrix(i, column[par]) = -s;
        }
    }
    return out;
}

int inverse_incidence_entry(const ForestConfig& forest, NodeId a, LineIndex r, EdgeOrientation orientation) {
    const NodeIndex u = load_node(forest, a);
    if (r >= forest.grid().line_count() || !forest.is_closed(r)) {
        throw domain_error("line " + std::to_string(r) + " is not a closed line of the forest");
    }
    const auto [e0, e1] = forest.grid().ends(r);
    // The child endpoint of a closed line is the deeper one.
    const NodeIndex child = forest.depth(e0) > forest.depth(e1) ? e0 : e1;
    if (!forest.is_ancestor(child, u)) {
        return 0;
    }
    return child_sign(forest.grid(), r, child, orientation);
}

// ---------------------------------------------------------------------------
// Weighted Laplacians

std::vector<double> line_weights(const GridGraph& grid, WeightKind kind) {
    std::vector<double> w(grid.line_count());
    for (LineIndex e = 0; e < grid.line_count(); ++e) {
        switch (kind) {
            case WeightKind::conductance: w[e] = grid.conductance(e); break;
            case WeightKind::susceptance: w[e] = grid.susceptance(e); break;
            case WeightKind::inverse_resistance: w[e] = 1.0 / grid.line(e).r; break;
            case WeightKind::inverse_reactance: w[e] = 1.0 / grid.line(e).x; break;
        }
    }
    return w;
}

double laplacian_inverse_entry(const ForestConfig& forest, std::span<const double> weights, NodeId a, NodeId b) {
    check_weights(forest, weights);
    const GridGraph& g = forest.grid();
    const NodeIndex ua = g.index_of(a);
    const NodeIndex ub = g.index_of(b);
    if (g.is_substation(ua) || g.is_substation(ub)) {
        return 0.0;
    }
    auto lca = forest.common_ancestor(ua, ub);
    if (!lca) {
        return 0.0;
    }
    double sum = 0.0;
    for (NodeIndex u = *lca; const auto pl = forest.parent_line(u); u = *forest.parent(u)) {
        sum += 1.0 / weight_of(weights, *pl);
    }
    return sum;
}

double laplacian_row_difference(const ForestConfig& forest, std::span<const double> weights, NodeId a, NodeId b,
                                NodeId c) {
    check_weights(forest, weights);
    const GridGraph& g = forest.grid();
    const NodeIndex ua = load_node(forest, a);
    const NodeIndex ub = g.index_of(b);
    const NodeIndex uc = g.index_of(c);
    if (forest.parent(ua) != ub) {
        throw domain_error("node " + std::to_string(b) + " is not the parent of node " + std::to_string(a));
    }
    if (forest.tree_of(uc) != forest.tree_of(ua) || !forest.is_ancestor(ua, uc)) {
        return 0.0;
    }
    return 1.0 / weight_of(weights, *forest.parent_line(ua));
}

std::vector<NodeId> descendants(const ForestConfig& forest, NodeId a) {
    const GridGraph& g = forest.grid();
    std::vector<NodeId> out;
    for (const NodeIndex u : forest.descendants(g.index_of(a))) {
        out.push_back(g.node(u).id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

Eigen::MatrixXd reduced_laplacian(const ForestConfig& forest, std::span<const double> weights) {
    check_weights(forest, weights);
    const GridGraph& g = forest.grid();
    const auto n = static_cast<Eigen::Index>(g.load_count());
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (const LineIndex e : forest.closed_lines()) {
        const double w = weight_of(weights, e);
        const auto pa = g.load_position(g.ends(e).first);
        const auto pb = g.load_position(g.ends(e).second);
        if (pa) {
            h(static_cast<Eigen::Index>(*pa), static_cast<Eigen::Index>(*pa)) += w;
        }
        if (pb) {
            h(static_cast<Eigen::Index>(*pb), static_cast<Eigen::Index>(*pb)) += w;
        }
        if (pa && pb) {
            h(static_cast<Eigen::Index>(*pa), static_cast<Eigen::Index>(*pb)) -= w;
            h(static_cast<Eigen::Index>(*pb), static_cast<Eigen::Index>(*pa)) -= w;
        }
    }
    return h;
}

WeightedLaplacians build_weighted_laplacians(const ForestConfig& forest) {
    const GridGraph& g = forest.grid();
    return {
        reduced_laplacian(forest, line_weights(g, WeightKind::conductance)),
        reduced_laplacian(forest, line_weights(g, WeightKind::susceptance)),
        reduced_laplacian(forest, line_weights(g, WeightKind::inverse_resistance)),
        reduced_laplacian(forest, line_weights(g, WeightKind::inverse_reactance)),
    };
}

Eigen::VectorXd apply_laplacian_inverse(const ForestConfig& forest, std::span<const double> weights,
                                        const Eigen::Ref<const Eigen::VectorXd>& v) {
    check_weights(forest, weights);
    const GridGraph& g = forest.grid();
    if (static_cast<std::size_t>(v.size()) != g.load_count()) {
        throw domain_error("vector has " + std::to_string(v.size()) + " entries, expected " +
                           std::to_string(g.load_count()));
    }
    const auto order = forest.preorder();
    // Subtree sums, leaves first.
    std::vector<double> subtree(g.node_count(), 0.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const NodeIndex u = *it;
        if (const auto pos = g.load_position(u)) {
            subtree[u] += v(static_cast<Eigen::Index>(*pos));
        }
        if (const auto p = forest.parent(u)) {
            subtree[*p] += subtree[u];
        }
    }
    // Accumulate flow / weight from the root down.
    std::vector<double> acc(g.node_count(), 0.0);
    Eigen::VectorXd out(v.size());
    for (const NodeIndex u : order) {
        const auto pl = forest.parent_line(u);
        if (!pl) {
            continue;
        }
        acc[u] = acc[*forest.parent(u)] + subtree[u] / weight_of(weights, *pl);
        out(static_cast<Eigen::Index>(*g.load_position(u))) = acc[u];
    }
    return out;
}

Eigen::MatrixXd apply_laplacian_inverse_columns(const ForestConfig& forest, std::span<const double> weights,
                                                const Eigen::Ref<const Eigen::MatrixXd>& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out.col(j) = apply_laplacian_inverse(forest, weights, x.col(j));
    }
    return out;
}

}  // namespace gridtop
