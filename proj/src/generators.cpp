#include "gridtop/generators.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gridtop/errors.hpp"

namespace gridtop {

namespace {

std::mt19937_64 engine_for(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32U),
                      static_cast<std::uint32_t>(salt)};
    return std::mt19937_64(seq);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    if (hi <= lo) {
        return lo;
    }
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

ImpedanceRange operational_range(const GridGraph& grid, const ForestConfig& forest) {
    ImpedanceRange out{1e300, -1e300, 1e300, -1e300};
    for (const LineIndex e : forest.closed_lines()) {
        const Line& l = grid.line(e);
        out.r_min = std::min(out.r_min, l.r);
        out.r_max = std::max(out.r_max, l.r);
        out.x_min = std::min(out.x_min, l.x);
        out.x_max = std::max(out.x_max, l.x);
    }
    return out;
}

/// Appends `count` open lines between random unconnected pairs, never joining
/// two substations.
void append_open_lines(std::vector<Line>& lines, const std::vector<Node>& nodes, std::size_t count,
                       const ImpedanceRange& range, LineRole role, std::mt19937_64& rng) {
    std::set<std::pair<NodeId, NodeId>> used;
    for (const Line& l : lines) {
        used.insert(std::minmax(l.from, l.to));
    }
    std::vector<std::pair<NodeId, NodeId>> free;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (std::size_t j = i + 1; j < nodes.size(); ++j) {
            if (nodes[i].kind == NodeKind::substation && nodes[j].kind == NodeKind::substation) {
                continue;
            }
            const auto key = std::minmax(nodes[i].id, nodes[j].id);
            if (!used.contains(key)) {
                free.push_back(key);
            }
        }
    }
    if (count > free.size()) {
        throw domain_error("cannot add " + std::to_string(count) + " lines, only " + std::to_string(free.size()) +
                           " node pairs are free");
    }
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = k + pick(rng, free.size() - k);
        std::swap(free[k], free[i]);
        Line l;
        l.from = free[k].first;
        l.to = free[k].second;
        l.r = uniform(rng, range.r_min, range.r_max);
        l.x = uniform(rng, range.x_min, range.x_max);
        l.switchable = true;
        l.role = role;
        lines.push_back(l);
    }
}

std::vector<LineIndex> closed_of(const ForestConfig& forest) {
    return {forest.closed_lines().begin(), forest.closed_lines().end()};
}

}  // namespace

GeneratedGrid generate_random_grid(const GridSpec& spec) {
    if (spec.substations < 1 || spec.loads < spec.substations) {
        throw domain_error("need loads >= substations >= 1");
    }
    if (spec.tie_switches + 1 < spec.substations) {
        throw domain_error("a grid with " + std::to_string(spec.substations) +
                           " substations needs at least " + std::to_string(spec.substations - 1) +
                           " tie switches to be connected");
    }
    const ImpedanceRange& imp = spec.impedance;
    if (!(imp.r_min > 0.0 && imp.x_min > 0.0 && imp.r_max >= imp.r_min && imp.x_max >= imp.x_min)) {
        throw domain_error("impedance range must be positive and ordered");
    }
    auto rng = engine_for(spec.seed, 0x6772696405ULL);
    const std::size_t n = spec.loads;
    const std::size_t k = spec.substations;

    std::vector<Node> nodes;
    for (std::size_t i = 1; i <= n; ++i) {
        nodes.push_back({static_cast<NodeId>(i), NodeKind::load});
    }
    for (std::size_t i = 1; i <= k; ++i) {
        nodes.push_back({static_cast<NodeId>(n + i), NodeKind::substation});
    }

    std::vector<NodeId> order(n);
    std::iota(order.begin(), order.end(), NodeId{1});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Line> lines;
    std::vector<NodeId> placed;
    std::vector<std::size_t> tree_of(n + k + 1, 0);  // indexed by id
    for (std::size_t i = 1; i <= k; ++i) {
        placed.push_back(static_cast<NodeId>(n + i));
        tree_of[n + i] = i - 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        // The first K loads hang off distinct substations.
        const NodeId parent = i < k ? static_cast<NodeId>(n + 1 + i) : placed[pick(rng, placed.size())];
        Line l;
        l.from = order[i];
        l.to = parent;
        l.r = uniform(rng, imp.r_min, imp.r_max);
        l.x = uniform(rng, imp.x_min, imp.x_max);
        lines.push_back(l);
        placed.push_back(order[i]);
        tree_of[static_cast<std::size_t>(order[i])] = tree_of[static_cast<std::size_t>(parent)];
    }
    std::vector<LineIndex> closed(n);
    std::iota(closed.begin(), closed.end(), LineIndex{0});

    ImpedanceRange op{1e300, -1e300, 1e300, -1e300};
    for (const Line& l : lines) {
        op.r_min = std::min(op.r_min, l.r);
        op.r_max = std::max(op.r_max, l.r);
        op.x_min = std::min(op.x_min, l.x);
        op.x_max = std::max(op.x_max, l.x);
    }
    // The first K-1 ties join tree t to a random load of the trees before it,
    // so the grid with all switches closed is connected.
    std::vector<std::vector<NodeId>> tree_loads(k);
    for (NodeId id = 1; id <= static_cast<NodeId>(n); ++id) {
        tree_loads[tree_of[static_cast<std::size_t>(id)]].push_back(id);
    }
    std::vector<NodeId> joined = tree_loads[0];
    for (std::size_t t = 1; t < k; ++t) {
        Line l;
        l.from = joined[pick(rng, joined.size())];
        l.to = tree_loads[t][pick(rng, tree_loads[t].size())];
        l.r = uniform(rng, op.r_min, op.r_max);
        l.x = uniform(rng, op.x_min, op.x_max);
        l.switchable = true;
        l.role = LineRole::tie;
        lines.push_back(l);
        joined.insert(joined.end(), tree_loads[t].begin(), tree_loads[t].end());
    }
    append_open_lines(lines, nodes, spec.tie_switches - (k - 1), op, LineRole::tie, rng);
    append_open_lines(lines, nodes, spec.extra_lines, op, LineRole::added, rng);

    auto grid = std::make_shared<const GridGraph>(std::move(nodes), std::move(lines));
    auto forest = ForestConfig::from_closed_lines(grid, std::move(closed));
    return {std::move(grid), std::move(forest)};
}

GeneratedGrid add_open_lines(const GeneratedGrid& base, std::size_t count, std::uint64_t seed) {
    const GridGraph& g = *base.grid;
    auto rng = engine_for(seed, 0x616464ULL);
    std::vector<Node> nodes(g.nodes().begin(), g.nodes().end());
    std::vector<Line> lines(g.lines().begin(), g.lines().end());
    append_open_lines(lines, nodes, count, operational_range(g, base.forest), LineRole::added, rng);
    auto grid = std::make_shared<const GridGraph>(std::move(nodes), std::move(lines));
    auto forest = ForestConfig::from_closed_lines(grid, closed_of(base.forest));
    return {std::move(grid), std::move(forest)};
}

GeneratedGrid strip_added_lines(const GeneratedGrid& base) {
    const GridGraph& g = *base.grid;
    std::vector<Node> nodes(g.nodes().begin(), g.nodes().end());
    std::vector<Line> lines;
    std::vector<LineIndex> closed;
    for (LineIndex e = 0; e < g.line_count(); ++e) {
        if (g.line(e).role == LineRole::added && !base.forest.is_closed(e)) {
            continue;
        }
        if (base.forest.is_closed(e)) {
            closed.push_back(lines.size());
        }
        lines.push_back(g.line(e));
    }
    auto grid = std::make_shared<const GridGraph>(std::move(nodes), std::move(lines));
    auto forest = ForestConfig::from_closed_lines(grid, std::move(closed));
    return {std::move(grid), std::move(forest)};
}

ForestConfig random_spanning_forest(std::shared_ptr<const GridGraph> grid, std::uint64_t seed) {
    const GridGraph& g = *grid;
    auto rng = engine_for(seed, 0x666f72ULL);
    std::vector<LineIndex> lines(g.line_count());
    std::iota(lines.begin(), lines.end(), LineIndex{0});
    std::shuffle(lines.begin(), lines.end(), rng);

    // Union-find with every substation pre-merged into one super node.
    std::vector<std::size_t> parent(g.node_count());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t u) {
        while (parent[u] != u) {
            parent[u] = parent[parent[u]];
            u = parent[u];
        }
        return u;
    };
    const auto subs = g.substations();
    for (const NodeIndex s : subs) {
        parent[find(s)] = find(subs.front());
    }
    std::vector<LineIndex> closed;
    for (const LineIndex e : lines) {
        const auto [a, b] = g.ends(e);
        const std::size_t ra = find(a);
        const std::size_t rb = find(b);
        if (ra != rb) {
            parent[ra] = rb;
            closed.push_back(e);
        }
    }
    return ForestConfig::from_closed_lines(std::move(grid), std::move(closed));
}

GeneratedGrid make_chain(std::size_t n, double r, double x) {
    if (n < 1) {
        throw domain_error("chain needs at least one load node");
    }
    std::vector<Node> nodes{{0, NodeKind::substation}};
    std::vector<Line> lines;
    for (std::size_t i = 1; i <= n; ++i) {
        nodes.push_back({static_cast<NodeId>(i), NodeKind::load});
        Line l;
        l.from = static_cast<NodeId>(i);
        l.to = static_cast<NodeId>(i - 1);
        l.r = r;
        l.x = x;
        lines.push_back(l);
    }
    std::vector<LineIndex> closed(n);
    std::iota(closed.begin(), closed.end(), LineIndex{0});
    auto grid = std::make_shared<const GridGraph>(std::move(nodes), std::move(lines));
    auto forest = ForestConfig::from_closed_lines(grid, std::move(closed));
    return {std::move(grid), std::move(forest)};
}

}  // namespace gridtop
