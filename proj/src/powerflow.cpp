#include "gridtop/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridtop/errors.hpp"

namespace gridtop {

namespace {

void check_injections(const ForestConfig& forest, const InjectionVector& inj) {
    const auto n = static_cast<Eigen::Index>(forest.grid().load_count());
    if (inj.p.size() != n || inj.q.size() != n) {
        throw domain_error("injection vectors have sizes " + std::to_string(inj.p.size()) + "/" +
                           std::to_string(inj.q.size()) + ", grid has " + std::to_string(n) + " load nodes");
    }
    if (!inj.p.allFinite() || !inj.q.allFinite()) {
        throw domain_error("injections must be finite");
    }
}

/// Net injection of each subtree, indexed by node. Leaves first.
void subtree_sums(const ForestConfig& forest, const InjectionVector& inj, std::vector<double>& sp,
                  std::vector<double>& sq) {
    const GridGraph& g = forest.grid();
    sp.assign(g.node_count(), 0.0);
    sq.assign(g.node_count(), 0.0);
    const auto order = forest.preorder();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const NodeIndex u = *it;
        if (const auto pos = g.load_position(u)) {
            sp[u] += inj.p(static_cast<Eigen::Index>(*pos));
            sq[u] += inj.q(static_cast<Eigen::Index>(*pos));
        }
        if (const auto par = forest.parent(u)) {
            sp[*par] += sp[u];
            sq[*par] += sq[u];
        }
    }
}

}  // namespace

VoltageState lcpf_solve(const ForestConfig& forest, const InjectionVector& inj) {
    check_injections(forest, inj);
    const GridGraph& g = forest.grid();
    std::vector<double> sp;
    std::vector<double> sq;
    subtree_sums(forest, inj, sp, sq);

    // Each line drop is r*P + x*Q for the aggregated subtree injection below it.
    std::vector<double> eps(g.node_count(), 0.0);
    std::vector<double> theta(g.node_count(), 0.0);
    VoltageState out{Eigen::VectorXd::Zero(inj.p.size()), Eigen::VectorXd::Zero(inj.p.size())};
    for (const NodeIndex u : forest.preorder()) {
        const auto pl = forest.parent_line(u);
        if (!pl) {
            continue;
        }
        const Line& l = g.line(*pl);
        const NodeIndex par = *forest.parent(u);
        eps[u] = eps[par] + l.r * sp[u] + l.x * sq[u];
        theta[u] = theta[par] + l.x * sp[u] - l.r * sq[u];
        const auto pos = static_cast<Eigen::Index>(*g.load_position(u));
        out.eps(pos) = eps[u];
        out.theta(pos) = theta[u];
    }
    return out;
}

VoltageState dc_resistive_solve(const ForestConfig& forest, const InjectionVector& inj) {
    check_injections(forest, inj);
    const GridGraph& g = forest.grid();
    std::vector<double> sp;
    std::vector<double> sq;
    subtree_sums(forest, inj, sp, sq);

    std::vector<double> eps(g.node_count(), 0.0);
    std::vector<double> theta(g.node_count(), 0.0);
    VoltageState out{Eigen::VectorXd::Zero(inj.p.size()), Eigen::VectorXd::Zero(inj.p.size())};
    for (const NodeIndex u : forest.preorder()) {
        const auto pl = forest.parent_line(u);
        if (!pl) {
            continue;
        }
        const double g_line = g.conductance(*pl);
        const NodeIndex par = *forest.parent(u);
        eps[u] = eps[par] + sp[u] / g_line;
        theta[u] = theta[par] - sq[u] / g_line;
        const auto pos = static_cast<Eigen::Index>(*g.load_position(u));
        out.eps(pos) = eps[u];
        out.theta(pos) = theta[u];
    }
    return out;
}

DistFlowResult distflow_solve(const ForestConfig& forest, const InjectionVector& inj, const DistFlowOptions& opts) {
    check_injections(forest, inj);
    if (!(opts.v0 > 0.0) || !(opts.tol > 0.0) || opts.max_iter < 1) {
        throw domain_error("DistFlow needs v0 > 0, tol > 0 and max_iter >= 1");
    }
    const GridGraph& g = forest.grid();
    const std::size_t n = g.node_count();
    const auto order = forest.preorder();

    // Node-indexed state; the flow of a node is the sending-end flow on the line
    // from its parent.
    std::vector<double> vsq(n, opts.v0 * opts.v0);
    std::vector<double> pf(n, 0.0);
    std::vector<double> qf(n, 0.0);
    std::vector<double> loss(n, 0.0);  // (P^2 + Q^2) / v_parent^2 from the previous sweep
    std::vector<double> recv_p(n, 0.0);
    std::vector<double> recv_q(n, 0.0);

    double change = 0.0;
    int iter = 0;
    for (iter = 1; iter <= opts.max_iter; ++iter) {
        // Backward sweep: receiving-end demand of a node is its own consumption
        // plus the sending-end flows of its child lines.
        std::fill(recv_p.begin(), recv_p.end(), 0.0);
        std::fill(recv_q.begin(), recv_q.end(), 0.0);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const NodeIndex u = *it;
            const auto pl = forest.parent_line(u);
            if (!pl) {
                continue;
            }
            const auto pos = static_cast<Eigen::Index>(*g.load_position(u));
            const Line& l = g.line(*pl);
            const double demand_p = recv_p[u] - inj.p(pos);
            const double demand_q = recv_q[u] - inj.q(pos);
            pf[u] = demand_p + l.r * loss[u];
            qf[u] = demand_q + l.x * loss[u];
            const NodeIndex par = *forest.parent(u);
            recv_p[par] += pf[u];
            recv_q[par] += qf[u];
        }

        // Forward sweep on squared magnitudes.
        change = 0.0;
        for (const NodeIndex u : order) {
            const auto pl = forest.parent_line(u);
            if (!pl) {
                continue;
            }
            const Line& l = g.line(*pl);
            const NodeIndex par = *forest.parent(u);
            const double s2 = (pf[u] * pf[u] + qf[u] * qf[u]) / vsq[par];
            const double next = vsq[par] - 2.0 * (l.r * pf[u] + l.x * qf[u]) + (l.r * l.r + l.x * l.x) * s2;
            if (!(next > 0.0) || !std::isfinite(next)) {
                throw infeasible_state_error("DistFlow produced v^2 <= 0 at node " + std::to_string(g.node(u).id) +
                                             " in iteration " + std::to_string(iter));
            }
            change = std::max(change, std::abs(std::sqrt(next) - std::sqrt(vsq[u])));
            vsq[u] = next;
        }
        for (const NodeIndex u : order) {
            if (const auto par = forest.parent(u)) {
                loss[u] = (pf[u] * pf[u] + qf[u] * qf[u]) / vsq[*par];
            }
        }
        if (change < opts.tol) {
            break;
        }
    }
    if (iter > opts.max_iter) {
        throw convergence_error("DistFlow did not converge in " + std::to_string(opts.max_iter) +
                                    " iterations (last voltage change " + std::to_string(change) + ")",
                                change, opts.max_iter);
    }

    DistFlowResult out;
    const auto nl = static_cast<Eigen::Index>(g.load_count());
    out.state.eps = Eigen::VectorXd::Zero(nl);
    out.state.theta = Eigen::VectorXd::Zero(nl);
    out.v = Eigen::VectorXd::Zero(nl);
    out.p_flow.assign(g.line_count(), 0.0);
    out.q_flow.assign(g.line_count(), 0.0);
    out.iterations = iter;
    out.last_change = change;
    for (const NodeIndex u : g.loads()) {
        const auto pos = static_cast<Eigen::Index>(*g.load_position(u));
        out.v(pos) = std::sqrt(vsq[u]);
        out.state.eps(pos) = out.v(pos) - 1.0;
        const LineIndex e = *forest.parent_line(u);
        out.p_flow[e] = pf[u];
        out.q_flow[e] = qf[u];
    }
    return out;
}

double distflow_residual(const ForestConfig& forest, const InjectionVector& inj, const DistFlowResult& result,
                         double v0) {
    check_injections(forest, inj);
    const GridGraph& g = forest.grid();
    auto magnitude = [&](NodeIndex u) {
        if (const auto pos = g.load_position(u)) {
            return result.v(static_cast<Eigen::Index>(*pos));
        }
        return v0;
    };
    double worst = 0.0;
    for (const NodeIndex u : forest.preorder()) {
        const auto pl = forest.parent_line(u);
        if (!pl) {
            continue;
        }
        const Line& l = g.line(*pl);
        const NodeIndex par = *forest.parent(u);
        const double p = result.p_flow[*pl];
        const double q = result.q_flow[*pl];
        const double vp = magnitude(par);
        const double s2 = (p * p + q * q) / (vp * vp);
        double out_p = 0.0;
        double out_q = 0.0;
        for (const NodeIndex c : forest.children(u)) {
            out_p += result.p_flow[*forest.parent_line(c)];
            out_q += result.q_flow[*forest.parent_line(c)];
        }
        const auto pos = static_cast<Eigen::Index>(*g.load_position(u));
        const double rp = p - l.r * s2 - (-inj.p(pos) + out_p);
        const double rq = q - l.x * s2 - (-inj.q(pos) + out_q);
        const double vu = magnitude(u);
        const double rv = vu * vu - (vp * vp - 2.0 * (l.r * p + l.x * q) + (l.r * l.r + l.x * l.x) * s2);
        worst = std::max({worst, std::abs(rp), std::abs(rq), std::abs(rv)});
    }
    return worst;
}

}  // namespace gridtop
