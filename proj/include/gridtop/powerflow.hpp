#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gridtop/grid_model.hpp"

namespace gridtop {

/// Nodal power injections at load nodes, per-unit, load-position order.
/// Consumption is negative.
struct InjectionVector {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};

/// Voltage deviations and phases at load nodes; substations are implicitly 0.
///
/// `eps` is signed so that it equals H_{1/r}^{-1} p + H_{1/x}^{-1} q: with net
/// consumption it is negative and the magnitude is 1 + eps.
struct VoltageState {
    Eigen::VectorXd eps;
    Eigen::VectorXd theta;
};

/// Linear coupled power flow, solved by a leaf-to-root flow aggregation and a
/// root-to-leaf accumulation of line drops. O(N).
VoltageState lcpf_solve(const ForestConfig& forest, const InjectionVector& inj);

/// Resistance-dominated limit: eps = H_g^{-1} p, theta = -H_g^{-1} q.
VoltageState dc_resistive_solve(const ForestConfig& forest, const InjectionVector& inj);

struct DistFlowOptions {
    double v0 = 1.0;
    double tol = 1e-10;
    int max_iter = 100;
};

/// Converged DistFlow state. Flows are indexed by grid line and measured at
/// the sending (parent) end; open lines carry zero.
struct DistFlowResult {
    VoltageState state;  ///< eps = v - 1; theta is not produced and left at zero
    Eigen::VectorXd v;   ///< magnitudes at load nodes
    std::vector<double> p_flow;
    std::vector<double> q_flow;
    int iterations = 0;
    double last_change = 0.0;
};

/// Nonlinear DistFlow by backward/forward sweep from a flat start.
/// Throws convergence_error or infeasible_state_error.
DistFlowResult distflow_solve(const ForestConfig& forest, const InjectionVector& inj, const DistFlowOptions& opts = {});

/// Largest absolute residual of the three DistFlow branch equations over all
/// closed lines, evaluated at `result`.
double distflow_residual(const ForestConfig& forest, const InjectionVector& inj, const DistFlowResult& result,
                         double v0 = 1.0);

}  // namespace gridtop
