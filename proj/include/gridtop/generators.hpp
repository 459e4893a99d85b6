#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>

#include "gridtop/grid_model.hpp"

namespace gridtop {

struct ImpedanceRange {
    double r_min = 0.01;
    double r_max = 0.05;
    double x_min = 0.01;
    double x_max = 0.05;
};

struct GridSpec {
    std::size_t loads = 13;
    std::size_t substations = 1;
    std::size_t tie_switches = 0;
    std::size_t extra_lines = 0;
    ImpedanceRange impedance;
    std::uint64_t seed = 1;
};

/// A grid together with its operational forest.
struct GeneratedGrid {
    std::shared_ptr<const GridGraph> grid;
    ForestConfig forest;
};

/// Random base-constrained spanning forest (every substation feeds at least one
/// load) plus open tie switches and open added lines. The first K-1 ties join
/// the trees so the grid is connected; fewer ties than that is a domain_error. Operational impedances
/// are uniform in `spec.impedance`; ties and added lines are uniform between the
/// smallest and largest operational values. Node ids: loads 1..N, substations
/// N+1..N+K. Deterministic in `spec.seed`.
GeneratedGrid generate_random_grid(const GridSpec& spec);

/// Copy of `base` with `count` more open lines (role added) between node pairs
/// that have no line yet, impedances uniform within the operational range.
GeneratedGrid add_open_lines(const GeneratedGrid& base, std::size_t count, std::uint64_t seed);

/// Copy of `base` with every added line removed.
GeneratedGrid strip_added_lines(const GeneratedGrid& base);

/// Uniformly shuffled Kruskal over the grid with all substations merged into one
/// super node: a random base-constrained spanning forest of `grid`.
ForestConfig random_spanning_forest(std::shared_ptr<const GridGraph> grid, std::uint64_t seed);

/// Path substation - 1 - 2 - ... - n with constant impedances.
GeneratedGrid make_chain(std::size_t n, double r = 0.02, double x = 0.03);

}  // namespace gridtop
