"""Reconstruct the operational topology of radial distribution grids from voltage statistics."""

from ._gridtop import (
    Grid,
    GridtopError,
    experiment_csv,
    generate_grid,
    learn,
    load_grid,
    parse_grid,
    sigma_eps,
    simulate,
)

__all__ = [
    "Grid",
    "GridtopError",
    "experiment_csv",
    "generate_grid",
    "learn",
    "load_grid",
    "parse_grid",
    "sigma_eps",
    "simulate",
]
