"""Shared setup for the experiment scripts: the unit-ball demo geometry."""

from __future__ import annotations

import csv
import sys

from enclosure.analytic_waves import SourcePulse
from enclosure.forward_solver import build_grid, solve
from enclosure.geometry import BallSpec, surface_quadrature
from enclosure.reference_field import TimeReversedNeumann

P = (0.0, 0.0, 0.0)
OMEGA = BallSpec(P, 1.0)


def obstacle(radius: float) -> BallSpec:
    return BallSpec(P, radius)


def pulse(eta: float) -> SourcePulse:
    return SourcePulse(P, eta)


def trace_pair(resolution: int, T: float, eta: float, r_d: float, surface_order: int = 12):
    """Boundary traces with and without the obstacle, same quadrature and time grid."""
    quad = surface_quadrature(OMEGA, surface_order)
    out = []
    for d in (obstacle(r_d), None):
        grid = build_grid(OMEGA, d, resolution)
        tr, _ = solve(grid, TimeReversedNeumann(pulse(eta), T), grid.time_grid(T), quad)
        out.append(tr)
    return out


def csv_writer(path):
    fh = open(path, "w", newline="") if path else sys.stdout
    return fh, csv.writer(fh)
