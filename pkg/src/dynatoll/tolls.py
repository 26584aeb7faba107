"""Toll schedules: piecewise-constant arc tolls on control intervals
coarser than the simulation grid, and their evaluation along paths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .loading import DNLResult
from .network import Network, TimeGrid


@dataclass(frozen=True)
class TollSchedule:
    """Tolls Y_a(t) >= 0, constant on each control interval.

    ``starts`` are the left edges of the control intervals; the last
    interval extends to the end of the horizon.  Values are clamped to
    the boundary intervals outside [starts[0], horizon end).  Toll values
    share the cost units of the effective delay (hours).
    """

    arcs: tuple
    starts: np.ndarray
    values: np.ndarray  # (n_arcs, n_controls)
    y_ub: float

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape != (len(self.arcs), len(starts)):
            raise DomainError(
                f"toll values shape {values.shape} != ({len(self.arcs)}, {len(starts)})"
            )
        if np.any(np.diff(starts) <= 0):
            raise DomainError("control interval starts must increase")
        if self.y_ub < 0:
            raise DomainError("toll upper bound must be nonnegative")
        if np.any(values < -1e-12) or np.any(values > self.y_ub + 1e-12):
            raise DomainError(f"toll values outside [0, {self.y_ub}]")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "values", values)

    @property
    def n_controls(self) -> int:
        return len(self.starts)

    def value_at(self, arc_id, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        row = self.values[self.arcs.index(arc_id)]
        idx = np.clip(np.searchsorted(self.starts, times, side="right") - 1, 0, len(row) - 1)
        out = row[idx]
        return float(out) if out.ndim == 0 else out

    def with_values(self, values: np.ndarray) -> "TollSchedule":
        return TollSchedule(self.arcs, self.starts, values, self.y_ub)

    def is_zero(self) -> bool:
        return bool(np.all(self.values == 0.0))


def zero_toll(grid: TimeGrid, arcs, y_ub: float, control_dt: float = 0.5) -> TollSchedule:
    n = max(1, int(round((grid.tf - grid.t0) / control_dt)))
    starts = grid.t0 + control_dt * np.arange(n)
    return TollSchedule(tuple(arcs), starts, np.zeros((len(arcs), n)), y_ub)


def path_toll_costs(
    dnl: DNLResult, net: Network, toll: TollSchedule | None, at_departure: bool = False
) -> dict:
    """Toll paid along each path per unit flow departing at each cell
    start.

    Each tolled arc's schedule is sampled at the vehicle's entry time to
    that arc (the exit time of the previous arc); ``at_departure``
    switches to sampling every arc at the departure instant instead.
    """
    k = dnl.grid.n_cells
    out = {pid: np.zeros(k) for pid in net.paths}
    if toll is None or toll.is_zero():
        return out
    for pid, spec in net.paths.items():
        traj = dnl.trajectories[pid]
        cost = np.zeros(k)
        for i, aid in enumerate(spec.arcs):
            if aid in toll.arcs:
                when = traj[0] if at_departure else traj[i]
                cost += toll.value_at(aid, when)
        out[pid] = cost
    return out
