"""Path departure-rate profiles: the decision vector of the equilibrium
problem, shared between the loader and the solvers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .network import Network, TimeGrid


@dataclass(frozen=True)
class PathFlowProfile:
    """Departure rates h_p(t_k) >= 0 (vehicles/hour), one row per path.

    Step-function semantics: rates[p, k] holds on the cell
    [t_k, t_{k+1}).  ``rates`` has shape (n_paths, K).
    """

    paths: tuple
    grid: TimeGrid
    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if r.shape != (len(self.paths), self.grid.n_cells):
            raise GridMismatchError(
                f"rates shape {r.shape} != ({len(self.paths)}, {self.grid.n_cells})"
            )
        object.__setattr__(self, "rates", r)

    def row(self, path_id: str) -> np.ndarray:
        return self.rates[self.paths.index(path_id)]

    def od_mass(self, net: Network) -> dict:
        """Vehicles departed per OD pair: dt * sum of rates over its paths."""
        out = {}
        for oid, od in net.ods.items():
            rows = [self.paths.index(p) for p in od.paths]
            out[oid] = float(self.rates[rows].sum() * self.grid.dt)
        return out

    def check_feasible(self, net: Network, rel_tol: float = 1e-8) -> None:
        if np.any(self.rates < 0):
            raise ValueError("negative departure rate")
        for oid, mass in self.od_mass(net).items():
            q = net.ods[oid].demand
            if abs(mass - q) > rel_tol * max(q, 1.0):
                raise ValueError(f"OD {oid}: departed mass {mass} != demand {q}")

    def with_rates(self, rates: np.ndarray) -> "PathFlowProfile":
        return PathFlowProfile(self.paths, self.grid, rates)


def zero_profile(net: Network, grid: TimeGrid) -> PathFlowProfile:
    return PathFlowProfile(
        tuple(net.paths), grid, np.zeros((len(net.paths), grid.n_cells))
    )
