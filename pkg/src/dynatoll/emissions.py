"""Speed-based emission functions and the per-path emission operator
embedded in the network-loading output.

Three calibrated families are supported: a power law in speed, a
hyperbolic form, and the EMFAC hot-running exponential.  The first two
are calibrated in km-based units; speeds and outputs are converted so
that all downstream arithmetic is in miles and grams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrajectoryError, DomainError
from .flows import PathFlowProfile
from .loading import DNLResult
from .network import Network, TimeGrid

KM_PER_MILE = 1.609344

ROSE = "rose"
KENT_MUDFORD = "kent_mudford"
EMFAC = "emfac"


@dataclass(frozen=True)
class EmissionModel:
    """Tagged emission-per-distance model.

    variant ``rose``:          e = b1 * v**(-b2)          (v km/h, e mass/km)
    variant ``kent_mudford``:  e = b1 + b2 / v            (v km/h, e g/km)
    variant ``emfac``:         e = ber * exp(b1*(v-17.03) + b2*(v-17.03)**2)
                               (v mph, e g/mile)
    """

    variant: str
    b1: float
    b2: float
    ber: float = 0.0

    def __post_init__(self):
        if self.variant not in (ROSE, KENT_MUDFORD, EMFAC):
            raise DomainError(f"unknown emission model variant {self.variant!r}")
        for name in ("b1", "b2", "ber"):
            if not np.isfinite(getattr(self, name)):
                raise DomainError(f"non-finite emission parameter {name}")
        if self.variant == EMFAC and self.ber <= 0:
            raise DomainError("emfac model needs ber > 0")


def emfac_model(ber: float = 2.5, b1: float = -0.04, b2: float = 0.001) -> EmissionModel:
    """EMFAC hot-running model with the default CO-style calibration."""
    return EmissionModel(EMFAC, b1=b1, b2=b2, ber=ber)


def emission_per_distance(v, m: EmissionModel):
    """Emission mass per mile at speed v (mph); scalar or array."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise DomainError("speed must be positive")
    if m.variant == EMFAC:
        d = v - 17.03
        out = m.ber * np.exp(m.b1 * d + m.b2 * d * d)
    else:
        v_kmh = v * KM_PER_MILE
        if m.variant == ROSE:
            per_km = m.b1 * v_kmh ** (-m.b2)
        else:
            per_km = m.b1 + m.b2 / v_kmh
        out = per_km * KM_PER_MILE  # mass/km -> mass/mile
    return float(out) if out.ndim == 0 else out


def emission_rate(v, m: EmissionModel):
    """Emission mass per hour of a vehicle cruising at v mph."""
    v = np.asarray(v, dtype=float)
    out = v * emission_per_distance(v, m)
    return float(out) if out.ndim == 0 else out


@dataclass
class PathEmissionResult:
    """Per-departing-vehicle path emissions E_p(t) on the base grid."""

    paths: tuple
    grid: TimeGrid
    per_vehicle: dict  # path id -> (K,) array, mass per departing vehicle

    def row(self, path_id: str) -> np.ndarray:
        return self.per_vehicle[path_id]


def path_emission(dnl: DNLResult, net: Network, m: EmissionModel) -> PathEmissionResult:
    """Emission of one vehicle departing at each cell start, summed over
    the arcs of its path using per-arc average speeds."""
    out = {}
    for pid, traj in dnl.trajectories.items():
        durations = np.diff(traj, axis=0)  # (m, K)
        if np.any(durations <= 0):
            raise DegenerateTrajectoryError(f"path {pid}: zero-duration arc traversal")
        lengths = np.array([net.arcs[a].length for a in net.paths[pid].arcs])
        speeds = lengths[:, None] / durations
        out[pid] = np.sum(durations * emission_rate(speeds, m), axis=0)
    return PathEmissionResult(tuple(dnl.trajectories), dnl.grid, out)


def total_emission(h: PathFlowProfile, e: PathEmissionResult, grid: TimeGrid) -> float:
    """Network total: left-endpoint quadrature of sum_p integral h_p * E_p dt."""
    total = 0.0
    for i, pid in enumerate(h.paths):
        ep = e.per_vehicle[pid]
        if ep.shape != (grid.n_cells,):
            raise ValueError(f"emission series for {pid} does not match the grid")
        total += float(np.dot(h.rates[i], ep)) * grid.dt
    return total
