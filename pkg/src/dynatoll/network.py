"""Network model: time grid, arcs, paths, OD demand and the Greenshields
fundamental diagram with its inverse branch and Legendre transform.

Units are fixed network-wide: miles, hours, vehicles.  Speeds are mph,
densities vehicles/mile, flows vehicles/hour.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AdjacencyError,
    DanglingArcError,
    DemandError,
    DomainError,
    EmptyPathSetError,
    InfeasibleFlowError,
    NetworkValidationError,
)

#: Sentinel returned by :func:`fd_psi` for paces faster than free flow.
#: psi is nonnegative on its domain, so any negative value marks "infeasible
#: pace"; candidate loops must skip such entries instead of comparing them.
INFEASIBLE_PACE = -1.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, tf] with K cells and K+1 points t_k = t0 + k*dt."""

    t0: float
    tf: float
    dt: float

    def __post_init__(self):
        if not self.t0 < self.tf:
            raise DomainError(f"need t0 < tf, got [{self.t0}, {self.tf}]")
        if self.dt <= 0:
            raise DomainError(f"need dt > 0, got {self.dt}")
        k = (self.tf - self.t0) / self.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise DomainError(
                f"horizon length {self.tf - self.t0} is not an integer multiple of dt={self.dt}"
            )
        if round(k) < 2:
            raise DomainError("grid needs at least 2 cells")

    @property
    def n_cells(self) -> int:
        return int(round((self.tf - self.t0) / self.dt))

    def points(self) -> np.ndarray:
        """All K+1 grid points."""
        return self.t0 + self.dt * np.arange(self.n_cells + 1)

    def cell_starts(self) -> np.ndarray:
        """Left endpoints of the K cells (where step-function values live)."""
        return self.t0 + self.dt * np.arange(self.n_cells)

    def extended(self, extra_hours: float) -> "TimeGrid":
        """Same origin and dt, horizon lengthened by a whole number of cells."""
        n_extra = int(math.ceil(extra_hours / self.dt - 1e-12))
        return TimeGrid(self.t0, self.tf + n_extra * self.dt, self.dt)


@dataclass(frozen=True)
class ArcSpec:
    id: int
    tail: int
    head: int
    length: float  # miles
    free_speed: float  # mph
    jam_density: float  # vehicles/mile

    def __post_init__(self):
        if self.length <= 0:
            raise NetworkValidationError(f"arc {self.id}: length must be positive")
        if self.free_speed <= 0:
            raise NetworkValidationError(f"arc {self.id}: free speed must be positive")
        if self.jam_density <= 0:
            raise NetworkValidationError(f"arc {self.id}: jam density must be positive")

    @property
    def free_flow_time(self) -> float:
        return self.length / self.free_speed

    def diagram(self) -> "FundamentalDiagram":
        return FundamentalDiagram(self.free_speed, self.jam_density)


@dataclass(frozen=True)
class FundamentalDiagram:
    """Greenshields flow-density relation q = v0 * rho * (1 - rho/rho_jam).

    Concave on [0, rho_jam], zero at both ends, maximum M = v0*rho_jam/4
    at the critical density rho_jam/2.
    """

    v0: float
    rho_jam: float

    @property
    def capacity(self) -> float:
        return self.v0 * self.rho_jam / 4.0


def fd_flow(rho: float, fd: FundamentalDiagram) -> float:
    """Flow (veh/h) at density rho (veh/mile)."""
    if rho < 0 or rho > fd.rho_jam:
        raise DomainError(f"density {rho} outside [0, {fd.rho_jam}]")
    return fd.v0 * rho * (1.0 - rho / fd.rho_jam)


def fd_phi(u, fd: FundamentalDiagram):
    """Uncongested inverse branch: smallest density carrying flow u.

    Accepts scalars or arrays; u must lie in [0, capacity].
    """
    u = np.asarray(u, dtype=float)
    m = fd.capacity
    if np.any(u < 0) or np.any(u > m * (1 + 1e-12)):
        raise InfeasibleFlowError(f"flow outside [0, {m}]")
    ratio = np.clip(u / m, 0.0, 1.0)
    out = 0.5 * fd.rho_jam * (1.0 - np.sqrt(1.0 - ratio))
    return float(out) if out.ndim == 0 else out


def fd_psi(p, fd: FundamentalDiagram, method: str = "exact"):
    """Legendre transform of phi at pace p (hours/mile).

    psi(p) = sup_{u in [0, M]} { u*p - phi(u) }, in vehicles/mile.  For the
    Greenshields diagram this has the closed form rho_jam*(1-s)^2/(4s) with
    s = 1/(v0*p).  Paces faster than free flow (p < 1/v0) get the
    :data:`INFEASIBLE_PACE` sentinel.  ``method="grid"`` keeps the direct
    grid-supremum evaluation behind the same interface.
    """
    if method == "grid":
        return _psi_grid_sup(p, fd)
    p = np.asarray(p, dtype=float)
    s = 1.0 / (fd.v0 * np.maximum(p, 1e-300))
    feasible = p >= 1.0 / fd.v0 * (1 - 1e-12)
    s = np.clip(s, 0.0, 1.0)
    val = fd.rho_jam * (1.0 - s) ** 2 / (4.0 * s)
    out = np.where(feasible, val, INFEASIBLE_PACE)
    return float(out) if out.ndim == 0 else out


def _psi_grid_sup(p, fd: FundamentalDiagram, n: int = 200_001):
    """Direct supremum over a dense flow grid; slow reference evaluation."""
    p = np.asarray(p, dtype=float)
    u = np.linspace(0.0, fd.capacity, n)
    phi_u = fd_phi(u, fd)
    vals = np.max(np.multiply.outer(p, u) - phi_u, axis=-1)
    out = np.where(p >= 1.0 / fd.v0 * (1 - 1e-12), np.maximum(vals, 0.0), INFEASIBLE_PACE)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PathSpec:
    id: str
    arcs: tuple  # ordered arc ids
    od: str

    def __post_init__(self):
        if not self.arcs:
            raise NetworkValidationError(f"path {self.id}: empty arc list")


@dataclass(frozen=True)
class ODPair:
    id: str
    origin: int
    destination: int
    demand: float  # vehicles over the whole horizon
    paths: tuple  # path ids

    def __post_init__(self):
        if self.demand < 0:
            raise DemandError(f"OD {self.id}: negative demand {self.demand}")
        if not self.paths:
            raise EmptyPathSetError(f"OD {self.id}: no paths")


@dataclass(frozen=True)
class Network:
    arcs: dict = field(default_factory=dict)  # arc id -> ArcSpec
    paths: dict = field(default_factory=dict)  # path id -> PathSpec
    ods: dict = field(default_factory=dict)  # od id -> ODPair
    nodes: frozenset = frozenset()

    @property
    def path_ids(self) -> tuple:
        return tuple(self.paths)

    def od_of_path(self, path_id: str) -> ODPair:
        return self.ods[self.paths[path_id].od]

    def path_free_flow_time(self, path_id: str) -> float:
        return sum(self.arcs[a].free_flow_time for a in self.paths[path_id].arcs)

    def uses_arc(self, path_id: str, arc_id) -> bool:
        return arc_id in self.paths[path_id].arcs


def validate_network(cfg: dict) -> Network:
    """Build a :class:`Network` from parsed scenario sections, checking all
    structural invariants.

    ``cfg`` holds lists of dicts under keys ``arcs``, ``paths`` and ``od``
    (the shapes produced by the scenario parser).  Raises a specific
    validation error for each kind of defect.
    """
    arcs = {}
    for a in cfg.get("arcs", []):
        spec = ArcSpec(
            id=a["id"],
            tail=a["tail"],
            head=a["head"],
            length=float(a["length"]),
            free_speed=float(a["free_speed"]),
            jam_density=float(a["jam_density"]),
        )
        if spec.id in arcs:
            raise NetworkValidationError(f"duplicate arc id {spec.id}")
        arcs[spec.id] = spec

    nodes = set()
    for a in arcs.values():
        nodes.add(a.tail)
        nodes.add(a.head)

    paths = {}
    for p in cfg.get("paths", []):
        pid = p["id"]
        arc_seq = tuple(p["arcs"])
        for aid in arc_seq:
            if aid not in arcs:
                raise DanglingArcError(f"path {pid}: unknown arc {aid}")
        for prev, nxt in zip(arc_seq, arc_seq[1:]):
            if arcs[prev].head != arcs[nxt].tail:
                raise AdjacencyError(
                    f"path {pid}: arc {prev} (head {arcs[prev].head}) does not "
                    f"connect to arc {nxt} (tail {arcs[nxt].tail})"
                )
        paths[pid] = PathSpec(id=pid, arcs=arc_seq, od=p["od"])

    ods = {}
    for od in cfg.get("od", []):
        oid = od["id"]
        demand = float(od["demand"])
        if demand < 0:
            raise DemandError(f"OD {oid}: negative demand {demand}")
        members = tuple(pid for pid in paths if paths[pid].od == oid)
        if not members:
            raise EmptyPathSetError(f"OD {oid}: no paths reference it")
        for pid in members:
            seq = paths[pid].arcs
            if arcs[seq[0]].tail != od["origin"]:
                raise AdjacencyError(
                    f"path {pid} does not start at origin {od['origin']} of OD {oid}"
                )
            if arcs[seq[-1]].head != od["destination"]:
                raise AdjacencyError(
                    f"path {pid} does not end at destination {od['destination']} of OD {oid}"
                )
        ods[oid] = ODPair(
            id=oid,
            origin=od["origin"],
            destination=od["destination"],
            demand=demand,
            paths=members,
        )

    for pid, p in paths.items():
        if p.od not in ods:
            raise NetworkValidationError(f"path {pid} references unknown OD {p.od}")

    return Network(arcs=arcs, paths=paths, ods=ods, nodes=frozenset(nodes))
