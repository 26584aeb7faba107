"""Simultaneous route-and-departure-choice user equilibrium via the
projected fixed-point iteration h <- P[h - alpha * (effective cost)].

The projection onto the demand-feasible set decomposes per OD pair into
a Euclidean projection onto a scaled simplex, computed by bisection on
the uniform shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProjectionError, StepSizeError
from .flows import PathFlowProfile
from .loading import ArrivalPenaltyParams, DNLResult, effective_delay, load_network
from .network import Network, TimeGrid
from .tolls import TollSchedule, path_toll_costs

_MASS_RTOL = 1e-10


@dataclass(frozen=True)
class FixedPointParams:
    """Step size (hours of cost per unit of flow shift), iteration budget
    and stopping tolerance on the relative fixed-point residual."""

    alpha: float = 300.0
    max_iters: int = 500
    residual_tol: float = 1e-3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")


@dataclass
class AuditReport:
    v_ij: dict  # od id -> minimum effective cost over (path, cell)
    violating_mass_fraction: float
    n_violating_cells: int
    tol: float


@dataclass
class DUEReport:
    iterations: int
    residual: float
    relative_residual: float
    converged: bool
    alpha_final: float
    v_ij: dict
    merit_gap: float
    total_travel_cost: float
    audit: AuditReport
    residual_history: list = field(default_factory=list)


def _project_block(v: np.ndarray, target_mass: float, dt: float) -> np.ndarray:
    """Euclidean projection of a flat block onto
    {x >= 0, dt * sum(x) = target_mass} by bisection on the shift."""
    if target_mass <= 0:
        return np.zeros_like(v)
    lo = float(v.min()) - target_mass / (dt * v.size) - 1.0
    hi = float(v.max())
    tol = _MASS_RTOL * max(target_mass, 1.0)
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        mass = dt * np.maximum(v - lam, 0.0).sum()
        if abs(mass - target_mass) <= tol:
            break
        if mass > target_mass:
            lo = lam
        else:
            hi = lam
    out = np.maximum(v - lam, 0.0)
    # piecewise-linear exactness: rescale the active set to land on the
    # constraint exactly despite finite bisection depth
    s = out.sum() * dt
    if s > 0:
        out *= target_mass / s
    return out


def project_lambda(
    v: np.ndarray, paths: tuple, net: Network, grid: TimeGrid
) -> PathFlowProfile:
    """Minimum-norm projection of an unconstrained per-path/cell vector
    onto the demand-feasible set, independently per OD pair."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    for od in net.ods.values():
        rows = [paths.index(p) for p in od.paths]
        if od.demand > 0 and not rows:
            raise InfeasibleProjectionError(f"OD {od.id}: demand with no paths")
        block = v[rows].ravel()
        out[rows] = _project_block(block, od.demand, grid.dt).reshape(len(rows), -1)
    return PathFlowProfile(paths, grid, out)


def initial_profile(
    net: Network, grid: TimeGrid, window: tuple | None = None
) -> PathFlowProfile:
    """Uniform start: each OD spreads its demand evenly over its paths
    and a centered departure window (middle half of the horizon unless
    overridden)."""
    if window is None:
        span = grid.tf - grid.t0
        window = (grid.t0 + 0.25 * span, grid.t0 + 0.75 * span)
    starts = grid.cell_starts()
    mask = (starts >= window[0] - 1e-12) & (starts < window[1] - 1e-12)
    if not mask.any():
        mask[:] = True
    paths = tuple(net.paths)
    rates = np.zeros((len(paths), grid.n_cells))
    for od in net.ods.values():
        rate = od.demand / (len(od.paths) * mask.sum() * grid.dt)
        for pid in od.paths:
            rates[paths.index(pid), mask] = rate
    return PathFlowProfile(paths, grid, rates)


def due_cost_matrix(
    h: PathFlowProfile,
    net: Network,
    grid: TimeGrid,
    toll: TollSchedule | None,
    pen: ArrivalPenaltyParams,
    toll_at_departure: bool = False,
    extension: float = 3.0,
):
    """One loading pass: returns (dnl, psi dict, full cost matrix
    psi + toll-on-path) with rows in profile path order."""
    dnl = load_network(h, net, grid, extension=extension)
    psi = effective_delay(dnl, pen)
    tolls = path_toll_costs(dnl, net, toll, at_departure=toll_at_departure)
    cost = np.vstack([psi[p] + tolls[p] for p in h.paths])
    return dnl, psi, cost


def equilibrium_audit(
    h: PathFlowProfile,
    cost: np.ndarray,
    net: Network,
    tol: float = 0.05,
    flow_eps: float = 1e-6,
) -> AuditReport:
    """Flag flow-carrying cells whose effective cost exceeds the OD
    minimum by more than the relative tolerance; report the violating
    share of total flow mass."""
    v_ij = {}
    violating = 0.0
    total = float(h.rates.sum()) * h.grid.dt
    n_bad = 0
    for od in net.ods.values():
        rows = [h.paths.index(p) for p in od.paths]
        block_cost = cost[rows]
        block_flow = h.rates[rows]
        v = float(block_cost.min())
        v_ij[od.id] = v
        bad = (block_flow > flow_eps) & (block_cost > v * (1.0 + tol))
        violating += float(block_flow[bad].sum()) * h.grid.dt
        n_bad += int(bad.sum())
    frac = violating / total if total > 0 else 0.0
    return AuditReport(v_ij=v_ij, violating_mass_fraction=frac,
                       n_violating_cells=n_bad, tol=tol)


def total_travel_cost(h: PathFlowProfile, psi: dict) -> float:
    """Total effective delay: sum_p sum_k Psi_p(t_k) * h_p(t_k) * dt."""
    total = 0.0
    for i, pid in enumerate(h.paths):
        total += float(np.dot(h.rates[i], psi[pid]))
    return total * h.grid.dt


def fixed_point_solve(
    net: Network,
    grid: TimeGrid,
    toll: TollSchedule | None,
    pen: ArrivalPenaltyParams,
    params: FixedPointParams,
    h0: PathFlowProfile,
    toll_at_departure: bool = False,
    extension: float = 3.0,
    audit_tol: float = 0.05,
    max_halvings: int = 12,
):
    """Iterate the projected fixed-point map until the relative residual
    drops below tolerance or the iteration budget runs out.

    The step size is halved whenever the residual blows up by 10x over
    its recent best (divergence guard); a step-size error is raised only
    if repeated halving cannot restore progress.
    """
    h = h0
    alpha = params.alpha
    halvings = 0
    history = []
    best_recent = np.inf
    dnl, psi, cost = due_cost_matrix(
        h, net, grid, toll, pen, toll_at_departure=toll_at_departure, extension=extension
    )
    iterations = 0
    rel = np.inf
    res = np.inf
    for iterations in range(1, params.max_iters + 1):
        h_next = project_lambda(h.rates - alpha * cost, h.paths, net, grid)
        diff = h_next.rates - h.rates
        res = float(np.sqrt((diff ** 2).sum() * grid.dt))
        norm = float(np.sqrt((h.rates ** 2).sum() * grid.dt))
        rel = res / max(norm, 1e-30)
        history.append(rel)

        if rel <= params.residual_tol:
            h = h_next
            break

        window = history[-20:]
        best_recent = min(window)
        if rel > 10.0 * best_recent and len(window) >= 5:
            halvings += 1
            if halvings > max_halvings:
                raise StepSizeError(
                    f"fixed-point iteration diverged (residual {rel:.3e}); "
                    f"try a step size below {alpha / 2:.3g}"
                )
            alpha *= 0.5
            history.clear()

        h = h_next
        dnl, psi, cost = due_cost_matrix(
            h, net, grid, toll, pen, toll_at_departure=toll_at_departure,
            extension=extension,
        )

    # final evaluation at the returned iterate
    dnl, psi, cost = due_cost_matrix(
        h, net, grid, toll, pen, toll_at_departure=toll_at_departure, extension=extension
    )
    h_chk = project_lambda(h.rates - alpha * cost, h.paths, net, grid)
    diff = h_chk.rates - h.rates
    res = float(np.sqrt((diff ** 2).sum() * grid.dt))
    norm = float(np.sqrt((h.rates ** 2).sum() * grid.dt))
    rel = res / max(norm, 1e-30)
    audit = equilibrium_audit(h, cost, net, tol=audit_tol)
    merit = 0.0
    for od in net.ods.values():
        rows = [h.paths.index(p) for p in od.paths]
        merit += float(((cost[rows] - audit.v_ij[od.id]) * h.rates[rows]).sum()) * grid.dt
    report = DUEReport(
        iterations=iterations,
        residual=res,
        relative_residual=rel,
        converged=rel <= params.residual_tol,
        alpha_final=alpha,
        v_ij=audit.v_ij,
        merit_gap=merit,
        total_travel_cost=total_travel_cost(h, psi),
        audit=audit,
        residual_history=history,
    )
    return h, report
