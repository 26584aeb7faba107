"""Dynamic network loading via cumulative curves and the variational
(Lax-Hopf) representation of arc exit flows.

Given path departure rates, arcs are swept in topological order: entry
curves accumulate from upstream exits, each arc's exit curve is the
pointwise minimum over entry candidates shifted by the diagram's Legendre
transform, the flow-propagation relation is inverted for arc travel
times, and per-path exit curves follow from FIFO disaggregation.

Loading runs on an internally extended grid so that vehicles departing
near the end of the planning horizon can clear the network; rates,
delays and costs exposed to the solvers live on the base grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonOverflowError, NetworkValidationError
from .flows import PathFlowProfile
from .network import ArcSpec, FundamentalDiagram, Network, TimeGrid, fd_psi

# Slack (vehicles, relative to arc throughput) below which an arc counts
# as cleared at the end of the extended horizon.
_CLEAR_RTOL = 1e-9


@dataclass(frozen=True)
class CumulativeCurve:
    """Nondecreasing piecewise-linear cumulative vehicle count."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_cells + 1,):
            raise ValueError(f"need {self.grid.n_cells + 1} values, got {v.shape}")
        scale = max(1.0, float(v[-1]))
        if abs(v[0]) > 1e-9 * scale:
            raise ValueError("cumulative curve must start at 0")
        if np.any(np.diff(v) < -1e-9 * scale):
            raise ValueError("cumulative curve must be nondecreasing")
        object.__setattr__(self, "values", v)

    def value_at(self, t) -> float:
        return np.interp(t, self.grid.points(), self.values)


@dataclass(frozen=True)
class ArrivalPenaltyParams:
    """Vickrey-style asymmetric piecewise-linear arrival penalty."""

    desired_arrival: float = 9.5
    early_rate: float = 0.6
    late_rate: float = 2.4

    def __post_init__(self):
        if self.early_rate < 0 or self.late_rate < 0:
            raise ValueError("penalty rates must be nonnegative")


@dataclass
class ArcState:
    """Loading results for one arc on the extended grid."""

    arc: ArcSpec
    grid: TimeGrid
    entry_curves: dict  # path id -> values on grid points
    exit_curves: dict  # path id -> values on grid points
    entry_total: np.ndarray
    exit_total: np.ndarray
    delay: np.ndarray  # D(t; Q) at each grid point

    def entry_rate(self, path_id: str) -> np.ndarray:
        return np.diff(self.entry_curves[path_id]) / self.grid.dt

    def exit_rate(self, path_id: str) -> np.ndarray:
        return np.diff(self.exit_curves[path_id]) / self.grid.dt


@dataclass
class DNLResult:
    """Complete output of one network loading."""

    net: Network
    grid: TimeGrid  # base grid (departure cells)
    ext_grid: TimeGrid
    arc_states: dict  # arc id -> ArcState
    trajectories: dict  # path id -> (m+1, K) array of cumulative exit times
    delays: dict  # path id -> (K,) array of D_p at departure cell starts
    vehicles_on_network_at_tf: float = 0.0

    def free_flow_time(self, path_id: str) -> float:
        return self.net.path_free_flow_time(path_id)


def lax_hopf_exit(Q: CumulativeCurve, arc: ArcSpec, fd: FundamentalDiagram) -> CumulativeCurve:
    """Exit curve W(t) = min over entry candidates tau of
    Q(tau) + L * psi((t - tau)/L).

    Candidates are the grid points tau <= t - L/v0 plus the exact
    free-flow candidate tau = t - L/v0 (off-grid, Q interpolated), which
    keeps W(t) <= Q(t - L/v0) exact and W identically zero on an empty
    arc.  An empty candidate set (early t) yields W(t) = 0.
    """
    w = _exit_curve_values(Q.values, Q.grid, arc, fd)
    return CumulativeCurve(Q.grid, w)


def _exit_curve_values(
    qv: np.ndarray, grid: TimeGrid, arc: ArcSpec, fd: FundamentalDiagram
) -> np.ndarray:
    n = grid.n_cells
    dt = grid.dt
    length = arc.length
    ff = arc.free_flow_time

    lag_min = int(np.ceil(ff / dt - 1e-9))
    w = np.full(n + 1, np.inf)

    if lag_min <= n:
        lags = np.arange(lag_min, n + 1)
        costs = length * fd_psi(lags * dt / length, fd)
        for lag, c in zip(lags, costs):
            np.minimum(w[lag:], qv[: n + 1 - lag] + c, out=w[lag:])

    # exact free-flow candidate (psi = 0 at the free-flow pace)
    tpts = grid.points()
    tau_ff = tpts - ff
    has_ff = tau_ff >= grid.t0 - 1e-12
    q_ff = np.interp(tau_ff, tpts, qv)
    w = np.where(has_ff, np.minimum(w, q_ff), w)

    w[~np.isfinite(w)] = 0.0
    np.maximum(w, 0.0, out=w)
    # guard against float dust; mathematically W is already nondecreasing
    np.maximum.accumulate(w, out=w)
    return w


def arc_travel_time(Q: CumulativeCurve, W: CumulativeCurve, t: float, arc: ArcSpec) -> float:
    """Travel time of the vehicle entering at t: smallest s - t with
    s >= t + L/v0 and W(s) = Q(t), flat segments resolved to the earliest
    crossing."""
    target = Q.value_at(t)
    tol = _CLEAR_RTOL * max(1.0, float(W.values[-1]))
    if target > W.values[-1] + tol:
        raise HorizonOverflowError(arc.id, t)
    s = _first_crossing(W.values, W.grid, np.asarray([target]))[0]
    s = max(s, t + arc.free_flow_time)
    return s - t


def _first_crossing(wv: np.ndarray, grid: TimeGrid, targets: np.ndarray) -> np.ndarray:
    """Earliest grid-interpolated time at which wv reaches each target.

    Targets above wv[-1] clamp to the final grid point; callers check
    clearance separately."""
    tpts = grid.points()
    idx = np.searchsorted(wv, np.minimum(targets, wv[-1]), side="left")
    idx = np.clip(idx, 0, len(wv) - 1)
    s = np.empty_like(targets, dtype=float)
    at_start = idx == 0
    s[at_start] = tpts[0]
    inner = ~at_start
    i = idx[inner]
    denom = wv[i] - wv[i - 1]
    frac = np.where(denom > 0, (targets[inner] - wv[i - 1]) / np.where(denom > 0, denom, 1.0), 1.0)
    s[inner] = tpts[i - 1] + np.clip(frac, 0.0, 1.0) * grid.dt
    return s


def _arc_delays(
    qv: np.ndarray, wv: np.ndarray, grid: TimeGrid, arc: ArcSpec
) -> np.ndarray:
    """Vectorized travel time at every grid entry point."""
    tpts = grid.points()
    s = _first_crossing(wv, grid, qv)
    s = np.maximum(s, tpts + arc.free_flow_time)
    return s - tpts


def diverge_split(qp: np.ndarray, w_total: float) -> np.ndarray:
    """Split an aggregate exit rate across paths in proportion to their
    entry rates; zero aggregate entry gives all-zero exits."""
    qp = np.asarray(qp, dtype=float)
    total = qp.sum()
    if total <= 0:
        return np.zeros_like(qp)
    return qp / total * w_total


def _topological_arc_order(net: Network) -> list:
    """Arcs ordered so every upstream arc of every path comes first."""
    indeg = {n: 0 for n in net.nodes}
    for a in net.arcs.values():
        indeg[a.head] += 1
    queue = [n for n, d in sorted(indeg.items(), key=lambda kv: repr(kv[0])) if d == 0]
    order = []
    seen = set()
    while queue:
        node = queue.pop(0)
        seen.add(node)
        for aid in sorted(net.arcs, key=repr):
            a = net.arcs[aid]
            if a.tail == node:
                order.append(aid)
                indeg[a.head] -= 1
                if indeg[a.head] == 0 and a.head not in seen:
                    queue.append(a.head)
    if len(order) != len(net.arcs):
        raise NetworkValidationError("network graph has a directed cycle")
    return order


def load_network(
    h: PathFlowProfile,
    net: Network,
    grid: TimeGrid,
    extension: float = 3.0,
    max_extension_doublings: int = 3,
) -> DNLResult:
    """Advance the loading recursion over all arcs and paths.

    The loading grid extends ``extension`` hours past tf so late
    departures can clear; if any arc still holds vehicles at the extended
    end, the extension is doubled a few times before a horizon-overflow
    error is raised.  The returned delays and trajectories are sampled at
    the base-grid departure cell starts.
    """
    if np.any(h.rates < 0):
        raise ValueError("departure rates must be nonnegative")
    if h.grid != grid:
        raise ValueError("profile grid differs from loading grid")

    ext = extension
    last_err = None
    for _ in range(max_extension_doublings + 1):
        try:
            return _load_once(h, net, grid, ext)
        except HorizonOverflowError as err:
            last_err = err
            ext *= 2.0
    raise last_err


def _load_once(h: PathFlowProfile, net: Network, grid: TimeGrid, extension: float) -> DNLResult:
    ext_grid = grid.extended(extension)
    ke = ext_grid.n_cells
    k = grid.n_cells
    dt = grid.dt
    tpts = ext_grid.points()

    # entry rates pending for the next arc of each path, on the extended grid
    pending = {}
    for i, pid in enumerate(h.paths):
        row = np.zeros(ke)
        row[:k] = h.rates[i]
        pending[pid] = row

    arcs_of_path = {pid: net.paths[pid].arcs for pid in h.paths}
    position = {pid: 0 for pid in h.paths}

    arc_states = {}
    for aid in _topological_arc_order(net):
        arc = net.arcs[aid]
        fd = arc.diagram()
        on_arc = [pid for pid in h.paths if position[pid] < len(arcs_of_path[pid])
                  and arcs_of_path[pid][position[pid]] == aid]
        if not on_arc:
            # arc carries no path flow at this sweep position
            zeros = np.zeros(ke + 1)
            arc_states[aid] = ArcState(
                arc, ext_grid, {}, {}, zeros, zeros.copy(),
                np.full(ke + 1, arc.free_flow_time),
            )
            continue

        entry_curves = {}
        q_total = np.zeros(ke + 1)
        for pid in on_arc:
            qp = np.concatenate(([0.0], np.cumsum(pending[pid]) * dt))
            entry_curves[pid] = qp
            q_total += qp

        w_total = _exit_curve_values(q_total, ext_grid, arc, fd)

        tol = _CLEAR_RTOL * max(1.0, q_total[-1])
        if q_total[-1] > w_total[-1] + tol:
            stuck = np.searchsorted(q_total, w_total[-1] + tol, side="right") - 1
            raise HorizonOverflowError(aid, float(tpts[max(stuck, 0)]))

        delay = _arc_delays(q_total, w_total, ext_grid, arc)
        exit_times = tpts + delay

        # FIFO disaggregation: the per-path exit curve re-indexes the
        # per-path entry curve by aggregate exit time (integrated form of
        # the proportional diverge rule)
        exit_curves = {}
        for pid in on_arc:
            wp = np.interp(tpts, exit_times, entry_curves[pid],
                           left=0.0, right=entry_curves[pid][-1])
            wp = np.maximum.accumulate(np.maximum(wp, 0.0))
            exit_curves[pid] = wp
            pending[pid] = np.diff(wp) / dt
            position[pid] += 1

        arc_states[aid] = ArcState(
            arc, ext_grid, entry_curves, exit_curves, q_total, w_total, delay
        )

    # path trajectories at base-grid departure cell starts
    dep = grid.cell_starts()
    trajectories = {}
    delays = {}
    for pid in h.paths:
        rows = [dep]
        tau = dep.astype(float)
        for aid in arcs_of_path[pid]:
            st = arc_states[aid]
            tau = tau + np.interp(tau, tpts, st.delay)
            rows.append(tau)
        trajectories[pid] = np.vstack(rows)
        delays[pid] = tau - dep

    # vehicles still on the network at the end of the planning horizon
    k_tf = grid.n_cells
    leftover = 0.0
    for aid, st in arc_states.items():
        if st.entry_curves:
            leftover += float(st.entry_total[k_tf] - st.exit_total[k_tf])

    return DNLResult(
        net=net,
        grid=grid,
        ext_grid=ext_grid,
        arc_states=arc_states,
        trajectories=trajectories,
        delays=delays,
        vehicles_on_network_at_tf=leftover,
    )


def effective_delay(dnl: DNLResult, pen: ArrivalPenaltyParams) -> dict:
    """Effective unit path cost: travel time plus early/late arrival
    penalty, per path at each departure cell start."""
    dep = dnl.grid.cell_starts()
    out = {}
    for pid, d in dnl.delays.items():
        arrival = dep + d
        early = np.maximum(pen.desired_arrival - arrival, 0.0)
        late = np.maximum(arrival - pen.desired_arrival, 0.0)
        out[pid] = d + pen.early_rate * early + pen.late_rate * late
    return out
