"""Second-best dynamic toll design as a mathematical program with
complementarity constraints.

The equilibrium conditions 0 <= h_p(t) perp c_p(t) >= 0, with
c_p(t) = Psi_p(t) + sum_a delta_ap Y_a(t) - mu_ij, are moved into the
objective through a quadratic penalty Q weighted by M.  The scalarized
objective

    S_u = alpha * (travel cost + Q) + beta * (emission + Q)
        = alpha * travel cost + beta * emission + Q     (alpha+beta = 1)

is minimized over (h, Y, mu) by projected gradient descent with finite
difference gradients, while M grows over a handful of outer rounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emissions import EmissionModel, path_emission, total_emission
from .equilibrium import (
    FixedPointParams,
    due_cost_matrix,
    fixed_point_solve,
    initial_profile,
    project_lambda,
    total_travel_cost,
)
from .errors import DomainError, NoDescentError, ProbeFailureError
from .flows import PathFlowProfile
from .loading import ArrivalPenaltyParams, effective_delay, load_network
from .network import Network, TimeGrid
from .reports import ComparisonReport
from .tolls import TollSchedule, path_toll_costs, zero_toll


@dataclass(frozen=True)
class Weights:
    """Scalarization weights: alpha on travel cost, beta on emission."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise DomainError("weights must be nonnegative")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise DomainError(f"weights must sum to 1, got {self.alpha + self.beta}")


@dataclass(frozen=True)
class PenaltySettings:
    m0: float = 10.0
    growth: float = 10.0
    rounds: int = 4

    def __post_init__(self):
        if self.m0 <= 0:
            raise DomainError("initial penalty weight must be positive")
        if self.growth <= 1:
            raise DomainError("penalty growth factor must exceed 1")
        if self.rounds < 1:
            raise DomainError("need at least one penalty round")


@dataclass
class Multipliers:
    """One multiplier per OD pair, in effective-delay units."""

    values: dict  # od id -> float

    def __post_init__(self):
        for oid, v in self.values.items():
            if not np.isfinite(v):
                raise DomainError(f"non-finite multiplier for OD {oid}")

    def vector(self, net: Network) -> np.ndarray:
        return np.array([self.values[oid] for oid in net.ods])

    @staticmethod
    def from_vector(vec: np.ndarray, net: Network) -> "Multipliers":
        return Multipliers({oid: float(v) for oid, v in zip(net.ods, vec)})


@dataclass
class MPCCState:
    h: PathFlowProfile
    toll: TollSchedule
    mu: Multipliers
    m: float
    history: list = field(default_factory=list)


def _mu_rows(h: PathFlowProfile, net: Network, mu: Multipliers) -> np.ndarray:
    """Broadcast mu_ij to path rows in profile order."""
    od_of = {pid: p.od for pid, p in net.paths.items()}
    return np.array([mu.values[od_of[pid]] for pid in h.paths])[:, None]


def complementarity_residuals(
    h: PathFlowProfile, psi: dict, tolls: dict, mu: Multipliers, net: Network
):
    """Pointwise defects of the equilibrium complementarity system.

    With c_p(t) = Psi_p(t) + toll_p(t) - mu_ij, returns
    r1 = c * h (perpendicularity defect) and r2 = max(-c, 0)
    (nonnegativity defect), both shaped like the rate matrix.
    """
    c = np.vstack([psi[p] + tolls[p] for p in h.paths]) - _mu_rows(h, net, mu)
    return c * h.rates, np.maximum(-c, 0.0)


def penalty_Q(
    h: PathFlowProfile, psi: dict, tolls: dict, mu: Multipliers, m: float,
    net: Network,
) -> float:
    """Quadratic complementarity penalty, left-endpoint quadrature."""
    if m <= 0:
        raise DomainError("penalty weight must be positive")
    r1, r2 = complementarity_residuals(h, psi, tolls, mu, net)
    return m * float((r1 ** 2).sum() + (r2 ** 2).sum()) * h.grid.dt


def residual_norm(h, psi, tolls, mu, net) -> float:
    """M-independent size of the complementarity defect (L2 over cells)."""
    r1, r2 = complementarity_residuals(h, psi, tolls, mu, net)
    return float(np.sqrt(((r1 ** 2).sum() + (r2 ** 2).sum()) * h.grid.dt))


@dataclass
class ObjectiveValue:
    total: float  # alpha * u1 + beta * u2
    travel_cost: float
    emission: float
    penalty: float

    @property
    def u1(self) -> float:
        return self.travel_cost + self.penalty

    @property
    def u2(self) -> float:
        return self.emission + self.penalty


def scalarized_objective(
    h: PathFlowProfile,
    toll: TollSchedule,
    mu: Multipliers,
    m: float,
    w: Weights,
    emission: EmissionModel,
    net: Network,
    grid: TimeGrid,
    pen: ArrivalPenaltyParams,
    toll_at_departure: bool = False,
    extension: float = 3.0,
) -> ObjectiveValue:
    """One full evaluation of the penalized weighted-sum objective."""
    dnl = load_network(h, net, grid, extension=extension)
    psi = effective_delay(dnl, pen)
    tolls = path_toll_costs(dnl, net, toll, at_departure=toll_at_departure)
    em = path_emission(dnl, net, emission)
    ttc = total_travel_cost(h, psi)
    te = total_emission(h, em, grid)
    q = penalty_Q(h, psi, tolls, mu, m, net)
    total = w.alpha * (ttc + q) + w.beta * (te + q)
    return ObjectiveValue(total=total, travel_cost=ttc, emission=te, penalty=q)


def _default_evaluator(state, w, emission, net, grid, pen, toll_at_departure, extension):
    """Pure objective over raw (h rates, toll values, mu vector) arrays.

    The network loading depends on h only; probes that vary toll or mu
    while passing the same rate array reuse the cached loading.
    """
    cache = {"key": None, "dnl": None, "psi": None, "em": None}

    def evaluate(h_rates: np.ndarray, toll_values: np.ndarray, mu_vec: np.ndarray) -> float:
        if cache["key"] is not h_rates:
            h = state.h.with_rates(h_rates)
            dnl = load_network(h, net, grid, extension=extension)
            cache.update(key=h_rates, dnl=dnl,
                         psi=effective_delay(dnl, pen),
                         em=path_emission(dnl, net, emission))
        h = state.h.with_rates(h_rates)
        toll = state.toll.with_values(toll_values)
        mu = Multipliers.from_vector(mu_vec, net)
        tolls = path_toll_costs(cache["dnl"], net, toll, at_departure=toll_at_departure)
        ttc = total_travel_cost(h, cache["psi"])
        te = total_emission(h, cache["em"], grid)
        q = penalty_Q(h, cache["psi"], tolls, mu, state.m, net)
        return w.alpha * ttc + w.beta * te + q

    return evaluate


def fd_gradient(
    state: MPCCState,
    w: Weights,
    emission: EmissionModel,
    net: Network,
    grid: TimeGrid,
    pen: ArrivalPenaltyParams,
    step_h: float = 1.0,
    step_y: float = 0.01,
    step_mu: float = 0.01,
    evaluator=None,
    toll_at_departure: bool = False,
    extension: float = 3.0,
) -> dict:
    """Finite-difference gradient of the scalarized objective over the
    (h, Y, mu) blocks.

    Central differences in the interior; one-sided at the h >= 0 and
    toll-box boundaries.  Probes are independent pure evaluations in a
    fixed coordinate order, so results are deterministic.  A non-finite
    objective at a probe point raises a probe-failure error naming the
    coordinate.
    """
    if min(step_h, step_y, step_mu) <= 0:
        raise DomainError("finite-difference steps must be positive")
    if evaluator is None:
        evaluator = _default_evaluator(
            state, w, emission, net, grid, pen, toll_at_departure, extension
        )

    h0 = state.h.rates
    y0 = state.toll.values
    mu0 = state.mu.vector(net)

    def probe(hr, yv, mv, coord):
        val = evaluator(hr, yv, mv)
        if not np.isfinite(val):
            raise ProbeFailureError(coord)
        return val

    base = None

    def base_val():
        nonlocal base
        if base is None:
            base = probe(h0, y0, mu0, ("base",))
        return base

    g_h = np.zeros_like(h0)
    for i in range(h0.shape[0]):
        for k in range(h0.shape[1]):
            x = h0[i, k]
            hp = h0.copy()
            hp[i, k] = x + step_h
            fp = probe(hp, y0, mu0, ("h", i, k))
            if x - step_h >= 0.0:
                hm = h0.copy()
                hm[i, k] = x - step_h
                fm = probe(hm, y0, mu0, ("h", i, k))
                g_h[i, k] = (fp - fm) / (2.0 * step_h)
            else:
                g_h[i, k] = (fp - base_val()) / step_h

    g_y = np.zeros_like(y0)
    ub = state.toll.y_ub
    for i in range(y0.shape[0]):
        for j in range(y0.shape[1]):
            x = y0[i, j]
            lo_ok = x - step_y >= 0.0
            hi_ok = x + step_y <= ub
            if not (lo_ok or hi_ok):
                continue  # box thinner than the probe step
            yp = y0.copy()
            ym = y0.copy()
            if lo_ok and hi_ok:
                yp[i, j] = x + step_y
                ym[i, j] = x - step_y
                fp = probe(h0, yp, mu0, ("y", i, j))
                fm = probe(h0, ym, mu0, ("y", i, j))
                g_y[i, j] = (fp - fm) / (2.0 * step_y)
            elif hi_ok:
                yp[i, j] = x + step_y
                g_y[i, j] = (probe(h0, yp, mu0, ("y", i, j)) - base_val()) / step_y
            else:
                ym[i, j] = x - step_y
                g_y[i, j] = (base_val() - probe(h0, ym, mu0, ("y", i, j))) / step_y

    g_mu = np.zeros_like(mu0)
    for i in range(len(mu0)):
        mp = mu0.copy()
        mm = mu0.copy()
        mp[i] += step_mu
        mm[i] -= step_mu
        fp = probe(h0, y0, mp, ("mu", i))
        fm = probe(h0, y0, mm, ("mu", i))
        g_mu[i] = (fp - fm) / (2.0 * step_mu)

    return {"h": g_h, "y": g_y, "mu": g_mu}


def evaluate_toll(scenario, toll: TollSchedule | None):
    """Equilibrium objective totals under a fixed toll: solves the DUE
    with the toll in the cost operator, then totals cost and emission."""
    net, grid = scenario.net, scenario.grid
    h0 = initial_profile(net, grid, window=scenario.solver["depart_window"])
    h, rep = fixed_point_solve(
        net, grid, toll, scenario.penalty, scenario.fixed_point, h0,
        toll_at_departure=scenario.solver["toll_at_departure"],
        extension=scenario.solver["extension"],
        audit_tol=scenario.solver["audit_tol"],
    )
    dnl, psi, _ = due_cost_matrix(
        h, net, grid, toll, scenario.penalty,
        toll_at_departure=scenario.solver["toll_at_departure"],
        extension=scenario.solver["extension"],
    )
    em = path_emission(dnl, net, scenario.emission)
    return total_travel_cost(h, psi), total_emission(h, em, grid), rep, h


def _grad_norms(grad: dict) -> dict:
    return {k: float(np.sqrt((g ** 2).sum())) for k, g in grad.items()}


def gradient_projection_solve(
    scenario,
    w: Weights | None = None,
    pen_settings: PenaltySettings | None = None,
    inner_iters: int | None = None,
    mode: str | None = None,
    progress=None,
):
    """Penalty-continuation projected gradient descent for the toll
    design problem.

    Outer rounds sweep M = M0 * growth**r.  Inner iterations move all
    three blocks, projecting h onto the demand-feasible set, clipping Y
    to its box and leaving mu free; a step is accepted only if it
    strictly decreases the objective (backtracking halves the step until
    it does or the attempt budget runs out).  Returns the final state
    and a comparison of equilibrium objectives with and without the
    optimized toll.
    """
    cfg = scenario.toll
    arcs = tuple(cfg["arcs"])
    if not arcs:
        raise DomainError("scenario defines no tolled arcs")
    net, grid = scenario.net, scenario.grid
    if w is None:
        w = Weights(*cfg["weights"])
    if pen_settings is None:
        pen_settings = PenaltySettings(
            cfg["penalty_m0"], cfg["penalty_growth"], cfg["penalty_rounds"]
        )
    if inner_iters is None:
        inner_iters = int(cfg["inner_iters"])
    if mode is None:
        mode = cfg["mode"]
    if mode not in ("joint", "bilevel"):
        raise DomainError(f"unknown optimizer mode {mode!r}")

    base_cost, base_em, base_rep, h_base = evaluate_toll(scenario, None)
    toll0 = zero_toll(grid, arcs, cfg["y_ub"], cfg["control_dt"])
    mu0 = Multipliers(dict(base_rep.v_ij))
    state = MPCCState(h=h_base, toll=toll0, mu=mu0, m=pen_settings.m0, history=[])

    if cfg["y_ub"] > 0:
        if mode == "joint":
            _joint_descent(state, scenario, w, pen_settings, inner_iters, progress)
        else:
            _bilevel_descent(state, scenario, w, inner_iters, progress)

    rows = [("due no toll", base_cost, base_em)]
    if state.toll.is_zero():
        # nothing to re-solve; the rows coincide by construction
        rows.append(("due optimized toll", base_cost, base_em))
        toll_rep = base_rep
        h_toll = h_base
    else:
        cost, em, toll_rep, h_toll = evaluate_toll(scenario, state.toll)
        rows.append(("due optimized toll", cost, em))
    report = ComparisonReport((w.alpha, w.beta), rows)
    return state, report, {"no_toll": (h_base, base_rep), "with_toll": (h_toll, toll_rep)}


def _joint_descent(state, scenario, w, pen_settings, inner_iters, progress):
    cfg = scenario.toll
    net, grid = scenario.net, scenario.grid
    step0 = np.array([cfg["step_h"], cfg["step_y"], cfg["step_mu"]])
    max_bt = int(cfg["max_backtracks"])
    y_ub = state.toll.y_ub

    for r in range(pen_settings.rounds):
        state.m = pen_settings.m0 * pen_settings.growth ** r
        evaluator = _default_evaluator(
            state, w, scenario.emission, net, grid, scenario.penalty,
            scenario.solver["toll_at_departure"], scenario.solver["extension"],
        )
        mu_vec = state.mu.vector(net)
        obj = evaluator(state.h.rates, state.toll.values, mu_vec)
        accepted = 0
        grad = None
        for _ in range(inner_iters):
            grad = fd_gradient(
                state, w, scenario.emission, net, grid, scenario.penalty,
                step_h=cfg["fd_step_h"], step_y=cfg["fd_step_y"],
                step_mu=cfg["fd_step_mu"],
                toll_at_departure=scenario.solver["toll_at_departure"],
                extension=scenario.solver["extension"],
            )
            # steps are calibrated so the first trial moves each block by
            # at most its configured amount, whatever the gradient scale
            t_h = step0[0] / max(np.abs(grad["h"]).max(), 1e-12)
            t_y = step0[1] / max(np.abs(grad["y"]).max(), 1e-12)
            t_mu = step0[2] / max(np.abs(grad["mu"]).max(), 1e-12)
            moved = False
            fac = 1.0
            for _bt in range(max_bt + 1):
                h_new = project_lambda(
                    state.h.rates - fac * t_h * grad["h"], state.h.paths, net, grid
                )
                y_new = np.clip(state.toll.values - fac * t_y * grad["y"], 0.0, y_ub)
                mu_new = mu_vec - fac * t_mu * grad["mu"]
                val = evaluator(h_new.rates, y_new, mu_new)
                if val < obj:
                    state.h = h_new
                    state.toll = state.toll.with_values(y_new)
                    mu_vec = mu_new
                    state.mu = Multipliers.from_vector(mu_vec, net)
                    obj = val
                    moved = True
                    accepted += 1
                    break
                fac *= 0.5
            if not moved:
                break
        if r == 0 and accepted == 0:
            norms = _grad_norms(grad) if grad is not None else {}
            if norms and max(norms.values()) > 1e-9:
                raise NoDescentError(
                    "no descent in the first penalty round; "
                    f"gradient norms {norms}"
                )
        dnl = load_network(state.h, net, grid, extension=scenario.solver["extension"])
        psi = effective_delay(dnl, scenario.penalty)
        tolls = path_toll_costs(
            dnl, net, state.toll, at_departure=scenario.solver["toll_at_departure"]
        )
        rnorm = residual_norm(state.h, psi, tolls, state.mu, net)
        state.history.append(
            {"round": r, "M": state.m, "objective": obj,
             "residual_norm": rnorm, "accepted_steps": accepted}
        )
        if progress is not None:
            progress(state.history[-1])


def _bilevel_descent(state, scenario, w, inner_iters, progress):
    """Validation mode: treat the equilibrium map as a black box in Y
    and descend the equilibrium objective by finite differences on the
    toll values alone.  Expensive (each probe is a DUE solve)."""
    cfg = scenario.toll
    y_ub = state.toll.y_ub
    step = cfg["step_y"]
    fd = cfg["fd_step_y"]
    max_bt = int(cfg["max_backtracks"])

    def objective(values):
        toll = state.toll.with_values(values)
        cost, em, _rep, _h = evaluate_toll(scenario, toll)
        return w.alpha * cost + w.beta * em

    y = state.toll.values
    obj = objective(y)
    accepted = 0
    for it in range(inner_iters):
        g = np.zeros_like(y)
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                x = y[i, j]
                if x + fd <= y_ub:
                    yp = y.copy()
                    yp[i, j] = x + fd
                    g[i, j] = (objective(yp) - obj) / fd
                elif x - fd >= 0.0:
                    ym = y.copy()
                    ym[i, j] = x - fd
                    g[i, j] = (obj - objective(ym)) / fd
        t_y = step / max(np.abs(g).max(), 1e-12)
        moved = False
        fac = 1.0
        for _bt in range(max_bt + 1):
            y_new = np.clip(y - fac * t_y * g, 0.0, y_ub)
            if np.allclose(y_new, y):
                break
            val = objective(y_new)
            if val < obj:
                y, obj = y_new, val
                moved = True
                accepted += 1
                break
            fac *= 0.5
        if not moved:
            break
    state.toll = state.toll.with_values(y)
    state.history.append(
        {"round": 0, "M": 0.0, "objective": obj, "residual_norm": 0.0,
         "accepted_steps": accepted}
    )
    if progress is not None:
        progress(state.history[-1])
