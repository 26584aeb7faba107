"""Scenario files: TOML documents with sections [units], [horizon],
[arcs], [paths], [od], [emission], [solver] and [toll].

All solver arithmetic runs in miles / hours / vehicles; the [units]
section must declare exactly those (the validator rejects anything
else).  Emission models calibrated in km-based units declare so in
[emission] and are converted internally.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .emissions import EMFAC, KENT_MUDFORD, ROSE, EmissionModel
from .errors import ScenarioParseError, UnitError
from .loading import ArrivalPenaltyParams
from .network import Network, TimeGrid, validate_network
from .equilibrium import FixedPointParams

REQUIRED_UNITS = {"distance": "miles", "time": "hours", "speed": "mph"}

SOLVER_DEFAULTS = {
    "alpha": 300.0,
    "max_iters": 500,
    "residual_tol": 1e-3,
    "desired_arrival": 9.5,
    "early_penalty": 0.6,
    "late_penalty": 2.4,
    "extension": 3.0,
    "toll_at_departure": False,
    "audit_tol": 0.05,
    "depart_window": None,
}

TOLL_DEFAULTS = {
    "arcs": [],
    "y_ub": 0.0,
    "control_dt": 0.5,
    "weights": [0.5, 0.5],
    "penalty_m0": 10.0,
    "penalty_growth": 10.0,
    "penalty_rounds": 4,
    "inner_iters": 15,
    "step_h": 50.0,
    "step_y": 0.5,
    "step_mu": 0.05,
    "fd_step_h": 1.0,
    "fd_step_y": 0.01,
    "fd_step_mu": 0.01,
    "max_backtracks": 12,
    "mode": "joint",
}

EMISSION_UNIT_RULES = {
    EMFAC: {"speed_units": "mph", "output_units": "g/mile"},
    ROSE: {"speed_units": "km/h", "output_units": "lb/km"},
    KENT_MUDFORD: {"speed_units": "km/h", "output_units": "g/km"},
}


@dataclass
class Scenario:
    name: str
    net: Network
    grid: TimeGrid
    emission: EmissionModel
    penalty: ArrivalPenaltyParams
    fixed_point: FixedPointParams
    solver: dict
    toll: dict
    resolved: dict = field(default_factory=dict)

    def with_dt(self, dt: float) -> "Scenario":
        out = copy.deepcopy(self)
        out.grid = TimeGrid(self.grid.t0, self.grid.tf, dt)
        out.resolved["horizon"]["dt"] = dt
        return out


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ScenarioParseError(f"missing [{name}] section")
    return doc[name]


def _merged(defaults: dict, given: dict, section: str) -> dict:
    out = dict(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ScenarioParseError(f"unknown key {key!r} in [{section}]")
        out[key] = val
    return out


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    units = _section(doc, "units")
    for key, want in REQUIRED_UNITS.items():
        got = units.get(key)
        if got != want:
            raise UnitError(f"[units] {key} must be {want!r}, got {got!r}")

    hz = _section(doc, "horizon")
    try:
        grid = TimeGrid(float(hz["t0"]), float(hz["tf"]), float(hz["dt"]))
    except KeyError as err:
        raise ScenarioParseError(f"[horizon] missing field {err}") from err

    for sec in ("arcs", "paths", "od"):
        if sec not in doc:
            raise ScenarioParseError(f"missing [[{sec}]] entries")
    net = validate_network({"arcs": doc["arcs"], "paths": doc["paths"], "od": doc["od"]})

    em = _section(doc, "emission")
    variant = em.get("model", EMFAC)
    rules = EMISSION_UNIT_RULES.get(variant)
    if rules is None:
        raise ScenarioParseError(f"unknown emission model {variant!r}")
    for key, want in rules.items():
        got = em.get(key, want)
        if got != want:
            raise UnitError(
                f"[emission] {key} for model {variant!r} must be {want!r}, got {got!r}"
            )
    emission = EmissionModel(
        variant,
        b1=float(em.get("b1", 0.0)),
        b2=float(em.get("b2", 0.0)),
        ber=float(em.get("ber", 0.0)),
    )

    solver = _merged(SOLVER_DEFAULTS, doc.get("solver", {}), "solver")
    penalty = ArrivalPenaltyParams(
        desired_arrival=float(solver["desired_arrival"]),
        early_rate=float(solver["early_penalty"]),
        late_rate=float(solver["late_penalty"]),
    )
    fixed_point = FixedPointParams(
        alpha=float(solver["alpha"]),
        max_iters=int(solver["max_iters"]),
        residual_tol=float(solver["residual_tol"]),
    )

    toll = _merged(TOLL_DEFAULTS, doc.get("toll", {}), "toll")
    weights = list(toll["weights"])
    if len(weights) != 2 or min(weights) < 0:
        raise ScenarioParseError("[toll] weights must be two nonnegative numbers")
    s = sum(weights)
    if abs(s - 1.0) > 5e-3:
        raise ScenarioParseError(f"[toll] weights must sum to 1 (got {s})")
    # published weight pairs are often rounded to 4 digits; normalize
    toll["weights"] = [w / s for w in weights]
    for aid in toll["arcs"]:
        if aid not in net.arcs:
            raise ScenarioParseError(f"[toll] unknown arc {aid}")

    resolved = {
        "units": dict(REQUIRED_UNITS),
        "horizon": {"t0": grid.t0, "tf": grid.tf, "dt": grid.dt},
        "emission": {"model": variant, "b1": emission.b1, "b2": emission.b2,
                     "ber": emission.ber},
        "solver": dict(solver),
        "toll": dict(toll),
        "arcs": [vars(a) for a in net.arcs.values()],
        "paths": [{"id": p.id, "arcs": list(p.arcs), "od": p.od} for p in net.paths.values()],
        "od": [{"id": o.id, "origin": o.origin, "destination": o.destination,
                "demand": o.demand, "paths": list(o.paths)} for o in net.ods.values()],
    }
    return Scenario(
        name=name, net=net, grid=grid, emission=emission, penalty=penalty,
        fixed_point=fixed_point, solver=solver, toll=toll, resolved=resolved,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ScenarioParseError(f"{path}: {err}") from err
    return parse_scenario(doc, name=path.stem)


def load_bundled(name: str) -> Scenario:
    """Load a packaged scenario ('case1' or 'case2')."""
    ref = resources.files("dynatoll.data").joinpath(f"{name}.toml")
    with ref.open("rb") as fh:
        doc = tomllib.load(fh)
    return parse_scenario(doc, name=name)


def bundled_path(name: str) -> Path:
    """Filesystem path of a packaged scenario (for CLI round-trips)."""
    return Path(str(resources.files("dynatoll.data").joinpath(f"{name}.toml")))
