"""Deterministic result persistence: CSV series, comparison tables and
run manifests.

Everything numeric is written with a fixed 10-significant-digit format
so identical runs produce byte-identical files, and every scalar in a
report can be recomputed from the dumped series.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatchError, ScenarioParseError
from .flows import PathFlowProfile
from .loading import DNLResult
from .network import Network, TimeGrid
from .tolls import TollSchedule

FMT = "%.10g"


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FMT % float(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_flows_csv(path, h: PathFlowProfile) -> None:
    starts = h.grid.cell_starts()
    rows = ([starts[k]] + list(h.rates[:, k]) for k in range(h.grid.n_cells))
    write_csv(path, ["time"] + list(h.paths), rows)


def read_flows_csv(path, net: Network, grid: TimeGrid) -> PathFlowProfile:
    """Departure rates from a CSV with a time column and one rate column
    per path; times must match the scenario grid cell starts."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioParseError(f"{path}: empty flows file") from None
        body = [row for row in reader if row]
    if not header or header[0] != "time":
        raise ScenarioParseError(f"{path}: first column must be 'time'")
    paths = tuple(header[1:])
    missing = set(net.paths) - set(paths)
    extra = set(paths) - set(net.paths)
    if missing or extra:
        raise ScenarioParseError(
            f"{path}: path columns do not match the scenario "
            f"(missing {sorted(missing)}, unknown {sorted(extra)})"
        )
    data = np.array([[float(x) for x in row] for row in body])
    if data.shape[0] != grid.n_cells:
        raise GridMismatchError(
            f"{path}: {data.shape[0]} rows, scenario grid has {grid.n_cells} cells"
        )
    if not np.allclose(data[:, 0], grid.cell_starts(), atol=1e-9 * max(1.0, grid.tf)):
        raise GridMismatchError(f"{path}: time column does not match the scenario grid")
    rates = data[:, 1:].T
    order = [paths.index(p) for p in net.paths]
    return PathFlowProfile(tuple(net.paths), grid, rates[order])


def write_arc_curves_csv(path, dnl: DNLResult) -> None:
    """Cumulative entry/exit and entry-time delay per arc on the
    (extended) loading grid."""
    tpts = dnl.ext_grid.points()
    rows = []
    for aid, st in dnl.arc_states.items():
        for k in range(len(tpts)):
            rows.append([aid, tpts[k], st.entry_total[k], st.exit_total[k], st.delay[k]])
    write_csv(path, ["arc", "time", "cumulative_entry", "cumulative_exit", "delay"], rows)


def write_path_table_csv(path, h: PathFlowProfile, psi: dict, emission: dict,
                         tolls: dict | None = None) -> None:
    """Long-format per-path series: departure rate, effective delay and
    per-vehicle emission at every cell start (plus toll paid if given).

    Totals reported elsewhere are left-endpoint sums over these columns,
    so the file doubles as an audit trail.
    """
    starts = h.grid.cell_starts()
    rows = []
    for i, pid in enumerate(h.paths):
        toll_row = tolls[pid] if tolls is not None else np.zeros_like(starts)
        for k in range(h.grid.n_cells):
            rows.append([pid, starts[k], h.rates[i, k], psi[pid][k],
                         emission[pid][k], toll_row[k]])
    write_csv(path, ["path", "time", "departure_rate", "effective_delay",
                     "emission_per_vehicle", "toll"], rows)


def write_toll_csv(path, toll: TollSchedule) -> None:
    rows = []
    for i, aid in enumerate(toll.arcs):
        for j, start in enumerate(toll.starts):
            rows.append([aid, start, toll.values[i, j]])
    write_csv(path, ["arc", "interval_start", "toll"], rows)


def read_toll_csv(path, y_ub: float) -> TollSchedule:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["arc", "interval_start", "toll"]:
            raise ScenarioParseError(f"{path}: expected columns arc,interval_start,toll")
        body = [row for row in reader if row]
    if not body:
        raise ScenarioParseError(f"{path}: no toll rows")
    arcs = []
    for row in body:
        aid = int(row[0])
        if aid not in arcs:
            arcs.append(aid)
    starts = sorted({float(row[1]) for row in body})
    values = np.zeros((len(arcs), len(starts)))
    seen = np.zeros_like(values, dtype=bool)
    for row in body:
        i = arcs.index(int(row[0]))
        j = starts.index(float(row[1]))
        values[i, j] = float(row[2])
        seen[i, j] = True
    if not seen.all():
        raise ScenarioParseError(f"{path}: missing (arc, interval) entries")
    return TollSchedule(tuple(arcs), np.array(starts), values, y_ub)


@dataclass
class ComparisonReport:
    """Objective totals under different tolling regimes, first row is
    the baseline; reductions are (base - new) / base."""

    weights: tuple
    rows: list  # (label, total_travel_cost, total_emission)

    def reductions(self) -> dict:
        base_cost, base_em = self.rows[0][1], self.rows[0][2]
        out = {}
        for label, cost, em in self.rows[1:]:
            out[label] = (
                (base_cost - cost) / base_cost if base_cost else 0.0,
                (base_em - em) / base_em if base_em else 0.0,
            )
        return out

    def to_dict(self) -> dict:
        return {
            "weights": {"alpha": self.weights[0], "beta": self.weights[1]},
            "rows": [
                {"label": l, "total_travel_cost": c, "total_emission": e}
                for l, c, e in self.rows
            ],
            "reductions_pct": {
                label: {"travel_cost": 100.0 * rc, "emission": 100.0 * re}
                for label, (rc, re) in self.reductions().items()
            },
        }

    def render(self) -> str:
        lines = []
        lines.append("objective comparison (alpha=%s, beta=%s)"
                     % (_fmt(self.weights[0]), _fmt(self.weights[1])))
        lines.append("%-28s %18s %18s" % ("case", "travel cost [veh h]", "emission [g]"))
        for label, cost, em in self.rows:
            lines.append("%-28s %18s %18s" % (label, _fmt(cost), _fmt(em)))
        for label, (rc, re) in self.reductions().items():
            lines.append("reduction vs %-15s %17s%% %17s%%"
                         % (self.rows[0][0], _fmt(100.0 * rc), _fmt(100.0 * re)))
        return "\n".join(lines) + "\n"


@dataclass
class RunManifest:
    """Everything needed to replay a run: scenario, subcommand, the
    fully-resolved configuration (defaults materialized) and timing."""

    scenario: str
    subcommand: str
    resolved: dict
    out_dir: str
    wall_seconds: float
    stats: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "scenario": self.scenario,
            "subcommand": self.subcommand,
            "resolved_config": self.resolved,
            "out_dir": self.out_dir,
            "wall_seconds": round(self.wall_seconds, 3),
            "stats": self.stats,
        }
        return json.dumps(payload, indent=2, sort_keys=True, default=_json_default)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")
