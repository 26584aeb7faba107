import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynatoll.equilibrium import (
    FixedPointParams,
    due_cost_matrix,
    equilibrium_audit,
    fixed_point_solve,
    initial_profile,
    project_lambda,
    total_travel_cost,
)
from dynatoll.loading import ArrivalPenaltyParams
from dynatoll.network import TimeGrid


def qp_projection(v, q, dt):
    """Independent oracle: minimum-norm point of {x >= 0, dt*sum(x) = q}."""
    x = cp.Variable(v.size)
    cp.Problem(
        cp.Minimize(cp.sum_squares(x - v)), [x >= 0, dt * cp.sum(x) == q]
    ).solve(solver=cp.OSQP, eps_abs=1e-10, eps_rel=1e-10, max_iter=200_000)
    return x.value


class TestProjection:
    def test_matches_qp_oracle(self, tiny_net, tiny_grid):
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = rng.normal(0, 50, (2, tiny_grid.n_cells))
            out = project_lambda(v, ("a", "b"), tiny_net, tiny_grid)
            ref = qp_projection(v.ravel(), 100.0, tiny_grid.dt).reshape(2, -1)
            assert np.abs(out.rates - ref).max() < 1e-8

    def test_mass_exact(self, tiny_net, tiny_grid):
        rng = np.random.default_rng(1)
        v = rng.normal(0, 500, (2, tiny_grid.n_cells))
        out = project_lambda(v, ("a", "b"), tiny_net, tiny_grid)
        assert out.od_mass(tiny_net)["1-2"] == pytest.approx(100.0, rel=1e-12)
        assert np.all(out.rates >= 0)

    def test_idempotent_on_feasible(self, tiny_net, tiny_grid):
        h = initial_profile(tiny_net, tiny_grid)
        again = project_lambda(h.rates, h.paths, tiny_net, tiny_grid)
        assert np.allclose(again.rates, h.rates, atol=1e-9)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=40, deadline=None)
    def test_nonexpansive(self, seed):
        from dynatoll.network import validate_network
        from .conftest import tiny_network_cfg

        net = validate_network(tiny_network_cfg())
        grid = TimeGrid(0.0, 2.0, 0.1)
        rng = np.random.default_rng(seed)
        u = rng.normal(0, 100, (2, grid.n_cells))
        v = u + rng.normal(0, 30, (2, grid.n_cells))
        pu = project_lambda(u, ("a", "b"), net, grid).rates
        pv = project_lambda(v, ("a", "b"), net, grid).rates
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-6


class TestInitialProfile:
    def test_feasible(self, case1):
        h = initial_profile(case1.net, case1.grid)
        h.check_feasible(case1.net)

    def test_window_override(self, tiny_net, tiny_grid):
        h = initial_profile(tiny_net, tiny_grid, window=(0.5, 1.0))
        starts = tiny_grid.cell_starts()
        outside = (starts < 0.5) | (starts >= 1.0)
        assert np.all(h.rates[:, outside] == 0)
        assert h.od_mass(tiny_net)["1-2"] == pytest.approx(100.0)


class TestAudit:
    def test_flags_expensive_flow(self, tiny_net, tiny_grid):
        k = tiny_grid.n_cells
        from dynatoll.flows import PathFlowProfile

        rates = np.zeros((2, k))
        rates[0, 0] = 500.0  # 50 vehicles at cost 2.0 (min is 1.0)
        rates[1, 1] = 500.0  # 50 vehicles at the minimum
        h = PathFlowProfile(("a", "b"), tiny_grid, rates)
        cost = np.full((2, k), 5.0)
        cost[0, 0] = 2.0
        cost[1, 1] = 1.0
        audit = equilibrium_audit(h, cost, tiny_net, tol=0.05)
        assert audit.v_ij["1-2"] == 1.0
        # half of the mass sits 100% above the minimum
        assert audit.violating_mass_fraction == pytest.approx(0.5)
        assert audit.n_violating_cells == 1

    def test_clean_equilibrium(self, tiny_net, tiny_grid):
        k = tiny_grid.n_cells
        rates = np.full((2, k), 25.0)
        h = project_lambda(rates, ("a", "b"), tiny_net, tiny_grid)
        cost = np.ones((2, k))
        audit = equilibrium_audit(h, cost, tiny_net, tol=0.05)
        assert audit.violating_mass_fraction == 0.0


class TestFixedPoint:
    def test_two_route_equilibrium(self, tiny_net, tiny_grid):
        pen = ArrivalPenaltyParams(desired_arrival=1.0, early_rate=0.6, late_rate=2.4)
        h0 = initial_profile(tiny_net, tiny_grid)
        h, rep = fixed_point_solve(
            tiny_net, tiny_grid, None, pen,
            FixedPointParams(alpha=300.0, max_iters=500), h0,
        )
        assert rep.converged
        assert rep.relative_residual <= 1e-3
        assert rep.audit.violating_mass_fraction <= 0.02
        assert h.od_mass(tiny_net)["1-2"] == pytest.approx(100.0, rel=1e-9)
        # at this light load both routes run at free flow, so only the
        # shorter one can carry flow at equilibrium
        _, _, cost = due_cost_matrix(h, tiny_net, tiny_grid, None, pen)
        used = h.rates > 1e-6
        assert np.all(cost[used] <= rep.v_ij["1-2"] * 1.05 + 1e-9)

    def test_report_total_cost_consistent(self, tiny_net, tiny_grid):
        pen = ArrivalPenaltyParams(desired_arrival=1.0, early_rate=0.6, late_rate=2.4)
        h0 = initial_profile(tiny_net, tiny_grid)
        h, rep = fixed_point_solve(
            tiny_net, tiny_grid, None, pen,
            FixedPointParams(alpha=300.0, max_iters=200), h0,
        )
        dnl, psi, _ = due_cost_matrix(h, tiny_net, tiny_grid, None, pen)
        assert rep.total_travel_cost == pytest.approx(total_travel_cost(h, psi), rel=1e-12)
        assert rep.merit_gap >= -1e-9
