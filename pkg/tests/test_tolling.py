import numpy as np
import pytest

from dynatoll.equilibrium import initial_profile
from dynatoll.errors import DomainError, ProbeFailureError
from dynatoll.flows import PathFlowProfile
from dynatoll.loading import ArrivalPenaltyParams
from dynatoll.network import TimeGrid
from dynatoll.scenario import parse_scenario, bundled_path
from dynatoll.tolling import (
    MPCCState,
    Multipliers,
    PenaltySettings,
    Weights,
    complementarity_residuals,
    fd_gradient,
    gradient_projection_solve,
    penalty_Q,
    scalarized_objective,
)
from dynatoll.tolls import TollSchedule, path_toll_costs, zero_toll

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


def tiny_scenario(y_ub=10.0, demand=(60.0, 30.0)):
    """Two-arc parallel network as a full scenario document."""
    doc = {
        "units": {"distance": "miles", "time": "hours", "speed": "mph"},
        "horizon": {"t0": 0.0, "tf": 2.0, "dt": 0.1},
        "arcs": [
            {"id": 1, "tail": 1, "head": 2, "length": 5.0,
             "free_speed": 35.0, "jam_density": 400.0},
            {"id": 2, "tail": 1, "head": 2, "length": 7.0,
             "free_speed": 35.0, "jam_density": 400.0},
        ],
        "paths": [
            {"id": "a", "arcs": [1], "od": "1-2"},
            {"id": "b", "arcs": [2], "od": "1-2"},
        ],
        "od": [{"id": "1-2", "origin": 1, "destination": 2, "demand": demand[0]}],
        "emission": {"model": "emfac", "ber": 2.5, "b1": -0.04, "b2": 0.001},
        "solver": {"desired_arrival": 1.0, "max_iters": 300},
        "toll": {"arcs": [1], "y_ub": y_ub, "control_dt": 0.5,
                 "inner_iters": 3, "penalty_rounds": 2},
    }
    return parse_scenario(doc, name="tiny")


class TestTypes:
    def test_weights_validation(self):
        Weights(0.3, 0.7)
        with pytest.raises(DomainError):
            Weights(0.5, 0.6)
        with pytest.raises(DomainError):
            Weights(-0.1, 1.1)

    def test_penalty_settings_validation(self):
        with pytest.raises(DomainError):
            PenaltySettings(m0=0.0)
        with pytest.raises(DomainError):
            PenaltySettings(growth=1.0)

    def test_multipliers_finite(self):
        with pytest.raises(DomainError):
            Multipliers({"w": float("nan")})


class TestTollSchedule:
    def test_piecewise_lookup(self):
        toll = TollSchedule((1,), np.array([0.0, 0.5, 1.0]),
                            np.array([[1.0, 2.0, 3.0]]), 10.0)
        assert toll.value_at(1, 0.25) == 1.0
        assert toll.value_at(1, 0.5) == 2.0
        assert np.allclose(toll.value_at(1, np.array([-1.0, 0.9, 5.0])), [1.0, 2.0, 3.0])

    def test_box_enforced(self):
        with pytest.raises(DomainError):
            TollSchedule((1,), np.array([0.0]), np.array([[11.0]]), 10.0)
        with pytest.raises(DomainError):
            TollSchedule((1,), np.array([0.0]), np.array([[-0.5]]), 10.0)

    def test_zero_toll_costs_nothing(self, case1):
        from dynatoll.loading import load_network

        h = initial_profile(case1.net, case1.grid)
        dnl = load_network(h, case1.net, case1.grid)
        toll = zero_toll(case1.grid, (1,), 10.0)
        costs = path_toll_costs(dnl, case1.net, toll)
        for pid, row in costs.items():
            assert np.all(row == 0.0)

    def test_entry_time_sampling(self, case1):
        from dynatoll.loading import load_network

        h = initial_profile(case1.net, case1.grid)
        dnl = load_network(h, case1.net, case1.grid)
        t0 = zero_toll(case1.grid, (1,), 10.0)
        toll = t0.with_values(np.full_like(t0.values, 2.0))
        costs = path_toll_costs(dnl, case1.net, toll)
        for pid in case1.net.paths:
            expect = 2.0 if case1.net.uses_arc(pid, 1) else 0.0
            assert np.allclose(costs[pid], expect)


class TestComplementarity:
    def grid_profile(self, rate):
        grid = TimeGrid(0.0, 0.1, 0.05)
        h = PathFlowProfile(("a", "b"), grid, np.full((2, 2), rate))
        return grid, h

    def fake_net(self):
        sc = tiny_scenario()
        return sc.net

    def test_satisfied_cases(self):
        net = self.fake_net()
        grid = TimeGrid(0.0, 0.1, 0.05)
        # h = 0 with c >= 0, and h > 0 with c = 0: both give zero residuals
        h0 = PathFlowProfile(("a", "b"), grid, np.zeros((2, 2)))
        psi = {"a": np.full(2, 3.0), "b": np.full(2, 3.0)}
        tolls = {"a": np.zeros(2), "b": np.zeros(2)}
        mu = Multipliers({"1-2": 1.0})
        r1, r2 = complementarity_residuals(h0, psi, tolls, mu, net)
        assert np.all(r1 == 0) and np.all(r2 == 0)

        h1 = PathFlowProfile(("a", "b"), grid, np.full((2, 2), 4.0))
        mu_eq = Multipliers({"1-2": 3.0})
        r1, r2 = complementarity_residuals(h1, psi, tolls, mu_eq, net)
        assert np.all(r1 == 0) and np.all(r2 == 0)

    def test_violation_arithmetic(self):
        # c = -2 with h = 3 gives r1 = -6 and r2 = 2
        net = self.fake_net()
        grid = TimeGrid(0.0, 0.1, 0.05)
        h = PathFlowProfile(("a", "b"), grid, np.full((2, 2), 3.0))
        psi = {"a": np.full(2, 1.0), "b": np.full(2, 1.0)}
        tolls = {"a": np.zeros(2), "b": np.zeros(2)}
        mu = Multipliers({"1-2": 3.0})
        r1, r2 = complementarity_residuals(h, psi, tolls, mu, net)
        assert np.allclose(r1, -6.0) and np.allclose(r2, 2.0)

    def test_penalty_quadrature(self):
        # one (r1, r2) = (-6, 2) cell at dt = 0.1 and M = 10 integrates to 40
        # per cell; two paths * two cells here
        net = self.fake_net()
        grid = TimeGrid(0.0, 0.2, 0.1)
        h = PathFlowProfile(("a", "b"), grid, np.full((2, 2), 3.0))
        psi = {"a": np.full(2, 1.0), "b": np.full(2, 1.0)}
        tolls = {"a": np.zeros(2), "b": np.zeros(2)}
        mu = Multipliers({"1-2": 3.0})
        q = penalty_Q(h, psi, tolls, mu, 10.0, net)
        assert q == pytest.approx(4 * 40.0, rel=1e-12)

    def test_penalty_linear_in_m(self):
        net = self.fake_net()
        grid = TimeGrid(0.0, 0.2, 0.1)
        h = PathFlowProfile(("a", "b"), grid, np.full((2, 2), 3.0))
        psi = {"a": np.full(2, 1.3), "b": np.full(2, 0.2)}
        tolls = {"a": np.zeros(2), "b": np.zeros(2)}
        mu = Multipliers({"1-2": 0.9})
        q1 = penalty_Q(h, psi, tolls, mu, 7.0, net)
        q2 = penalty_Q(h, psi, tolls, mu, 14.0, net)
        assert q2 == pytest.approx(2 * q1, rel=1e-12)
        with pytest.raises(DomainError):
            penalty_Q(h, psi, tolls, mu, 0.0, net)


class TestScalarization:
    def setup_state(self):
        sc = tiny_scenario()
        h = initial_profile(sc.net, sc.grid)
        toll = zero_toll(sc.grid, (1,), 10.0, control_dt=0.5)
        mu = Multipliers({"1-2": 0.2})
        return sc, h, toll, mu

    def test_degenerate_weights(self):
        sc, h, toll, mu = self.setup_state()
        o1 = scalarized_objective(h, toll, mu, 5.0, Weights(1.0, 0.0),
                                  sc.emission, sc.net, sc.grid, sc.penalty)
        o2 = scalarized_objective(h, toll, mu, 5.0, Weights(0.0, 1.0),
                                  sc.emission, sc.net, sc.grid, sc.penalty)
        assert o1.total == o1.u1
        assert o2.total == o2.u2

    def test_bracket(self):
        sc, h, toll, mu = self.setup_state()
        o = scalarized_objective(h, toll, mu, 5.0, Weights(0.3, 0.7),
                                 sc.emission, sc.net, sc.grid, sc.penalty)
        assert min(o.u1, o.u2) - 1e-9 <= o.total <= max(o.u1, o.u2) + 1e-9

    def test_identity_decomposition(self):
        sc, h, toll, mu = self.setup_state()
        w = Weights(0.4, 0.6)
        o = scalarized_objective(h, toll, mu, 5.0, w,
                                 sc.emission, sc.net, sc.grid, sc.penalty)
        assert o.total == pytest.approx(
            w.alpha * o.travel_cost + w.beta * o.emission + o.penalty, rel=1e-12
        )


class TestFdGradient:
    def interior_state(self, sc):
        k = sc.grid.n_cells
        h = PathFlowProfile(tuple(sc.net.paths), sc.grid, np.full((2, k), 5.0))
        t0 = zero_toll(sc.grid, (1,), 10.0, control_dt=0.5)
        toll = t0.with_values(np.full_like(t0.values, 2.0))
        mu = Multipliers({"1-2": 0.5})
        return MPCCState(h=h, toll=toll, mu=mu, m=10.0, history=[])

    def pack(self, state, net):
        return np.concatenate([
            state.h.rates.ravel(), state.toll.values.ravel(), state.mu.vector(net)
        ])

    def test_quadratic_stub(self):
        # central differences are exact on quadratics, up to roundoff
        sc = tiny_scenario()
        state = self.interior_state(sc)
        x0 = self.pack(state, sc.net)
        n = x0.size
        rng = np.random.default_rng(3)
        A = rng.normal(0, 0.1, (n, n))
        A = A @ A.T / n
        b = rng.normal(0, 1.0, n)

        def stub(h_rates, y_vals, mu_vec):
            x = np.concatenate([h_rates.ravel(), y_vals.ravel(), mu_vec])
            return float(x @ A @ x + b @ x)

        g = fd_gradient(state, Weights(0.5, 0.5), sc.emission, sc.net, sc.grid,
                        sc.penalty, step_h=0.5, step_y=0.5, step_mu=0.5,
                        evaluator=stub)
        flat = np.concatenate([g["h"].ravel(), g["y"].ravel(), g["mu"]])
        analytic = 2 * A @ x0 + b
        assert np.abs(flat - analytic).max() < 1e-6

    def test_constant_coordinate_is_zero(self):
        sc = tiny_scenario()
        state = self.interior_state(sc)

        def stub(h_rates, y_vals, mu_vec):
            return float(h_rates.sum())  # ignores toll and mu entirely

        g = fd_gradient(state, Weights(0.5, 0.5), sc.emission, sc.net, sc.grid,
                        sc.penalty, evaluator=stub)
        assert np.all(np.abs(g["y"]) < 1e-6)
        assert np.all(np.abs(g["mu"]) < 1e-6)
        assert np.allclose(g["h"], 1.0, atol=1e-6)

    def test_mu_gradient_zero_without_residuals(self):
        # no departures at all: both defects vanish identically around mu
        sc = tiny_scenario()
        k = sc.grid.n_cells
        h = PathFlowProfile(tuple(sc.net.paths), sc.grid, np.zeros((2, k)))
        toll = zero_toll(sc.grid, (1,), 10.0, control_dt=0.5)
        state = MPCCState(h=h, toll=toll, mu=Multipliers({"1-2": 0.01}),
                          m=10.0, history=[])
        g = fd_gradient(state, Weights(0.5, 0.5), sc.emission, sc.net, sc.grid,
                        sc.penalty, step_mu=0.001)
        assert np.all(np.abs(g["mu"]) < 1e-6)

    def test_probe_failure_identifies_coordinate(self):
        sc = tiny_scenario()
        state = self.interior_state(sc)

        def stub(h_rates, y_vals, mu_vec):
            if y_vals[0, 0] > 2.0:
                return float("nan")
            return 0.0

        with pytest.raises(ProbeFailureError):
            fd_gradient(state, Weights(0.5, 0.5), sc.emission, sc.net, sc.grid,
                        sc.penalty, evaluator=stub)

    def test_rejects_bad_steps(self):
        sc = tiny_scenario()
        state = self.interior_state(sc)
        with pytest.raises(DomainError):
            fd_gradient(state, Weights(0.5, 0.5), sc.emission, sc.net, sc.grid,
                        sc.penalty, step_h=0.0)


class TestSolve:
    def test_degenerate_box_gives_zero_toll(self):
        sc = tiny_scenario(y_ub=0.0)
        state, report, detail = gradient_projection_solve(sc)
        assert state.toll.is_zero()
        rows = report.rows
        assert rows[0][1:] == rows[1][1:]  # identical with/without-toll rows
        for label, (rc, re) in report.reductions().items():
            assert rc == 0.0 and re == 0.0

    def test_requires_tolled_arcs(self):
        sc = tiny_scenario()
        sc.toll["arcs"] = []
        with pytest.raises(DomainError):
            gradient_projection_solve(sc)

    def test_joint_descent_is_monotone_per_round(self):
        # congested enough that the penalized objective has room to move
        sc = tiny_scenario(demand=(800.0, 0.0))
        state, report, detail = gradient_projection_solve(
            sc, pen_settings=PenaltySettings(10.0, 10.0, 2), inner_iters=2
        )
        assert len(state.history) == 2
        for rec in state.history:
            assert rec["accepted_steps"] >= 0
            assert np.isfinite(rec["objective"])
        assert np.all(state.toll.values >= 0)
        assert np.all(state.toll.values <= sc.toll["y_ub"] + 1e-12)

    def test_bilevel_mode_runs(self):
        sc = tiny_scenario()
        state, report, detail = gradient_projection_solve(
            sc, inner_iters=1, mode="bilevel"
        )
        assert state.history[0]["accepted_steps"] >= 0
        assert 0 <= state.toll.values.min() <= state.toll.values.max() <= 10.0

    def test_no_descent_diagnostic(self):
        # at light demand the equilibrium is already system optimal and the
        # first penalty round cannot improve on it
        from dynatoll.errors import NoDescentError

        sc = tiny_scenario(demand=(60.0, 0.0))
        with pytest.raises(NoDescentError, match="gradient norms"):
            gradient_projection_solve(
                sc, pen_settings=PenaltySettings(10.0, 10.0, 1), inner_iters=2
            )

    def test_unknown_mode(self):
        sc = tiny_scenario()
        with pytest.raises(DomainError):
            gradient_projection_solve(sc, mode="annealing")
