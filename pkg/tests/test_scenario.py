import copy

import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from dynatoll.errors import ScenarioParseError, UnitError
from dynatoll.scenario import bundled_path, load_bundled, parse_scenario


@pytest.fixture(scope="module")
def case1_doc():
    with open(bundled_path("case1"), "rb") as fh:
        return tomllib.load(fh)


class TestBundledScenarios:
    def test_case1_shape(self, case1):
        assert len(case1.net.arcs) == 6
        assert len(case1.net.paths) == 6
        assert len(case1.net.ods) == 2
        assert case1.net.ods["1-3"].demand == 820.0
        assert case1.net.ods["2-3"].demand == 410.0
        assert case1.grid.t0 == 6.0 and case1.grid.tf == 11.0 and case1.grid.dt == 0.05
        assert case1.toll["arcs"] == [1] and case1.toll["y_ub"] == 10.0
        assert case1.emission.variant == "emfac" and case1.emission.ber == 2.5

    def test_case2_demands(self, case2):
        assert case2.net.ods["1-3"].demand == 1400.0
        assert case2.net.ods["2-3"].demand == 700.0

    def test_defaults_materialized(self, case1):
        # every applied default is visible in the resolved config
        assert case1.resolved["solver"]["alpha"] == 300.0
        assert case1.resolved["solver"]["desired_arrival"] == 9.5
        assert case1.resolved["toll"]["weights"] == [0.5, 0.5]
        assert case1.penalty.early_rate == 0.6 and case1.penalty.late_rate == 2.4

    def test_with_dt(self, case1):
        halved = case1.with_dt(0.025)
        assert halved.grid.n_cells == 2 * case1.grid.n_cells
        assert case1.grid.dt == 0.05  # original untouched


class TestParseErrors:
    def test_missing_section(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        del doc["horizon"]
        with pytest.raises(ScenarioParseError):
            parse_scenario(doc)

    def test_wrong_units(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        doc["units"]["distance"] = "km"
        with pytest.raises(UnitError):
            parse_scenario(doc)

    def test_unknown_solver_key(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        doc["solver"]["alhpa"] = 1.0
        with pytest.raises(ScenarioParseError):
            parse_scenario(doc)

    def test_weights_must_sum_to_one(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        doc["toll"]["weights"] = [0.8, 0.4]
        with pytest.raises(ScenarioParseError):
            parse_scenario(doc)

    def test_rounded_weights_normalized(self, case1_doc):
        # tables round to four digits; 0.0988 + 0.9011 = 0.9999 must parse
        doc = copy.deepcopy(case1_doc)
        doc["toll"]["weights"] = [0.0988, 0.9011]
        sc = parse_scenario(doc)
        a, b = sc.toll["weights"]
        assert a + b == pytest.approx(1.0, abs=1e-12)
        assert a == pytest.approx(0.0988 / 0.9999)

    def test_unknown_emission_model(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        doc["emission"]["model"] = "copert"
        with pytest.raises(ScenarioParseError):
            parse_scenario(doc)

    def test_emission_unit_rules(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        doc["emission"]["output_units"] = "g/km"
        with pytest.raises(UnitError):
            parse_scenario(doc)

    def test_unknown_toll_arc(self, case1_doc):
        doc = copy.deepcopy(case1_doc)
        doc["toll"]["arcs"] = [99]
        with pytest.raises(ScenarioParseError):
            parse_scenario(doc)


def test_bundled_loader_round_trip():
    sc = load_bundled("case1")
    assert sc.name == "case1"
    assert bundled_path("case1").exists()
