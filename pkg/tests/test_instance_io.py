import json

import pytest

from coplan.instance_io import (
    AlgoParams,
    InstanceError,
    capital_recovery_factor,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    read_trace,
    save_instance,
    write_report,
)


class TestCapitalRecovery:
    def test_paper_parameters(self):
        # inflation 0.05 over a 20-year lifespan
        assert capital_recovery_factor(0.05, 20) == pytest.approx(0.0802426, abs=1e-6)

    def test_straight_line_limit(self):
        assert capital_recovery_factor(1e-12, 10) == pytest.approx(0.1, abs=1e-9)
        assert capital_recovery_factor(0.0, 10) == pytest.approx(0.1)

    def test_single_year(self):
        assert capital_recovery_factor(0.07, 1) == pytest.approx(1.07)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            capital_recovery_factor(-0.01, 10)
        with pytest.raises(ValueError):
            capital_recovery_factor(0.05, 0.5)


class TestLoadValidate:
    def test_toy6_loads(self, toy6):
        assert toy6.name == "toy6"
        assert toy6.periods == 4
        assert toy6.root_id == 1
        assert len(toy6.hubs) == 5

    def test_two_roots_rejected(self, toy6):
        data = instance_to_dict(toy6)
        data["nodes"][1]["kind"] = "root"
        spec = instance_from_dict(data)
        problems = spec.validate()
        assert any("exactly one root" in p for p in problems)

    def test_rcs_min_exceeding_hubs_rejected(self, toy6):
        data = instance_to_dict(toy6)
        data["rcs_min_count"] = 99
        problems = instance_from_dict(data).validate()
        assert any("rcs_min_count" in p for p in problems)

    def test_negative_resistance_rejected(self, toy6):
        data = instance_to_dict(toy6)
        data["candidate_lines"][0]["r"] = -1.0
        problems = instance_from_dict(data).validate()
        assert any(".r: negative" in p for p in problems)

    def test_all_failures_reported_not_just_first(self, toy6):
        data = instance_to_dict(toy6)
        data["rcs_min_count"] = 99
        data["candidate_lines"][0]["r"] = -1.0
        data["voltage"]["v_min"] = 2.0
        problems = instance_from_dict(data).validate()
        assert len(problems) >= 3

    def test_disconnected_candidates_rejected(self, toy6):
        data = instance_to_dict(toy6)
        data["candidate_lines"] = [l for l in data["candidate_lines"]
                                   if 6 not in (l["i"], l["j"])]
        problems = instance_from_dict(data).validate()
        assert any("not connected" in p for p in problems)

    def test_box_order_rejected(self, toy6):
        data = instance_to_dict(toy6)
        data["diu_box"]["p_load"]["2"][0] = [500, 400]
        problems = instance_from_dict(data).validate()
        assert any("lower" in p and "upper" in p for p in problems)

    def test_load_error_lists_problems(self, tmp_path, toy6):
        data = instance_to_dict(toy6)
        data["rcs_min_count"] = 99
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data))
        with pytest.raises(InstanceError) as err:
            load_instance(path)
        assert err.value.problems


def test_save_load_round_trip(tmp_path, toy6):
    path = tmp_path / "copy.json"
    save_instance(toy6, path)
    again = load_instance(path)
    assert instance_to_dict(again) == instance_to_dict(toy6)


class TestAlgoParams:
    def test_defaults_valid(self):
        assert AlgoParams().validate() == []

    def test_epsilon_tilde_range_enforced(self):
        params = AlgoParams(epsilon=1e-4, epsilon_tilde=0.5)
        assert any("epsilon_tilde" in p for p in params.validate())

    def test_alpha_range(self):
        assert any("alpha" in p for p in AlgoParams(alpha=1.0).validate())


class TestWriteReport:
    def test_empty_trace_writes_header_only(self, tmp_path):
        write_report({"objective": 1.0}, [], tmp_path / "out")
        lines = (tmp_path / "out" / "trace.csv").read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("iteration,phase,k,")

    def test_trace_rows_round_trip(self, tmp_path):
        rows = []
        ub = 50.0
        for i in range(3):
            ub -= 1.0  # the global upper bound is nonincreasing by construction
            rows.append({"iteration": i + 1, "phase": "explore", "k": i + 1,
                         "UB_i": 40.0 + i, "LB_i": 39.0 + i, "UB_bar": ub,
                         "LB_k": 39.0 + i, "eps_up": 0.1, "scen_count": i,
                         "fleet_draw": 10, "wall_ms": 5.0})
        write_report({"objective": ub}, rows, tmp_path / "out")
        parsed = read_trace(tmp_path / "out" / "trace.csv")
        assert len(parsed) == 3
        ubs = [r["UB_bar"] for r in parsed]
        assert ubs == sorted(ubs, reverse=True)

    def test_result_json_round_trips_plan(self, tmp_path):
        result = {"plan": {"built_lines": [[1, 2], [2, 3]], "open_hubs": [1, 4]},
                  "objective": 41.25}
        write_report(result, [], tmp_path / "out")
        back = json.loads((tmp_path / "out" / "result.json").read_text())
        assert back["plan"] == result["plan"]
        assert back["schema_version"] == 1
