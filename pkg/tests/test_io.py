import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rewardlab import io
from rewardlab.instances import RandomInstanceSpec, generate_random_instance, one_way_door_amdp
from rewardlab.objectives import ObjectiveSpec
from rewardlab.risk import UtilityTransform


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 3), st.integers(1, 3))
def test_momdp_round_trip(seed, s, a, k):
    m = generate_random_instance(RandomInstanceSpec(s, a, k, seed=seed))
    back = io.momdp_from_json(json.loads(io.dumps(io.momdp_to_json(m))))
    assert np.array_equal(back.rewards, m.rewards)
    assert np.array_equal(back.skeleton.transition, m.skeleton.transition)
    assert back.skeleton.gamma == m.skeleton.gamma


def test_amdp_round_trip():
    _, amdp = one_way_door_amdp()
    back = io.amdp_from_json(json.loads(io.dumps(io.amdp_to_json(amdp))))
    assert back.form.kind == amdp.form.kind and back.k == 1
    assert np.array_equal(back.affordances[0].reward, amdp.affordances[0].reward)
    assert io.validate_document(io.amdp_to_json(amdp)) == "affordance_mdp"


def test_parse_error_reports_position():
    with pytest.raises(io.ParseError, match=r"f\.json:2:10"):
        io.parse_json('{\n    "a": }', "f.json")


def test_schema_violation_path():
    bad = {"gamma": 1.5, "mu0": [1.0], "transition": [[[1.0]]]}
    with pytest.raises(io.ParseError, match="gamma"):
        io.mdp_from_json(bad)


def test_domain_invariant_becomes_parse_error():
    bad = {"gamma": 0.5, "mu0": [1.0], "transition": [[[0.5]]], "rewards": [[[1.0]]]}
    with pytest.raises(io.ParseError):
        io.momdp_from_json(bad)


def test_detect_schema():
    assert io.detect_schema({"kind": "scalarize", "seed": 1}) == "config"
    assert io.detect_schema({"kind": "Exponential", "alpha": 1}) == "transform"
    assert io.detect_schema({"kind": "MaxMin"}) == "objective"
    assert io.detect_schema({"outcome": "Realizable", "residual": 0}) == "feasibility"
    assert io.detect_schema({"n_states": 2, "n_actions": 2, "k": 1}) == "instance_spec"
    for spec in [ObjectiveSpec("MaxSat", thresholds=(1.0, 2.0)), UtilityTransform("Exponential", alpha=1.0)]:
        io.validate_document(spec.to_json())


def test_canonical_dumps():
    text = io.dumps({"b": 1, "a": [1.5, 2]})
    assert text.endswith("\n") and text.index('"a"') < text.index('"b"')
    with pytest.raises(ValueError):
        io.dumps({"x": float("nan")})


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "out.json"
    io.write_json(p, {"v": 1})
    io.write_json(p, {"v": 2})
    assert json.loads(p.read_text()) == {"v": 2}
    assert os.listdir(p.parent) == ["out.json"]


def test_atomic_write_cleans_up_on_failure(tmp_path):
    p = tmp_path / "out.json"
    io.write_json(p, {"v": 1})
    with pytest.raises(ValueError):
        io.write_json(p, {"v": float("inf")})
    assert json.loads(p.read_text()) == {"v": 1}
    assert os.listdir(tmp_path) == ["out.json"]


def test_csv_text_round_floats():
    text = io.csv_text(["a", "b"], [[1, 0.1], [2, np.float64(1 / 3)]])
    assert text.splitlines() == ["a,b", "1,0.1", f"2,{1 / 3!r}"]


def test_bundled_fixtures_validate():
    for name in ["bandit_momdp.json", "one_way_door.json", "random_instance_spec.json",
                 "bandit_maxmin_scalarize.json", "bandit_affine_risk.json", "bandit_softmaxmin_solve.json",
                 "one_way_door_learn.json"]:
        data = io.read_json(io.fixture_path(name))
        io.validate_document(data, name)


def test_read_missing_file(tmp_path):
    with pytest.raises(io.ParseError, match="cannot read"):
        io.read_json(tmp_path / "nope.json")
