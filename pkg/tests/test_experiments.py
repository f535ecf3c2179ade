import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rilt.coupling import Mollifier
from rilt.experiments import (
    RULES,
    ExperimentPlan,
    PlanError,
    ReplicaStore,
    acceptance_plan,
    beta_at_zero,
    extrapolate_tau,
    fault_site,
    g_n,
    lattice_support,
    mollified_beta_materialized,
    psi_n,
    run_plan,
    run_replicas,
    walk_side_mollified_beta,
)
from rilt.walk import simulate


def test_every_rule_has_an_experiment():
    assert sorted(RULES, key=lambda r: int(r[1:])) == [f"C{i}" for i in range(1, 12)]
    for name, _ in RULES.values():
        acceptance_plan(name)


@pytest.mark.parametrize(
    "kw, key",
    [
        (dict(experiment="nope"), "experiment"),
        (dict(experiment="coupling", n_grid=(8, 4)), "n_grid"),
        (dict(experiment="coupling", n_grid=(0, 4)), "n_grid"),
        (dict(experiment="invariance", replicas=10), "replicas"),
        (dict(experiment="kernel", taus=(0.0,)), "taus"),
        (dict(experiment="kernel", k=0), "k"),
    ],
)
def test_plan_validation_names_key(kw, key):
    with pytest.raises(PlanError, match=f"^{key}"):
        ExperimentPlan(**kw)


def test_unknown_key_in_config(tmp_path):
    p = tmp_path / "plan.json"
    p.write_text(json.dumps({"experiment": "kernel", "bogus": 1}))
    with pytest.raises(PlanError, match="^bogus"):
        ExperimentPlan.from_json(p)


def test_config_hash_ignores_output():
    a = ExperimentPlan("counting", output="x")
    b = ExperimentPlan("counting", output="y")
    c = ExperimentPlan("counting", seed=1)
    assert a.config_hash == b.config_hash != c.config_hash
    assert ExperimentPlan.from_dict(a.as_dict()) == a


def test_report_is_deterministic(tmp_path):
    plan = ExperimentPlan("counting", replicas=1, params={"cases": 300})
    a, b = run_plan(plan), run_plan(plan)
    assert a.report_hash == b.report_hash
    # too few cases for the acceptance count
    assert not a.flags["C1"]["passed"]
    assert a.flags["C1"]["value"]["mismatches"] == 0
    out = a.write(tmp_path / "run")
    assert json.loads((out / "report.json").read_text())["flags"]["C1"]["value"]["cases"] == 300
    assert (out / "trend.tsv").exists()


def test_mollified_plan_small():
    rep = run_plan(ExperimentPlan("mollified", n_grid=(1024,), taus=(0.2,), params={"paths": 1}))
    assert rep.passed


def test_replica_store_resumes(tmp_path):
    calls = []

    def fn(a, b):
        calls.append(a)
        return {"s": a + b}

    store = ReplicaStore(tmp_path / "ck.jsonl")
    tasks = [(i, 10) for i in range(4)]
    assert [r["s"] for r in run_replicas(fn, tasks, 1, store)] == [10, 11, 12, 13]
    again = ReplicaStore(tmp_path / "ck.jsonl")
    assert [r["s"] for r in run_replicas(fn, tasks, 1, again)] == [10, 11, 12, 13]
    assert calls == [0, 1, 2, 3]


def test_psi_n_is_a_riemann_sum():
    err = [abs(psi_n(0.25, n) - 1) for n in (1024, 4096, 16384, 65536)]
    assert all(b < a for a, b in zip(err, err[1:]))
    assert err[-1] < 1e-12


def test_g_n_approaches_l(kernel):
    tau = 0.2
    assert g_n(kernel, tau, 1 << 14) == pytest.approx(Mollifier(tau).l, abs=5e-3)


def test_lattice_support_radius():
    Y = lattice_support(0.1, 10_000)
    r = np.hypot(*Y.T) / 100
    assert r.min() > 0.05 and r.max() < 0.1


def test_walk_side_matches_materialized(law, kernel):
    path = simulate(law, 1024, 11)
    a = walk_side_mollified_beta(path, kernel, 0.2)
    b = mollified_beta_materialized(path, kernel, 0.2)
    assert a == pytest.approx(b, abs=1e-10)


def test_walk_side_straight_line(kernel):
    n = 1024
    pos = np.stack([2 * np.arange(n + 1), np.zeros(n + 1, dtype=np.int64)], axis=1)
    a = walk_side_mollified_beta(pos, kernel, 0.2)
    b = mollified_beta_materialized(pos, kernel, 0.2)
    assert a == pytest.approx(b, abs=1e-10)


def test_walk_side_at_rest(kernel):
    # no two visits are separated by a vector in the mollifier's support
    n = 256
    pos = np.zeros((n + 1, 2), dtype=np.int64)
    assert walk_side_mollified_beta(pos, kernel, 0.5) == pytest.approx(-g_n(kernel, 0.5, n), abs=1e-12)


def test_walk_side_resolution_guard(law, kernel):
    with pytest.raises(ValueError):
        walk_side_mollified_beta(simulate(law, 64, 0), kernel, 0.2)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_extrapolation_exact_on_lines(a, b):
    taus = [0.2, 0.1, 0.05]
    assert extrapolate_tau(taus, [a + b * t for t in taus]) == pytest.approx(a, abs=1e-9)


def test_beta_at_zero_degenerate_level(law, kernel):
    assert beta_at_zero(simulate(law, 32, 0), kernel, 1) == 1.0


def test_fault_site_is_visited_once(law):
    pos = simulate(law, 60, 3).positions
    x = (1, 0)
    s = fault_site(pos, x, law)
    z = pos[-1] - pos[:-1] - np.array(x)
    assert sum(1 for v in z if tuple(v) == s) == 1
