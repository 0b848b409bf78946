import json
from pathlib import Path

import numpy as np
import pytest

from persistlab import analytic_scenario, load_scenario, scenario_from_json
from persistlab import sim
from persistlab.errors import PreconditionError, StructuralError
from persistlab.instability import compute_tau
from persistlab.scenarios import REGISTRY, SCHEMA, dump_scenario, scenario_doc, schema_errors

DOCS = Path(__file__).resolve().parents[1] / "docs"


def test_registry_names():
    assert set(REGISTRY) == {"diag_extinction", "crossdiff_extinction", "coop_persistence",
                             "crossdiff_persistence", "scaled"}
    with pytest.raises(StructuralError):
        analytic_scenario("nope")


@pytest.mark.parametrize("name", ["diag_extinction", "crossdiff_extinction"])
def test_closed_form_rates(name):
    scn = analytic_scenario(name)
    np.testing.assert_allclose(scn.reference.rates, [-1.0, -1.0], atol=1e-14)


@pytest.mark.parametrize("name", ["diag_extinction", "crossdiff_extinction"])
def test_closed_form_solves_pde(name):
    # w_t - a w'' - c w at random (x, t) with derivatives by central differences
    scn = analytic_scenario(name)
    probe = np.zeros((1, 1)), np.zeros((1, 2)), np.zeros(1)
    a = scn.system.a22(*probe)[0]
    c = scn.system.g22(*probe)[0]
    ref = scn.reference
    rng = np.random.default_rng(0)
    d = 1e-4
    for x, t in zip(rng.uniform(0.2, 3.0, 5), rng.uniform(0, 2, 5)):
        X = np.array([x - d, x, x + d])
        W = ref.w(X, t)
        wt = (ref.w(X[1:2], t + d) - ref.w(X[1:2], t - d))[:, 0] / (2 * d)
        wxx = (W[:, 0] - 2 * W[:, 1] + W[:, 2]) / d**2
        res = wt - a @ wxx - c @ W[:, 1]
        assert np.max(np.abs(res)) < 1e-5


@pytest.mark.parametrize("name", ["diag_extinction", "crossdiff_extinction"])
def test_semi_discrete_residual_order(name):
    scn = analytic_scenario(name)
    errs = []
    for n in (50, 100, 200):
        g = scn.grid(n)
        st = sim.Stepper(scn, g)
        w = scn.reference.w(g.nodes, 0.0)
        state = sim.State(0.0, scn.steady(g).u_star, w)
        dv = st.rhs(state).reshape(3, -1)[1:]
        errs.append(np.max(np.abs(dv - scn.reference.rates[:, None] * w)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), (errs, orders)


def test_crossdiff_extinction_constraint():
    with pytest.raises(PreconditionError):
        analytic_scenario("crossdiff_extinction", {"c": [[1.0, 2.0], [1.0, 1.0]]})


def test_scaled_domain_and_eigenvalue():
    base = analytic_scenario("diag_extinction")
    scn = analytic_scenario("scaled", {"R": 0.5})
    assert scn.system.domain == pytest.approx((0.0, 2 * np.pi))
    t0 = compute_tau(base, base.grid(200)).tau
    t1 = compute_tau(scn, scn.grid(200)).tau
    assert t1 == pytest.approx(4 * t0, rel=1e-8)


def test_json_round_trip(tmp_path):
    for name in REGISTRY:
        scn = analytic_scenario(name)
        p = tmp_path / f"{name}.json"
        dump_scenario(scn, p)
        back = load_scenario(p)
        assert back.to_json() == scn.to_json()


def test_unknown_keys_rejected():
    doc = scenario_doc("diag_extinction")
    doc["extra"] = 1
    doc["system"]["blocks"]["a22"]["colour"] = "red"
    errs = schema_errors(doc)
    assert any(e.startswith("<root>") for e in errs)
    assert any(e.startswith("system/blocks/a22") for e in errs)
    with pytest.raises(StructuralError):
        scenario_from_json(doc)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "k": 1,\n  "system": \n}\n')
    with pytest.raises(StructuralError, match="line 4"):
        load_scenario(p)


def test_published_schema_matches():
    assert json.loads((DOCS / "scenario.schema.json").read_text()) == json.loads(json.dumps(SCHEMA))
