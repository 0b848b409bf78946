"""Scenario files (JSON) and the registry of built-in scenarios."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import discretization as dz
from .errors import PreconditionError, StructuralError
from .fields import make_field
from .model import (BLOCKS, DERIVATIVES, ClosedForm, Scenario, block_shape, derivative_shape,
                    dilate, json_copy, make_system)

_FIELD = {
    "type": "object",
    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
    "required": ["name"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "persistlab scenario",
    "type": "object",
    "properties": {
        "system": {
            "type": "object",
            "properties": {
                "m1": {"type": "integer", "minimum": 1},
                "m2": {"type": "integer", "minimum": 1},
                "bc": {"enum": ["Dirichlet", "Neumann"]},
                "domain": {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 2},
                "blocks": {"type": "object",
                           "properties": {b: {"$ref": "#/$defs/field"} for b in BLOCKS},
                           "additionalProperties": False},
                "derivatives": {"type": "object",
                                "properties": {d: {"$ref": "#/$defs/field"} for d in DERIVATIVES},
                                "additionalProperties": False},
            },
            "required": ["m1", "m2", "bc", "domain", "blocks"],
            "additionalProperties": False,
        },
        "steady": {
            "oneOf": [
                {"type": "object",
                 "properties": {"kind": {"const": "solve"},
                                "tol": {"type": "number", "exclusiveMinimum": 0},
                                "max_iter": {"type": "integer", "minimum": 1},
                                "init_amplitude": {"type": "number", "exclusiveMinimum": 0}},
                 "required": ["kind"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"kind": {"const": "closed_form"},
                                "profile": {"const": "constant"},
                                "value": {"type": "array", "items": {"type": "number"}},
                                "tol": {"type": "number", "exclusiveMinimum": 0}},
                 "required": ["kind", "profile", "value"], "additionalProperties": False},
            ]
        },
        "k": {"type": "number", "exclusiveMinimum": 0},
        "K": {"$ref": "#/$defs/field"},
        "grid_size": {"type": "integer", "minimum": 3},
        "labels": {"type": "object"},
        "reference": {
            "type": "object",
            "properties": {"kind": {"const": "exponential_modes"},
                           "amplitudes": {"type": "array", "items": {"type": "number"}}},
            "required": ["kind"], "additionalProperties": False,
        },
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["system", "steady", "k", "K", "grid_size"],
    "additionalProperties": False,
    "$defs": {"field": _FIELD},
}

_VALIDATOR = Draft202012Validator(SCHEMA)


def schema_errors(doc):
    """Human-readable list of schema violations, with the offending path."""
    out = []
    for err in sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{path}: {err.message}")
    return out


def _field(spec, shape):
    return make_field(spec["name"], spec.get("params", {}), shape)


def exponential_mode_rates(a, c, lambda_star, tol=1e-12):
    """Rates k_i with w_i = exp(k_i t) phi solving w_t = a w'' + c w.

    Needs -lambda* a_ij + c_ij = 0 for i != j; then k_i = -lambda* a_ii + c_ii.
    A diagonal ``a`` with a coupled ``c`` is also admissible when every row
    sum gives the same rate (all modes share one exponential).
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    off = -lambda_star * a + c
    np.fill_diagonal(off, 0.0)
    scale = max(1.0, np.max(np.abs(a)) * lambda_star, np.max(np.abs(c)))
    if np.max(np.abs(off)) <= tol * scale:
        return np.diag(-lambda_star * a + c).copy()
    rates = -lambda_star * np.diag(a) + c.sum(axis=1)
    a_off = a - np.diag(np.diag(a))
    if np.max(np.abs(a_off)) <= tol * scale and np.ptp(rates) <= tol * scale:
        return rates
    raise PreconditionError(
        "no exponential-mode closed form: need c_ij = lambda* a_ij for i != j "
        "(or diagonal a with equal rates)")


def scenario_from_json(doc) -> Scenario:
    errs = schema_errors(doc)
    if errs:
        raise StructuralError("invalid scenario: " + "; ".join(errs))
    doc = json_copy(doc)
    sysd = doc["system"]
    m1, m2 = sysd["m1"], sysd["m2"]
    blocks = {name: _field(f, block_shape(name, m1, m2)) for name, f in sysd["blocks"].items()}
    derivs = {name: _field(f, derivative_shape(name, m1, m2))
              for name, f in sysd.get("derivatives", {}).items()}
    system = make_system(m1, m2, sysd["bc"], sysd["domain"], **blocks, **derivs)
    K = _field(doc["K"], (m2, m2))
    ref = None
    if "reference" in doc:
        ref = _closed_form(system, doc["reference"])
    base_doc = {k: v for k, v in doc.items() if k != "scale"}
    scn = Scenario(system, float(doc["k"]), K, int(doc["grid_size"]), dict(doc["steady"]),
                   dict(doc.get("labels", {})), ref, base_doc)
    if "scale" in doc:
        scn = dilate(scn, float(doc["scale"]))
    return scn


def _closed_form(system, ref):
    if system.bc != dz.DIRICHLET:
        raise PreconditionError("exponential modes are built on the Dirichlet eigenfunction")
    names = ("a21", "b21", "b22")
    if any(system.blocks[n].name != "zero" for n in names):
        raise PreconditionError("exponential modes need a21 = b21 = b22 = 0")
    if system.blocks["a22"].name not in ("constant", "diagonal", "identity") or \
            system.blocks["g22"].name not in ("constant", "diagonal", "identity", "zero"):
        raise PreconditionError("exponential modes need constant a22 and g22")
    probe = np.zeros((1, system.m1)), np.zeros((1, system.m2)), np.zeros(1)
    a = system.a22(*probe)[0]
    c = system.g22(*probe)[0]
    lam = (np.pi / (system.domain[1] - system.domain[0])) ** 2
    rates = exponential_mode_rates(a, c, lam)
    amps = np.asarray(ref.get("amplitudes", np.ones(system.m2)), dtype=float)
    if amps.size != system.m2:
        raise StructuralError(f"reference needs {system.m2} amplitudes")
    return ClosedForm(rates, system.domain, amps)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scenario_from_json(doc)


def dump_scenario(scn: Scenario, path=None):
    doc = scn.to_json()
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------- registry

PI = float(np.pi)


def _f(name, **params):
    return {"name": name, "params": params}


def _background(m2, bc="Dirichlet", domain=(0.0, PI), rate=4.0):
    """Scalar logistic u-equation -u'' = rate*u(1-u); rate > lambda* gives u* > 0."""
    return {"m1": 1, "m2": m2, "bc": bc, "domain": list(domain),
            "blocks": {"a11": _f("identity"), "g11": _f("logistic", rate=rate)}}


def _doc(system, k=1.0, grid_size=200, labels=None, reference=None):
    doc = {"system": system, "steady": {"kind": "solve", "tol": 1e-10}, "k": k,
           "K": _f("zero"), "grid_size": grid_size, "labels": labels or {}}
    if reference:
        doc["reference"] = reference
    return doc


def _diag_extinction(params):
    a = np.asarray(params.get("a", [2.0, 2.0]), dtype=float)
    m2 = a.size
    c = np.asarray(params.get("c", np.eye(m2)), dtype=float)
    system = _background(m2)
    system["blocks"]["a22"] = _f("diagonal", values=a.tolist())
    system["blocks"]["g22"] = _f("constant", value=c.tolist())
    exponential_mode_rates(np.diag(a), c, 1.0)
    return _doc(system, k=float(params.get("k", 1.0)), grid_size=int(params.get("grid_size", 200)),
                labels={"name": "diag_extinction"}, reference={"kind": "exponential_modes"})


def _crossdiff_extinction(params):
    a = np.asarray(params.get("a", [[2.0, 1.0], [1.0, 2.0]]), dtype=float)
    c = np.asarray(params.get("c", [[1.0, 1.0], [1.0, 1.0]]), dtype=float)
    m2 = a.shape[0]
    off = ~np.eye(m2, dtype=bool)
    if np.any(np.abs(c[off] - a[off]) > 1e-12 * max(1.0, np.abs(a).max())):
        raise PreconditionError("crossdiff_extinction needs c_ij = lambda* a_ij for i != j "
                                "(lambda* = 1 on (0, pi))")
    system = _background(m2)
    system["blocks"]["a22"] = _f("constant", value=a.tolist())
    system["blocks"]["g22"] = _f("constant", value=c.tolist())
    return _doc(system, k=float(params.get("k", 1.0)), grid_size=int(params.get("grid_size", 200)),
                labels={"name": "crossdiff_extinction"}, reference={"kind": "exponential_modes"})


def _coop_persistence(params):
    G = params.get("G", [[0.5, 1.0], [1.0, 0.5]])
    m2 = len(G)
    system = _background(m2)
    system["blocks"]["a22"] = _f("diagonal", values=list(params.get("d", [1.0] * m2)))
    system["blocks"]["g22"] = _f("saturating", matrix=G, rho=float(params.get("rho", 1.0)))
    if "a21_coef" in params:
        system["blocks"]["a21"] = _f("v_linear", coef=params["a21_coef"])
    return _doc(system, k=float(params.get("k", 1.0)), grid_size=int(params.get("grid_size", 200)),
                labels={"name": "coop_persistence"})


# Designed full-diffusion scenario: constant operator data (T, multiplier
# L B, P_pos, P_coop, kappa, k) from which the reaction is built by
# structure.design_reaction.  A = (L B)^-1 T = [[2, -6], [6, 3]] / 7.
CROSSDIFF_DESIGN = {
    "T": [[2.0, 0.0], [0.0, -1.5]],
    "LB": [[1.0, 2.0], [1.5, -0.5]],
    "P_pos": [[1.5, 0.5], [1.5, 1.0]],
    "P_coop": [[-1.5, 2.0], [0.5, 1.5]],
    "kappa": 1.0,
    "k": 0.5,
    "tau": 1.25,
    "rho": 1.0,
}


def _crossdiff_persistence(params):
    """Full constant diffusion with a reaction designed to give tau > 1.

    ``diagonal_twin`` keeps the reaction and replaces the diffusion matrix by
    its diagonal (or by ``twin_diag``).
    """
    from .structure import design_reaction

    d = dict(CROSSDIFF_DESIGN)
    d.update(params)
    lam1 = 1.0                       # first Dirichlet eigenvalue of -d2/dx2 on (0, pi)
    des = design_reaction(d["T"], d["LB"], d["P_pos"], d["P_coop"], float(d["k"]),
                          float(d["kappa"]), lam1, float(d["tau"]))
    m2 = des.A.shape[0]
    k = float(d["k"])
    system = _background(m2)
    if d.get("diagonal_twin", False):
        twin = [float(t) for t in d.get("twin_diag", np.diag(des.A))]
        system["blocks"]["a22"] = _f("diagonal", values=twin)
        name = "crossdiff_persistence_twin"
    else:
        system["blocks"]["a22"] = _f("constant", value=des.A.tolist())
        name = "crossdiff_persistence"
    G = des.M - k * np.eye(m2)
    system["blocks"]["g22"] = _f("saturating", matrix=G.tolist(), rho=float(d["rho"]))
    labels = {"name": name,
              "design": {"T": d["T"], "LB": d["LB"], "P_pos": d["P_pos"], "P_coop": d["P_coop"],
                         "kappa": float(d["kappa"]), "tau_target": float(d["tau"]),
                         "A": des.A.tolist(), "rho": des.rho,
                         "direction": des.direction.tolist(), "twin": bool(d.get("diagonal_twin", False))}}
    return _doc(system, k=k, grid_size=int(d.get("grid_size", 200)), labels=labels)


def _scaled(params):
    base = params.get("base", "diag_extinction")
    doc = base if isinstance(base, dict) else REGISTRY[base](dict(params.get("base_params", {})))
    doc = json_copy(doc)
    doc["scale"] = float(params.get("R", 0.5)) * float(doc.get("scale", 1.0))
    doc.setdefault("labels", {})["name"] = "scaled"
    return doc


REGISTRY = {
    "diag_extinction": _diag_extinction,
    "crossdiff_extinction": _crossdiff_extinction,
    "coop_persistence": _coop_persistence,
    "crossdiff_persistence": _crossdiff_persistence,
    "scaled": _scaled,
}


def scenario_doc(name, params=None):
    if name not in REGISTRY:
        raise StructuralError(f"unknown scenario {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](dict(params or {}))


def analytic_scenario(name, params=None) -> Scenario:
    """Registry scenario by name; the result always has a JSON form."""
    return scenario_from_json(scenario_doc(name, params))


def resolve_scenario(ref) -> Scenario:
    """A registry name or a path to a scenario file."""
    if isinstance(ref, Scenario):
        return ref
    if str(ref) in REGISTRY:
        return analytic_scenario(str(ref))
    p = Path(ref)
    if not p.exists():
        raise StructuralError(f"scenario {ref!r} is neither a registry name nor an existing file")
    return load_scenario(p)
