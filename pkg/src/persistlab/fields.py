"""Coefficient fields and the named registry used by scenario files.

A field is a vectorised callable ``f(u, v, x)`` where ``u`` has shape
``(npts, m1)``, ``v`` has shape ``(npts, m2)`` and ``x`` has shape
``(npts,)``.  It returns an array of shape ``(npts, *shape)``.  Fields built
from the registry remember ``(name, params)`` so scenarios round-trip
through JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import StructuralError

_REGISTRY: dict[str, Callable] = {}


@dataclass(frozen=True)
class Field:
    shape: tuple
    fn: Callable = dc_field(repr=False, compare=False)
    name: str = "custom"
    params: dict = dc_field(default_factory=dict, compare=False)
    # analytic derivative supplied by the field author, e.g. d/dv for a21
    dv: "Field | None" = dc_field(default=None, repr=False, compare=False)

    def __call__(self, u, v, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        npts = x.shape[0]
        u = np.asarray(u, dtype=float).reshape(npts, -1)
        v = np.asarray(v, dtype=float).reshape(npts, -1)
        out = np.asarray(self.fn(u, v, x), dtype=float)
        if out.shape == tuple(self.shape):
            out = np.broadcast_to(out, (npts,) + tuple(self.shape))
        if out.shape != (npts,) + tuple(self.shape):
            raise StructuralError(
                f"field {self.name!r} returned shape {out.shape}, "
                f"expected {(npts,) + tuple(self.shape)}")
        if not np.all(np.isfinite(out)):
            raise StructuralError(f"field {self.name!r} produced non-finite values")
        return out

    def to_json(self):
        if self.name == "custom":
            raise StructuralError("custom callables cannot be serialised")
        return {"name": self.name, "params": _jsonable(self.params)}

    def compose(self, R, factor=1.0):
        """Field evaluated at ``R*x`` and multiplied by ``factor``."""
        base = self

        def fn(u, v, x):
            return factor * base(u, v, R * x)

        dv = self.dv.compose(R, factor) if self.dv is not None else None
        return Field(self.shape, fn, name="custom", dv=dv)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def register(name):
    def deco(ctor):
        _REGISTRY[name] = ctor
        return ctor
    return deco


def registered_names():
    return sorted(_REGISTRY)


def make_field(name, params=None, shape=None):
    """Build a registry field; ``shape`` is the shape required by its role."""
    params = dict(params or {})
    if name not in _REGISTRY:
        raise StructuralError(f"unknown field {name!r}; known: {registered_names()}")
    f = _REGISTRY[name](params, tuple(shape) if shape is not None else None)
    if shape is not None and tuple(f.shape) != tuple(shape):
        raise StructuralError(
            f"field {name!r} has shape {f.shape}, role requires {tuple(shape)}")
    return f


def constant(value):
    value = np.asarray(value, dtype=float)
    return make_field("constant", {"value": value.tolist()}, value.shape)


def zero(shape):
    return make_field("zero", {}, shape)


def as_field(obj, shape):
    """Coerce a Field, array-like constant or callable into a Field."""
    if isinstance(obj, Field):
        if tuple(obj.shape) != tuple(shape):
            raise StructuralError(f"field shape {obj.shape} != required {tuple(shape)}")
        return obj
    if obj is None:
        return zero(shape)
    if callable(obj):
        return Field(tuple(shape), obj)
    value = np.asarray(obj, dtype=float)
    if value.shape != tuple(shape):
        raise StructuralError(f"constant of shape {value.shape} != required {tuple(shape)}")
    return constant(value)


def _need_shape(shape, name):
    if shape is None:
        raise StructuralError(f"field {name!r} needs its role shape")
    return shape


@register("constant")
def _constant(params, shape):
    value = np.asarray(params["value"], dtype=float)
    return Field(value.shape, lambda u, v, x: value, "constant", {"value": value.tolist()})


@register("zero")
def _zero(params, shape):
    shape = _need_shape(shape, "zero")
    value = np.zeros(shape)
    return Field(tuple(shape), lambda u, v, x: value, "zero", {})


@register("identity")
def _identity(params, shape):
    shape = _need_shape(shape, "identity")
    scale = float(params.get("scale", 1.0))
    value = scale * np.eye(shape[0])
    return Field(tuple(shape), lambda u, v, x: value, "identity", {"scale": scale})


@register("diagonal")
def _diagonal(params, shape):
    value = np.diag(np.asarray(params["values"], dtype=float))
    return Field(value.shape, lambda u, v, x: value, "diagonal", dict(params))


@register("diag_profile")
def _diag_profile(params, shape):
    """diag(d_i * (1 + amp*sin(freq*x + phase))), an x-dependent diagonal."""
    d = np.asarray(params["values"], dtype=float)
    amp = float(params.get("amplitude", 0.0))
    freq = float(params.get("frequency", 1.0))
    phase = float(params.get("phase", 0.0))
    m = d.size

    def fn(u, v, x):
        prof = 1.0 + amp * np.sin(freq * x + phase)
        out = np.zeros((x.size, m, m))
        out[:, np.arange(m), np.arange(m)] = prof[:, None] * d[None, :]
        return out

    return Field((m, m), fn, "diag_profile", dict(params))


@register("logistic")
def _logistic(params, shape):
    """Reaction diag(rate_i * (1 - u_i/capacity)) for the u block."""
    rate = np.atleast_1d(np.asarray(params.get("rate", 1.0), dtype=float))
    cap = float(params.get("capacity", 1.0))
    m = rate.size if shape is None else shape[0]
    rate = np.broadcast_to(rate, (m,))

    def fn(u, v, x):
        out = np.zeros((x.size, m, m))
        out[:, np.arange(m), np.arange(m)] = rate * (1.0 - u[:, :m] / cap)
        return out

    return Field((m, m), fn, "logistic", dict(params))


@register("saturating")
def _saturating(params, shape):
    """G - rho*|v|^2 Id: equals G at v = 0 with a cubic saturation."""
    G = np.asarray(params["matrix"], dtype=float)
    rho = float(params.get("rho", 1.0))
    m = G.shape[0]

    def fn(u, v, x):
        sq = np.sum(v * v, axis=1)
        return G[None] - rho * sq[:, None, None] * np.eye(m)[None]

    return Field(G.shape, fn, "saturating", dict(params))


@register("v_linear")
def _v_linear(params, shape):
    """Entries linear in v: out[i, j] = sum_l coef[i, j, l] v_l.

    Vanishes at v = 0, which is what the a21/b21 blocks need at a
    semi-trivial state; the exact v-derivative ``coef`` is attached.
    """
    C = np.asarray(params["coef"], dtype=float)
    if C.ndim != 3:
        raise StructuralError("v_linear coef must be rank 3 [rows][cols][m2]")

    def fn(u, v, x):
        return np.einsum("ijl,nl->nij", C, v)

    dv = Field(C.shape, lambda u, v, x: C, "constant", {"value": C.tolist()})
    return Field(C.shape[:2], fn, "v_linear", dict(params), dv=dv)


@register("affine_u")
def _affine_u(params, shape):
    """base + sum_l slope[..., l] u_l (constant in v and x)."""
    base = np.asarray(params["base"], dtype=float)
    slope = np.asarray(params["slope"], dtype=float)
    if slope.shape[:-1] != base.shape:
        raise StructuralError("affine_u slope must have shape base.shape + (m1,)")

    def fn(u, v, x):
        return base[None] + np.einsum("...l,nl->n...", slope, u)

    return Field(base.shape, fn, "affine_u", dict(params))
