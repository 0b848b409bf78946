"""The continuous problem: coefficient blocks, validation and the u-only
steady state.

The full system for ``W = (u, v)`` is

    u_t = Div(a11 Du) + b11 Du + g11 u
    v_t = Div(a21 Du + a22 Dv) + b21 Du + b22 Dv + g22 v

with every block a matrix field of ``(u, v, x)``.  A semi-trivial state is
``(u*, 0)`` with ``u*`` a positive solution of the u-equation alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import discretization as dz
from .errors import (ConvergenceError, PositivityError, PreconditionError,
                     SingularOperatorError, StructuralError)
from .fields import Field, as_field, zero

BLOCKS = ("a11", "a21", "a22", "b11", "b21", "b22", "g11", "g22")
DERIVATIVES = ("a21_v", "b21_v", "a22_u", "a22_uu", "a21_uv")


def block_shape(name, m1, m2):
    rows = m1 if name.endswith("11") else m2
    cols = m2 if name.endswith("22") else m1
    return (rows, cols)


def derivative_shape(name, m1, m2):
    # a21_v[i, j, l] = d a21_ij / d v_l ; a22_u[i, j, l] = d a22_ij / d u_l
    return {"a21_v": (m2, m1, m2), "b21_v": (m2, m1, m2), "a22_u": (m2, m2, m1),
            "a22_uu": (m2, m2), "a21_uv": (m2, m2)}[name]


@dataclass(frozen=True, eq=False)
class SystemSpec:
    m1: int
    m2: int
    blocks: dict
    derivatives: dict
    bc: str = dz.DIRICHLET
    domain: tuple = (0.0, float(np.pi))

    def __getattr__(self, name):
        # blocks and declared derivatives read as attributes: spec.a22, spec.a21_v
        if name in BLOCKS:
            return self.blocks[name]
        if name in DERIVATIVES:
            return self.derivatives.get(name)
        raise AttributeError(name)

    @property
    def m(self):
        return self.m1 + self.m2

    def full_A(self, u, v, x):
        """Block diffusion matrix [[a11, 0], [a21, a22]] at sampled states."""
        x = np.atleast_1d(x)
        out = np.zeros((x.size, self.m, self.m))
        out[:, :self.m1, :self.m1] = self.a11(u, v, x)
        out[:, self.m1:, :self.m1] = self.a21(u, v, x)
        out[:, self.m1:, self.m1:] = self.a22(u, v, x)
        return out

    def with_blocks(self, **changes):
        blocks = dict(self.blocks)
        derivs = dict(self.derivatives)
        for k, v in changes.items():
            if k in BLOCKS:
                blocks[k] = as_field(v, block_shape(k, self.m1, self.m2))
            elif k in DERIVATIVES:
                derivs[k] = None if v is None else as_field(v, derivative_shape(k, self.m1, self.m2))
            else:
                raise StructuralError(f"unknown block {k!r}")
        derivs = {k: v for k, v in derivs.items() if v is not None}
        return replace(self, blocks=blocks, derivatives=derivs)


def make_system(m1, m2, bc=dz.DIRICHLET, domain=(0.0, np.pi), **blocks) -> SystemSpec:
    """Build a SystemSpec; missing blocks are zero.

    Blocks may be Fields, constant arrays or callables ``f(u, v, x)``.  The
    derivatives ``a21_v`` and ``b21_v`` are taken from the field's attached
    analytic derivative when not given explicitly.
    """
    if int(m1) < 1 or int(m2) < 1:
        raise StructuralError("m1 and m2 must be positive")
    m1, m2 = int(m1), int(m2)
    unknown = set(blocks) - set(BLOCKS) - set(DERIVATIVES)
    if unknown:
        raise StructuralError(f"unknown blocks {sorted(unknown)}")
    fb = {name: as_field(blocks.get(name), block_shape(name, m1, m2)) for name in BLOCKS}
    derivs = {}
    for name in DERIVATIVES:
        if blocks.get(name) is not None:
            derivs[name] = as_field(blocks[name], derivative_shape(name, m1, m2))
    for name in ("a21", "b21"):
        dname = name + "_v"
        if dname not in derivs and fb[name].dv is not None:
            derivs[dname] = as_field(fb[name].dv, derivative_shape(dname, m1, m2))
        if dname not in derivs and fb[name].name == "zero":
            derivs[dname] = zero(derivative_shape(dname, m1, m2))
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise StructuralError(f"degenerate domain {domain}")
    return SystemSpec(m1, m2, fb, derivs, dz.normalize_bc(bc), (lo, hi))


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    value: Optional[float] = None


@dataclass
class ValidationReport:
    checks: list
    lambda0: float
    Lambda0: float
    samples: int
    seed: int
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __bool__(self):
        return self.passed

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "lambda0": self.lambda0, "Lambda0": self.Lambda0,
                "samples": self.samples, "seed": self.seed, "notes": list(self.notes),
                "checks": [dict(c.__dict__) for c in self.checks]}


def _box(box, m, name):
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.broadcast_to(box, (m, 2))
    if box.shape != (m, 2) or np.any(box[:, 1] < box[:, 0]):
        raise PreconditionError(f"state box for {name} must be [lo, hi] or {m} such rows")
    return box


def validate_system(spec: SystemSpec, state_box=((0.0, 1.0), (0.0, 1.0)), samples=64,
                    seed=0) -> ValidationReport:
    """Sampled structural checks: normal ellipticity and a21(u,0) = 0.

    ``state_box`` is ``(u_box, v_box)``, each a ``[lo, hi]`` pair or one pair
    per component.  The same seed always yields the same report.
    """
    if int(samples) < 1:
        raise PreconditionError("samples must be >= 1")
    ubox = _box(state_box[0], spec.m1, "u")
    vbox = _box(state_box[1], spec.m2, "v")
    rng = np.random.default_rng(seed)
    u = ubox[:, 0] + (ubox[:, 1] - ubox[:, 0]) * rng.random((samples, spec.m1))
    v = vbox[:, 0] + (vbox[:, 1] - vbox[:, 0]) * rng.random((samples, spec.m2))
    x = spec.domain[0] + (spec.domain[1] - spec.domain[0]) * rng.random(samples)

    checks = []
    A = spec.full_A(u, v, x)
    sym = 0.5 * (A + np.swapaxes(A, 1, 2))
    eig = np.linalg.eigvalsh(sym)
    lam0, Lam0 = float(eig[:, 0].min()), float(eig[:, -1].max())
    checks.append(Check("ellipticity", lam0 > 0,
                        f"min eigenvalue of sym(A) over samples = {lam0:.6g}", lam0))

    for name in ("a21", "b21"):
        vals = spec.blocks[name](u, np.zeros_like(v), x)
        worst = float(np.max(np.abs(vals))) if vals.size else 0.0
        checks.append(Check(f"{name}-vanishes-at-v0", worst <= 1e-12,
                            f"max |{name}(u,0)| = {worst:.3e}", worst))

    # informational: the eigenproblem needs these, validation does not
    notes = [f"derivative block {name} is not declared"
             for name in ("a21_v", "b21_v") if name not in spec.derivatives]
    return ValidationReport(checks, lam0, Lam0, int(samples), int(seed), notes)


@dataclass(frozen=True, eq=False)
class SteadyState:
    """u* on the unknown nodes of ``grid`` (shape (m1, N))."""
    u_star: np.ndarray
    residual: float
    grid: dz.Grid
    iterations: int = 0

    @property
    def u_full(self):
        return self.grid.extend(self.u_star)

    @property
    def du_full(self):
        return self.grid.gradient(self.u_full)

    def W_star(self, m2):
        """(u, v) sampled on the full node set, v = 0; arrays (n+1, m)."""
        return self.u_full.T, np.zeros((self.grid.n + 1, m2))


def eval_block(fld: Field, u_full, v_full, grid: dz.Grid):
    """Evaluate a field at every full node; u_full, v_full have shape (m, n+1)."""
    return fld(np.atleast_2d(u_full).T, np.atleast_2d(v_full).T, grid.x)


def u_operator(spec: SystemSpec, grid: dz.Grid, u_full):
    """Frozen-coefficient operator -Div(a11 D.) - b11 D. - g11 at state (u, 0)."""
    v0 = np.zeros((spec.m2, grid.n + 1))
    a = eval_block(spec.a11, u_full, v0, grid)
    b = eval_block(spec.b11, u_full, v0, grid)
    g = eval_block(spec.g11, u_full, v0, grid)
    return dz.assemble(grid, [dz.diffusion(a), dz.drift(-b), dz.mass(-g)], m=spec.m1)


def u_residual(spec: SystemSpec, grid: dz.Grid, u):
    """Discrete residual of the steady u-equation at unknown values u (m1, N)."""
    u = np.atleast_2d(u)
    op = u_operator(spec, grid, grid.extend(u))
    return dz.apply(op, u)


def _fd_jacobian(spec, grid, u, F0):
    """Colored finite-difference Jacobian of u_residual (3-point stencil)."""
    m1, N = u.shape
    dim = m1 * N
    rows, cols, vals = [], [], []
    node = np.arange(N)
    scale = max(1.0, float(np.max(np.abs(u))))
    eps = 1e-7 * scale
    for comp in range(m1):
        for color in range(3):
            pert = np.zeros_like(u)
            sel = node % 3 == color
            pert[comp, sel] = eps
            dF = (u_residual(spec, grid, u + pert) - F0).reshape(-1) / eps
            # column comp*N + j affects rows at nodes j-1, j, j+1 of every component
            for j in node[sel]:
                for q in range(m1):
                    for jj in (j - 1, j, j + 1):
                        if 0 <= jj < N:
                            r = q * N + jj
                            if dF[r] != 0.0:
                                rows.append(r)
                                cols.append(comp * N + j)
                                vals.append(dF[r])
    return sp.csc_matrix((vals, (rows, cols)), shape=(dim, dim))


def _relative_sigma_min(J, ref):
    """Smallest singular value of J relative to that of a reference operator."""
    def smin(A):
        try:
            lu = splu(sp.csc_matrix(A))
        except RuntimeError:
            return 0.0
        x = np.ones(A.shape[0]) / np.sqrt(A.shape[0])
        val = 0.0
        for _ in range(60):
            y = lu.solve(lu.solve(x), trans="T")
            nrm = np.linalg.norm(y)
            if not np.isfinite(nrm) or nrm == 0:
                return 0.0
            new = 1.0 / np.sqrt(nrm)
            x = y / nrm
            if abs(new - val) <= 1e-6 * new:
                val = new
                break
            val = new
        return val
    s_ref = smin(ref)
    return smin(J) / s_ref if s_ref > 0 else 0.0


def default_init(spec: SystemSpec, grid: dz.Grid, amplitude=1.0):
    if grid.bc == dz.NEUMANN:
        return amplitude * np.ones((spec.m1, grid.size))
    s = np.sin(np.pi * (grid.nodes - grid.x_lo) / grid.length)
    return amplitude * np.tile(s, (spec.m1, 1))


def solve_semi_trivial(spec: SystemSpec, grid: dz.Grid, init=None, tol=1e-8, max_iter=100,
                       degeneracy_tol=1e-3) -> SteadyState:
    """Damped Newton solve of the discrete steady u-equation.

    The Jacobian is built by colored finite differences.  A Jacobian whose
    smallest singular value is below ``degeneracy_tol`` times that of the
    pure diffusion part is reported as degenerate (the positive solution is
    then not isolated, e.g. a linear problem sitting on an eigenvalue).
    """
    u = default_init(spec, grid) if init is None else np.array(init, dtype=float).reshape(spec.m1, -1)
    if u.shape[1] != grid.size:
        raise PreconditionError(f"init has {u.shape[1]} nodes, grid has {grid.size}")
    if np.any(u <= 0):
        raise PreconditionError("initial guess must be positive at interior nodes")
    v0 = np.zeros((spec.m2, grid.n + 1))
    F = u_residual(spec, grid, u).reshape(-1)
    history = [float(np.max(np.abs(F)))]
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise ConvergenceError(f"Newton did not reach residual {tol:g} in {max_iter} steps",
                                   history=history)
        it += 1
        J = _fd_jacobian(spec, grid, u, F.reshape(u.shape))
        a = eval_block(spec.a11, grid.extend(u), v0, grid)
        D = dz.assemble(grid, [dz.diffusion(a)], m=spec.m1).matrix
        if _relative_sigma_min(J, D) < degeneracy_tol:
            raise SingularOperatorError(
                "Jacobian of the steady-state equation is singular (degenerate problem)")
        delta = splu(J).solve(-F).reshape(u.shape)
        norm0 = np.linalg.norm(F)
        alpha = 1.0
        accepted = False
        while alpha >= 1.0 / 64:
            trial = u + alpha * delta
            Ft = u_residual(spec, grid, trial).reshape(-1)
            if np.all(trial > 0) and np.linalg.norm(Ft) < (1 - 1e-4 * alpha) * norm0:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # take the full step and let the positivity check decide
            trial = u + delta
            Ft = u_residual(spec, grid, trial).reshape(-1)
        u, F = trial, Ft
        history.append(float(np.max(np.abs(F))))
    umax = float(np.max(np.abs(u)))
    if umax == 0.0 or np.min(u) <= 1e-10 * max(umax, 1.0):
        raise PositivityError("steady state is not positive (no positive semi-trivial state)",
                              value=float(np.min(u)))
    return SteadyState(u, history[-1], grid, it)


def constant_steady(spec: SystemSpec, grid: dz.Grid, value, tol=1e-8) -> SteadyState:
    """A prescribed constant u* (meaningful for Neumann problems)."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    u = np.tile(value[:, None], (1, grid.size)) if value.size == spec.m1 else None
    if u is None:
        raise StructuralError(f"constant steady state needs {spec.m1} values")
    res = float(np.max(np.abs(u_residual(spec, grid, u))))
    if res > tol:
        raise PreconditionError(f"prescribed steady state has residual {res:.3e} > {tol:g}")
    if np.any(u <= 0):
        raise PositivityError("prescribed steady state is not positive", value=float(u.min()))
    return SteadyState(u, res, grid, 0)


@dataclass(frozen=True, eq=False)
class ClosedForm:
    """Exponential modes w_i(x, t) = amp_i * exp(rate_i t) * phi(x).

    ``phi`` is the principal Dirichlet eigenfunction of -d2/dx2 on the
    domain, normalised to max 1, and ``lambda_star`` its eigenvalue.
    """
    rates: np.ndarray
    domain: tuple
    amplitudes: np.ndarray

    @property
    def lambda_star(self):
        return (np.pi / (self.domain[1] - self.domain[0])) ** 2

    def phi(self, x):
        return np.sin(np.pi * (np.asarray(x) - self.domain[0]) / (self.domain[1] - self.domain[0]))

    def w(self, x, t):
        return (self.amplitudes * np.exp(self.rates * t))[:, None] * self.phi(x)[None, :]


@dataclass(frozen=True, eq=False)
class Scenario:
    system: SystemSpec
    k: float
    K: Field
    grid_size: int = 200
    steady_recipe: dict = field(default_factory=lambda: {"kind": "solve"})
    labels: dict = field(default_factory=dict)
    reference: Optional[ClosedForm] = None
    doc: Optional[dict] = None          # JSON source, when serialisable
    base: Optional["Scenario"] = None   # set for dilated scenarios
    R: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.k > 0:
            raise PreconditionError(f"k must be positive, got {self.k}")
        if int(self.grid_size) < 3:
            raise PreconditionError(f"grid_size must be >= 3, got {self.grid_size}")
        if tuple(self.K.shape) != (self.system.m2, self.system.m2):
            raise StructuralError(f"K has shape {self.K.shape}, expected "
                                  f"{(self.system.m2, self.system.m2)}")

    @property
    def name(self):
        return self.labels.get("name", "custom")

    def grid(self, n=None) -> dz.Grid:
        return dz.build_grid(self.system.domain, n or self.grid_size, self.system.bc)

    def steady(self, grid: Optional[dz.Grid] = None) -> SteadyState:
        grid = grid or self.grid()
        key = (grid.x_lo, grid.x_hi, grid.n, grid.bc)
        if key not in self._cache:
            self._cache[key] = self._solve_steady(grid)
        return self._cache[key]

    def _solve_steady(self, grid):
        if self.base is not None:
            # u*_R(x) = u*(Rx): identical node values on the dilated grid
            bg = dz.build_grid((grid.x_lo * self.R, grid.x_hi * self.R), grid.n, grid.bc)
            ss = self.base.steady(bg)
            return SteadyState(ss.u_star.copy(), ss.residual * self.R**2, grid, ss.iterations)
        r = self.steady_recipe
        kind = r.get("kind", "solve")
        if kind == "solve":
            init = None
            if "init_amplitude" in r:
                init = default_init(self.system, grid, float(r["init_amplitude"]))
            return solve_semi_trivial(self.system, grid, init=init, tol=float(r.get("tol", 1e-10)),
                                      max_iter=int(r.get("max_iter", 100)))
        if kind == "closed_form":
            return constant_steady(self.system, grid, r["value"], tol=float(r.get("tol", 1e-8)))
        raise StructuralError(f"unknown steady kind {kind!r}")

    def K_on_nodes(self, grid, u_full, v_full):
        return eval_block(self.K, u_full, v_full, grid)

    def to_json(self):
        if self.doc is None:
            raise StructuralError("scenario was built from Python callables and has no JSON form")
        return json_copy(self.doc)


def json_copy(doc):
    import json
    return json.loads(json.dumps(doc))


def dilate(scn: Scenario, R: float) -> Scenario:
    """The scenario on {x : Rx in domain} with coefficients composed with x -> Rx.

    First-order blocks pick up the chain-rule factors that make the
    u-equation and the eigenproblem exact dilations: b11, b22 scale by R,
    g11 by R^2 and b21 (with its v-derivative) by 1/R.  The shift moves
    to k_R = R^2 k with K_R = K + (1 - R^2) k Id so that k + K is kept.
    Then the principal eigenvalue satisfies tau_R = tau / R^2 exactly, and
    the same holds for the discrete problem on grids with equal n.
    """
    R = float(R)
    if not R > 0:
        raise PreconditionError(f"R must be positive, got {R}")
    if R == 1.0:
        return scn
    s = scn.system
    factors = {"b11": R, "b22": R, "g11": R**2, "b21": 1.0 / R, "b21_v": 1.0 / R}
    blocks = {name: s.blocks[name].compose(R, factors.get(name, 1.0)) for name in BLOCKS}
    blocks.update({name: f.compose(R, factors.get(name, 1.0)) for name, f in s.derivatives.items()})
    system = make_system(s.m1, s.m2, s.bc, (s.domain[0] / R, s.domain[1] / R), **blocks)
    k_R = R**2 * scn.k
    m2 = s.m2
    K0 = scn.K.compose(R)
    K = Field((m2, m2), lambda u, v, x: K0(u, v, x) + (1 - R**2) * scn.k * np.eye(m2))
    labels = dict(scn.labels, scale=R)
    doc = None
    if scn.doc is not None:
        doc = json_copy(scn.doc)
        doc["scale"] = R * float(scn.doc.get("scale", 1.0))
    base, Rtot = (scn.base, scn.R * R) if scn.base is not None else (scn, R)
    # the dilated dynamics no longer match the closed-form modes
    return Scenario(system, k_R, K, scn.grid_size, dict(scn.steady_recipe), labels, None,
                    doc, base, Rtot)
