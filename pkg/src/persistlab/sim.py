"""Time integration of the full system and the persistence monitors.

    u_t = Div(a11 Du) + b11 Du + g11 u
    v_t = Div(a21 Du + a22 Dv) + b21 Du + b22 Dv + g22 v

The IMEX scheme treats diffusion implicitly with coefficients frozen at the
current state and drift and reaction explicitly (first order in dt).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import discretization as dz
from ._json import jsonable
from .errors import PreconditionError, SingularOperatorError, StabilityError, StructuralError
from .model import ClosedForm, Scenario, SteadyState

SCHEMES = ("imex", "explicit")
OVERFLOW_GUARD = 1e8
# fields whose values do not depend on the state
_STATE_FREE = {"zero", "constant", "identity", "diagonal", "diag_profile"}


@dataclass(frozen=True, eq=False)
class State:
    t: float
    u: np.ndarray      # (m1, N) on unknown nodes
    v: np.ndarray      # (m2, N)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise StructuralError(f"non-finite state at t={self.t:g}")

    @property
    def negative(self):
        """True when some component dipped below zero."""
        return bool(self.u.min() < 0 or self.v.min() < 0)


class Stepper:
    """Discrete right-hand side and time steps for one scenario on one grid."""

    def __init__(self, scn: Scenario, grid: Optional[dz.Grid] = None, upwind=False):
        self.scn = scn
        self.grid = grid or scn.grid()
        self.spec = scn.system
        self.m1, self.m2 = self.spec.m1, self.spec.m2
        self.m = self.m1 + self.m2
        self.upwind = upwind
        s = self.spec
        self._const_diff = all(s.blocks[b].name in _STATE_FREE for b in ("a11", "a21", "a22"))
        self._const_drift = all(s.blocks[b].name in _STATE_FREE for b in ("b11", "b21", "b22"))
        self._cache = {}

    # -- coefficients on the full node set
    def _full(self, state):
        g = self.grid
        return g.extend(state.u), g.extend(state.v)

    def _fields(self, uf, vf):
        x = self.grid.x
        U, V = uf.T, vf.T
        return U, V, x

    def _block(self, names, U, V, x):
        s = self.spec
        n1 = self.grid.n + 1
        out = np.zeros((n1, self.m, self.m))
        out[:, :self.m1, :self.m1] = s.blocks[names[0]](U, V, x)
        out[:, self.m1:, :self.m1] = s.blocks[names[1]](U, V, x)
        out[:, self.m1:, self.m1:] = s.blocks[names[2]](U, V, x)
        return out

    def diffusion_matrix(self, state):
        """Full block matrix A(W) = [[a11, 0], [a21, a22]] on the nodes."""
        uf, vf = self._full(state)
        return self._block(("a11", "a21", "a22"), *self._fields(uf, vf))

    def _diffusion_op(self, state):
        if self._const_diff and "D" in self._cache:
            return self._cache["D"]
        D = dz.assemble(self.grid, [dz.diffusion(self.diffusion_matrix(state))], m=self.m).matrix
        if self._const_diff:
            self._cache["D"] = D
        return D

    def _drift_op(self, state):
        if self._const_drift and "B" in self._cache:
            return self._cache["B"]
        uf, vf = self._full(state)
        B = self._block(("b11", "b21", "b22"), *self._fields(uf, vf))
        if not np.any(B):
            op = None
        else:
            op = dz.assemble(self.grid, [dz.drift(B, upwind=self.upwind)], m=self.m).matrix
        if self._const_drift:
            self._cache["B"] = op
        return op

    def reaction(self, state):
        """(g11 u, g22 v) stacked on unknown nodes."""
        uf, vf = self._full(state)
        U, V, x = self._fields(uf, vf)
        o, N = self.grid.offset, self.grid.size
        sl = slice(o, o + N)
        fu = np.einsum("nij,nj->in", self.spec.g11(U, V, x), U)[:, sl]
        fv = np.einsum("nij,nj->in", self.spec.g22(U, V, x), V)[:, sl]
        return np.concatenate([fu, fv]).reshape(-1)

    def _explicit_part(self, state, w):
        r = self.reaction(state)
        B = self._drift_op(state)
        if B is not None:
            r = r + B @ w
        return r

    def _stack(self, state):
        return np.concatenate([state.u, state.v]).reshape(-1)

    def _unstack(self, w, t):
        W = w.reshape(self.m, -1)
        return State(t, W[:self.m1].copy(), W[self.m1:].copy())

    def rhs(self, state):
        """Semi-discrete time derivative (m*N,) at ``state``."""
        w = self._stack(state)
        return -(self._diffusion_op(state) @ w) + self._explicit_part(state, w)

    def max_stable_dt(self, state):
        A = self.diffusion_matrix(state)
        lam = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))[:, -1].max()
        return self.grid.h ** 2 / (2.0 * lam)

    def step(self, state: State, dt, scheme="imex") -> State:
        if scheme not in SCHEMES:
            raise StructuralError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if not dt > 0:
            raise PreconditionError(f"dt must be positive, got {dt}")
        w = self._stack(state)
        if scheme == "explicit":
            lim = self.max_stable_dt(state)
            if dt > lim:
                raise StabilityError(f"explicit step dt={dt:g} exceeds the stability limit "
                                     f"h^2/(2 Lambda0) = {lim:.6g}")
            return self._unstack(w + dt * self.rhs(state), state.t + dt)
        lu = self._implicit_lu(state, dt)
        rhs = w + dt * self._explicit_part(state, w)
        return self._unstack(lu.solve(rhs), state.t + dt)

    def _implicit_lu(self, state, dt):
        cached = self._cache.get("lu")
        if self._const_diff and cached is not None and cached[0] == dt:
            return cached[1]
        D = self._diffusion_op(state)
        A = (sp.identity(D.shape[0], format="csc") + dt * D).tocsc()
        try:
            lu = splu(A)
        except RuntimeError as exc:
            raise SingularOperatorError(f"implicit step matrix is singular: {exc}") from exc
        if self._const_diff:
            self._cache["lu"] = (dt, lu)
        return lu


def step(scn: Scenario, state: State, dt, scheme="imex", grid=None) -> State:
    """One time step of the full system (convenience wrapper around Stepper)."""
    return Stepper(scn, grid).step(state, dt, scheme)


# ------------------------------------------------------------ monitors

@dataclass
class Monitor:
    """Data of the functional Y(t) = int <v, a22(W*) psi> nu."""
    psi: np.ndarray             # (m2, N) positive eigenfunction
    nu: np.ndarray              # (n+1,) cutoff on the full node set
    a22_star: np.ndarray        # (n+1, m2, m2)
    kappa: float
    grid: dz.Grid
    tau: float = float("nan")

    def weight(self):
        """(m2, n+1) array a22(W*) psi nu, so that Y = sum_i int v_i weight_i."""
        pf = self.grid.extend(self.psi)
        return np.einsum("nij,jn->in", self.a22_star, pf) * self.nu[None, :]


def make_monitor(scn: Scenario, grid: Optional[dz.Grid] = None, tau_result=None, ball=None,
                 tol=1e-10) -> Monitor:
    """Monitor built from the computed principal eigenfunction.

    The cutoff is 1 for Neumann problems; for Dirichlet problems it is the
    localized bump on ``ball`` (default: the middle half of the domain).
    """
    from .instability import compute_tau, frozen_coefficients, localized_cutoff

    grid = grid or scn.grid()
    res = tau_result or compute_tau(scn, grid, tol=tol)
    if grid.bc == dz.NEUMANN:
        nu = np.ones(grid.n + 1)
    else:
        if ball is None:
            q = 0.25 * grid.length
            ball = (grid.x_lo + q, grid.x_hi - q)
        nu = localized_cutoff(grid, ball)
    fz = frozen_coefficients(scn, grid)
    return Monitor(np.asarray(res.psi), nu, fz.a22, float(res.kappa), grid, float(res.tau))


def y_functional(state: State, monitor: Monitor) -> float:
    g = monitor.grid
    vf = g.extend(state.v)
    return float(np.sum((vf * monitor.weight()) @ g.quad_weights))


def y_rate(stepper: Stepper, state: State, monitor: Monitor) -> float:
    """dY/dt through the semi-discrete right-hand side (chain rule)."""
    vt = stepper.rhs(state).reshape(stepper.m, -1)[stepper.m1:]
    return y_functional(State(state.t, state.u, vt), monitor)


# ------------------------------------------------------------ trajectories

@dataclass
class Trajectory:
    t: np.ndarray
    v_inf: np.ndarray           # (S,) max over components
    v_comp: np.ndarray          # (S, m2)
    u_dev: np.ndarray           # (S,) |u - u*|_inf
    Y: np.ndarray               # (S,) nan without monitor
    states: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def blowup(self):
        return bool(self.meta.get("blowup", False))

    @property
    def final(self):
        return self.states[-1] if self.states else None

    def to_csv(self):
        buf = io.StringIO()
        m2 = self.v_comp.shape[1] if self.v_comp.ndim == 2 else 0
        cols = ["t", "u_dev", "v_inf"] + [f"v{i}_inf" for i in range(m2)] + ["Y"]
        buf.write(",".join(cols) + "\n")
        for s in range(self.t.size):
            row = [self.t[s], self.u_dev[s], self.v_inf[s], *self.v_comp[s], self.Y[s]]
            buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()

    def summary(self):
        return jsonable({"samples": int(self.t.size), "t_final": float(self.t[-1]) if self.t.size else 0.0,
                         "v_inf_final": float(self.v_inf[-1]) if self.t.size else None,
                         "u_dev_final": float(self.u_dev[-1]) if self.t.size else None, **self.meta})


def snapshot_csv(state: State, grid: dz.Grid) -> str:
    buf = io.StringIO()
    m1, m2 = state.u.shape[0], state.v.shape[0]
    buf.write(",".join(["x"] + [f"u{i}" for i in range(m1)] + [f"v{i}" for i in range(m2)]) + "\n")
    uf, vf = grid.extend(state.u), grid.extend(state.v)
    for j, x in enumerate(grid.x):
        buf.write(",".join(f"{val:.17g}" for val in [x, *uf[:, j], *vf[:, j]]) + "\n")
    return buf.getvalue()


def initial_state(scn: Scenario, grid: Optional[dz.Grid] = None, delta=1e-3, psi=None,
                  use_reference=True) -> State:
    """u = u*, v = delta psi (or the closed form at t = 0 when available)."""
    grid = grid or scn.grid()
    ss = scn.steady(grid)
    if use_reference and scn.reference is not None:
        v = scn.reference.w(grid.nodes, 0.0)
    else:
        if psi is None:
            from .instability import compute_tau
            psi = compute_tau(scn, grid).psi
        v = delta * np.asarray(psi, dtype=float)
    return State(0.0, ss.u_star.copy(), np.asarray(v, dtype=float).reshape(scn.system.m2, -1))


def run(scn: Scenario, T_end, dt, monitor: Optional[Monitor] = None, save_every=100,
        scheme="imex", init: Optional[State] = None, grid: Optional[dz.Grid] = None,
        record_every=None, guard=OVERFLOW_GUARD, upwind=False, keep_states=True) -> Trajectory:
    """Integrate to ``T_end``; monitors every ``record_every`` steps (default save_every)."""
    grid = grid or (monitor.grid if monitor is not None else scn.grid())
    stepper = Stepper(scn, grid, upwind=upwind)
    state = init or initial_state(scn, grid)
    ustar = scn.steady(grid).u_star
    nsteps = int(round(T_end / dt))
    if nsteps < 1:
        raise PreconditionError(f"T_end={T_end:g} is shorter than one step dt={dt:g}")
    rec = int(record_every or save_every)
    ts, vinf, vcomp, udev, Ys, states = [], [], [], [], [], []

    def record(s):
        ts.append(s.t)
        vc = np.max(np.abs(s.v), axis=1)
        vcomp.append(vc)
        vinf.append(float(vc.max()))
        udev.append(float(np.max(np.abs(s.u - ustar))))
        Ys.append(y_functional(s, monitor) if monitor is not None else np.nan)

    record(state)
    if keep_states:
        states.append(state)
    blowup = False
    negative = state.negative
    for i in range(1, nsteps + 1):
        try:
            new = stepper.step(state, dt, scheme)
        except StructuralError:
            blowup = True
            break
        big = max(np.max(np.abs(new.u)), np.max(np.abs(new.v)))
        if not np.isfinite(big) or big > guard:
            blowup = True
            break
        state = new
        negative = negative or state.negative
        if i % rec == 0 or i == nsteps:
            record(state)
        if keep_states and (i % save_every == 0 or i == nsteps):
            states.append(state)
    meta = {"dt": dt, "n": grid.n, "scheme": scheme, "T_end": T_end, "steps": i if nsteps else 0,
            "blowup": blowup, "negative_values": bool(negative), "save_every": save_every,
            "record_every": rec, "scenario": scn.name}
    if blowup and (not states or states[-1] is not state):
        if keep_states:
            states.append(state)
    return Trajectory(np.array(ts), np.array(vinf), np.array(vcomp), np.array(udev), np.array(Ys),
                      states, meta)


# ------------------------------------------------------------ analyses

@dataclass
class GrowthReport:
    window: tuple
    samples: int
    kappa: float
    margin: float               # min of dY/dt - (kappa/4) Y
    relative_margin: float      # margin / max |Y| on the window
    tol: float
    passed: bool

    def to_dict(self):
        return jsonable(dict(self.__dict__))


def pre_escape_window(traj: Trajectory, level=0.05, t0=0.0):
    """[t0, first time |v|_inf exceeds ``level``] (the whole run if it never does)."""
    above = np.nonzero((traj.v_inf > level) & (traj.t >= t0))[0]
    t1 = traj.t[above[0]] if above.size else traj.t[-1]
    return (float(t0), float(t1))


def growth_inequality_check(traj: Trajectory, kappa, window=None, tol=1e-3) -> GrowthReport:
    """min over the window of dY/dt - (kappa/4) Y with centred differences.

    ``kappa`` may be a Monitor.  Passes when the margin relative to max |Y|
    on the window is at least -tol.
    """
    kappa = float(getattr(kappa, "kappa", kappa))
    if np.all(np.isnan(traj.Y)):
        raise PreconditionError("trajectory carries no Y samples (run with a monitor)")
    window = window or (float(traj.t[0]), float(traj.t[-1]))
    sel = (traj.t >= window[0] - 1e-12) & (traj.t <= window[1] + 1e-12)
    if sel.sum() < 3:
        raise PreconditionError(f"window {window} holds {int(sel.sum())} samples; need at least 3")
    t, Y = traj.t[sel], traj.Y[sel]
    dY = np.gradient(Y, t, edge_order=2)
    gap = dY - 0.25 * kappa * Y
    margin = float(gap.min())
    scale = float(np.max(np.abs(Y)))
    rel = margin / scale if scale > 0 else margin
    return GrowthReport(tuple(map(float, window)), int(sel.sum()), kappa, margin, float(rel),
                        float(tol), bool(rel >= -tol))


def persistence_verdict(traj: Trajectory, steady: Optional[SteadyState] = None, eta=0.01,
                        transient=0.5, min_samples=10) -> dict:
    """'persists', 'extinct' or 'undecided' from q(t) = |v|_inf + |u - u*|_inf.

    The tail is the part of the run after the first ``transient`` fraction.
    extinct: q at the end is below eta and its log decreases over the tail;
    persists: q stays above eta over the whole tail.  The monitors already
    hold |u - u*|, so ``steady`` is only recorded.
    """
    q = traj.v_inf + traj.u_dev
    t = traj.t
    info = {"eta": eta, "transient": transient, "samples": int(t.size)}
    if t.size < min_samples or traj.blowup:
        info["verdict"] = "undecided"
        info["reason"] = "blow-up" if traj.blowup else f"fewer than {min_samples} samples"
        return jsonable(info)
    tail = t >= t[0] + transient * (t[-1] - t[0])
    if tail.sum() < 3:
        tail = np.arange(t.size) >= t.size - 3
    tq, qq = t[tail], q[tail]
    slope = float(np.polyfit(tq, np.log(np.maximum(qq, 1e-300)), 1)[0])
    info.update({"q_final": float(q[-1]), "q_tail_min": float(qq.min()), "tail_log_slope": slope,
                 "tail_start": float(tq[0])})
    if q[-1] < eta and slope < 0:
        info["verdict"] = "extinct"
    elif qq.min() > eta:
        info["verdict"] = "persists"
    else:
        info["verdict"] = "undecided"
    if steady is not None:
        info["steady_residual"] = float(steady.residual)
    return jsonable(info)


def fit_rate(t, y):
    """Least-squares slope of log y against t."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    ok = y > 0
    return float(np.polyfit(t[ok], np.log(y[ok]), 1)[0])


def compare_analytic(traj: Trajectory, closed_form: ClosedForm, grid: dz.Grid) -> dict:
    """Sup-norm error against w_i = amp_i exp(rate_i t) phi at saved states, fitted rates."""
    if not traj.states:
        raise PreconditionError("trajectory kept no states")
    times, errs = [], []
    for s in traj.states:
        w = closed_form.w(grid.nodes, s.t)
        times.append(s.t)
        errs.append(float(np.max(np.abs(s.v - w))))
    rates = [fit_rate(traj.t, traj.v_comp[:, i]) for i in range(traj.v_comp.shape[1])]
    exact = np.asarray(closed_form.rates, dtype=float)
    rel = [abs(r - e) / abs(e) if e != 0 else abs(r) for r, e in zip(rates, exact)]
    return jsonable({"times": times, "sup_error": errs, "max_sup_error": max(errs),
                     "fitted_rates": rates, "analytic_rates": exact, "relative_rate_error": rel,
                     "max_relative_rate_error": max(rel)})
