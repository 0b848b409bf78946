"""Principal eigenpairs of L^{-1} M, positivity comparison tests and the
diagonal-plus-cooperative eigenproblem behind the vector maximum principle.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import discretization as dz
from .errors import ConvergenceError, PreconditionError, StructuralError

POSITIVITY_TOL = 1e-10
COMPARISON_MARGIN = 1e-8
DENSE_LIMIT = 600


@dataclass
class TauResult:
    tau: float
    psi: np.ndarray            # (m, N), max-norm 1
    positive: bool
    residual: float
    kappa: float
    iterations: int
    converged: bool = True
    method: str = "power"
    k: float = float("nan")

    @property
    def v_unstable(self):
        return bool(self.tau > 1.0 and self.positive)

    def header(self):
        return {"tau": self.tau, "kappa": self.kappa, "residual": self.residual,
                "positive": self.positive, "v_unstable": self.v_unstable,
                "iterations": self.iterations, "converged": self.converged,
                "method": self.method, "k": self.k}

    def to_csv(self, grid=None):
        """Rows (node, component, value); node is the x coordinate when a grid is given."""
        buf = io.StringIO()
        buf.write("node,component,psi\n")
        m, N = self.psi.shape
        xs = grid.nodes if grid is not None else np.arange(N)
        for p in range(m):
            for j in range(N):
                buf.write(f"{xs[j]:.17g},{p},{self.psi[p, j]:.17g}\n")
        return buf.getvalue()

    def header_json(self):
        return json.dumps(self.header(), indent=2, sort_keys=True) + "\n"


def kappa_of(k, tau):
    if k is None or tau == 0:
        return float("nan")
    return k * (tau - 1.0) / tau


def _normalize(v):
    # max-norm 1, orientation with positive mass
    s = np.sum(v)
    if s < 0:
        v = -v
    nrm = np.max(np.abs(v))
    return v / nrm if nrm > 0 else v


def _rq(Lv, Mv):
    den = Lv @ Lv
    return float(Lv @ Mv / den) if den > 0 else 0.0


def _finish(L, M, tau, v, its, method, k, converged=True):
    Lv, Mv = L.matrix @ v, M.matrix @ v
    res = float(np.max(np.abs(Mv - tau * Lv)))
    psi = v.reshape(L.m, -1)
    positive = bool(np.min(psi) > POSITIVITY_TOL * np.max(np.abs(psi)))
    return TauResult(tau, psi, positive, res, kappa_of(k, tau), its, converged, method,
                     float(k) if k is not None else float("nan"))


def _dense_pair(L, M):
    w, V = sla.eig(M.toarray(), L.toarray())
    finite = np.isfinite(w)
    w, V = w[finite], V[:, finite]
    i = int(np.argmax(np.abs(w)))
    if abs(w[i].imag) > 1e-8 * max(1.0, abs(w[i])):
        raise ConvergenceError("dominant eigenvalue is complex", history=[complex(w[i])])
    return float(w[i].real), _normalize(np.real(V[:, i]))


def principal_eigenpair(L: dz.DiscreteOperator, M: dz.DiscreteOperator, tol=1e-10,
                        max_iter=20000, seed=0, k=None, dense_fallback=True) -> TauResult:
    """Dominant eigenpair of f -> L^{-1} M f by power iteration.

    Stops once |M psi - tau L psi|_inf <= tol with |psi|_inf = 1 and tau the
    least-squares quotient.  When power iteration stalls on a small problem
    (at most 600 unknowns) a dense generalised eigensolve is used and the
    result is marked ``method="dense"``.
    """
    if L.dim != M.dim:
        raise StructuralError("L and M have different dimensions")
    lu = L.factor()
    rng = np.random.default_rng(seed)
    v = _normalize(1.0 + 0.01 * rng.random(L.dim))
    taus = []
    for it in range(1, max_iter + 1):
        w = lu.solve(M.matrix @ v)
        nrm = np.max(np.abs(w))
        if nrm == 0 or not np.isfinite(nrm):
            break
        v = _normalize(w)
        Lv, Mv = L.matrix @ v, M.matrix @ v
        tau = _rq(Lv, Mv)
        taus.append(tau)
        if np.max(np.abs(Mv - tau * Lv)) <= tol:
            return _finish(L, M, tau, v, it, "power", k)
    if dense_fallback and L.dim <= DENSE_LIMIT:
        tau, v = _dense_pair(L, M)
        return _finish(L, M, tau, v, len(taus), "dense", k)
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} steps "
        f"(last quotients {taus[-2:] if len(taus) >= 2 else taus})", history=taus[-2:])


def dense_spectral_radius(L: dz.DiscreteOperator, M: dz.DiscreteOperator):
    """Modulus-largest eigenvalue of the dense matrix L^{-1} M (oracle)."""
    A = np.linalg.solve(L.toarray(), M.toarray())
    w = np.linalg.eigvals(A)
    return w[np.argmax(np.abs(w))]


@dataclass
class ComparisonVerdict:
    ordering: str              # "Greater", "Less" or "Inconclusive"
    tau_star: float
    phi: np.ndarray
    y: np.ndarray
    s_min: float
    s_max: float
    margin: float

    def to_dict(self):
        return {"ordering": self.ordering, "tau_star": self.tau_star, "s_min": self.s_min,
                "s_max": self.s_max, "margin": self.margin,
                "sign_pattern": ("negative" if self.s_max < -self.margin else
                                 "positive" if self.s_min > self.margin else "mixed")}


def spectral_comparison(L, M, phi, tau_star) -> ComparisonVerdict:
    """Compare the spectral radius of L^{-1}M with tau_star using a positive phi.

    With s = tau_star*phi - L^{-1}M phi: s < 0 everywhere gives Greater
    (radius above tau_star), s > 0 everywhere gives Less.
    """
    phi = np.asarray(phi, dtype=float)
    vec = phi.reshape(-1)
    if vec.size != L.dim:
        raise StructuralError("phi does not match the operator")
    if np.min(vec) <= 0:
        raise PreconditionError("phi must be positive at every unknown node")
    y = tau_star * (L.matrix @ vec) - M.matrix @ vec
    s = L.factor().solve(y)
    margin = COMPARISON_MARGIN * float(np.max(np.abs(vec)))
    if np.all(s < -margin):
        ordering = "Greater"
    elif np.all(s > margin):
        ordering = "Less"
    else:
        ordering = "Inconclusive"
    return ComparisonVerdict(ordering, float(tau_star), phi, y.reshape(phi.shape),
                             float(s.min()), float(s.max()), margin)


# ----------------------------------------------------------- Lopez system

@dataclass
class LopezResult:
    lambda1: float
    phi: np.ndarray            # (m, N), positive, max-norm 1
    k_used: float
    k_large_enough: bool
    residual: float
    component_eigs: list = field(default_factory=list)
    krem_margin: float = float("nan")

    def to_dict(self):
        return {"lambda1": self.lambda1, "k_used": self.k_used,
                "k_large_enough": self.k_large_enough, "residual": self.residual,
                "component_eigs": list(self.component_eigs), "krem_margin": self.krem_margin}


def _K_nodes(K, m, N):
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = K * np.ones((m, m))
    if K.ndim == 2:
        K = np.broadcast_to(K, (N, m, m))
    if K.shape != (N, m, m):
        raise StructuralError(f"K must be {m}x{m} or ({N}, {m}, {m}), got {K.shape}")
    return K


def _check_K(K):
    m = K.shape[1]
    off = ~np.eye(m, dtype=bool)
    if np.any(K[:, off] < 0):
        raise PreconditionError("K must have nonnegative off-diagonal entries "
                                "(positivity of the coupling is essential)")


def lopez_operator(diag_ops, K, k):
    """blockdiag(L_i) + k Id - K as one DiscreteOperator."""
    ops = list(diag_ops)
    if not ops:
        raise StructuralError("need at least one scalar operator")
    grid = ops[0].grid
    for op in ops:
        if op.m != 1 or op.grid.size != grid.size:
            raise StructuralError("diag_ops must be scalar operators on one grid")
    m, N = len(ops), grid.size
    Kn = _K_nodes(K, m, N)
    _check_K(Kn)
    D = sp.block_diag([op.matrix for op in ops], format="csr")
    Kmass = dz.assemble(grid, [dz.mass(np.concatenate([Kn[:1], Kn, Kn[-1:]]) if grid.bc == dz.DIRICHLET
                                       else Kn)], m=m).matrix
    A = (D + k * sp.identity(m * N) - Kmass).tocsr()
    return dz.DiscreteOperator(A, m, grid, ("lopez",)), Kn


def _smallest_real_pair(A, tol=1e-11, max_iter=20000):
    """Principal (smallest real part) eigenpair of a Z-matrix by shifted inverse power."""
    M = A.matrix
    d = M.diagonal()
    off = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(d)
    sigma = max(0.0, -float(np.min(d - off))) + 1.0
    S = dz.DiscreteOperator((M + sigma * sp.identity(M.shape[0])).tocsr(), A.m, A.grid)
    lu = S.factor()
    v = np.ones(M.shape[0])
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        v = _normalize(w)
        Av = M @ v
        lam = float(v @ Av / (v @ v))
        res = float(np.max(np.abs(Av - lam * v)))
        if res <= tol * max(1.0, abs(lam)):
            return lam, v, res
    raise ConvergenceError("shifted inverse iteration did not converge", history=[lam])


def lopez_eigenpair(diag_ops, K, k, tol=1e-11) -> LopezResult:
    """Principal eigenpair of L_i phi_i + k phi_i - sum_j K_ij phi_j = lambda phi_i.

    ``k_large_enough`` checks (lambda_i + k) psi_i > sum_j K_ij psi_j at every
    node, with (lambda_i, psi_i) the principal pairs of the single operators
    normalised to max 1.
    """
    A, Kn = lopez_operator(diag_ops, K, k)
    lam, v, res = _smallest_real_pair(A, tol)
    m, N = A.m, A.grid.size
    phi = v.reshape(m, N)
    comp = []
    psis = []
    for op in diag_ops:
        li, pi, _ = _smallest_real_pair(op, tol)
        comp.append(li)
        psis.append(pi)
    psis = np.array(psis)
    lhs = (np.array(comp)[:, None] + k) * psis
    rhs = np.einsum("nij,jn->in", Kn, psis)
    margin = float(np.min(lhs - rhs))
    return LopezResult(lam, phi, float(k), bool(margin > 0), res, comp, margin)


def krem_threshold(diag_ops, K):
    """Smallest k for which the pointwise shift condition holds (bisection-free).

    (lambda_i + k) psi_i > sum_j K_ij psi_j  <=>  k > max over nodes of
    (sum_j K_ij psi_j) / psi_i - lambda_i.
    """
    m, N = len(diag_ops), diag_ops[0].grid.size
    Kn = _K_nodes(K, m, N)
    comp, psis = [], []
    for op in diag_ops:
        li, pi, _ = _smallest_real_pair(op)
        comp.append(li)
        psis.append(pi)
    psis = np.array(psis)
    rhs = np.einsum("nij,jn->in", Kn, psis)
    return float(np.max(rhs / psis - np.array(comp)[:, None]))


@dataclass
class MaxPrincipleReport:
    trials: int
    positive: int
    fraction: float
    k_large_enough: bool
    min_solution: float
    flagged: bool

    def to_dict(self):
        return dict(self.__dict__)


def maximum_principle_check(diag_ops, K, k, trials=100, seed=0, rhs=None) -> MaxPrincipleReport:
    """Solve (L + k Id - K) u = f for random positive f; count positive solutions.

    ``rhs`` may supply right-hand sides (one per row) instead of random ones.
    """
    A, Kn = lopez_operator(diag_ops, K, k)
    if rhs is not None:
        F = np.atleast_2d(np.asarray(rhs, dtype=float)).reshape(-1, A.dim)
        if np.any(F < 0):
            raise PreconditionError("right-hand sides must be nonnegative")
        if np.any(~np.any(F > 0, axis=1)):
            raise PreconditionError("a right-hand side is identically zero")
    else:
        rng = np.random.default_rng(seed)
        F = 0.05 + rng.random((int(trials), A.dim))
    lu = A.factor()
    good, worst = 0, np.inf
    for f in F:
        u = lu.solve(f)
        worst = min(worst, float(u.min()))
        good += int(np.all(u > 0))
    res = lopez_eigenpair(diag_ops, K, k)
    frac = good / len(F)
    return MaxPrincipleReport(len(F), good, frac, res.k_large_enough, worst, frac < 1.0)
