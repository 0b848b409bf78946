"""The linearized eigenproblem at the semi-trivial state and its sufficient tests.

At W* = (u*, 0) the v-component linearizes to

    tau (-Div(a22 D psi) - b22 D psi - Div(c psi) + k psi) = (G + k + K) psi,

with c = a21_v . Du* and G = b21_v . Du* + g22, all frozen at W*.  W* is
v-unstable when the principal tau exceeds 1 with a positive psi.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import discretization as dz
from . import spectral as spc
from . import structure as st
from ._json import jsonable
from .errors import PreconditionError, SingularOperatorError, StructuralError
from .model import Scenario, SteadyState, dilate, eval_block

CRITERIA = ("coop_main", "coop_corollary", "coop_tau_star", "competitive_block",
            "neumann_smallness", "E_condition")
DIAG_TOL = 1e-12

# fields whose value does not depend on u (their u-derivatives vanish)
_U_FREE = {"zero", "constant", "identity", "diagonal", "diag_profile", "v_linear"}


@dataclass
class Frozen:
    """Coefficients frozen at W* on the full node set (arrays (n+1, m2, m2))."""
    grid: dz.Grid
    steady: SteadyState
    k: float
    a22: np.ndarray
    b22: np.ndarray
    c: np.ndarray               # a21_v . Du*
    divc: np.ndarray            # centred x-derivative of c
    G: np.ndarray               # b21_v . Du* + g22
    K: np.ndarray
    Du: np.ndarray              # (m1, n+1)

    @property
    def m2(self):
        return self.a22.shape[1]

    def unknown(self, arr):
        """Restrict a node-indexed array to the unknown nodes."""
        o = self.grid.offset
        return arr[o:o + self.grid.size]


def frozen_coefficients(scn: Scenario, grid: Optional[dz.Grid] = None) -> Frozen:
    grid = grid or scn.grid()
    spec = scn.system
    ss = scn.steady(grid)
    u = ss.u_full
    v0 = np.zeros((spec.m2, grid.n + 1))
    Du = ss.du_full
    for name in ("a21_v", "b21_v"):
        if getattr(spec, name) is None:
            raise StructuralError(f"missing derivative block {name}: the eigenproblem needs it")
    a21v = eval_block(spec.a21_v, u, v0, grid)
    b21v = eval_block(spec.b21_v, u, v0, grid)
    c = np.einsum("nijl,jn->nil", a21v, Du)
    bDu = np.einsum("nijl,jn->nil", b21v, Du)
    G = bDu + eval_block(spec.g22, u, v0, grid)
    K = scn.K_on_nodes(grid, u, v0)
    divc = np.gradient(c, grid.h, axis=0, edge_order=2)
    return Frozen(grid, ss, float(scn.k), eval_block(spec.a22, u, v0, grid),
                  eval_block(spec.b22, u, v0, grid), c, divc, G, K, Du)


def assemble_per1(scn: Scenario, grid: Optional[dz.Grid] = None, frozen: Optional[Frozen] = None):
    """(L, M) of the linearized eigenproblem on ``grid``."""
    fz = frozen or frozen_coefficients(scn, grid)
    g, m2, k = fz.grid, fz.m2, fz.k
    I = np.eye(m2)
    L = dz.assemble(g, [dz.diffusion(fz.a22), dz.drift(-fz.b22), dz.div_product(fz.c),
                        dz.mass(k * I)], m=m2)
    M = dz.assemble(g, [dz.mass(fz.G + k * I + fz.K)], m=m2)
    return L, M


def compute_tau(scn: Scenario, grid: Optional[dz.Grid] = None, tol=1e-10, seed=0,
                max_iter=20000) -> spc.TauResult:
    """Principal eigenpair; ``result.v_unstable`` is tau > 1 with psi > 0."""
    L, M = assemble_per1(scn, grid)
    return spc.principal_eigenpair(L, M, tol=tol, max_iter=max_iter, seed=seed, k=scn.k)


def operator_certificate(L: dz.DiscreteOperator, M: dz.DiscreteOperator) -> dict:
    """Discrete sufficient conditions for a strongly positive L^-1 M.

    L must be a nonsingular M-matrix (Z-pattern and L^-1 1 > 0), M must be
    entrywise nonnegative, and the joint sparsity graph must be strongly
    connected.  Then L^-1 M is irreducible and nonnegative, so its dominant
    eigenvector is positive.
    """
    from scipy.sparse.csgraph import connected_components

    A = L.matrix.tocsr()
    d = A.diagonal()
    off = (A - sp.diags(d)).tocoo()
    z_pattern = bool(np.all(d > 0) and np.all(off.data <= 1e-14 * np.max(np.abs(d))))
    try:
        x = L.factor().solve(np.ones(L.dim))
        m_matrix = bool(z_pattern and np.all(x > 0))
    except SingularOperatorError:
        m_matrix = False
    Mm = M.matrix.tocoo()
    nonneg = bool(np.all(Mm.data >= -1e-14 * max(1.0, np.max(np.abs(Mm.data), initial=0.0))))
    pattern = (abs(A) + abs(M.matrix)).tocsr()
    ncomp, _ = connected_components(pattern, directed=True, connection="strong")
    irreducible = bool(ncomp == 1 and np.any(Mm.data > 0))
    return {"m_matrix": m_matrix, "M_nonnegative": nonneg, "irreducible": irreducible,
            "holds": bool(m_matrix and nonneg and irreducible)}


# ------------------------------------------------------------ criteria

@dataclass
class CriterionReport:
    name: str
    holds: bool
    witness: dict
    margin: float

    def __post_init__(self):
        if self.name not in CRITERIA:
            raise StructuralError(f"unknown criterion {self.name!r}")
        self.holds = bool(self.margin > 0)

    def to_dict(self):
        return jsonable({"name": self.name, "holds": self.holds, "margin": self.margin,
                         "witness": self.witness})


def _offdiag(X):
    m = X.shape[-1]
    return X[..., ~np.eye(m, dtype=bool)]


def _require_diagonal(fz: Frozen, names=("a22", "b22", "c")):
    for nm in names:
        X = getattr(fz, nm)
        scale = max(1.0, float(np.max(np.abs(X))))
        if X.shape[-1] > 1 and np.max(np.abs(_offdiag(X))) > DIAG_TOL * scale:
            label = "a21_v Du*" if nm == "c" else nm
            raise PreconditionError(f"{label} is not diagonal at W*; the criterion assumes it is")


def _scalar_ops(fz: Frozen):
    """Per-component operators -Div(a D.) - b D. - c D. on unknown nodes.

    The drift -c D phi is written as -Div(c phi) + (Div c) phi, so the
    criteria and the eigenproblem share one discretization.
    """
    ops = []
    for i in range(fz.m2):
        ops.append(dz.assemble(fz.grid, [dz.diffusion(fz.a22[:, i, i]), dz.drift(-fz.b22[:, i, i]),
                                         dz.div_product(fz.c[:, i, i]),
                                         dz.mass(fz.divc[:, i, i])], m=1))
    return ops


def _cooperative_G(G, what="G"):
    if G.shape[-1] > 1 and not np.all(_offdiag(G) > 0):
        raise PreconditionError(f"{what} must have positive off-diagonal entries at W* "
                                "(cooperative reaction)")


def _K_const(K, m2):
    K = np.zeros((m2, m2)) if K is None else np.asarray(K, dtype=float)
    if K.shape != (m2, m2):
        raise StructuralError(f"K must be {m2}x{m2}, got {K.shape}")
    if m2 > 1 and np.any(_offdiag(K) < 0):
        raise PreconditionError("K must be cooperative (nonnegative off-diagonal entries)")
    return K


def _coop_main(fz: Frozen, G, K, k, name="coop_main", extra=None):
    ops = _scalar_ops(fz)
    lop = spc.lopez_eigenpair(ops, K, k)
    phi = lop.phi                                 # (m2, N)
    Gu = fz.unknown(G)                            # (N, m2, m2)
    divc = np.array([fz.unknown(fz.divc[:, i, i]) for i in range(fz.m2)])
    lhs = lop.lambda1 * phi - (k + divc) * phi
    rhs = np.einsum("nij,jn->in", Gu - K[None], phi)
    slack = rhs - lhs
    margin = float(slack.min())
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    witness = {"lambda1": lop.lambda1, "k": k, "K": K, "k_large_enough": lop.k_large_enough,
               "worst_component": int(i), "worst_x": float(fz.grid.nodes[j]),
               "phi_min": float(phi.min()),
               "M_nonnegative": bool(np.all(fz.unknown(G + fz.K) + k * np.eye(fz.m2) >= 0))}
    witness.update(extra or {})
    return CriterionReport(name, margin > 0, witness, margin)


def check_coop_criterion(scn: Scenario, grid: Optional[dz.Grid] = None, K=None, k=None,
                         frozen: Optional[Frozen] = None) -> CriterionReport:
    """Pointwise test lambda_1 phi_i - (k + Div c_ii) phi_i < sum_j (G_ij - K_ij) phi_j.

    (lambda_1, phi) is the principal pair of the diagonal operator coupled by
    the cooperative matrix K with shift k.  Requires diagonal a22, b22 and
    a21_v Du* at W* and a reaction G with positive off-diagonal entries.
    """
    fz = frozen or frozen_coefficients(scn, grid)
    _require_diagonal(fz)
    _cooperative_G(fz.G)
    k = scn.k if k is None else float(k)
    return _coop_main(fz, fz.G, _K_const(K, fz.m2), k)


def check_coop_corollary(scn: Scenario, grid: Optional[dz.Grid] = None, k=None, variant="ab",
                         tau_star=None, frozen: Optional[Frozen] = None) -> CriterionReport:
    """Scalar test lambda_1 < Div c_ii + k, or lambda_1 < Div c_ii for ``variant="z*"``.

    Here G itself couples the eigenoperator, shifted by k (variant "ab") or
    by k (tau* - 1) (variant "z*").
    """
    if variant not in ("ab", "z*"):
        raise StructuralError(f"variant must be 'ab' or 'z*', got {variant!r}")
    fz = frozen or frozen_coefficients(scn, grid)
    _require_diagonal(fz)
    _cooperative_G(fz.G)
    k = scn.k if k is None else float(k)
    if variant == "z*":
        if tau_star is None or not tau_star > 1:
            raise PreconditionError("variant z* needs tau_star > 1")
        shift, add = k * (tau_star - 1.0), 0.0
    else:
        shift, add = k, k
    ops = _scalar_ops(fz)
    lop = spc.lopez_eigenpair(ops, fz.unknown(fz.G), shift)
    divc = np.array([fz.unknown(fz.divc[:, i, i]) for i in range(fz.m2)])
    slack = divc + add - lop.lambda1
    margin = float(slack.min())
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    name = "coop_corollary" if variant == "ab" else "coop_tau_star"
    return CriterionReport(name, margin > 0,
                           {"variant": variant, "lambda1": lop.lambda1, "shift": shift,
                            "tau_star": tau_star, "worst_component": int(i),
                            "worst_x": float(fz.grid.nodes[j]), "phi_min": float(lop.phi.min())},
                           margin)


def check_competitive_block(scn: Scenario, sizes, grid: Optional[dz.Grid] = None, K=None, k=None,
                            frozen: Optional[Frozen] = None) -> CriterionReport:
    """Cooperative test after the sign flip v -> P v, P = diag(Id_k, -Id_l).

    G must have negative off-diagonal blocks (both directions) and become
    cooperative after the flip.  With diagonal a22, b22 and a21_v Du* the
    flip leaves the operator unchanged and maps G to P G P.
    """
    fz = frozen or frozen_coefficients(scn, grid)
    _require_diagonal(fz)
    Gu = fz.unknown(fz.G)
    P = st.sign_flip(sizes)
    if P.shape[0] != fz.m2:
        raise StructuralError(f"sizes {tuple(sizes)} do not partition m2 = {fz.m2}")
    for Gx in Gu:
        if not st.tit_for_tat(Gx, sizes):
            raise PreconditionError("G does not have the competitive block sign pattern "
                                    "(off-diagonal blocks must be negative)")
    Gbar = P @ fz.G @ P
    _cooperative_G(fz.unknown(Gbar), "the sign-flipped G")
    k = scn.k if k is None else float(k)
    rep = _coop_main(fz, Gbar, _K_const(K, fz.m2), k, name="competitive_block",
                     extra={"P": P, "sizes": list(sizes)})
    return rep


def check_E_condition(scn: Scenario, grid: Optional[dz.Grid] = None, M1=None, tau_star=1.0,
                      frozen: Optional[Frozen] = None) -> CriterionReport:
    """Comparison test through an auxiliary reaction M1 (default: M itself).

    With (lam, phi) the dominant pair of L^-1 M1 and phi > 0, the test is
    (tau*/lam) phi < M1^-1 M phi at every unknown; it gives tau > tau*
    whenever L^-1 M is positive.  ``M1`` is a matrix field on the nodes:
    an (m2, m2) constant or an (n+1, m2, m2) array.
    """
    fz = frozen or frozen_coefficients(scn, grid)
    L, M = assemble_per1(scn, frozen=fz)
    M1op = M if M1 is None else dz.assemble(fz.grid, [dz.mass(M1)], m=fz.m2)
    pair = spc.principal_eigenpair(L, M1op)
    phi = pair.psi.reshape(-1)
    if not pair.positive:
        return CriterionReport("E_condition", False,
                               {"reason": "principal eigenfunction of L^-1 M1 is not positive",
                                "lambda": pair.tau}, -np.inf)
    rhs = dz.solve(M1op, M.matrix @ phi)
    slack = rhs - (tau_star / pair.tau) * phi
    margin = float(slack.min()) - spc.COMPARISON_MARGIN
    return CriterionReport("E_condition", margin > 0,
                           {"lambda": pair.tau, "tau_star": tau_star,
                            "min_slack": float(slack.min())}, margin)


# ------------------------------------------------------------ Neumann smallness

@dataclass
class NeumannCheck:
    eps: float
    kappa: float
    tau: float
    conditions: dict            # name -> bool
    quantities: dict            # name -> {lhs, rhs}
    p1: dict                    # sub-check -> bool
    notes: list = field(default_factory=list)

    @property
    def holds(self):
        return bool(all(self.conditions.values()) and all(self.p1.values()))

    def to_dict(self):
        return jsonable({"eps": self.eps, "kappa": self.kappa, "tau": self.tau,
                         "holds": self.holds, "conditions": self.conditions,
                         "quantities": self.quantities, "P1": self.p1, "notes": self.notes})


def _fro(X, axes):
    return np.sqrt(np.sum(np.asarray(X) ** 2, axis=axes))


def _derivative_or_zero(spec, name, block, u, v, grid, notes):
    fld = getattr(spec, name)
    if fld is not None:
        return eval_block(fld, u, v, grid)
    if spec.blocks[block].name in _U_FREE and name != "a21_uv":
        return None                                   # identically zero
    if name == "a21_uv" and spec.blocks["a21"].name in ("zero",):
        return None
    notes.append(f"{name} not declared")
    return "missing"


def check_neumann_smallness(scn: Scenario, psi: spc.TauResult, grid: Optional[dz.Grid] = None,
                            eps=None, state_box=((0.0, 1.0), (0.0, 1.0)), samples=64,
                            seed=0) -> NeumannCheck:
    """A posteriori evaluation of the smallness and structure conditions.

    Norms are Frobenius norms at each node, suprema run over the grid; the
    conditions on W along solutions are sampled on ``state_box`` with |Du|
    replaced by sup|Du*| (the regime W -> W*).  eps defaults to kappa / 100.
    """
    grid = grid or scn.grid()
    spec = scn.system
    if grid.bc != dz.NEUMANN or spec.bc != dz.NEUMANN:
        raise PreconditionError("check_neumann_smallness needs a Neumann scenario; "
                                "use localized_cutoff with the Y monitor for Dirichlet")
    fz = frozen_coefficients(scn, grid)
    ps = np.asarray(psi.psi, dtype=float)
    if ps.shape != (spec.m2, grid.size):
        raise StructuralError(f"psi has shape {ps.shape}, expected {(spec.m2, grid.size)}")
    if not ps.min() > 0:
        raise PreconditionError("psi must be positive (inf psi > 0)")
    tau = float(psi.tau)
    kappa = spc.kappa_of(scn.k, tau)
    eps = kappa / 100.0 if eps is None else float(eps)
    notes = []
    if not eps > 0:
        notes.append("eps <= 0 (tau <= 1): the smallness conditions cannot hold")

    u, v0 = fz.steady.u_full, np.zeros((spec.m2, grid.n + 1))
    Dpsi = grid.gradient(ps)
    sup_Dpsi = float(np.max(np.abs(Dpsi)))
    inf_psi = float(ps.min())
    absDu = _fro(fz.Du, 0)                              # |Du*| per node
    sup_Du = float(absDu.max())
    D2u = np.gradient(fz.Du, grid.h, axis=1, edge_order=2)
    sup_D2u = float(_fro(D2u, 0).max())
    ratio = float(np.max(_fro(Dpsi, 0) / _fro(ps, 0)))   # |D psi| / |psi|

    conds, qty = {}, {}

    def put(name, lhs, rhs):
        qty[name] = {"lhs": float(lhs), "rhs": float(rhs)}
        ok = bool(lhs <= rhs)
        conds[name] = conds.get(name, True) and ok

    # a21 along solutions, sampled on the box with v > 0
    rng = np.random.default_rng(seed)
    (ulo, uhi), (vlo, vhi) = state_box
    us = rng.uniform(ulo, uhi, (samples, spec.m1))
    vs = rng.uniform(max(vlo, 0.0), vhi, (samples, spec.m2))
    xs = rng.uniform(grid.x_lo, grid.x_hi, samples)
    a21s = spec.a21(us, vs, xs)
    den = 2.0 * sup_Du + sup_Dpsi + 1.0
    vnorm = np.linalg.norm(vs, axis=1)
    ok = vnorm > 0
    worst = float(np.max(_fro(a21s, (1, 2))[ok] - eps * vnorm[ok] / den)) if ok.any() else 0.0
    put("ma21", worst + eps, eps)                       # lhs <= rhs iff worst <= 0

    put("ma2", float(_fro(fz.a22, (1, 2)).max()), eps * inf_psi / (sup_Dpsi + 1.0))
    a21v = eval_block(spec.a21_v, u, v0, grid)
    n_a21v = _fro(a21v, (1, 2, 3))
    put("ma3", float(n_a21v.max()), eps / (sup_Dpsi + 1.0))

    a22u = _derivative_or_zero(spec, "a22_u", "a22", u, v0, grid, notes)
    if isinstance(a22u, str):
        conds["ma4"] = False
        conds["ma5"] = False
        qty["ma4"] = qty["ma5"] = {"lhs": "missing a22_u", "rhs": eps}
    else:
        n_a22u = np.zeros(grid.n + 1) if a22u is None else _fro(a22u, (1, 2, 3))
        put("ma4", float(n_a22u.max()) * sup_D2u, eps)
        put("ma4", float(n_a22u.max()) * sup_Du * ratio, eps)
        qty["ma4"] = {"lhs": float(n_a22u.max()) * max(sup_D2u, sup_Du * ratio), "rhs": eps}
        n_a22 = float(_fro(fz.a22, (1, 2)).min())
        put("ma5", float(n_a22u.max() * n_a21v.max()) * sup_Du**2, eps * n_a22)
        put("ma5", float(n_a21v.max()) * sup_Du * ratio, eps)
        qty["ma5"] = {"lhs": max(float(n_a22u.max() * n_a21v.max()) * sup_Du**2 / max(n_a22, 1e-300),
                                 float(n_a21v.max()) * sup_Du * ratio), "rhs": eps}

    # gper1
    Gd = np.diagonal(fz.G, axis1=1, axis2=2)            # (n+1, m2)
    sumK = np.sum(np.abs(fz.K), axis=(1, 2))
    cross = np.max(np.abs(Gd[:, None, :] - Gd[:, :, None] / tau), axis=(1, 2))
    put("gper1", float(np.max(sumK / tau + cross)), kappa / 4.0)

    # structure hypotheses
    p1 = {}
    a22 = fz.a22
    p1["a22_symmetric"] = bool(np.allclose(a22, np.swapaxes(a22, 1, 2), atol=1e-12))
    p1["a22_positive_entries"] = bool(np.all(a22 > 0))
    for nm, sign in (("a22_uu", 1.0), ("a21_uv", -1.0)):
        fld = getattr(spec, nm)
        if fld is None:
            p1[f"{'-' if sign < 0 else ''}{nm}_positive_definite"] = False
            notes.append(f"{nm} not declared")
            continue
        X = sign * eval_block(fld, u, v0, grid)
        sym = 0.5 * (X + np.swapaxes(X, 1, 2))
        p1[f"{'-' if sign < 0 else ''}{nm}_positive_definite"] = bool(
            np.all(np.linalg.eigvalsh(sym)[:, 0] > 0))
    g22 = eval_block(spec.g22, u, v0, grid)
    p1["g22_offdiag_nonnegative"] = bool(spec.m2 == 1 or np.all(_offdiag(g22) >= 0))
    Gdiag = np.einsum("nii->ni", g22)
    R = g22 - np.einsum("ni,ij->nij", Gdiag, np.eye(spec.m2))
    comm = a22 @ R - R @ a22
    p1["a22_commutes_with_g22_offdiag"] = bool(np.max(np.abs(comm)) <= 1e-10 * max(1.0, np.abs(a22).max()))
    p1["tau_above_one"] = bool(tau > 1)
    p1["a22_nonnegative"] = bool(np.all(a22 >= 0))
    return NeumannCheck(eps, kappa, tau, conds, qty, p1, notes)


# ------------------------------------------------------------ localization and scaling

def _smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def localized_cutoff(grid: dz.Grid, ball) -> np.ndarray:
    """C^2 bump on the full node set: 1 on ``ball``, 0 near the boundary.

    Quintic ramps run over the outer half of each gap between the ball and
    the boundary.
    """
    a, b = float(ball[0]), float(ball[1])
    if not (grid.x_lo < a < b < grid.x_hi):
        raise PreconditionError(f"ball ({a:g}, {b:g}) must lie strictly inside "
                                f"({grid.x_lo:g}, {grid.x_hi:g})")
    x = grid.x
    lo = 0.5 * (grid.x_lo + a)
    hi = 0.5 * (b + grid.x_hi)
    return np.minimum(_smoothstep5((x - lo) / (a - lo)), _smoothstep5((hi - x) / (hi - b)))


def scale_scenario(scn: Scenario, R: float, tau: Optional[float] = None, grid_n=None) -> Scenario:
    """Scenario on {x : R x in domain}; labels record tau_scaled = tau / R^2.

    ``tau`` (the unscaled eigenvalue) is computed at the scenario grid size
    when not supplied.
    """
    if tau is None:
        tau = compute_tau(scn, scn.grid(grid_n)).tau
    out = dilate(scn, R)
    labels = dict(out.labels, predicted_tau=float(tau) / float(R) ** 2, unscaled_tau=float(tau),
                  scale=float(R))
    return replace(out, labels=labels)
