"""Matrix-structure toolkit for cross-diffusion operators.

Sign classes, the multiplier class M(k_hat), the block condition, the
triangularising multipliers and the strict positivity inequality that makes
the transformed inverse composed with the reaction matrix strongly positive.

Matrix *fields* are callables ``F(xs) -> (len(xs), n, n)``; constants are
plain ``(n, n)`` arrays.  Every structural claim about a field is checked at
each sampled point.

Block convention: ``k_hat`` is a list of vectors with ``k_hat[i]`` of length
``i + 1``.  The vector of length ``i`` addresses the leading principal
``(i+1) x (i+1)`` block ``[[alpha, beta], [gamma, delta]]`` with ``alpha``
of size ``i x i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (CertificationError, PreconditionError, SingularOperatorError,
                     StructuralError)

TRI_TOL = 1e-10
BLOCK_TOL = 1e-12


# ------------------------------------------------------------ classification

@dataclass(frozen=True)
class MatrixClass:
    positive: bool
    nonnegative: bool
    cooperative: bool
    competitive: bool
    partially_competitive: bool
    diagonal: bool
    lower_triangular: bool
    offdiag_nonnegative: bool

    @property
    def flags(self):
        return {k for k, v in self.__dict__.items() if v}


def classify(A) -> MatrixClass:
    """Entrywise sign classes with strict inequalities.

    Zero off-diagonal entries count neither as cooperative nor competitive,
    so 1x1 matrices are never cooperative or competitive.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructuralError(f"classify needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    off = A[~np.eye(n, dtype=bool)]
    has_off = off.size > 0
    return MatrixClass(
        positive=bool(np.all(A > 0)),
        nonnegative=bool(np.all(A >= 0)),
        cooperative=bool(has_off and np.all(off > 0)),
        competitive=bool(has_off and np.all(off < 0)),
        partially_competitive=bool(np.any(off < 0)),
        diagonal=bool(np.all(off == 0)),
        lower_triangular=bool(np.all(np.triu(A, 1) == 0)),
        offdiag_nonnegative=bool(np.all(off >= 0)),
    )


# ------------------------------------------------------------ fields

def sample(F, xs):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if callable(F):
        out = np.asarray(F(xs), dtype=float)
        if out.ndim == 2:
            out = np.broadcast_to(out, (xs.size,) + out.shape)
    else:
        out = np.broadcast_to(np.asarray(F, dtype=float), (xs.size,) + np.shape(F))
    if out.ndim != 3 or out.shape[1] != out.shape[2] or out.shape[0] != xs.size:
        raise StructuralError(f"matrix field evaluates to shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise StructuralError("matrix field produced non-finite values")
    return np.array(out)


def derivative(F, xs, dF=None, step=1e-5):
    """x-derivative of a matrix field: analytic when dF is given, zero for constants."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if dF is not None:
        return sample(dF, xs)
    if not callable(F):
        n = np.shape(F)[0]
        return np.zeros((xs.size, n, n))
    return (sample(F, xs + step) - sample(F, xs - step)) / (2 * step)


def _is_const(F):
    return not callable(F)


def _upper_max(X):
    return float(np.max(np.abs(np.triu(X, 1)))) if X.shape[-1] > 1 else 0.0


# ------------------------------------------------------------ class M(k_hat)

@dataclass
class CheckResult:
    ok: bool
    reason: str = ""
    detail: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.ok)


def _check_khat(k_hat, n):
    ks = [np.atleast_1d(np.asarray(k, dtype=float)) for k in k_hat]
    sizes = [k.size for k in ks]
    if any(s < 1 or s >= n for s in sizes) or len(set(sizes)) != len(sizes):
        raise StructuralError(f"k_hat vector lengths {sizes} do not fit a {n}x{n} matrix "
                              "(need distinct lengths in 1..n-1)")
    return ks


def _blocks(T, i):
    return T[:i, :i], T[:i, i], T[i, :i], T[i, i]


def in_class_M(T, k_hat, tol=BLOCK_TOL) -> CheckResult:
    """Membership of a constant matrix in M(k_hat): beta_i = alpha_i k_hat_i with
    alpha_i invertible, for every supplied block."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise StructuralError("T must be square")
    ks = _check_khat(k_hat, T.shape[0])
    scale = max(1.0, float(np.max(np.abs(T))))
    for k in ks:
        i = k.size
        a, b, _, _ = _blocks(T, i)
        if abs(np.linalg.det(a)) <= 1e-14 * scale**i or np.linalg.cond(a) > 1e12:
            return CheckResult(False, "alpha not invertible", {"block": i})
        err = float(np.max(np.abs(b - a @ k)))
        if err > tol * scale:
            return CheckResult(False, "beta != alpha k_hat", {"block": i, "error": err})
    return CheckResult(True)


def infer_k_hat(T):
    """The k_hat vectors of T (all leading blocks), or None if some alpha is singular."""
    T = np.asarray(T, dtype=float)
    out = []
    for i in range(1, T.shape[0]):
        a, b, _, _ = _blocks(T, i)
        try:
            if np.linalg.cond(a) > 1e12:
                return None
            out.append(np.linalg.solve(a, b))
        except np.linalg.LinAlgError:
            return None
    return out


def infer_k_bar(A, k_hat, B=None):
    """k_bar solving -a k + b = (d - <c, k>) k_bar from A (or B when A's factor vanishes)."""
    A = np.asarray(A, dtype=float)
    out = []
    for k in k_hat:
        i = k.size
        kb = np.zeros(i)
        for X in (A, B):
            if X is None:
                continue
            a, b, c, d = _blocks(np.asarray(X, dtype=float), i)
            den = d - c @ k
            if abs(den) > 1e-12 * max(1.0, abs(d)):
                kb = (b - a @ k) / den
                break
        out.append(kb)
    return out


def check_block_condition(A, B, k_hat, k_bar, T=None, tol=BLOCK_TOL) -> CheckResult:
    """Block condition -a k_hat + b = -<c, k_hat> k_bar + d k_bar for A and B.

    When T is supplied the invertibility of
    a - (1/delta) b gamma - k_bar (c - (1/delta) d gamma)
    is also required, with gamma, delta taken from T's block.
    """
    A = np.asarray(A, dtype=float)
    B = np.zeros_like(A) if B is None else np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructuralError("A and B must be square of equal size")
    n = A.shape[0]
    ks = _check_khat(k_hat, n)
    kbs = [np.atleast_1d(np.asarray(k, dtype=float)) for k in k_bar]
    if len(kbs) != len(ks) or any(kb.size != k.size for kb, k in zip(kbs, ks)):
        raise StructuralError("k_bar must match k_hat vector by vector")
    detail = {"blocks": []}
    for k, kb in zip(ks, kbs):
        i = k.size
        for label, X in (("A", A), ("B", B)):
            a, b, c, d = _blocks(X, i)
            lhs = -a @ k + b
            rhs = -(c @ k) * kb + d * kb
            scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
            err = float(np.max(np.abs(lhs - rhs)))
            detail["blocks"].append({"block": i, "matrix": label, "lhs": lhs.tolist(),
                                     "rhs": rhs.tolist(), "error": err})
            if err > tol * scale:
                return CheckResult(False, "block condition fails", detail)
        if T is not None:
            _, _, gamma, delta = _blocks(np.asarray(T, dtype=float), i)
            if delta == 0:
                return CheckResult(False, "delta = 0 in the invertibility condition", detail)
            a, b, c, d = _blocks(A, i)
            Q = a - np.outer(b, gamma) / delta - np.outer(kb, c - d * gamma / delta)
            if abs(np.linalg.det(Q)) <= 1e-12 * max(1.0, np.max(np.abs(Q))) ** i:
                return CheckResult(False, "invertibility condition fails", detail)
    return CheckResult(True, "", detail)


# ------------------------------------------------------------ triangularisation

MODES = ("const_LB_zero_B", "const_T_diag_LB", "diag_LB_diag_DTT")


@dataclass
class Triangularization:
    mode: str
    xs: np.ndarray
    B_mult: np.ndarray          # (npts, n, n)
    L_mult: np.ndarray          # (npts, n, n), lower triangular
    T: np.ndarray               # (npts, n, n)
    A_d: np.ndarray             # (npts, n) diagonal entries
    C: np.ndarray               # (npts, n, n)
    C_hat: np.ndarray           # (npts, n, n)
    certified: bool
    k_hat: list
    k_bar: list
    upper_error: float          # max strictly-upper entry of BAT^-1 and BBT^-1
    reasons: list = field(default_factory=list)
    non_unique: bool = True     # L is one admissible choice, not a canonical one

    @property
    def LB(self):
        return self.L_mult @ self.B_mult

    def to_dict(self):
        return {"mode": self.mode, "xs": self.xs.tolist(), "B_mult": self.B_mult.tolist(),
                "L_mult": self.L_mult.tolist(), "T": self.T.tolist(), "A_d": self.A_d.tolist(),
                "C": self.C.tolist(), "C_hat": self.C_hat.tolist(), "certified": self.certified,
                "k_hat": [np.asarray(k).tolist() for k in self.k_hat],
                "k_bar": [np.asarray(k).tolist() for k in self.k_bar],
                "upper_error": self.upper_error, "reasons": list(self.reasons),
                "non_unique": self.non_unique}


def _offdiag_max(X):
    n = X.shape[-1]
    return float(np.max(np.abs(X[..., ~np.eye(n, dtype=bool)]))) if n > 1 else 0.0


def triangularize(A, B=None, T=None, mode="const_LB_zero_B", xs=None, dT=None, L_mult=None,
                  tol=TRI_TOL) -> Triangularization:
    """Multipliers (B_mult, L_mult) with B_mult A T^-1 = L_mult^-1 A_d, A_d diagonal.

    The product S = L_mult B_mult equals A_d T A^-1, so a lower-triangular
    B_mult B T^-1 exists exactly when T A^-1 B T^-1 is lower triangular; the
    mode fixes S (constant S = T(x0) A(x0)^-1 for const_LB_zero_B, S = Id
    otherwise).  ``L_mult`` defaults to the identity; any invertible lower
    triangular choice is admissible, which is recorded as ``non_unique``.
    """
    if mode not in MODES:
        raise StructuralError(f"unknown mode {mode!r}; expected one of {MODES}")
    xs = np.linspace(0.0, 1.0, 21) if xs is None else np.atleast_1d(np.asarray(xs, dtype=float))
    As = sample(A, xs)
    n = As.shape[1]
    Bs = np.zeros_like(As) if B is None else sample(B, xs)
    T = np.eye(n) if T is None else T
    Ts = sample(T, xs)
    Tinv = np.linalg.inv(Ts)
    Ainv = np.linalg.inv(As)
    normA = float(np.max(np.linalg.norm(As, axis=(1, 2))))

    # block condition on the sampled coefficients (with k_hat read off T)
    k_hat = infer_k_hat(Ts[0])
    if k_hat is None:
        raise StructuralError("block condition fails: T has a singular leading block")
    for j in range(xs.size):
        if not in_class_M(Ts[j], k_hat, tol=1e-9):
            raise StructuralError("block condition fails: T is not in one class M(k_hat)")
    k_bar = infer_k_bar(As[0], k_hat, Bs[0])
    for j in range(xs.size):
        chk = check_block_condition(As[j], Bs[j], k_hat, k_bar, T=Ts[j], tol=1e-9)
        if not chk:
            raise StructuralError(f"block condition fails at x={xs[j]:g}: {chk.reason}")

    reasons = []
    if mode == "const_LB_zero_B":
        if np.max(np.abs(Bs)) > 0:
            raise PreconditionError("mode const_LB_zero_B requires B = 0")
        S = np.broadcast_to(Ts[0] @ Ainv[0], As.shape).copy()
    else:
        S = np.broadcast_to(np.eye(n), As.shape).copy()
        if mode == "const_T_diag_LB" and not _is_const(T):
            raise PreconditionError("mode const_T_diag_LB requires a constant T")
        if mode == "diag_LB_diag_DTT":
            DT = derivative(T, xs, dT)
            if _offdiag_max(DT @ Tinv) > 1e-8 * max(1.0, float(np.max(np.abs(DT)))):
                raise PreconditionError("mode diag_LB_diag_DTT requires D T T^-1 diagonal "
                                        "(T = diag(delta_i) C)")

    Ad_full = S @ As @ Tinv
    if _offdiag_max(Ad_full) > 1e-9 * max(1.0, normA):
        raise StructuralError("block condition fails: S A T^-1 is not diagonal for this mode "
                              f"(off-diagonal {_offdiag_max(Ad_full):.3e})")
    A_d = np.diagonal(Ad_full, axis1=1, axis2=2).copy()

    Lm = np.broadcast_to(np.eye(n), As.shape).copy() if L_mult is None else sample(L_mult, xs)
    if max(_upper_max(L) for L in Lm) > 0:
        raise StructuralError("L_mult must be lower triangular")
    Bm = np.linalg.solve(Lm, S)

    upper = max(max(_upper_max(X) for X in Bm @ As @ Tinv),
                max(_upper_max(X) for X in Bm @ Bs @ Tinv))
    if upper > tol * max(1.0, normA):
        raise StructuralError(f"block condition fails: B_mult B T^-1 is not lower triangular "
                              f"(upper entry {upper:.3e})")

    DS = derivative(S[0] if mode == "const_LB_zero_B" else np.eye(n), xs)
    DTinv = -Tinv @ derivative(T, xs, dT) @ Tinv
    C = -(DS @ As @ Tinv + S @ Bs @ Tinv)
    C_hat = DS @ As @ DTinv + S @ Bs @ DTinv

    certified = True
    if np.any(A_d <= 0):
        j, i = np.unravel_index(np.argmin(A_d), A_d.shape)
        reasons.append(f"A_d entry {i} is {A_d[j, i]:.6g} <= 0 at x={xs[j]:g}")
        certified = False
    if _offdiag_max(C) > 1e-9 * max(1.0, float(np.max(np.abs(C)))):
        reasons.append("C is not diagonal")
        certified = False
    offC = C_hat[:, ~np.eye(n, dtype=bool)] if n > 1 else np.zeros((xs.size, 0))
    if offC.size and np.any(offC < -1e-12):
        reasons.append("C_hat is not cooperative (negative off-diagonal entry)")
        certified = False
    return Triangularization(mode, xs, Bm, Lm, Ts, A_d, C, C_hat, certified, k_hat, k_bar,
                             upper, reasons)


def require_certified(tri: Triangularization):
    if tri.certified:
        return
    r = tri.reasons[0] if tri.reasons else "triangularization not certified"
    if "A_d" in r:
        raise CertificationError("A_d not positive", r)
    raise CertificationError("triangularization not certified", "; ".join(tri.reasons))


# ------------------------------------------------------------ positivity

@dataclass
class PositivityCertificate:
    P_pos: np.ndarray
    P_coop: np.ndarray
    kappa: float
    k: float
    mppos_holds: bool
    M_out: np.ndarray           # (npts, n, n)
    m_bg: np.ndarray
    slack: float                # min over samples/entries of LHS - RHS
    failed: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"P_pos": np.asarray(self.P_pos).tolist(), "P_coop": np.asarray(self.P_coop).tolist(),
                "kappa": self.kappa, "k": self.k, "mppos_holds": self.mppos_holds,
                "M_out": self.M_out.tolist(), "m_bg": self.m_bg.tolist(), "slack": self.slack,
                "failed": list(self.failed), **{k: _jsonable(v) for k, v in self.extra.items()}}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def mppos_sides(T, LB, P_pos, P_coop, k, kappa):
    """Both sides of kappa T^-1 P^-1 T > T^-1 P^-1 (P_coop T + k LB), per sample."""
    Pinv = np.linalg.inv(P_pos)
    Tinv = np.linalg.inv(T)
    lhs = kappa * Tinv @ Pinv @ T
    rhs = Tinv @ Pinv @ (P_coop @ T + k * LB)
    return lhs, rhs


def _require_positive_coop(P_pos, P_coop):
    P_pos = np.asarray(P_pos, dtype=float)
    P_coop = np.asarray(P_coop, dtype=float)
    if not classify(P_pos).positive:
        raise PreconditionError("P_pos must be a positive matrix")
    cc = classify(P_coop)
    if P_coop.shape[0] > 1 and not cc.cooperative:
        raise PreconditionError("P_coop must be cooperative")
    if abs(np.linalg.det(P_pos)) < 1e-13 * max(1.0, np.max(np.abs(P_pos))) ** P_pos.shape[0]:
        raise SingularOperatorError("P_pos is singular")
    return P_pos, P_coop


def certify_positivity(tri: Triangularization, P_pos, P_coop, k, kappa) -> PositivityCertificate:
    """Entrywise strict check of the positivity inequality at every sample.

    Emits M_out = (L B)^-1 [P_pos + kappa Id - P_coop] T - k Id and
    m_bg = M_out - k Id.
    """
    P_pos, P_coop = _require_positive_coop(P_pos, P_coop)
    require_certified(tri)
    LB = tri.LB
    n = LB.shape[1]
    dets = np.linalg.det(LB)
    if np.any(np.abs(dets) < 1e-13):
        raise SingularOperatorError("L_mult B_mult is singular")
    lhs, rhs = mppos_sides(tri.T, LB, P_pos, P_coop, k, kappa)
    diff = lhs - rhs
    slack = float(diff.min())
    holds = bool(slack > 0)
    failed = []
    if not holds:
        idx = np.argwhere(diff <= 0)
        for j, r, c in idx[:10]:
            failed.append(f"(MPpos) fails at x={tri.xs[j]:g} entry ({r},{c}): "
                          f"{lhs[j, r, c]:.6g} <= {rhs[j, r, c]:.6g}")
    Mo = np.linalg.solve(LB, (P_pos + kappa * np.eye(n) - P_coop) @ tri.T) - k * np.eye(n)
    return PositivityCertificate(P_pos, P_coop, float(kappa), float(k), holds, Mo,
                                 Mo - k * np.eye(n), slack, failed)


# ------------------------------------------------------------ competitive systems

def sign_flip(sizes):
    kdim, ldim = (int(s) for s in sizes)
    return np.diag(np.concatenate([np.ones(kdim), -np.ones(ldim)]))


def competitive_transform(G, sizes):
    """P = diag(Id_k, -Id_l) and G_bar = P^-1 G P = [[A, -B], [-C, D]]."""
    G = np.asarray(G, dtype=float)
    kdim, ldim = (int(s) for s in sizes)
    if G.ndim != 2 or G.shape != (kdim + ldim, kdim + ldim) or kdim < 1 or ldim < 1:
        raise StructuralError(f"sizes {sizes} do not partition a matrix of shape {G.shape}")
    P = sign_flip(sizes)
    if not np.allclose(P @ P, np.eye(kdim + ldim)):
        raise StructuralError("P is not an involution")
    Gb = P @ G @ P
    return P, Gb, classify(Gb)


def transform_coefficient(a: Callable, P):
    """a_bar(u, v, x) = P^-1 a(u, P v, x) P for a square block field ``a``."""
    P = np.asarray(P, dtype=float)

    def a_bar(u, v, x):
        return P @ a(u, v @ P.T, x) @ P
    return a_bar


def tit_for_tat(G, sizes, tol=0.0):
    """True when the off-diagonal blocks of G have the competitive sign pattern.

    Every entry of the off-diagonal blocks must be negative, so no pair
    (B_ij, C_ji) mixes signs.
    """
    G = np.asarray(G, dtype=float)
    kdim = int(sizes[0])
    Bk = G[:kdim, kdim:]
    Ck = G[kdim:, :kdim]
    return bool(np.all(Bk < -tol) and np.all(Ck < -tol))


# ------------------------------------------------------------ prescribed M

def build_M_from_given(M_target, LB, T, k, kappa, nu_star, xs=None, dT=None,
                       deltas=(1e-3, 1e-2, 1e-1, 0.5, 1.0), kappa_factors=(1.0, 1.5, 2.0, 4.0, 8.0),
                       ) -> PositivityCertificate:
    """Split M_target = (L B)^-1 P_pos T + nu* M_* and check M_* > 0.

    Template: with X = L B (M_target + k Id) T^-1 - kappa Id, take
    P_pos = X^+ + delta J and P_coop = X^- + delta J (J all ones), so
    P_pos - P_coop = X exactly.  kappa and delta are line-searched over the
    given grids; the first admissible pair is returned.
    """
    if nu_star not in (1, -1):
        raise PreconditionError("nu_star must be +1 or -1")
    xs = np.array([0.0]) if xs is None else np.atleast_1d(np.asarray(xs, dtype=float))
    Ms = sample(M_target, xs)
    n = Ms.shape[1]
    Ts = sample(T, xs)
    LBs = sample(LB, xs)
    if np.any(nu_star * Ts <= 0):
        raise PreconditionError(f"nu_star * T must be positive (nu_star = {nu_star})")
    if not _is_const(T) or dT is not None:
        DT = derivative(T, xs, dT)
        if max(_upper_max(X) for X in DT @ np.linalg.inv(Ts)) > 1e-8:
            raise PreconditionError("D T T^-1 must be lower triangular")
    if np.any(np.abs(np.linalg.det(LBs)) < 1e-13):
        raise SingularOperatorError("L_mult B_mult is singular")
    I, J = np.eye(n), np.ones((n, n))
    failures = []
    for fk in kappa_factors:
        kap = kappa * fk
        X = LBs @ (Ms + k * I) @ np.linalg.inv(Ts) - kap * I
        # templates must be constant matrices: use the entrywise extremes
        Xp = np.max(np.maximum(X, 0), axis=0)
        Xm = np.max(np.maximum(-X, 0), axis=0)
        if np.ptp(X, axis=0).max() > 1e-12 * max(1.0, np.abs(X).max()):
            failures.append(f"kappa={kap:g}: M_target is not constant in the T frame; "
                            "templates need a constant split")
            continue
        for delta in deltas:
            P_pos = Xp + delta * J
            P_coop = Xm + delta * J
            Mstar = nu_star * (np.linalg.solve(LBs, (kap * I - P_coop) @ Ts) - k * I)
            if np.all(Mstar > 0):
                first = np.linalg.solve(LBs, P_pos @ Ts)
                recon = first + nu_star * Mstar
                return PositivityCertificate(
                    P_pos, P_coop, float(kap), float(k), True, recon, recon - k * I,
                    float(Mstar.min()), [],
                    {"M_star": Mstar, "nu_star": nu_star, "delta": delta,
                     "first_term": first,
                     "reconstruction_error": float(np.max(np.abs(recon - Ms)))})
            bad = np.argwhere(Mstar <= 0)[0]
            failures.append(f"kappa={kap:g}, delta={delta:g}: M_* > 0 fails at entry "
                            f"({bad[1]},{bad[2]}) = {Mstar[tuple(bad)]:.6g}")
    raise CertificationError("no admissible decomposition", "; ".join(failures[-3:]))


# ------------------------------------------------------------ prescribed operator

@dataclass
class DesignedReaction:
    """Reaction matrix built for a given constant diffusion operator."""
    A: np.ndarray               # -Div(A D.) part of the operator, A = (L B)^-1 T
    M1: np.ndarray              # certified matrix (L B)^-1 [P_pos + kappa - P_coop] T - k
    rho: float                  # dominant eigenvalue of (lambda_1 A + k)^-1 M1
    direction: np.ndarray       # its eigenvector, positive, max-norm 1
    M: np.ndarray               # M1 rescaled so the eigenvalue becomes tau
    tau: float
    certificate: PositivityCertificate

    def to_dict(self):
        return {"A": self.A.tolist(), "M1": self.M1.tolist(), "rho": self.rho,
                "direction": self.direction.tolist(), "M": self.M.tolist(), "tau": self.tau,
                "certificate": self.certificate.to_dict()}


def design_reaction(T, LB, P_pos, P_coop, k, kappa, lambda_1, tau) -> DesignedReaction:
    """Reaction M with principal eigenvalue ``tau`` for the operator -A D^2 + k.

    Constant data with A_d = Id, so A = LB^-1 T.  The certified M1 has a
    dominant eigenpair (rho, e) of (lambda_1 A + k)^-1 M1 with e > 0; on a
    domain whose first Dirichlet eigenvalue is lambda_1 the eigenfunction is
    e times the first mode, and M = (tau / rho) M1 moves the eigenvalue to
    tau while keeping the eigenfunction.
    """
    T = np.asarray(T, dtype=float)
    LB = np.asarray(LB, dtype=float)
    n = T.shape[0]
    A = np.linalg.solve(LB, T)
    tri = triangularize(A, T=T, mode="const_LB_zero_B", xs=np.array([0.0]))
    cert = certify_positivity(tri, P_pos, P_coop, k, kappa)
    if not cert.mppos_holds:
        raise CertificationError("(MPpos) fails", "; ".join(cert.failed))
    M1 = cert.M_out[0]
    w, V = np.linalg.eig(np.linalg.solve(lambda_1 * A + k * np.eye(n), M1))
    i = int(np.argmax(np.abs(w)))
    e = np.real(V[:, i])
    e = e / e[np.argmax(np.abs(e))]
    if abs(w[i].imag) > 1e-12 or w[i].real <= 0 or np.any(e <= 0):
        raise CertificationError("no positive principal direction",
                                 f"eigenvalue {w[i]:.6g}, vector {e}")
    rho = float(w[i].real)
    return DesignedReaction(A, M1, rho, e, (tau / rho) * M1, float(tau), cert)
