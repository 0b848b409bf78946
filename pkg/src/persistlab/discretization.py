"""Uniform 1D grids and sparse finite-difference operators.

Grid functions with ``m`` components are stored as arrays of shape
``(m, N)`` where ``N`` is the number of unknown nodes; the stacked vector
index of component ``p`` at unknown ``j`` is ``p*N + j``.

Coefficients passed to the assembly terms live on the *full* node set
(``n + 1`` points, boundary nodes included) because half-node averages and
centred differences next to the boundary need boundary values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from .errors import GridError, SingularOperatorError, StructuralError

DIRICHLET = "Dirichlet"
NEUMANN = "Neumann"

# condition estimates above this are reported as singular
SINGULAR_COND = 1e12


def normalize_bc(bc):
    s = str(bc).strip().lower()
    if s in ("dirichlet", "d"):
        return DIRICHLET
    if s in ("neumann", "n"):
        return NEUMANN
    raise GridError(f"unknown boundary condition {bc!r}")


@dataclass(frozen=True, eq=False)
class Grid:
    x_lo: float
    x_hi: float
    n: int
    bc: str

    @property
    def h(self):
        return (self.x_hi - self.x_lo) / self.n

    @property
    def length(self):
        return self.x_hi - self.x_lo

    @property
    def x(self):
        """All n+1 nodes, boundary included."""
        return np.linspace(self.x_lo, self.x_hi, self.n + 1)

    @property
    def offset(self):
        return 1 if self.bc == DIRICHLET else 0

    @property
    def size(self):
        """Number of unknown nodes per component."""
        return self.n - 1 if self.bc == DIRICHLET else self.n + 1

    @property
    def nodes(self):
        return self.x[self.offset:self.offset + self.size]

    @property
    def quad_weights(self):
        """Trapezoid weights on the full node set; they sum to the length."""
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @property
    def unknown_weights(self):
        """Trapezoid weights restricted to the unknown nodes.

        For Dirichlet grids the dropped boundary values are zero, so
        integrating with these weights is the same trapezoid rule.
        """
        return self.quad_weights[self.offset:self.offset + self.size]

    def extend(self, g):
        """(m, N) unknown values -> (m, n+1) full-node values."""
        g = np.atleast_2d(np.asarray(g, dtype=float))
        if g.shape[1] == self.n + 1:
            return g
        if g.shape[1] != self.size:
            raise GridError(f"grid function has {g.shape[1]} nodes, expected {self.size}")
        if self.bc == NEUMANN:
            return g
        out = np.zeros((g.shape[0], self.n + 1))
        out[:, 1:-1] = g
        return out

    def restrict(self, g_full):
        g_full = np.atleast_2d(np.asarray(g_full, dtype=float))
        return g_full[:, self.offset:self.offset + self.size]

    def gradient(self, g_full):
        """Second-order derivative estimate on all nodes (one-sided at ends)."""
        return np.gradient(np.atleast_2d(g_full), self.h, axis=1, edge_order=2)

    def integrate(self, g):
        """Trapezoid integral of each component of a grid function."""
        g = np.atleast_2d(np.asarray(g, dtype=float))
        if g.shape[1] == self.n + 1:
            return g @ self.quad_weights
        return g @ self.unknown_weights

    def with_n(self, n):
        return build_grid((self.x_lo, self.x_hi), n, self.bc)

    def __repr__(self):
        return f"Grid(({self.x_lo:g}, {self.x_hi:g}), n={self.n}, bc={self.bc})"


def build_grid(domain, n, bc=DIRICHLET) -> Grid:
    x_lo, x_hi = (float(domain[0]), float(domain[1]))
    if int(n) != n or n < 3:
        raise GridError(f"need at least 3 cells, got n={n}")
    if not np.isfinite(x_lo) or not np.isfinite(x_hi) or x_hi <= x_lo:
        raise GridError(f"degenerate interval ({x_lo}, {x_hi})")
    return Grid(x_lo, x_hi, int(n), normalize_bc(bc))


class Term(NamedTuple):
    kind: str
    coef: object
    upwind: bool = False


def diffusion(a) -> Term:
    """-Div(a D phi)."""
    return Term("diffusion", a)


def drift(b, upwind=False) -> Term:
    """b D phi."""
    return Term("drift", b, upwind)


def div_product(c) -> Term:
    """-Div(c phi)."""
    return Term("div_product", c)


def mass(M) -> Term:
    """Pointwise multiplication by the matrix field M."""
    return Term("mass", M)


_KINDS = ("diffusion", "drift", "div_product", "mass")


def coef_on_nodes(coef, grid: Grid, m=None):
    """Evaluate a coefficient on the full node set as an (n+1, m, m) array.

    Accepts a constant matrix, a scalar, an (n+1, m, m) array, an (n+1,)
    array (scalar field) or a callable of x.
    """
    x = grid.x
    if callable(coef):
        coef = coef(x)
    arr = np.asarray(coef, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(m or 1)
    if arr.ndim == 1 and arr.shape[0] == grid.n + 1:
        arr = arr[:, None, None]
    if arr.ndim == 2:
        arr = np.broadcast_to(arr, (grid.n + 1,) + arr.shape)
    if arr.ndim != 3 or arr.shape[0] != grid.n + 1 or arr.shape[1] != arr.shape[2]:
        raise StructuralError(f"coefficient has shape {arr.shape}; need (n+1, m, m)")
    if m is not None and arr.shape[1] != m:
        raise StructuralError(f"coefficient is {arr.shape[1]}x{arr.shape[1]}, operator has m={m}")
    if not np.all(np.isfinite(arr)):
        raise StructuralError("coefficient evaluation produced NaN or inf")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix: sp.csr_matrix
    m: int
    grid: Grid
    description: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self):
        return self.m * self.grid.size

    @property
    def bc(self):
        return self.grid.bc

    def __add__(self, other):
        if (not isinstance(other, DiscreteOperator) or other.m != self.m
                or other.grid.size != self.grid.size):
            raise StructuralError("operators live on different spaces")
        return DiscreteOperator((self.matrix + other.matrix).tocsr(), self.m, self.grid,
                                self.description + other.description)

    def scaled(self, c):
        return DiscreteOperator((c * self.matrix).tocsr(), self.m, self.grid,
                                tuple(f"{c:g}*({d})" for d in self.description))

    def toarray(self):
        return self.matrix.toarray()

    def factor(self):
        """Cached sparse LU factorisation; raises on (near) singularity."""
        if "lu" not in self._cache:
            self._cache["lu"] = _Factorization(self.matrix)
        return self._cache["lu"]


class _Factorization:
    def __init__(self, A):
        A = sp.csc_matrix(A)
        try:
            self.lu = splu(A)
        except RuntimeError as exc:
            raise SingularOperatorError(f"operator is singular: {exc}", condition=np.inf) from exc
        n = A.shape[0]
        inv = LinearOperator((n, n), matvec=self.lu.solve,
                             rmatvec=lambda y: self.lu.solve(y, trans="T"), dtype=float)
        normA = onenormest(A) if n > 1 else abs(A[0, 0])
        try:
            normAinv = onenormest(inv) if n > 1 else 1.0 / abs(A[0, 0])
        except Exception:  # pragma: no cover - extreme breakdown
            normAinv = np.inf
        self.condition = float(normA * normAinv)
        if not np.isfinite(self.condition) or self.condition > SINGULAR_COND:
            raise SingularOperatorError(
                f"operator is numerically singular (condition estimate {self.condition:.3e})",
                condition=self.condition)

    def solve(self, f):
        return self.lu.solve(np.asarray(f, dtype=float))


def _neighbour_cols(grid: Grid, idx, nb):
    """Column (unknown index) for full-node neighbour nb, mirror for Neumann."""
    if grid.bc == NEUMANN:
        nb = np.where(nb < 0, -nb, nb)
        nb = np.where(nb > grid.n, 2 * grid.n - nb, nb)
        return nb, np.ones(nb.shape, dtype=bool)
    valid = (nb >= 1) & (nb <= grid.n - 1)
    return nb - 1, valid


def _mirror_index(grid: Grid, nb):
    nb = np.where(nb < 0, -nb, nb)
    return np.where(nb > grid.n, 2 * grid.n - nb, nb)


def _emit(rows, cols, vals, grid, m, idx_rows, idx_cols, valid, blocks):
    """Scatter per-node m x m blocks into COO lists."""
    N = grid.size
    r0 = idx_rows[valid]
    c0 = idx_cols[valid]
    b = blocks[valid]
    for p in range(m):
        for q in range(m):
            v = b[:, p, q]
            nz = v != 0.0
            if not np.any(nz):
                continue
            rows.append(p * N + r0[nz])
            cols.append(q * N + c0[nz])
            vals.append(v[nz])


def _assemble_term(term: Term, grid: Grid, m, rows, cols, vals):
    c = coef_on_nodes(term.coef, grid, m)
    h = grid.h
    N = grid.size
    full = np.arange(N) + grid.offset          # full-node index of each unknown
    rowidx = np.arange(N)
    allv = np.ones(N, dtype=bool)
    if term.kind == "mass":
        _emit(rows, cols, vals, grid, m, rowidx, rowidx, allv, c[full])
    elif term.kind == "diffusion":
        diag = np.zeros((N, m, m))
        for s in (-1, 1):
            nb = full + s
            nbm = _mirror_index(grid, nb)
            half = 0.5 * (c[full] + c[nbm])
            diag += half
            col, valid = _neighbour_cols(grid, full, nb)
            _emit(rows, cols, vals, grid, m, rowidx, col, valid, -half / h**2)
        _emit(rows, cols, vals, grid, m, rowidx, rowidx, allv, diag / h**2)
    elif term.kind == "drift":
        cf = c[full]
        if term.upwind:
            # upwind per matrix entry: b>0 takes the forward difference
            pos = np.where(cf > 0, cf, 0.0)
            neg = np.where(cf < 0, cf, 0.0)
            col, valid = _neighbour_cols(grid, full, full + 1)
            _emit(rows, cols, vals, grid, m, rowidx, col, valid, pos / h)
            col, valid = _neighbour_cols(grid, full, full - 1)
            _emit(rows, cols, vals, grid, m, rowidx, col, valid, -neg / h)
            _emit(rows, cols, vals, grid, m, rowidx, rowidx, allv, (neg - pos) / h)
        else:
            for s in (-1, 1):
                col, valid = _neighbour_cols(grid, full, full + s)
                _emit(rows, cols, vals, grid, m, rowidx, col, valid, s * cf / (2 * h))
    elif term.kind == "div_product":
        if grid.bc == NEUMANN:
            # interior rows centred, end rows one-sided second order
            inner = (full > 0) & (full < grid.n)
            for s in (-1, 1):
                nb = np.clip(full + s, 0, grid.n)
                _emit(rows, cols, vals, grid, m, rowidx, nb, inner, -s * c[nb] / (2 * h))
            for end, sgn in ((0, 1), (grid.n, -1)):
                r = np.array([end])
                for j, w in ((0, -3.0), (1, 4.0), (2, -1.0)):
                    nb = np.array([end + sgn * j])
                    blk = -sgn * w * c[nb] / (2 * h)
                    _emit(rows, cols, vals, grid, m, r, nb, np.array([True]), blk)
        else:
            for s in (-1, 1):
                nb = full + s
                col, valid = _neighbour_cols(grid, full, nb)
                nbc = np.clip(nb, 0, grid.n)
                _emit(rows, cols, vals, grid, m, rowidx, col, valid, -s * c[nbc] / (2 * h))
    else:
        raise StructuralError(f"unknown term kind {term.kind!r}; expected one of {_KINDS}")


def assemble(grid: Grid, terms, m=None) -> DiscreteOperator:
    """Sum of the listed terms as one sparse operator.

    ``m`` (components) is inferred from the first coefficient when omitted.
    """
    terms = [terms] if isinstance(terms, Term) else list(terms)
    if not terms:
        raise StructuralError("empty term list")
    for t in terms:
        if not isinstance(t, Term) or t.kind not in _KINDS:
            raise StructuralError(f"bad term {t!r}")
    if m is None:
        m = coef_on_nodes(terms[0].coef, grid).shape[1]
    rows, cols, vals = [], [], []
    for t in terms:
        _assemble_term(t, grid, m, rows, cols, vals)
    dim = m * grid.size
    if rows:
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim)).tocsr()
    else:
        A = sp.csr_matrix((dim, dim))
    A.sum_duplicates()
    A.sort_indices()
    return DiscreteOperator(A, m, grid, tuple(t.kind for t in terms))


def identity(grid: Grid, m: int) -> DiscreteOperator:
    return DiscreteOperator(sp.identity(m * grid.size, format="csr"), m, grid, ("identity",))


def _as_vector(op, f):
    f = np.asarray(f, dtype=float)
    shape = f.shape
    vec = f.reshape(-1)
    if vec.size != op.dim:
        raise StructuralError(f"grid function of size {vec.size} does not match operator dim {op.dim}")
    return vec, shape


def apply(op: DiscreteOperator, f):
    vec, shape = _as_vector(op, f)
    return (op.matrix @ vec).reshape(shape)


def solve(op: DiscreteOperator, f, tol=1e-10):
    """Direct sparse solve; the residual contract is checked on return."""
    vec, shape = _as_vector(op, f)
    x = op.factor().solve(vec)
    res = np.max(np.abs(op.matrix @ x - vec)) if vec.size else 0.0
    scale = np.max(np.abs(vec)) if vec.size else 0.0
    if res > tol * max(scale, np.finfo(float).tiny):
        raise SingularOperatorError(
            f"solve residual {res:.3e} exceeds {tol:g}*|f| (condition {op.factor().condition:.3e})",
            condition=op.factor().condition)
    return x.reshape(shape)


def to_coo_text(op: DiscreteOperator) -> str:
    A = op.matrix.tocoo()
    order = np.lexsort((A.col, A.row))
    lines = [f"{A.row[i]} {A.col[i]} {A.data[i]:.17g}" for i in order]
    return "\n".join(lines) + ("\n" if lines else "")


def from_coo_text(text: str, grid: Grid, m: int) -> DiscreteOperator:
    data = np.loadtxt(text.splitlines(), ndmin=2) if text.strip() else np.zeros((0, 3))
    dim = m * grid.size
    A = sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                      shape=(dim, dim)).tocsr()
    return DiscreteOperator(A, m, grid, ("imported",))
