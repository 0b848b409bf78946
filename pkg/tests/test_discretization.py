import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from persistlab import discretization as dz
from persistlab.errors import GridError, SingularOperatorError, StructuralError

PI = np.pi


def test_dirichlet_grid_nodes():
    g = dz.build_grid((0, PI), 4)
    assert g.h == pytest.approx(PI / 4)
    np.testing.assert_allclose(g.nodes, [PI / 4, PI / 2, 3 * PI / 4])
    assert g.size == 3


def test_neumann_trapezoid_weights():
    # n = 4 on (0, 2) has the same node spacing as the n = 2 example on (0, 1)
    g = dz.build_grid((0, 2), 4, "Neumann")
    np.testing.assert_allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
    np.testing.assert_allclose(g.quad_weights, [0.25, 0.5, 0.5, 0.5, 0.25])


@pytest.mark.parametrize("n", [1, 2])
def test_too_few_cells(n):
    with pytest.raises(GridError):
        dz.build_grid((0, 1), n)


def test_degenerate_interval():
    with pytest.raises(GridError):
        dz.build_grid((1, 1), 10)


@given(st.floats(-5, 5), st.floats(0.1, 10), st.integers(3, 300), st.sampled_from(["Dirichlet", "Neumann"]))
def test_weights_sum_to_length(lo, length, n, bc):
    g = dz.build_grid((lo, lo + length), n, bc)
    assert abs(g.quad_weights.sum() - length) <= 1e-12 * length


def test_diffusion_stencil_block_diagonal():
    g = dz.build_grid((0, PI), 8)
    A = dz.assemble(g, [dz.diffusion(np.eye(2))]).toarray()
    N = g.size
    T = (np.diag(2 * np.ones(N)) - np.diag(np.ones(N - 1), 1) - np.diag(np.ones(N - 1), -1)) / g.h**2
    np.testing.assert_allclose(A[:N, :N], T, rtol=1e-14)
    np.testing.assert_allclose(A[N:, N:], T, rtol=1e-14)
    assert np.all(A[:N, N:] == 0) and np.all(A[N:, :N] == 0)


def test_principal_eigenvalue_oracle():
    g = dz.build_grid((0, PI), 400)
    k = 1.0
    A = dz.assemble(g, [dz.diffusion(1.0), dz.mass(k)], m=1).toarray()
    lam = sla.eigvalsh(A, subset_by_index=[0, 0])[0]
    assert abs(lam - k - 1.0) < 1e-4


def test_div_product_matches_drift_for_constant_c():
    g = dz.build_grid((0, PI), 50)
    c = np.array([[0.7, 0.2], [-0.3, 1.1]])
    A = dz.assemble(g, [dz.div_product(c)], m=2).toarray()
    B = dz.assemble(g, [dz.drift(-c)], m=2).toarray()
    # identical stencils; with Dirichlet closure there are no special boundary rows
    np.testing.assert_allclose(A, B, atol=1e-12)
    gn = dz.build_grid((0, PI), 50, "Neumann")
    A = dz.assemble(gn, [dz.div_product(c)], m=2).toarray()
    B = dz.assemble(gn, [dz.drift(-c)], m=2).toarray()
    inner = [i for i in range(2 * gn.size) if i % gn.size not in (0, gn.size - 1)]
    np.testing.assert_allclose(A[inner], B[inner], atol=1e-12)


def test_apply_identity_mass():
    g = dz.build_grid((0, 1), 20)
    op = dz.assemble(g, [dz.mass(np.eye(3))])
    f = np.random.default_rng(0).random((3, g.size))
    np.testing.assert_array_equal(dz.apply(op, f), f)


def test_solve_sine_mode():
    errs = []
    for n in (50, 100, 200):
        g = dz.build_grid((0, PI), n)
        op = dz.assemble(g, [dz.diffusion(1.0)], m=1)
        s = np.sin(g.nodes)
        errs.append(np.max(np.abs(dz.solve(op, s) - s)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)
    assert errs[-1] < 1e-4


def test_solve_singular_neumann():
    g = dz.build_grid((0, 1), 20, "Neumann")
    op = dz.assemble(g, [dz.diffusion(1.0)], m=1)
    with pytest.raises(SingularOperatorError) as ei:
        dz.solve(op, np.ones(g.size))
    assert ei.value.condition is None or ei.value.condition > 1e10


def test_shape_and_nan_errors():
    g = dz.build_grid((0, 1), 10)
    with pytest.raises(StructuralError):
        dz.assemble(g, [dz.mass(np.eye(2))], m=3)
    with pytest.raises(StructuralError):
        dz.assemble(g, [dz.mass(lambda x: np.full(x.size, np.nan))], m=1)


def _manufactured(x):
    e = np.exp(x / 3)
    phi = np.sin(x) * e
    dphi = e * (np.cos(x) + np.sin(x) / 3)
    d2phi = e * (2 / 3 * np.cos(x) - 8 / 9 * np.sin(x))
    a, da = 1 + 0.5 * np.sin(x), 0.5 * np.cos(x)
    b = np.cos(x)
    c, dc = 0.3 + 0.2 * x, 0.2
    f = -(da * dphi + a * d2phi) + b * dphi - (dc * phi + c * dphi) + 2.0 * phi
    return phi, f, (a, b, c)


def test_manufactured_residual_order():
    errs = []
    for n in (50, 100, 200):
        g = dz.build_grid((0, PI), n)
        x = g.x
        _, _, (a, b, c) = _manufactured(x)
        op = dz.assemble(g, [dz.diffusion(a), dz.drift(b), dz.div_product(c), dz.mass(2.0)], m=1)
        phi, f, _ = _manufactured(g.nodes)
        errs.append(np.max(np.abs(dz.apply(op, phi) - f)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), (errs, orders)


def test_manufactured_residual_order_neumann():
    errs = []
    for n in (50, 100, 200):
        g = dz.build_grid((0, PI), n, "Neumann")
        x = g.x
        a = 1 + 0.5 * np.sin(x) ** 2
        op = dz.assemble(g, [dz.diffusion(a), dz.drift(np.sin(x)), dz.mass(1.0)], m=1)
        phi = np.cos(x)
        # a' = sin(2x)/2 and phi' = -sin(x)
        f = (np.sin(2 * x) / 2 * np.sin(x) + a * np.cos(x)) - np.sin(x) ** 2 + np.cos(x)
        errs.append(np.max(np.abs(dz.apply(op, phi) - f)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), (errs, orders)


coef = arrays(np.float64, (13, 2, 2), elements=st.floats(-2, 2))


@settings(max_examples=40, deadline=None)
@given(coef, st.integers(0, 2**31 - 1))
def test_integration_by_parts(a, seed):
    g = dz.build_grid((0, 1), 12)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 2 * g.size))
    Du = dz.assemble(g, [dz.diffusion(a)], m=2).matrix @ u
    Dv = dz.assemble(g, [dz.diffusion(np.transpose(a, (0, 2, 1)))], m=2).matrix @ v
    w = np.tile(g.unknown_weights, 2)
    lhs, rhs = np.sum(w * Du * v), np.sum(w * Dv * u)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), np.abs(Du * v).sum())


@settings(max_examples=30, deadline=None)
@given(coef, coef, st.sampled_from(["Dirichlet", "Neumann"]))
def test_assembly_linearity(a, b, bc):
    g = dz.build_grid((0, 1), 12, bc)
    t1 = [dz.diffusion(a + 3 * np.eye(2)), dz.mass(b)]
    t2 = [dz.drift(b), dz.div_product(a)]
    whole = dz.assemble(g, t1 + t2, m=2).toarray()
    parts = dz.assemble(g, t1, m=2).toarray() + dz.assemble(g, t2, m=2).toarray()
    np.testing.assert_allclose(whole, parts, atol=1e-9)


def test_coo_round_trip_and_determinism():
    g = dz.build_grid((0, 1), 15)
    terms = [dz.diffusion(lambda x: 1 + x), dz.drift(0.3), dz.mass(2.0)]
    op = dz.assemble(g, terms, m=1)
    text = dz.to_coo_text(op)
    assert text == dz.to_coo_text(dz.assemble(g, terms, m=1))
    back = dz.from_coo_text(text, g, 1)
    np.testing.assert_array_equal(back.toarray(), op.toarray())
