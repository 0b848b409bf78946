"""Random conforming scenarios for the randomized acceptance and property tests.

Conforming here means: diagonal a22, b22 and a21_v Du* at W*, K = 0, a
reaction G whose sign pattern fits the criterion under test, and k large
enough that M = G + k is entrywise nonnegative.
"""

import numpy as np

from persistlab.scenarios import scenario_from_json


def _f(name, **params):
    return {"name": name, "params": params}


def conforming_doc(rng, kind="coop", max_unknowns=600, m2=None):
    m2 = int(m2 or (rng.integers(2, 4) if kind == "competitive" else rng.integers(1, 4)))
    bc = "Dirichlet" if rng.random() < 0.7 else "Neumann"
    length = float(rng.uniform(1.0, 4.0))
    lam = (np.pi / length) ** 2
    n_max = max_unknowns // m2 - 1 if bc == "Neumann" else max_unknowns // m2 + 1
    n = int(rng.integers(24, min(n_max, 160) + 1))

    a = rng.uniform(0.3, 2.0, m2)
    b = rng.uniform(-0.3, 0.3, m2)
    coef = np.zeros((m2, 1, m2))
    coef[np.arange(m2), 0, np.arange(m2)] = rng.uniform(-0.3, 0.3, m2)

    G = np.zeros((m2, m2))
    off = ~np.eye(m2, dtype=bool)
    G[off] = rng.uniform(0.05, 1.0, off.sum())
    if kind == "competitive":
        k1 = int(rng.integers(1, m2))
        P = np.diag(np.r_[np.ones(k1), -np.ones(m2 - k1)])
        G = P @ G @ P
    G[np.diag_indices(m2)] = rng.uniform(-1.0, 1.0, m2)
    G *= rng.uniform(0.2, 3.0) * (lam * a.mean() + 0.5)
    k = max(0.0, float(-G.diagonal().min())) + float(rng.uniform(0.1, 2.0))

    system = {"m1": 1, "m2": m2, "bc": bc, "domain": [0.0, length],
              "blocks": {"a11": _f("identity"), "g11": _f("logistic", rate=2.0 * lam + 1.0),
                         "a22": _f("diag_profile", values=a.tolist(),
                                   amplitude=float(rng.uniform(0.0, 0.5)),
                                   frequency=float(rng.uniform(0.5, 3.0))),
                         "b22": _f("diagonal", values=b.tolist()),
                         "a21": _f("v_linear", coef=coef.tolist()),
                         "g22": _f("constant", value=G.tolist())}}
    doc = {"system": system, "steady": {"kind": "solve", "tol": 1e-10}, "k": k, "K": _f("zero"),
           "grid_size": n, "labels": {"name": f"random_{kind}"}}
    if kind == "competitive":
        doc["labels"]["sizes"] = [k1, m2 - k1]
    return doc


def conforming_scenario(rng, kind="coop", **kw):
    return scenario_from_json(conforming_doc(rng, kind, **kw))


def random_cert_instance(rng, mode):
    """(A, T, dT) for one triangularization mode, 2x2 or 3x3.

    const_LB_zero_B: constant A and T with A = LB^-1 T for a random LB.
    const_T_diag_LB: A = diag(d(x)) T, T constant.
    diag_LB_diag_DTT: T = diag(delta(x)) C, A = diag(d(x)) T.
    Profiles are positive on [0, 1], so A_d = d > 0.
    """
    n = int(rng.integers(2, 4))
    C = rng.uniform(-2.0, 2.0, (n, n)) + 3.0 * np.eye(n)
    while abs(np.linalg.det(C)) < 0.5 or any(abs(np.linalg.det(C[:i, :i])) < 0.3
                                             for i in range(1, n)):
        C = rng.uniform(-2.0, 2.0, (n, n)) + 3.0 * np.eye(n)
    d0, d1 = rng.uniform(0.5, 2.0, n), rng.uniform(-0.4, 0.4, n)
    e0, e1 = rng.uniform(0.5, 2.0, n), rng.uniform(-0.4, 0.4, n)

    def d(x):
        return d0[None] + d1[None] * np.asarray(x)[:, None]

    if mode == "const_LB_zero_B":
        LB = rng.uniform(-2.0, 2.0, (n, n)) + 3.0 * np.eye(n)
        A = np.linalg.solve(LB, C)
        return A, C, None
    if mode == "const_T_diag_LB":
        return (lambda x: d(x)[:, :, None] * C[None]), C, None

    def delta(x):
        return e0[None] + e1[None] * np.asarray(x)[:, None]

    def T(x):
        return delta(x)[:, :, None] * C[None]

    def dT(x):
        return np.broadcast_to(e1[None, :, None] * C[None], (np.size(x), n, n))

    return (lambda x: d(x)[:, :, None] * T(x)), T, dT
