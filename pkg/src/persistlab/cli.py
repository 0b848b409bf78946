"""Command-line front end.

    persistlab analyze --scenario crossdiff_persistence --out out/
    persistlab simulate --scenario diag_extinction --out out/ --t-end 10
    persistlab certify --scenario lbt_case_ii --out out/
    persistlab counterexample --out out/
    persistlab sweep --scenario diag_extinction --scenario coop_persistence --out out/

Exit codes: 0 ok, 2 invalid input, 3 solver failure, 4 blow-up (partial
outputs kept), 5 uncertifiable.  Machine outputs are JSON (sorted keys, no
timestamps); run metadata goes to metadata.json.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import instability as ins
from . import sim
from . import structure as st
from ._json import dumps
from .errors import (CertificationError, ConvergenceError, PersistlabError, PositivityError,
                     PreconditionError, SingularOperatorError, StabilityError)
from .scenarios import CROSSDIFF_DESIGN, REGISTRY, analytic_scenario, resolve_scenario

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_BLOWUP, EXIT_UNCERTIFIABLE = 0, 2, 3, 4, 5

_SOLVER_ERRORS = (SingularOperatorError, ConvergenceError, PositivityError)


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------ output helpers

def _write(out: Path, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _metadata(out: Path, args, extra=None):
    meta = {"command": args.command, "argv": list(getattr(args, "argv", [])),
            "started": getattr(args, "started", None), "finished": time.time(),
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "threads": _threads()}
    meta.update(extra or {})
    _write(out, "metadata.json", dumps(meta))


def _threads():
    raw = os.environ.get("PERSISTLAB_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(EXIT_INVALID, f"PERSISTLAB_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise CliError(EXIT_INVALID, "PERSISTLAB_THREADS must be >= 1")
    return n


def _load(args, ref=None):
    ref = ref if ref is not None else _one_scenario(args)
    try:
        scn = resolve_scenario(ref)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INVALID, str(exc))
    except (PersistlabError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INVALID, f"invalid scenario {ref}: {exc}")
    if args.scale is not None:
        if not args.scale > 0:
            raise CliError(EXIT_INVALID, "--scale must be positive")
        scn = ins.scale_scenario(scn, args.scale)
    return scn


def _one_scenario(args):
    if not args.scenario:
        raise CliError(EXIT_INVALID, "--scenario is required")
    if len(args.scenario) > 1:
        raise CliError(EXIT_INVALID, f"{args.command} takes a single --scenario")
    return args.scenario[0]


def _grids(args, scn):
    sizes = args.grid or [scn.grid_size]
    for n in sizes:
        if n < 3:
            raise CliError(EXIT_INVALID, f"--grid must be >= 3, got {n}")
    return sizes


# ------------------------------------------------------------ analyze

def _criteria_list(args, scn):
    names = ins.CRITERIA if args.criteria in (None, "all") else \
        tuple(c.strip() for c in args.criteria.split(",") if c.strip())
    bad = [c for c in names if c not in ins.CRITERIA]
    if bad:
        raise CliError(EXIT_INVALID, f"unknown criteria {bad}; known: {list(ins.CRITERIA)}")
    return names


def _run_criterion(name, scn, grid, fz, res, args):
    if name == "coop_main":
        return ins.check_coop_criterion(scn, frozen=fz)
    if name == "coop_corollary":
        return ins.check_coop_corollary(scn, frozen=fz)
    if name == "coop_tau_star":
        return ins.check_coop_corollary(scn, frozen=fz, variant="z*", tau_star=1.0 + 1e-6)
    if name == "competitive_block":
        m2 = scn.system.m2
        if m2 < 2:
            raise PreconditionError("competitive_block needs at least two v components")
        return ins.check_competitive_block(scn, (m2 // 2, m2 - m2 // 2), frozen=fz)
    if name == "E_condition":
        return ins.check_E_condition(scn, frozen=fz)
    if name == "neumann_smallness":
        return ins.check_neumann_smallness(scn, res, grid, eps=args.eps, seed=args.seed)
    raise AssertionError(name)


def analyze_one(scn, n, args):
    grid = scn.grid(n)
    res = ins.compute_tau(scn, grid, tol=args.tol, seed=args.seed)
    fz = ins.frozen_coefficients(scn, grid)
    criteria = {}
    for name in _criteria_list(args, scn):
        try:
            criteria[name] = {"applicable": True, **_run_criterion(name, scn, grid, fz, res, args).to_dict()}
        except (PreconditionError, CertificationError) as exc:
            criteria[name] = {"applicable": False, "reason": str(exc)}
    report = {"scenario": scn.name, "n": n, "h": grid.h, "bc": grid.bc,
              "domain": list(scn.system.domain), **res.header(),
              "psi_positive": res.positive, "psi_min": float(np.min(res.psi)),
              "criteria": criteria, "labels": scn.labels}
    return report, res, grid


def cmd_analyze(args):
    scn = _load(args)
    out = Path(args.out)
    sizes = _grids(args, scn)
    reports = []
    for n in sizes:
        report, res, grid = analyze_one(scn, n, args)
        suffix = "" if len(sizes) == 1 else f"_n{n}"
        _write(out, f"report{suffix}.json", dumps(report))
        _write(out, f"psi{suffix}.csv", res.to_csv(grid))
        reports.append(report)
    if len(sizes) > 1:
        taus = [r["tau"] for r in reports]
        _write(out, "report.json", dumps({"scenario": scn.name, "grids": sizes, "tau": taus,
                                          "tau_spread": float(np.ptp(taus)),
                                          "reports": [f"report_n{n}.json" for n in sizes]}))
    for r in reports:
        print(f"{r['scenario']} n={r['n']}: tau={r['tau']:.10g} kappa={r['kappa']:.6g} "
              f"positive={r['positive']} v_unstable={r['v_unstable']}")
    return EXIT_OK


# ------------------------------------------------------------ simulate

def simulate_to(scn, out: Path, args, n=None):
    """Run one simulation into ``out``; returns (exit code, verdict dict)."""
    grid = scn.grid(n or (args.grid[0] if args.grid else None))
    res = ins.compute_tau(scn, grid, tol=args.tol, seed=args.seed)
    monitor = sim.make_monitor(scn, grid, res)
    init = sim.initial_state(scn, grid, delta=args.delta, psi=res.psi)
    stepper = sim.Stepper(scn, grid)
    if args.scheme == "explicit":
        limit = stepper.max_stable_dt(init)
        if args.dt > limit:
            raise CliError(EXIT_INVALID, f"dt={args.dt:g} violates the explicit stability limit "
                                         f"{limit:.6g} (h^2 / (2 max diffusion)) at n={grid.n}")
    nsteps = max(1, int(round(args.t_end / args.dt)))
    save_every = max(1, nsteps // 200)
    traj = sim.run(scn, args.t_end, args.dt, monitor=monitor, save_every=save_every,
                   scheme=args.scheme, init=init, grid=grid)
    _write(out, "trajectory.csv", traj.to_csv())
    if traj.final is not None:
        _write(out, "final_state.csv", sim.snapshot_csv(traj.final, grid))
    verdict = sim.persistence_verdict(traj, eta=args.eta)
    verdict.update({"scenario": scn.name, "tau": res.tau, "kappa": res.kappa,
                    "v_unstable": res.v_unstable, "trajectory": traj.summary()})
    if not traj.blowup and res.v_unstable:
        try:
            window = sim.pre_escape_window(traj)
            verdict["growth_check"] = sim.growth_inequality_check(traj, monitor, window).to_dict()
        except PreconditionError as exc:
            verdict["growth_check"] = {"applicable": False, "reason": str(exc)}
    _write(out, "verdict.json", dumps(verdict))
    if scn.reference is not None:
        _write(out, "analytic-comparison.json",
               dumps({"scenario": scn.name, **sim.compare_analytic(traj, scn.reference, grid)}))
    if traj.blowup:
        return EXIT_BLOWUP, verdict
    return EXIT_OK, verdict


def cmd_simulate(args):
    scn = _load(args)
    code, verdict = simulate_to(scn, Path(args.out), args)
    print(f"{scn.name}: verdict={verdict['verdict']} tau={verdict['tau']:.6g}")
    if code == EXIT_BLOWUP:
        print("blow-up: the overflow guard stopped the run; partial outputs kept", file=sys.stderr)
    return code


# ------------------------------------------------------------ certify

def _poly_diag(polys):
    ps = [np.polynomial.Polynomial(p) for p in polys]

    def f(x):
        return np.stack([p(x) for p in ps], axis=-1)

    def df(x):
        return np.stack([p.deriv()(x) for p in ps], axis=-1)

    return f, df


def matrix_field(spec):
    """(F, dF) from a constant nested list or {"diag": [coeffs, ...], "times": spec}.

    The second form is diag(p_i(x)) times another field; p_i are polynomials
    with coefficients in increasing degree.
    """
    if isinstance(spec, list):
        M = np.asarray(spec, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise CliError(EXIT_INVALID, f"matrix must be square, got shape {M.shape}")
        return M, None
    if not isinstance(spec, dict) or set(spec) != {"diag", "times"}:
        raise CliError(EXIT_INVALID, "matrix field must be a list of rows or "
                                     "{'diag': [...], 'times': ...}")
    d, dd = _poly_diag(spec["diag"])
    G, dG = matrix_field(spec["times"])
    if callable(G):
        def F(x):
            return d(x)[:, :, None] * G(x)

        def dF(x):
            return dd(x)[:, :, None] * G(x) + d(x)[:, :, None] * dG(x)
    else:
        def F(x):
            return d(np.asarray(x))[:, :, None] * G[None]

        def dF(x):
            return dd(np.asarray(x))[:, :, None] * G[None]
    return F, dF


_T_CASE = [[1.5, -1.0], [1.5, 1.5]]
_POS = {"P_pos": [[1.5, 0.5], [1.0, 0.5]], "P_coop": [[1.0, 2.0], [0.5, 1.0]], "k": 0.5,
        "kappa": 1.0, "xs": {"domain": [0.0, 1.0], "samples": 21}}
_LB_DESIGN = np.asarray(CROSSDIFF_DESIGN["LB"], dtype=float)

CERT_CASES = {
    # constant L B, B = 0: the operator of the designed persistence scenario
    "lbt_case_i": {"mode": "const_LB_zero_B",
                   "A": np.linalg.solve(_LB_DESIGN, CROSSDIFF_DESIGN["T"]).tolist(),
                   "T": CROSSDIFF_DESIGN["T"], "P_pos": CROSSDIFF_DESIGN["P_pos"],
                   "P_coop": CROSSDIFF_DESIGN["P_coop"], "k": CROSSDIFF_DESIGN["k"],
                   "kappa": CROSSDIFF_DESIGN["kappa"], "xs": [0.0]},
    # constant T, diagonal L B: A = diag(1 + x/2, 2 - x/2) T
    "lbt_case_ii": {"mode": "const_T_diag_LB",
                    "A": {"diag": [[1.0, 0.5], [2.0, -0.5]], "times": _T_CASE},
                    "T": _T_CASE, **_POS},
    # T = diag(1, 1 - x/10) C, diagonal L B
    "lbt_case_iii": {"mode": "diag_LB_diag_DTT",
                     "A": {"diag": [[1.0, 0.5], [2.0, -0.5]],
                           "times": {"diag": [[1.0], [1.0, -0.1]], "times": _T_CASE}},
                     "T": {"diag": [[1.0], [1.0, -0.1]], "times": _T_CASE}, **_POS},
    # d - <c, k_hat> = 0 while b != a k_hat: no k_bar exists
    "block_violation": {"mode": "const_T_diag_LB", "A": [[1.0, 1.0], [1.5, -1.0]],
                        "T": _T_CASE, **_POS},
}


def _cert_config(args):
    ref = _one_scenario(args)
    if ref in CERT_CASES:
        cfg = json.loads(json.dumps(CERT_CASES[ref]))
        cfg.setdefault("name", ref)
        return cfg
    p = Path(ref)
    if not p.exists():
        raise CliError(EXIT_INVALID, f"{ref!r} is neither a built-in certificate case "
                                     f"({sorted(CERT_CASES)}) nor an existing file")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INVALID, f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    missing = [k for k in ("mode", "A", "T", "P_pos", "P_coop", "k", "kappa") if k not in cfg]
    if missing:
        raise CliError(EXIT_INVALID, f"{p}: missing fields {missing}")
    cfg.setdefault("name", p.stem)
    return cfg


def _xs(spec):
    if spec is None:
        return np.linspace(0.0, 1.0, 21)
    if isinstance(spec, dict):
        a, b = spec.get("domain", [0.0, 1.0])
        return np.linspace(float(a), float(b), int(spec.get("samples", 21)))
    return np.asarray(spec, dtype=float)


def certify_config(cfg, kappa=None, k=None):
    """Triangularize and check positivity; returns the certificate document.

    Raises CertificationError with the failed condition as its reason.
    """
    A, _ = matrix_field(cfg["A"])
    B = matrix_field(cfg["B"])[0] if cfg.get("B") is not None else None
    T, dT = matrix_field(cfg["T"])
    kappa = float(cfg["kappa"] if kappa is None else kappa)
    k = float(cfg["k"] if k is None else k)
    xs = _xs(cfg.get("xs"))
    try:
        tri = st.triangularize(A, B, T, mode=cfg["mode"], xs=xs, dT=dT)
    except st.StructuralError as exc:
        if "block condition fails" in str(exc):
            raise CertificationError("block condition fails", str(exc))
        raise
    st.require_certified(tri)
    cert = st.certify_positivity(tri, cfg["P_pos"], cfg["P_coop"], k, kappa)
    doc = {"name": cfg.get("name"), "mode": cfg["mode"], "certified": bool(cert.mppos_holds),
           "kappa": kappa, "k": k, "triangularization": tri.to_dict(), "positivity": cert.to_dict()}
    if not cert.mppos_holds:
        raise CertificationError("(MPpos) fails", "; ".join(cert.failed[:3]))
    return doc


def cmd_certify(args):
    cfg = _cert_config(args)
    out = Path(args.out)
    try:
        doc = certify_config(cfg, kappa=args.kappa, k=args.k)
    except CertificationError as exc:
        _write(out, "certificate.json", dumps({"name": cfg.get("name"), "certified": False,
                                               "reason": exc.reason, "detail": exc.detail}))
        print(f"uncertifiable: {exc.reason}", file=sys.stderr)
        return EXIT_UNCERTIFIABLE
    _write(out, "certificate.json", dumps(doc))
    print(f"{doc['name']}: certified (slack {doc['positivity']['slack']:.6g})")
    return EXIT_OK


# ------------------------------------------------------------ counterexample

COUNTEREXAMPLES = ("diag_extinction", "crossdiff_extinction", "crossdiff_persistence",
                   "crossdiff_persistence_twin")


def _counterexample_scenario(name):
    if name == "crossdiff_persistence_twin":
        return analytic_scenario("crossdiff_persistence", {"diagonal_twin": True})
    return analytic_scenario(name)


def cmd_counterexample(args):
    names = args.scenario or list(COUNTEREXAMPLES)
    bad = [s for s in names if s not in COUNTEREXAMPLES]
    if bad:
        raise CliError(EXIT_INVALID, f"unknown counterexample {bad}; known: {list(COUNTEREXAMPLES)}")
    out = Path(args.out)
    summary, code = {}, EXIT_OK
    for name in names:
        scn = _counterexample_scenario(name)
        if args.scale is not None:
            scn = ins.scale_scenario(scn, args.scale)
        c, verdict = simulate_to(scn, out / name, args)
        code = max(code, c)
        summary[name] = {"tau": verdict["tau"], "v_unstable": verdict["v_unstable"],
                         "verdict": verdict["verdict"]}
        print(f"{name}: tau={verdict['tau']:.6g} verdict={verdict['verdict']}")
    _write(out, "summary.json", dumps(summary))
    return code


# ------------------------------------------------------------ sweep

def _sweep_job(job):
    ref, n, args = job
    out = Path(args.out) / f"{Path(str(ref)).stem}_n{n}"
    try:
        scn = _load(args, ref)
        report, res, grid = analyze_one(scn, n, args)
        _write(out, "report.json", dumps(report))
        _write(out, "psi.csv", res.to_csv(grid))
        return ref, n, EXIT_OK, report["tau"], ""
    except CliError as exc:
        return ref, n, exc.code, None, str(exc)
    except _SOLVER_ERRORS as exc:
        return ref, n, EXIT_SOLVER, None, str(exc)
    except (PersistlabError, ValueError) as exc:
        return ref, n, EXIT_INVALID, None, str(exc)


def cmd_sweep(args):
    refs = args.scenario or [s for s in REGISTRY if s != "scaled"]
    sizes = args.grid or [None]
    jobs = []
    for ref in refs:
        for n in sizes:
            if n is None:
                n = _load(args, ref).grid_size
            jobs.append((ref, n, args))
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = [{"scenario": str(r), "n": n, "exit": c, "tau": tau, "error": err}
            for r, n, c, tau, err in results]
    _write(Path(args.out), "sweep.json", dumps({"runs": rows}))
    for row in rows:
        status = f"tau={row['tau']:.10g}" if row["exit"] == EXIT_OK else f"exit {row['exit']}: {row['error']}"
        print(f"{row['scenario']} n={row['n']}: {status}")
    return max(row["exit"] for row in rows)


# ------------------------------------------------------------ entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", action="append",
                        help="registry name or JSON path (repeatable for sweep/counterexample)")
    common.add_argument("--out", default="persistlab-out", help="output directory")
    common.add_argument("--grid", type=int, action="append", help="grid size n (repeatable)")
    common.add_argument("--dt", type=float, default=1e-4)
    common.add_argument("--t-end", type=float, default=10.0)
    common.add_argument("--tol", type=float, default=1e-10, help="eigensolver tolerance")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--criteria", default=None,
                        help="comma separated criteria, or 'all' (default: all)")
    common.add_argument("--eps", type=float, default=None, help="smallness epsilon (Neumann check)")
    common.add_argument("--scale", type=float, default=None, help="domain scale factor R")
    common.add_argument("--scheme", choices=sim.SCHEMES, default="imex")
    common.add_argument("--delta", type=float, default=1e-2,
                        help="initial v amplitude along psi (scenarios without a closed form)")
    common.add_argument("--eta", type=float, default=1e-2, help="verdict threshold")
    common.add_argument("--kappa", type=float, default=None, help="override kappa (certify)")
    common.add_argument("--k", type=float, default=None, help="override k (certify)")

    p = argparse.ArgumentParser(prog="persistlab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="principal eigenvalue and criteria")
    sub.add_parser("simulate", parents=[common], help="time integration and verdict")
    sub.add_parser("certify", parents=[common], help="triangularization and positivity certificate")
    sub.add_parser("counterexample", parents=[common], help="closed-form and designed examples")
    sub.add_parser("sweep", parents=[common], help="analyze many scenarios in a worker pool")
    return p


_COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "certify": cmd_certify,
             "counterexample": cmd_counterexample, "sweep": cmd_sweep}


def _check_args(args):
    for name in ("dt", "t_end", "tol"):
        if not getattr(args, name) > 0:
            raise CliError(EXIT_INVALID, f"--{name.replace('_', '-')} must be positive")
    if args.eps is not None and not args.eps > 0:
        raise CliError(EXIT_INVALID, "--eps must be positive")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    args.argv = argv
    args.started = time.time()
    try:
        _check_args(args)
        code = _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except StabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CertificationError as exc:
        print(f"uncertifiable: {exc.reason}", file=sys.stderr)
        return EXIT_UNCERTIFIABLE
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (PersistlabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _metadata(Path(args.out), args, {"exit": code})
    return code


if __name__ == "__main__":
    sys.exit(main())
