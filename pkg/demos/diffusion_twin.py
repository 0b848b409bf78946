"""Cross diffusion destabilizes a system whose diagonal twin goes extinct.

Run: python demos/diffusion_twin.py
"""
from persistlab import instability as ins
from persistlab import sim
from persistlab.scenarios import analytic_scenario


def main():
    for label, params in (("diagonal twin", {"diagonal_twin": True}), ("full system", {})):
        scn = analytic_scenario("crossdiff_persistence", params)
        grid = scn.grid()
        res = ins.compute_tau(scn, grid)
        init = sim.initial_state(scn, grid, delta=1e-2, psi=res.psi)
        traj = sim.run(scn, 10.0, 1e-3, monitor=sim.make_monitor(scn, grid, res), init=init,
                       save_every=100)
        v = sim.persistence_verdict(traj)
        print(f"{label:14s} tau={res.tau:.4f}  final |v|_inf={traj.v_inf[-1]:.3e}  {v['verdict']}")


if __name__ == "__main__":
    main()
