"""Rotating-body transport with random diffusion, rank 2.

Three shapes (a slotted cylinder, a cosine hump and a cone) are carried
around the unit square by a solid-body rotation field.  Diffusion is
random and tiny, eps = 10^(y1 - 16), so each realization is essentially
pure transport and the standard Galerkin discretization oscillates.
The demo runs the low-rank solver twice, with and without streamline
stabilization, and compares

  * orthonormality defects of the stochastic basis over the run,
  * the max-minus-min spread of a few tracked realizations against its
    initial value (a spread that wanders signals spurious oscillation),
  * the local Peclet numbers that flag the advection-dominated regime.

Runtime is about ten seconds at desk scale.  Pass --scale paper for the
full-size configuration (fine mesh, 7000 samples, hours of compute).
"""

import argparse
import time

import numpy as np

from supgdlr import (
    build_problem, evaluate_realization, local_peclet, md_metric,
    preset_rotating_body, run,
)

TRACKED = (0, 1, 2, 3, 4)


def run_variant(scale, stabilization, seed):
    cfg = preset_rotating_body(scale=scale, seed=seed)
    cfg.stabilization = stabilization
    mesh, space, model, analysis, delta, ws, state = build_problem(cfg)

    md0 = {i: md_metric(evaluate_realization(state, i)) for i in TRACKED}
    trace = {i: [] for i in TRACKED}

    def observer(report, st):
        for i in TRACKED:
            trace[i].append(md_metric(evaluate_realization(st, i)))

    t0 = time.perf_counter()
    final, reports = run(state, ws, cfg.T, callbacks=(observer,))
    wall = time.perf_counter() - t0
    return cfg, mesh, space, model, final, reports, md0, trace, wall


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", default="desk",
                        choices=("desk", "paper"))
    parser.add_argument("--seed", type=int, default=1234)
    args = parser.parse_args()

    results = {}
    for stab in ("supg", "none"):
        (cfg, mesh, space, model, final, reports,
         md0, trace, wall) = run_variant(args.scale, stab, args.seed)
        results[stab] = (final, reports, md0, trace)
        label = "stabilized" if stab == "supg" else "standard"
        print(f"{label:>10}: N_h={cfg.n_dof}, N_C={space.count}, "
              f"rank={final.rank}, {len(reports) - 1} steps, "
              f"{wall:.1f} s")
        print(f"{'':>10}  final L2 norm {reports[-1].l2:.6f}, "
              f"worst Gram defect "
              f"{max(r.defect_gram for r in reports):.2e}, "
              f"worst mean defect "
              f"{max(r.defect_mean for r in reports):.2e}")

    pec = local_peclet(model, mesh, space)
    print(f"\nlocal Peclet: max {pec.max_peclet:.3e}, "
          f"advection dominated: {pec.advection_dominated}")

    print("\nspread of tracked realizations, |MD(t) - MD(0)|:")
    print(f"{'sample':>6} {'MD(0)':>8} "
          f"{'stab final':>11} {'stab max':>9} "
          f"{'std final':>10} {'std max':>8}")
    for i in TRACKED:
        _, _, md0s, ts = results["supg"]
        _, _, md0n, tn = results["none"]
        dev_s = np.abs(np.array(ts[i]) - md0s[i])
        dev_n = np.abs(np.array(tn[i]) - md0n[i])
        print(f"{i:>6} {md0s[i]:>8.4f} "
              f"{dev_s[-1]:>11.4f} {dev_s.max():>9.4f} "
              f"{dev_n[-1]:>10.4f} {dev_n.max():>8.4f}")
    print("\nThe stabilized run drifts smoothly (streamline smearing at "
          "coarse h)\nwhile the standard run oscillates; compare the "
          "max columns.")


if __name__ == "__main__":
    main()
