"""Boundary-layer formation under mildly stochastic advection.

Advection b = (1,1) + (y2 - E[y2]) (x2, x1) pushes mass toward the top
right corner; diffusion eps = 1/y1 with y1 in [5000, 6000] is far too
small for the mesh to resolve the outflow layer, so the unstabilized
scheme produces large over- and undershoots.  The initial condition is
a separable random field compressed to low rank by a weighted truncated
SVD of its sample snapshot.

The demo reports the compression rank chosen by the tolerance, runs the
stabilized and the standard scheme, and compares the worst overshoot
above the inflow value 1 and the worst undershoot below 0 across all
collocation samples at the final time.

Runtime is about half a minute at desk scale.
"""

import argparse
import time

import numpy as np

from supgdlr import build_problem, preset_boundary_layer, run


def realization_extremes(state, space):
    """Worst max and min nodal value over every sample."""
    fields = state.dense()
    return float(fields.max()), float(fields.min())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", default="desk",
                        choices=("desk", "paper"))
    args = parser.parse_args()

    for stab in ("supg", "none"):
        cfg = preset_boundary_layer(scale=args.scale)
        cfg.stabilization = stab
        mesh, space, model, analysis, delta, ws, state = \
            build_problem(cfg)
        label = "stabilized" if stab == "supg" else "standard"
        if stab == "supg":
            print(f"mesh {cfg.n_per_side}x{cfg.n_per_side}, "
                  f"N_C={space.count} (tensor grid), "
                  f"snapshot compressed to rank {state.rank}")
        t0 = time.perf_counter()
        final, reports = run(state, ws, cfg.T)
        wall = time.perf_counter() - t0
        hi, lo = realization_extremes(final, space)
        print(f"{label:>10}: {len(reports) - 1} steps in {wall:.1f} s, "
              f"final L2 {reports[-1].l2:.4f}")
        print(f"{'':>10}  worst overshoot {max(hi - 1.0, 0.0):.4f}, "
              f"worst undershoot {max(-lo, 0.0):.4f}")

    print("\nStreamline stabilization keeps the unresolved layer from "
          "polluting\nthe interior; the standard run over- and "
          "undershoots across samples.")


if __name__ == "__main__":
    main()
