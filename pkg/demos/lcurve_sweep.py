"""Pick the Tikhonov weight from the corner of the L-curve.

Sweeps beta over seven decades on the standard 2D cell and prints misfit,
coefficient norm, recovered k_f and the signed curvature of each point.

    python demos/lcurve_sweep.py [out.csv]
"""

import sys

from glioinv import experiments as ex
from glioinv.inversion.lcurve import lcurve


def main(csv_path=None):
    target = ex.make_target(ex.preset(2, ndim=2))
    problem = ex.build_cell(target, 0.2, 0.05).problem
    curve = lcurve(problem, [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0])
    kappa = dict(zip([q.beta for q in curve.valid_points()], curve.curvature))
    print(f"{'beta':>8} {'misfit':>10} {'|p|':>8} {'k_f':>7} {'curvature':>10}  status")
    for q in curve.points:
        print(f"{q.beta:8.0e} {q.misfit:10.4e} {q.p_norm:8.4f} {q.k_f:7.4f} "
              f"{kappa.get(q.beta, float('nan')):10.3f}  {q.status}")
    print(f"corner at beta = {curve.corner:g}" if curve.corner else "no corner found")
    if csv_path:
        curve.write_csv(csv_path)


if __name__ == "__main__":
    main(*sys.argv[1:])
