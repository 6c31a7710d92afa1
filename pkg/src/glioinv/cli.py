"""Command-line front end: ``glioinv {synth,forward,invert,lcurve,report}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Diagnostics go to stderr; data goes to stdout and the output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import experiments as ex
from .anatomy import TensorMode, label_field
from .config import ConfigError, RunConfig, build_config, load_config
from .forward import export_trajectory
from .inversion.lcurve import lcurve
from .inversion.newton import NewtonOptions, newton_solve
from .krylov import ConvergenceError
from .volume_io import save_volume

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("glioinv")


class NumericalFailure(RuntimeError):
    pass


def _list(conv):
    def parse(text):
        try:
            return tuple(conv(t) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI-style configuration file")
    common.add_argument("--grid", type=_list(int), metavar="NX[,NY[,NZ]]", dest="dims")
    common.add_argument("--nt", type=int, metavar="N", help="time steps per unit time")
    common.add_argument("--rho", type=float, metavar="F")
    common.add_argument("--kf", type=float, metavar="F", dest="k_f", help="anisotropic diffusion rate")
    common.add_argument("--cd", type=_list(float), metavar="LIST", dest="c_d")
    common.add_argument("--eta", type=_list(float), metavar="LIST")
    common.add_argument("--beta", type=float, metavar="F")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--case", type=int, choices=(1, 2, 3, 4))
    common.add_argument("--mode", choices=[m.value for m in TensorMode], dest="tensor_mode")
    common.add_argument("--hessian", choices=("gn", "full"))
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--jobs", type=int, metavar="N")
    common.add_argument("--dry-run", action="store_true", help="validate and print the configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="glioinv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("synth", "write synthetic anatomy and target volumes"),
                        ("forward", "simulate the target and export the trajectory"),
                        ("invert", "reconstruct one (c_d, eta) cell"),
                        ("lcurve", "sweep beta and pick the L-curve corner"),
                        ("report", "run the full (c_d, eta) grid and write the metrics table")):
        sub.add_parser(name, parents=[common], help=help_)
    return p


_OVERRIDES = ("dims", "nt", "rho", "k_f", "c_d", "eta", "beta", "seed", "case", "tensor_mode",
              "hessian", "out", "jobs")


def resolve(args) -> RunConfig:
    file_values = load_config(args.config) if args.config else {}
    return build_config(file_values, {k: getattr(args, k) for k in _OVERRIDES})


def spec_from(cfg: RunConfig) -> ex.TestCaseSpec:
    dims = tuple(cfg.dims)
    kw = dict(n=dims, n_steps=cfg.nt, rho=cfg.rho, k_g=cfg.k_g, k_w=cfg.k_w, k_f_true=cfg.k_f,
              penalty_eps=cfg.penalty_eps, per_axis=cfg.basis_per_axis, basis_spacing=cfg.basis_spacing,
              seed=cfg.seed)
    if cfg.tensor_mode is not None:
        kw["tensor_mode"] = cfg.tensor_mode
    if cfg.c_d is not None:
        kw["c_d_list"] = tuple(cfg.c_d)
    if cfg.eta is not None:
        kw["eta_list"] = tuple(cfg.eta)
    return ex.preset(cfg.case, ndim=len(dims), **kw)


def newton_options(cfg: RunConfig) -> NewtonOptions:
    return NewtonOptions(hessian=cfg.hessian, max_newton=cfg.max_newton,
                         warm_start=cfg.warm_start, precondition=cfg.precondition)


def _make_target(cfg):
    spec = spec_from(cfg)
    try:
        return ex.make_target(spec)
    except ValueError as exc:
        raise ConfigError(f"foci: {exc}") from None


def _write_manifest(out, entries):
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        for name, what in entries:
            fh.write(f"{name} {what}\n")


def cmd_synth(cfg: RunConfig) -> int:
    target = _make_target(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    vols = [("labels.glf", label_field(target.tissue), "tissue labels (0 other, 1 grey, 2 white)"),
            ("dti.glf", target.dti, "synthetic DTI tensor"),
            ("T.glf", target.T, f"anisotropy tensor ({target.spec.tensor_mode.value})"),
            ("K.glf", target.K, "assembled diffusion tensor"),
            ("c_t0.glf", target.at(0), "target at t=0"),
            ("c_t1.glf", target.at(1), "target at t=1"),
            ("c_t2.glf", target.at(2), "target at t=2")]
    for name, fld, _ in vols:
        save_volume(os.path.join(cfg.out, name), fld)
    _write_manifest(cfg.out, [(n, w) for n, _, w in vols])
    print(f"wrote {len(vols)} volumes to {cfg.out}")
    return EXIT_OK


def cmd_forward(cfg: RunConfig) -> int:
    target = _make_target(cfg)
    traj = target.traj
    traj_dir = os.path.join(cfg.out, "trajectory")
    export_trajectory(traj, traj_dir, "c")
    level = cfg.c_d[0] if cfg.c_d else 0.2
    w = traj.grid.cell_volume
    lines = ["step,t,mass,max,extent"]
    for n, t in enumerate(traj.time_grid.times):
        c = traj.states[n]
        lines.append(f"{n},{t:.6f},{w * c.sum():.10e},{c.max():.10e},{int(np.count_nonzero(c >= level))}")
    with open(os.path.join(cfg.out, "forward_log.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_invert(cfg: RunConfig) -> int:
    target = _make_target(cfg)
    spec = target.spec
    c_d, eta = spec.c_d_list[0], spec.eta_list[0]
    cell = ex.build_cell(target, c_d, eta, cfg.beta)
    state = newton_solve(cell.problem, newton_options(cfg))
    os.makedirs(cfg.out, exist_ok=True)
    state.write_csv(os.path.join(cfg.out, "convergence.csv"))
    np.savetxt(os.path.join(cfg.out, "p.txt"), state.p, fmt="%.17g")
    if state.status == "line_search_failed":
        raise NumericalFailure(f"inversion stopped: {state.status}")
    rec = ex.reconstruct(target, state)
    for t in range(3):
        save_volume(os.path.join(cfg.out, f"recon_t{t}.glf"), rec.at(t))
    save_volume(os.path.join(cfg.out, "data_t0.glf"), cell.problem.d0)
    save_volume(os.path.join(cfg.out, "data_t1.glf"), cell.problem.d1)
    row = ex.score(target, rec, c_d, eta)
    print(",".join(ex.REPORT_HEADER))
    print(",".join(row.csv_fields()))
    print(f"status={state.status} k_f={state.k_f:.6g} newton={state.newton_iterations} "
          f"warm={state.warm_iterations}", file=sys.stderr)
    return EXIT_OK


def cmd_lcurve(cfg: RunConfig) -> int:
    if len(cfg.betas) < 4:
        raise ConfigError("betas: the L-curve needs at least 4 values")
    target = _make_target(cfg)
    spec = target.spec
    cell = ex.build_cell(target, spec.c_d_list[0], spec.eta_list[0], cfg.beta)
    curve = lcurve(cell.problem, cfg.betas, newton_options(cfg))
    os.makedirs(cfg.out, exist_ok=True)
    curve.write_csv(os.path.join(cfg.out, "lcurve.csv"))
    if curve.corner is None:
        print("corner=none")
        return EXIT_OK
    print(f"corner={curve.corner:.6g}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    spec = spec_from(cfg)
    try:
        ex.make_target(spec)
    except ValueError as exc:
        raise ConfigError(f"foci: {exc}") from None
    print(ex.DISCLAIMER, file=sys.stderr)
    rows = ex.run_testcase(spec, cfg.beta, out_dir=cfg.out, jobs=cfg.jobs,
                           options=newton_options(cfg), slices=cfg.slices)
    print(",".join(ex.REPORT_HEADER))
    for r in rows:
        print(",".join(r.csv_fields()))
    missing = sum(r.missing for r in rows)
    if missing:
        print(f"{missing} of {len(rows)} cells failed and are flagged NA", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "forward": cmd_forward, "invert": cmd_invert,
            "lcurve": cmd_lcurve, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad flags already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        cfg = resolve(args)
        if args.dry_run:
            for k, v in cfg.resolved():
                print(f"{k} = {v}")
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ConvergenceError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
