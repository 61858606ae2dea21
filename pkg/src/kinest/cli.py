"""Command-line front end.

Subcommands: rates (rate calculus as JSON), kernel check (descriptor audit),
simulate (path generation to a binary container), density / drift (estimation
from a saved trajectory to CSV), varprobe and experiment (batch harness).
Exit codes: 0 success / all verdicts pass, 1 acceptance verdict failed,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .density import estimate_density
from .drift import (
    ThresholdConstants,
    estimate_numerator,
    nw_drift,
    pilot_rho_sup,
    realized_ajj_sup,
    select_bandwidth,
)
from .experiments import ExperimentConfig, emit_report, load_report, run_experiment
from .grids import EvalGrid, parse_domain
from .kernels import (
    ProductKernel,
    candidate_grid,
    kernel_from_descriptor,
    make_order_kernel,
    validate_descriptor,
)
from .models import model_from_name
from .rates import (
    RegimeKey,
    SmoothnessParams,
    bandwidth_from_smoothness,
    chi_B_member,
    psi_rate,
    rate_exponent,
    truncation_r_T,
    upsilon,
)
from .simulate import load_trajectory, save_trajectory, simulate_em


def _cmd_rates(args) -> int:
    key = RegimeKey(args.beta1, args.beta2, args.d, args.eps)
    params = SmoothnessParams(args.beta1, args.beta2)
    h1, h2 = bandwidth_from_smoothness(args.T, params, key, args.target)
    out = {
        "upsilon": upsilon(key),
        "psi": psi_rate(args.T, key),
        "chi_B": chi_B_member(key),
        "exponent": rate_exponent(key),
        "h1": h1,
        "h2": h2,
        "r_T": truncation_r_T(args.T, params, args.d),
    }
    print(json.dumps(out, indent=2))
    return 0


def _cmd_kernel_check(args) -> int:
    desc = json.loads(Path(args.file).read_text())
    problems = validate_descriptor(desc)
    if problems:
        for p in problems:
            print(f"FAIL: {p}")
        return 1
    k = kernel_from_descriptor(desc)
    print(f"ok: order {k.order}, sup {k.sup_norm:.6g}, L2 {k.l2_norm:.6g}, "
          f"Lipschitz {k.lipschitz:.6g}")
    return 0


def _load_model(spec: str):
    if spec.endswith(".json"):
        raw = json.loads(Path(spec).read_text())
        return model_from_name(raw["model"], **raw.get("params", {}))
    return model_from_name(spec)


def _cmd_simulate(args) -> int:
    model = _load_model(args.model)
    z0 = np.zeros(2 * model.d) if args.z0 is None else np.array(
        [float(v) for v in args.z0.split(",")]
    )
    traj = simulate_em(model, z0, args.T, args.dt, args.seed)
    save_trajectory(traj, args.out)
    print(f"wrote {args.out}: {traj.n_steps} steps, d={traj.d}, T={traj.T:g}")
    return 0


def _parse_kernel(spec: str, d: int) -> ProductKernel:
    if spec.endswith(".json"):
        raw = json.loads(Path(spec).read_text())
        return ProductKernel(
            kernel_from_descriptor(raw["k1"]), kernel_from_descriptor(raw["k2"]), d
        )
    o1, o2 = (int(v) for v in spec.split(","))
    return ProductKernel(make_order_kernel(o1), make_order_kernel(o2), d)


def _write_grid_csv(path, grid: EvalGrid, values: np.ndarray) -> None:
    pts = grid.points()
    d = grid.d
    cols = [f"x{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)] + ["value"]
    data = np.column_stack([pts, values.reshape(-1)])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="")


def _cmd_density(args) -> int:
    traj = load_trajectory(args.traj)
    K = _parse_kernel(args.kernel, traj.d)
    lower, upper = parse_domain(args.domain, traj.d)
    grid = EvalGrid.from_box(lower, upper, args.mesh)
    est = estimate_density(traj, K, args.h1, args.h2, grid)
    _write_grid_csv(args.out, grid, est.values)
    print(f"wrote {args.out}: {grid.n_points} points, engine {est.meta['engine']}")
    return 0


def _cmd_drift(args) -> int:
    traj = load_trajectory(args.traj)
    K = _parse_kernel(args.kernel, traj.d)
    lower, upper = parse_domain(args.domain, traj.d)
    grid = EvalGrid.from_box(lower, upper, args.mesh)
    if args.mode == "fixed":
        if args.h1 is None or args.h2 is None:
            raise SystemExit("fixed mode needs --h1 and --h2")
        h1, h2 = args.h1, args.h2
        num = estimate_numerator(traj, args.j, K, h1, h2, grid)
        diag = None
    else:
        grid_c = candidate_grid(traj.T, traj.d, args.grid_base)
        pilot_h = max(p[0] for p in grid_c.pairs)
        rho_pilot = estimate_density(traj, K, pilot_h, pilot_h, grid)
        constants = ThresholdConstants.for_kernel(
            K,
            rho_sup=pilot_rho_sup(rho_pilot),
            a_jj_sup=realized_ajj_sup(traj, args.j),
        )
        sel = select_bandwidth(traj, args.j, grid_c, grid, args.q, constants, K)
        h1, h2 = sel.chosen
        num = estimate_numerator(traj, args.j, K, h1, h2, grid)
        diag = {
            "chosen": list(sel.chosen),
            "delta_values": {f"{k[0]:g},{k[1]:g}": v for k, v in sel.delta_values.items()},
            "thresholds": {f"{k[0]:g},{k[1]:g}": v for k, v in sel.thresholds.items()},
            "constants": {
                "rho_sup": constants.rho_sup, "a_jj_sup": constants.a_jj_sup,
                "C1_tilde": constants.C1_tilde, "C2_tilde": constants.C2_tilde,
                "K_sup": constants.K_sup, "K_l2": constants.K_l2, "q": args.q,
            },
        }
    rho = estimate_density(traj, K, h1, h2, grid)
    kind, _, val = args.stabilizer.partition(":")
    if kind == "rT":
        b1, b2 = (float(v) for v in val.split(","))
        r_T = truncation_r_T(traj.T, SmoothnessParams(b1, b2), traj.d)
        drift_vals = nw_drift(num, rho, r_T=r_T)
    elif kind == "rhostar":
        drift_vals = nw_drift(num, rho, rho_star=float(val))
    else:
        raise SystemExit(f"stabilizer must be rT:beta1,beta2 or rhostar:value, got {args.stabilizer!r}")
    _write_grid_csv(args.out, grid, drift_vals)
    if diag is not None and args.diag is not None:
        Path(args.diag).write_text(json.dumps(diag, indent=2))
    print(f"wrote {args.out} (bandwidths {h1:g}, {h2:g})")
    return 0


def _cmd_varprobe(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if cfg.kind != "varprobe":
        raise SystemExit("varprobe expects a config with kind='varprobe'")
    report = run_experiment(cfg)
    for v in report.verdicts:
        print(("PASS" if v["passed"] else "FAIL") + f"  {v['name']}: {v['measured']:.4g}")
    return 0 if report.passed else 1


def _cmd_experiment(args) -> int:
    if args.action == "run":
        cfg = ExperimentConfig.from_json(args.config)
        report = run_experiment(cfg)
    else:
        report = load_report(args.out_dir)
        emit_report(report, args.out_dir, formats=tuple(args.format))
    for v in report.verdicts:
        print(("PASS" if v["passed"] else "FAIL") + f"  {v['name']}: {v['measured']:.4g}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinest", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("rates", help="rate calculus for one parameter point")
    pr.add_argument("--beta1", type=float, required=True)
    pr.add_argument("--beta2", type=float, required=True)
    pr.add_argument("--d", type=int, default=1)
    pr.add_argument("--eps", type=float, default=0.0)
    pr.add_argument("--T", type=float, required=True)
    pr.add_argument("--target", choices=("density", "drift"), default="density")
    pr.set_defaults(func=_cmd_rates)

    pk = sub.add_parser("kernel", help="kernel descriptor utilities")
    ksub = pk.add_subparsers(dest="action", required=True)
    pkc = ksub.add_parser("check", help="validate moments/Lipschitz of a descriptor file")
    pkc.add_argument("file")
    pkc.set_defaults(func=_cmd_kernel_check)

    ps = sub.add_parser("simulate", help="simulate a path to a binary container")
    ps.add_argument("--model", required=True, help="catalog name or JSON spec file")
    ps.add_argument("--T", type=float, required=True)
    ps.add_argument("--dt", type=float, required=True)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--z0", default=None, help="comma-separated start state")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=_cmd_simulate)

    pd = sub.add_parser("density", help="density estimate on a grid, to CSV")
    pd.add_argument("--traj", required=True)
    pd.add_argument("--h1", type=float, required=True)
    pd.add_argument("--h2", type=float, required=True)
    pd.add_argument("--kernel", default="1,1", help="orders 'o1,o2' or descriptor JSON")
    pd.add_argument("--domain", required=True, help='e.g. "x:[-1,1],y:[0.5,1.5]"')
    pd.add_argument("--mesh", type=float, required=True)
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=_cmd_density)

    pf = sub.add_parser("drift", help="drift estimate on a grid, to CSV")
    pf.add_argument("--traj", required=True)
    pf.add_argument("--j", type=int, default=1)
    pf.add_argument("--mode", choices=("fixed", "adaptive"), default="fixed")
    pf.add_argument("--h1", type=float, default=None)
    pf.add_argument("--h2", type=float, default=None)
    pf.add_argument("--q", type=float, default=1.0)
    pf.add_argument("--grid-base", type=float, default=2.0)
    pf.add_argument("--kernel", default="1,1")
    pf.add_argument("--domain", required=True)
    pf.add_argument("--mesh", type=float, required=True)
    pf.add_argument("--stabilizer", required=True, help="rT:beta1,beta2 or rhostar:value")
    pf.add_argument("--out", required=True)
    pf.add_argument("--diag", default=None, help="JSON diagnostics (adaptive mode)")
    pf.set_defaults(func=_cmd_drift)

    pv = sub.add_parser("varprobe", help="occupation-variance scale ladder")
    pv.add_argument("--config", required=True)
    pv.set_defaults(func=_cmd_varprobe)

    pe = sub.add_parser("experiment", help="batch harness")
    esub = pe.add_subparsers(dest="action", required=True)
    per = esub.add_parser("run", help="run a config (resumes from checkpoints)")
    per.add_argument("config")
    per.set_defaults(func=_cmd_experiment)
    pep = esub.add_parser("report", help="recompute and emit a report from cells")
    pep.add_argument("out_dir")
    pep.add_argument("--format", nargs="+", default=["csv", "json", "svg"])
    pep.set_defaults(func=_cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
