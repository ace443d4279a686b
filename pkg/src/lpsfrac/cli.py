"""Command-line driver: ``lpsfrac run <problem> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields

import numpy as np

from . import fracture_cases
from .benchmarks import PROBLEMS, BenchmarkSpec, run_static_case, static_case, static_convergence
from .errors import LpsError
from .static_solver import ConvergenceTable, write_convergence_csv, write_field_csv

log = logging.getLogger("lpsfrac")

# flag name -> spec field
FLAGS = {
    "h": "h", "m_ratio": "m_ratio", "nu": "nu", "youngs": "youngs", "perturb": "perturb", "seed": "seed",
    "normals": "normals", "dt": "dt", "t_end": "t_end", "out": "out", "h_list": "h_list", "nu2": "nu2",
    "bulk_ratio": "bulk_ratio", "particles": "particles", "dump_fields": "dump_every", "solver": "solver",
}


def _h_list(text):
    return tuple(float(eval_fraction(x)) for x in text.split(",") if x.strip())


def eval_fraction(token: str) -> float:
    """Parse '0.1', '1/40' or 'pi/16'."""
    t = token.strip().lower().replace("pi", repr(np.pi))
    if "/" in t:
        a, b = t.split("/", 1)
        return float(a or 1.0) / float(b)
    return float(t)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpsfrac", description="Meshfree LPS peridynamics benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one benchmark")
    run.add_argument("problem", choices=PROBLEMS)
    run.add_argument("--config", help="flat key = value file; flags override it")
    run.add_argument("--h", type=eval_fraction, default=None)
    run.add_argument("--m-ratio", "--M", dest="m_ratio", type=float, default=None)
    run.add_argument("--nu", type=float, default=None)
    run.add_argument("--nu2", type=float, default=None, help="matrix Poisson ratio (composite)")
    run.add_argument("--bulk-ratio", type=float, default=None, help="inclusion/matrix bulk modulus (composite)")
    run.add_argument("--youngs", type=float, default=None)
    run.add_argument("--perturb", type=float, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--normals", choices=("estimated", "exact"), default=None)
    run.add_argument("--dt", type=float, default=None)
    run.add_argument("--t-end", type=float, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--h-list", type=_h_list, default=None, help="comma list, e.g. pi/16,pi/32,pi/64")
    run.add_argument("--particles", type=int, default=None)
    run.add_argument("--dump-fields", type=int, default=None,
                     help="static: write the field CSV (any value > 0); dynamic: snapshot every N steps")
    run.add_argument("--solver", choices=("auto", "direct", "iterative"), default=None)
    run.add_argument("--write-config", action="store_true", help="also write the resolved config file")
    return p


def spec_from_args(args) -> BenchmarkSpec:
    base = {}
    if args.config:
        with open(args.config) as fh:
            cfg = BenchmarkSpec.from_config(fh.read())
        base = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    base["problem"] = args.problem
    for flag, name in FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            base[name] = val
    return BenchmarkSpec(**base)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def run_static(spec: BenchmarkSpec) -> dict:
    header = spec.describe()
    if spec.h_list:
        table = static_convergence(spec)
        write_convergence_csv(os.path.join(spec.out, "convergence.csv"), table, header)
        summary = {"spec": header, "slope_u": table.slope_u, "slope_theta": table.slope_theta,
                   "rows": table.rows()}
    else:
        case = static_case(spec)
        run = run_static_case(case, spec.h, spec.m_ratio * spec.h, spec.perturb, spec.seed, spec.normals)
        table = ConvergenceTable([spec.h], [spec.m_ratio * spec.h], [run.err_u], [run.err_theta])
        write_convergence_csv(os.path.join(spec.out, "convergence.csv"), table, header)
        if spec.dump_every:
            write_field_csv(os.path.join(spec.out, "field.csv"), run.cloud, run.solution, header)
        summary = {"spec": header, "err_u_l2": run.err_u, "err_theta_l2": run.err_theta, **run.meta}
    _write_json(os.path.join(spec.out, "summary.json"), summary)
    return summary


def build_fracture_case(spec: BenchmarkSpec):
    if spec.problem == "glass_branch":
        return fracture_cases.glass_case(h=spec.h, m_ratio=spec.m_ratio, dt=spec.dt, t_end=spec.t_end,
                                         perturb=spec.perturb, seed=spec.seed)
    if spec.problem == "vnotch":
        return fracture_cases.vnotch_case(h=spec.h, m_ratio=spec.m_ratio, dt=spec.dt, t_end=spec.t_end,
                                          perturb=spec.perturb, seed=spec.seed)
    return fracture_cases.ring_case(particles=spec.particles, m_ratio=spec.m_ratio, dt=spec.dt,
                                    t_end=spec.t_end, perturb=spec.perturb or 0.2, seed=spec.seed)


def run_dynamic(spec: BenchmarkSpec) -> dict:
    from .dynamics import write_snapshot_csv

    header = spec.describe()
    case = build_fracture_case(spec)
    every = math.gcd(case.snapshot_every, spec.dump_every) if spec.dump_every else None
    result = fracture_cases.run_fracture(case, solver=spec.solver, snapshot_every=every, progress=True)
    if spec.dump_every:
        for snap in result.snapshots:
            if snap.step % spec.dump_every == 0:
                write_snapshot_csv(os.path.join(spec.out, f"snapshot_{snap.step:06d}.csv"), case.cloud, snap,
                                   header)
    summary = {"spec": header, **result.summary()}
    _write_json(os.path.join(spec.out, "features.json"), summary)
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args).resolved()
        os.makedirs(spec.out, exist_ok=True)
        if args.write_config:
            with open(os.path.join(spec.out, "spec.cfg"), "w") as fh:
                fh.write(spec.to_config())
        if spec.is_dynamic:
            summary = run_dynamic(spec)
        else:
            summary = run_static(spec)
    except (LpsError, ValueError, OSError) as exc:
        print(f"lpsfrac: error: {exc}", file=sys.stderr)
        return 2
    brief = {k: v for k, v in summary.items() if not isinstance(v, (list, tuple))}
    print(json.dumps(brief, indent=2, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
