"""Command-line entry point.

Exit codes: 0 success (a plan was found), 1 no solution, 2 error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import bench
from .errors import StreamglideError
from .flowfield import divergence_report, load_field
from .planner import WORKERS_ENV, load_scenario

log = logging.getLogger("streamglide")

EXIT_OK, EXIT_NO_SOLUTION, EXIT_ERROR = 0, 1, 2


def _cmd_plan(args) -> int:
    scen = load_scenario(args.scenario)
    seed = "keep" if args.seed is None else args.seed
    result = bench.run_plan(scen, args.out, args.method, args.controls, seed, args.workers)
    m = result.metrics
    log.info("edges %d/%d connected, %d infeasible", m["edges_connected"], m["edges_attempted"],
             m["infeasible_skips"])
    if not result.solved:
        print("no solution")
        return EXIT_NO_SOLUTION
    print(f"total travel time {result.plan.total_time:.1f} s over {len(result.plan.edge_ids)} legs")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = bench.load_sweep(args.spec)
    rows = bench.run_sweep(spec, args.out, args.workers)
    failed = [r for r in rows if r["error"]]
    print(f"{len(rows)} runs written to {args.out}" + (f", {len(failed)} with errors" if failed else ""))
    return EXIT_OK


def _cmd_field_info(args) -> int:
    fld = load_field(args.field)
    div = divergence_report(fld, args.probes, seed=args.seed)
    xlo, xhi, ylo, yhi = fld.extent
    rng = np.random.default_rng(args.seed)
    n = max(args.probes, 1)
    x = xlo + (xhi - xlo) * rng.random(n)
    y = ylo + (yhi - ylo) * rng.random(n)
    speeds = []
    for z in fld.depths:
        u, v = fld.velocity(x, y, np.full(n, z))
        speeds.append(float(np.hypot(u, v).max()))
    info = {"layers": [float(z) for z in fld.depths], "analytic": fld.is_analytic, "extent": list(fld.extent),
            "speed_bound": fld.speed_bound, "sampled_max_speed": speeds,
            "max_divergence": [float(d) for d in div]}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _cmd_density(args) -> int:
    scen = load_scenario(args.scenario)
    c = args.controls or scen.n_controls
    if args.pair is not None:
        a, b = np.array(args.pair[:3]), np.array(args.pair[3:])
        rep = bench.pair_density_report(scen.resolved_field(), scen.resolved_model(), a, b, c)
    else:
        rep = bench.scenario_density(scen, c)
    print(json.dumps(rep, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamglide", description="Streamline-steered roadmap planning for gliders.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="plan one scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--method", choices=["streamline", "baseline"])
    sp.add_argument("--controls", type=int)
    sp.add_argument("--seed", type=int, help="draw controls at random with this seed")
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, help=f"worker threads (default ${WORKERS_ENV} or 1)")
    sp.set_defaults(func=_cmd_plan)

    sw = sub.add_parser("sweep", help="sweep control counts and seeds")
    sw.add_argument("--spec", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--workers", type=int)
    sw.set_defaults(func=_cmd_sweep)

    fi = sub.add_parser("field-info", help="summarise a field file")
    fi.add_argument("--field", required=True)
    fi.add_argument("--probes", type=int, default=1000)
    fi.add_argument("--seed", type=int, default=0)
    fi.set_defaults(func=_cmd_field_info)

    de = sub.add_parser("density", help="control-sample densities for a scenario")
    de.add_argument("--scenario", required=True)
    de.add_argument("--controls", type=int)
    de.add_argument("--pair", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    de.set_defaults(func=_cmd_density)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (StreamglideError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
