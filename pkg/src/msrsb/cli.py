"""Command line front end: run cases, sweeps, and basis exports.

Usage:
    msrsb run <config-or-bundled-name> [--seed N] [--out-dir DIR] [--tol T]
    msrsb sweep <config-or-dir> [--out-dir DIR]
    msrsb export-basis <config> <coarse-node> [--direction D] [--out FILE]
    msrsb list

The output directory defaults to the MSRSB_OUT_DIR environment variable,
then the current directory. Exit status is nonzero when the configured
solve does not converge.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="msrsb",
        description="multiscale restriction-smoothed basis benchmark runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one case")
    run_p.add_argument("config", help="case config path or bundled case name")
    run_p.add_argument("--seed", type=int, default=None, help="override the case seed")
    run_p.add_argument("--out-dir", default=None, help="output directory")
    run_p.add_argument("--tol", type=float, default=None,
                       help="override the solver tolerance")

    sweep_p = sub.add_parser("sweep", help="run a sweep config or a directory of them")
    sweep_p.add_argument("path", help="sweep config file or directory")
    sweep_p.add_argument("--out-dir", default=None)
    sweep_p.add_argument("--seed", type=int, default=None)

    exp_p = sub.add_parser("export-basis", help="write one basis function as VTK")
    exp_p.add_argument("config")
    exp_p.add_argument("coarse_node", type=int)
    exp_p.add_argument("--direction", type=int, default=0,
                       help="displacement direction for vector problems")
    exp_p.add_argument("--out", default=None, help="output .vtk path")
    exp_p.add_argument("--seed", type=int, default=None)

    sub.add_parser("list", help="list bundled cases")

    args = parser.parse_args(argv)

    if args.command == "list":
        for name in bench.bundled_case_names():
            print(name)
        return 0

    if args.command == "run":
        cfg = bench.load_config(args.config)
        report = bench.run_case(cfg, out_dir=args.out_dir, seed=args.seed,
                                tol=args.tol)
        print(report.summary())
        if report.filter_off_diverged is not None:
            peak = report.filter_off_max_update
            print(f"[{report.case}] unfiltered basis arm: "
                  f"{'diverged' if report.filter_off_diverged else 'did not diverge'}"
                  f" (max update {peak:.3e})")
        if report.rel_l1_error is not None:
            print(f"[{report.case}] initial multiscale error: "
                  f"rel l1 {report.rel_l1_error:.4f}, "
                  f"max {report.max_cell_error:.4f}")
        print(f"history: {report.csv_path}")
        return 0 if report.solver_converged else 1

    if args.command == "sweep":
        path = Path(args.path)
        configs = []
        if path.is_dir():
            for item in sorted(path.glob("*.yaml")):
                cfg = bench.load_config(item)
                if "sweep" in cfg:
                    configs.append(cfg)
        else:
            configs.append(bench.load_config(path if path.exists() else args.path))
        if not configs:
            print("no sweep configs found", file=sys.stderr)
            return 2
        ok = True
        for cfg in configs:
            if args.seed is not None:
                cfg["seed"] = args.seed
            result = bench.run_sweep(cfg, out_dir=args.out_dir)
            print(result["table"])
            for row in result["rows"]:
                if any(v is None for k, v in row.items() if k.endswith("_ms")):
                    ok = False
        return 0 if ok else 1

    if args.command == "export-basis":
        cfg = bench.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = args.out or f"{cfg['case']}_basis_{args.coarse_node}.vtk"
        path = bench.export_basis(cfg, args.coarse_node, out,
                                  direction=args.direction)
        print(path)
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
