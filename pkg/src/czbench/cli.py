"""Command-line front end.

Subcommands: calibrate, solve, bench, surface, cond-trace. Every physical
and solver parameter lives in a JSON configuration file; ``--set key=value``
overrides any existing config entry for the current invocation only.

Exit codes: 0 success, 1 configuration or usage error, 2 when a requested
single solve ends without convergence (bench cells never fail the process).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

from . import bench, fem, solvers
from .bench import ConfigurationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2

# Bare --set shortcuts for the run target.
_RUN_ALIASES = {"method": "run.method", "case": "run.case", "mesh": "run.mesh"}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for non-converged
    # solves here.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, pairs: list[str]) -> dict:
    """Apply dotted-path key=value overrides onto a copy of the config.

    Keys must already exist so an override is always equivalent to editing
    the file.
    """
    out = copy.deepcopy(config)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not of the form key=value")
        key, text = pair.split("=", 1)
        key = _RUN_ALIASES.get(key, key)
        path = key.split(".")
        node = out
        for part in path[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigurationError(f"override key {key!r} not present in config")
            node = node[part]
        leaf = path[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigurationError(f"override key {key!r} not present in config")
        node[leaf] = _parse_value(text)
    return out


def _resolve_case(config: dict, name: str) -> str:
    for case_id in config["cases"]:
        if case_id.lower() == str(name).lower():
            return case_id
    raise ConfigurationError(f"unknown case {name!r}; have {sorted(config['cases'])}")


def _run_target(config: dict) -> tuple[str, str, str]:
    run = config.get("run", {})
    method = str(run.get("method", "newton")).lower()
    if method not in solvers.METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    case_id = _resolve_case(config, run.get("case", "ItP"))
    mesh_name = str(run.get("mesh", "coarse"))
    return method, case_id, mesh_name


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        bench.atomic_write_text(out_path, text)
    else:
        sys.stdout.write(text)


def _cmd_calibrate(args) -> int:
    config = bench.load_config(args.config)
    config = apply_overrides(config, args.set or [])
    calibrated = bench.calibrate_config(config, force=args.force)
    text = json.dumps(calibrated, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    for case_id, case in calibrated["cases"].items():
        print(f"calibrated {case_id}: u_right = {case['u_right']!r}", file=sys.stderr)
    return EXIT_OK


def _cmd_solve(args) -> int:
    config = bench.load_config(args.config)
    config = apply_overrides(config, args.set or [])
    method, case_id, mesh_name = _run_target(config)
    problem = bench.build_problem(config, case_id, mesh_name)
    cfg = bench.solver_config_for(config, method, case_id)
    report = solvers.solve(problem, cfg)
    doc = bench.solve_report_doc(method, case_id, mesh_name, report)
    _emit(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", args.out)
    print(f"{method} on {case_id}/{mesh_name}: {report.status} "
          f"after {report.iterations} iterations", file=sys.stderr)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_bench(args) -> int:
    config = bench.load_config(args.config)
    config = apply_overrides(config, args.set or [])
    matrix = bench.matrix_from_config(config)
    result = bench.run_matrix(matrix)
    table = bench.format_table(result)
    out_dir = args.out
    bench.atomic_write_text(os.path.join(out_dir, "report.json"),
                            bench.report_json(result))
    bench.atomic_write_text(os.path.join(out_dir, "table.txt"), table)
    for cell in result.cells:
        name = f"{cell.method}_{cell.case_id}_{cell.mesh_name}.csv"
        bench.atomic_write_text(os.path.join(out_dir, "residuals", name),
                                bench.residual_history_csv(cell.report))
    sys.stdout.write(table)
    return EXIT_OK


def _cmd_surface(args) -> int:
    config = bench.load_config(args.config)
    config = apply_overrides(config, args.set or [])
    _, case_id, mesh_name = _run_target(config)
    problem = bench.build_problem(config, case_id, mesh_name)
    resolution = int(config.get("surface", {}).get("resolution", 201))
    surface = bench.sample_surface(problem, resolution=resolution)
    _emit(bench.surface_csv(surface), args.out)
    return EXIT_OK


def _cmd_cond_trace(args) -> int:
    config = bench.load_config(args.config)
    config = apply_overrides(config, args.set or [])
    method, case_id, mesh_name = _run_target(config)
    if method not in ("broyden", "broyden_inv"):
        method = "broyden"
    problem = bench.build_problem(config, case_id, mesh_name)
    cfg = bench.solver_config_for(config, method, case_id)
    trace = bench.condition_trace(problem, method, cfg)
    _emit(bench.condition_trace_csv(trace), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="czbench",
                     description="Nonlinear-solver benchmarks on 1D cohesive-zone problems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path); repeatable")
        p.add_argument("--out", help="output file (or directory for bench)")

    p = sub.add_parser("calibrate", help="fill in u_right for each case")
    common(p)
    p.add_argument("--force", action="store_true",
                   help="recalibrate cases that already have u_right")
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("solve", help="run one method on one case and mesh")
    common(p)
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("bench", help="run the full method x case x mesh matrix")
    common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("surface", help="sample a residual surface to CSV")
    common(p)
    p.set_defaults(fn=_cmd_surface)

    p = sub.add_parser("cond-trace", help="condition numbers along a Broyden run")
    common(p)
    p.set_defaults(fn=_cmd_cond_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) == "bench" and not args.out:
        print("error: bench requires --out DIRECTORY", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (ConfigurationError, fem.MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
