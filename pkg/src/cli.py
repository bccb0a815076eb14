"""Command-line front end.

Usage examples:
  python -m src.cli test --data data/cattle_group1.csv --null md:11:1 --alt md:11:3
  python -m src.cli simulate --preset md-11-2 --reps 10000 --workers 8 --out results/md-11-2
  python -m src.cli simulate --scenario scenarios/block.json --out results/block
  python -m src.cli graph md:11:3

Exit status: 0 on success, 2 for invalid input, 3 for numerical failure.
"""

import json
import sys
from argparse import ArgumentParser
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

from numpy.linalg import LinAlgError

from .config import config
from .data_io import read_data
from .dirtest import test_nested
from .errors import TestStageError
from .graphs import chordality, decomposition_or_none, maximal_cliques, nest, parse_graph_spec
from .mle import suff_stats
from .quadrature import QuadratureConfig
from .reports import (
    graph_summary_lines,
    render_relerr_csv,
    render_sim_csv,
    render_sim_json,
    render_test_report,
    sim_table_lines,
    summary_line,
    write_text,
)
from .simulate import Scenario, benchmark_scenarios, run_scenario, scenario_from_dict

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class RunConfig:
    command: str
    data: Optional[Path] = None
    null: Optional[str] = None
    alt: Optional[str] = None
    out: Optional[Path] = None
    fmt: str = "json"
    quad_tol: float = config.quad_tol
    seed: Optional[int] = None
    workers: int = config.workers
    scenario: Optional[Path] = None
    preset: Optional[str] = None
    reps: Optional[int] = None
    graph: Optional[str] = None

    @property
    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(rel_tol=self.quad_tol)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, TestStageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (LinAlgError, RuntimeError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_INVALID


def _fail(exc: BaseException) -> int:
    stage = f"[{exc.stage}] " if isinstance(exc, TestStageError) else ""
    cause = exc.cause if isinstance(exc, TestStageError) else exc
    print(f"✗ {stage}{type(cause).__name__}: {cause}", file=sys.stderr)
    return _exit_code(exc)


def cmd_test(run: RunConfig) -> int:
    data = read_data(run.data)
    stats = suff_stats(data)
    null_g = parse_graph_spec(run.null, q=stats.q)
    alt_g = parse_graph_spec(run.alt, q=stats.q)
    pair = nest(null_g, alt_g)
    report = test_nested(stats, pair, run.quadrature)
    text = render_test_report(report, run.fmt)

    if run.out is None:
        sys.stdout.write(text)
        print(summary_line(report), file=sys.stderr)
        return EXIT_OK
    path = write_text(text, run.out)
    print(f"✓ Report saved to: {path}")
    print(summary_line(report))
    for flag in report.flags:
        print(f"  ⚠ {flag}")
    return EXIT_OK


def _load_scenario(run: RunConfig) -> Scenario:
    if run.scenario is not None and run.preset is not None:
        raise ValueError("use either --scenario or --preset, not both")
    if run.preset is not None:
        presets = benchmark_scenarios()
        if run.preset not in presets:
            raise ValueError(f"unknown preset '{run.preset}'; available: {', '.join(presets)}")
        scenario = presets[run.preset]
    elif run.scenario is not None:
        with open(run.scenario, "r", encoding="utf-8") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{run.scenario}: invalid JSON ({exc})") from exc
        scenario = scenario_from_dict(payload, base_dir=Path(run.scenario).parent)
    else:
        raise ValueError("simulate needs --scenario or --preset")

    changes = {}
    if run.reps is not None:
        changes["replications"] = run.reps
    if run.seed is not None:
        changes["base_seed"] = run.seed
    return replace(scenario, **changes) if changes else scenario


def cmd_simulate(run: RunConfig) -> int:
    scenario = _load_scenario(run)
    out = Path(run.out) if run.out is not None else Path(scenario.name)

    print("=" * 80)
    print(f"Simulation: {scenario.name}")
    print("=" * 80)
    print(f"q={scenario.q}, n={scenario.n}, d={scenario.pair.d}, replications={scenario.replications}, "
          f"seed={scenario.base_seed}, workers={run.workers}\n")

    step = max(1, scenario.replications // 10)

    def progress(done: int, total: int) -> None:
        if done % step == 0 or done == total:
            print(f"  Completed {done}/{total} replications")

    report = run_scenario(scenario, workers=run.workers, quad=run.quadrature, on_progress=progress)

    print(f"\n{'=' * 80}")
    print("Empirical p-value distributions (%)")
    print(f"{'=' * 80}")
    for line in sim_table_lines(report):
        print(line)
    print(f"\nSuccessful replications: {report.successes}/{report.replications}")
    if report.failures:
        print(f"⚠ {report.failures} replication(s) failed: {report.failure_stages}")

    csv_path = write_text(render_sim_csv(report), out.with_name(out.name + ".csv"))
    json_path = write_text(render_sim_json(report), out.with_name(out.name + ".json"))
    print(f"\n✓ Table saved to: {csv_path}")
    print(f"✓ Diagnostics saved to: {json_path}")
    if report.successes:
        relerr_path = write_text(render_relerr_csv(report), out.with_name(out.name + "_relerr.csv"))
        print(f"✓ Relative errors saved to: {relerr_path}")
    return EXIT_OK


def cmd_graph(run: RunConfig) -> int:
    g = parse_graph_spec(run.graph)
    verdict = chordality(g)
    decomp = decomposition_or_none(g)
    for line in graph_summary_lines(g, verdict, decomp, maximal_cliques(g, decomp)):
        print(line)
    return EXIT_OK


COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "graph": cmd_graph}


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="ggm-tests", description="Nested Gaussian graphical model tests")
    subparsers = parser.add_subparsers(dest="cmd", required=True)

    pt = subparsers.add_parser("test", help="Test a null graph against an alternative on a data set")
    pt.add_argument("--data", type=Path, required=True, help="CSV file, one row per observation")
    pt.add_argument("--null", type=str, required=True, help="Null graph: shorthand or JSON file")
    pt.add_argument("--alt", type=str, required=True, help="Alternative graph: shorthand or JSON file")
    pt.add_argument("--out", type=Path, default=None, help="Report file (stdout when omitted)")
    pt.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json", help="Report format")
    pt.add_argument("--quad-tol", type=float, default=config.quad_tol, help="Relative quadrature tolerance")

    ps = subparsers.add_parser("simulate", help="Monte Carlo calibration under the null")
    ps.add_argument("--scenario", type=Path, default=None, help="Scenario JSON file")
    ps.add_argument("--preset", type=str, default=None, help="Built-in design, e.g. md-11-2 or block-50-60")
    ps.add_argument("--reps", type=int, default=None, help="Override the number of replications")
    ps.add_argument("--out", type=Path, default=None, help="Output prefix for .csv, .json and _relerr.csv")
    ps.add_argument("--quad-tol", type=float, default=config.quad_tol, help="Relative quadrature tolerance")
    ps.add_argument("--seed", type=int, default=None, help="Override the base seed")
    ps.add_argument("--workers", type=int, default=config.workers, help="Worker processes")

    pg = subparsers.add_parser("graph", help="Describe a graph")
    pg.add_argument("graph", type=str, help="Graph shorthand or JSON file")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    run = RunConfig(
        command=args.cmd,
        data=getattr(args, "data", None),
        null=getattr(args, "null", None),
        alt=getattr(args, "alt", None),
        out=getattr(args, "out", None),
        fmt=getattr(args, "fmt", "json"),
        quad_tol=getattr(args, "quad_tol", config.quad_tol),
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", config.workers),
        scenario=getattr(args, "scenario", None),
        preset=getattr(args, "preset", None),
        reps=getattr(args, "reps", None),
        graph=getattr(args, "graph", None),
    )
    try:
        return COMMANDS[run.command](run)
    except (ValueError, OSError, LinAlgError, RuntimeError, ArithmeticError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
