"""Writing test and simulation reports.

Floats are written with `repr`, the shortest string that reads back to
the same double, so files are stable across runs and platforms. Nothing
time-dependent is written.
"""

import csv
import io
import json
from pathlib import Path
from typing import Iterable, List, Sequence

from .dirtest import TestReport
from .graphs import ChordalDecomposition, ChordalityResult, Graph
from .simulate import METHOD_LABELS, METHODS, SimReport, relative_error_table


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def json_text(payload) -> str:
    return json.dumps(payload, indent=2) + "\n"


def write_text(text: str, path) -> Path:
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return output_path


# --- nested-test reports -----------------------------------------------------------


def nested_report_rows(report: TestReport) -> List[List[object]]:
    payload = report.to_dict()
    columns = list(TestReport.FIELDS) + ["quad_nodes", "quad_levels", "quad_rel_error", "flags"]
    quad = payload["quadrature"] or {}
    values = [payload[name] for name in TestReport.FIELDS] + [
        quad.get("nodes", ""),
        quad.get("levels", ""),
        quad.get("rel_error", ""),
        ";".join(report.flags),
    ]
    return [columns, ["" if v is None else v for v in values]]


def render_test_report(report: TestReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json_text(report.to_dict())
    if fmt == "csv":
        return csv_text(nested_report_rows(report))
    raise ValueError(f"unknown output format '{fmt}'")


def _pvalue(p: float) -> str:
    return f"{p:.3g}"


def summary_line(report: TestReport) -> str:
    """One line at printed precision: statistics to 3 decimals, p-values to 3 figures."""
    return (
        f"d={report.d}  "
        f"w={report.w:.3f} (p={_pvalue(report.p_lr)})  "
        f"w*={report.w_star:.3f} (p={_pvalue(report.p_star)})  "
        f"w**={report.w_star2:.3f} (p={_pvalue(report.p_star2)})  "
        f"p_dir={_pvalue(report.p_dir)}"
    )


# --- simulation reports -----------------------------------------------------


def render_sim_csv(report: SimReport) -> str:
    return csv_text(report.csv_rows())


def render_sim_json(report: SimReport) -> str:
    return json_text(report.to_dict())


def render_relerr_csv(report: SimReport) -> str:
    rows: List[Sequence] = [["method", "nominal", "empirical", "relative_error"]]
    rows.extend(relative_error_table(report))
    return csv_text(rows)


def sim_table_lines(report: SimReport) -> List[str]:
    """Fixed-width table in percent, one row per method."""
    width = max(len(label) for label in METHOD_LABELS.values())
    head = " " * width + "".join(f"{100 * level:>7g}" for level in report.nominal_levels)
    lines = [head]
    for method in METHODS:
        values = "".join(f"{v:>7.1f}" for v in report.empirical[method])
        lines.append(f"{METHOD_LABELS[method]:<{width}}{values}")
    return lines


# --- graph summaries --------------------------------------------------------


def graph_summary_lines(
    g: Graph,
    verdict: ChordalityResult,
    decomp: "ChordalDecomposition | None",
    cliques: Sequence[Sequence[int]],
) -> List[str]:
    def fmt(vertices: Sequence[int]) -> str:
        return "{" + ",".join(str(v + 1) for v in vertices) + "}"

    largest = max(len(c) for c in cliques)
    lines = [f"q = {g.q}", f"p = {g.p} ({len(g.off_diagonal)} off-diagonal edges)"]
    if verdict.is_chordal:
        lines.append("chordal: yes")
    else:
        lines.append(f"chordal: no (fill-in required at vertex {verdict.certificate + 1})")
    lines.append(f"cliques ({len(cliques)}): " + " ".join(fmt(c) for c in cliques))
    if decomp is not None:
        lines.append(f"separators ({len(decomp.separators)}): " + " ".join(fmt(s) for s in decomp.separators))
    lines.append(f"max clique size = {largest}")
    lines.append(f"minimum n for MLE existence = {largest + 1}")
    return lines
