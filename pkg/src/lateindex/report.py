"""Render an EvalReport to files: JSON, a tab-separated metrics table, and
PNG figures for whichever sections the report carries.

Figures are written with the Agg backend so the report path works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluate import EvalReport
from .pipeline import PipelineTrace


def report_rows(report: EvalReport) -> list[tuple[str, float]]:
    """Flatten the report into (metric, value) rows for the TSV table."""
    rows: list[tuple[str, float]] = []
    if report.recall:
        rows += [(f"recall@{k}", v) for k, v in report.recall.items()]
    if report.candidates:
        c = report.candidates
        rows += [
            ("candidates_mean", c.mean),
            ("candidates_median", c.median),
            ("candidates_max", float(c.max)),
            ("candidates_fraction_mean", c.fraction_mean),
        ]
    if report.two_pass_median_ms is not None:
        rows += [
            ("two_pass_median_ms", report.two_pass_median_ms),
            ("oracle_median_ms", report.oracle_median_ms),
            ("speedup", report.speedup),
        ]
    if report.agreement_top1 is not None:
        rows.append(("agreement_top1", report.agreement_top1))
    return rows


def write_report_files(
    report: EvalReport,
    out_dir: str | Path,
    traces: list[PipelineTrace] | None = None,
    prefix: str = "report",
) -> list[Path]:
    """Write <prefix>.json, <prefix>.tsv, and figures into out_dir; returns
    the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    json_path = out_dir / f"{prefix}.json"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    written.append(json_path)

    tsv_path = out_dir / f"{prefix}.tsv"
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("metric\tvalue\n")
        for name, value in report_rows(report):
            fh.write(f"{name}\t{value!r}\n")
    written.append(tsv_path)

    if report.recall:
        written.append(_recall_figure(report, out_dir / f"{prefix}_recall.png"))
    if report.two_pass_median_ms is not None:
        written.append(_latency_figure(report, out_dir / f"{prefix}_latency.png"))
    if traces:
        written.append(_candidates_figure(traces, out_dir / f"{prefix}_candidates.png"))
    return written


def _recall_figure(report: EvalReport, path: Path) -> Path:
    ks = list(report.recall)
    vals = [report.recall[k] for k in ks]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar([f"@{k}" for k in ks], vals, color="#3572b0")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    ax.set_title("Recall at k")
    for i, v in enumerate(vals):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _latency_figure(report: EvalReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    labels = ["two-pass", "oracle"]
    vals = [report.two_pass_median_ms, report.oracle_median_ms]
    ax.bar(labels, vals, color=["#3572b0", "#b03535"])
    ax.set_ylabel("median latency (ms)")
    ax.set_title(f"Query latency (speedup {report.speedup:.1f}x)")
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _candidates_figure(traces: list[PipelineTrace], path: Path) -> Path:
    counts = [t.candidates_examined for t in traces]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.hist(counts, bins=min(30, max(5, len(set(counts)))), color="#3572b0")
    ax.set_xlabel("candidate pages per query")
    ax.set_ylabel("queries")
    ax.set_title("First-pass candidate set size")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
