"""Convergence reports: delimited/JSON rows plus a matplotlib figure."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

BASE_COLUMNS = ("level", "solution_bp", "error_bp", "time_s", "grid_points")
MC_COLUMNS = ("ci_low_bp", "ci_high_bp", "paths", "inside_ci")


@dataclass
class Row:
    method: str  # full | sparse | mc
    level: int | None
    solution_bp: float
    error_bp: float | None = None
    time_s: float | None = None
    grid_points: int | None = None
    ci_low_bp: float | None = None
    ci_high_bp: float | None = None
    paths: int | None = None
    inside_ci: bool | None = None


@dataclass
class Report:
    mode: str
    config_hash: str
    rows: list[Row]
    exact_bp: float | None = None

    @property
    def columns(self) -> tuple[str, ...]:
        extra = MC_COLUMNS if self.mode in ("mc", "compare") else ()
        return BASE_COLUMNS + extra + ("config_hash",)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "NA"
    return format(x, ".12g")


def _cell(row: Row, col: str, config_hash: str) -> str:
    if col == "config_hash":
        return config_hash
    if col == "level":
        return "mc" if row.method == "mc" else _num(row.level)
    return _num(getattr(row, col))


def to_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for row in report.rows:
        w.writerow([_cell(row, c, report.config_hash) for c in report.columns])
    return buf.getvalue()


def _json_value(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def to_json(report: Report) -> str:
    rows = []
    for row in report.rows:
        item = {"method": row.method}
        for c in report.columns:
            if c == "config_hash":
                item[c] = report.config_hash
            else:
                item[c] = _json_value(getattr(row, c))
        rows.append(item)
    doc = {"mode": report.mode, "config_hash": report.config_hash, "exact_bp": report.exact_bp,
           "rows": rows}
    return json.dumps(doc, indent=2) + "\n"


def render(report: Report, fmt: str) -> str:
    return to_json(report) if fmt == "json" else to_csv(report)


def figure_path(out: str | Path) -> Path:
    return Path(out).with_suffix(".png")


def plot_convergence(report: Report, path: str | Path) -> Path:
    """Price against level, with the exact value or the Monte Carlo band when known."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.ticker import MaxNLocator

    grid = [r for r in report.rows if r.method != "mc"]
    mc = [r for r in report.rows if r.method == "mc"]
    with_err = [r for r in grid if r.error_bp]
    ncols = 2 if with_err else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.0 * ncols, 3.6), squeeze=False)
    ax = axes[0, 0]
    if grid:
        ax.plot([r.level for r in grid], [r.solution_bp for r in grid], "o-", color="C0",
                label=f"{grid[0].method} grid")
    if report.exact_bp is not None:
        ax.axhline(report.exact_bp, color="k", lw=0.8, ls="--", label="exact")
    for r in mc:
        if r.ci_low_bp is not None and not math.isnan(r.ci_low_bp):
            ax.axhspan(r.ci_low_bp, r.ci_high_bp, color="C1", alpha=0.25, label="MC 95% CI")
        ax.axhline(r.solution_bp, color="C1", lw=0.8, label="MC mean")
    ax.set_xlabel("level")
    ax.set_ylabel("price (bp)")
    ax.legend(frameon=False, fontsize=8)
    if with_err:
        ax = axes[0, 1]
        ax.semilogy([r.level for r in with_err], [r.error_bp for r in with_err], "s-", color="C2")
        ax.set_xlabel("level")
        ax.set_ylabel("|error| (bp)")
    for a in axes.ravel():
        a.xaxis.set_major_locator(MaxNLocator(integer=True))
        a.spines["right"].set_visible(False)
        a.spines["top"].set_visible(False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
