"""Results table: structured (tab-separated) and human-readable renderings, plus figures."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .training import METHODS

PROBE = "untrained-probe"
ROW_ORDER = METHODS + (PROBE,)
MISSING = "-"
STRUCTURED, TABLE = "tsv", "table"
_HEADER_NAMES = {
    "method": "Method",
    "accuracy_lexicalized": "Acc (lex)",
    "accuracy_delexicalized": "Acc (delex)",
    "training_samples_used": "Training samples",
    "forgetting_delta": "Forgetting delta",
    "seed": "Seed",
    "wall_time": "Wall time (s)",
}


@dataclass(frozen=True)
class EvalReport:
    method: str
    accuracy_lexicalized: float | None = None
    accuracy_delexicalized: float | None = None
    training_samples_used: int | None = None
    forgetting_delta: float | None = None
    seed: int | None = None
    wall_time: float | None = None

    def __post_init__(self):
        if self.method not in ROW_ORDER:
            raise ValueError(f"unknown report row {self.method!r}")
        for name in ("accuracy_lexicalized", "accuracy_delexicalized"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.training_samples_used is not None and self.training_samples_used < 0:
            raise ValueError("training_samples_used must be >= 0")

    @property
    def forgetting_improved(self) -> bool:
        return self.forgetting_delta is not None and self.forgetting_delta < 0


_FIELDS = [f.name for f in fields(EvalReport)]
_INT_FIELDS = {"training_samples_used", "seed"}


def _sorted(reports: Sequence[EvalReport]) -> list[EvalReport]:
    return sorted(reports, key=lambda r: (ROW_ORDER.index(r.method), r.seed if r.seed is not None else -1))


def _columns(timing: bool) -> list[str]:
    return _FIELDS if timing else [f for f in _FIELDS if f != "wall_time"]


def _cell(value) -> str:
    if value is None:
        return MISSING
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _pretty(name: str, value) -> str:
    if value is None:
        return MISSING
    if name.startswith("accuracy"):
        return f"{100 * value:.1f}%"
    if name == "forgetting_delta":
        mark = " (improved)" if value < 0 else ""
        return f"{100 * value:+.1f} pts{mark}"
    if name == "wall_time":
        return f"{value:.1f}"
    return str(value)


def render(reports: Sequence[EvalReport], fmt: str = STRUCTURED, timing: bool = False) -> str:
    """One header plus one row per report, rows in method order.

    Wall time is left out unless ``timing`` is set, which keeps rendered
    files byte-identical across reruns.
    """
    if not reports:
        raise ValueError("nothing to report")
    cols = _columns(timing)
    rows = _sorted(reports)
    if fmt == STRUCTURED:
        lines = ["\t".join(cols)]
        lines += ["\t".join(_cell(getattr(r, c)) for c in cols) for r in rows]
        return "\n".join(lines) + "\n"
    if fmt == TABLE:
        grid = [[_HEADER_NAMES[c] for c in cols]]
        grid += [[_pretty(c, getattr(r, c)) for c in cols] for r in rows]
        widths = [max(len(row[i]) for row in grid) for i in range(len(cols))]
        fmt_row = lambda row: "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        rule = "  ".join("-" * w for w in widths)
        return "\n".join([fmt_row(grid[0]), rule] + [fmt_row(r) for r in grid[1:]]) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse(text: str) -> list[EvalReport]:
    """Inverse of ``render(..., fmt="tsv")``."""
    lines = [line for line in text.splitlines() if line]
    if not lines:
        raise ValueError("empty report")
    cols = lines[0].split("\t")
    unknown = set(cols) - set(_FIELDS)
    if unknown or "method" not in cols:
        raise ValueError(f"unexpected report columns: {sorted(unknown) or cols}")
    out = []
    for line in lines[1:]:
        cells = line.split("\t")
        if len(cells) != len(cols):
            raise ValueError(f"row has {len(cells)} cells, header has {len(cols)}")
        values = {}
        for name, cell in zip(cols, cells):
            if name == "method":
                values[name] = cell
            elif cell == MISSING:
                values[name] = None
            elif name in _INT_FIELDS:
                values[name] = int(cell)
            else:
                values[name] = float(cell)
        out.append(EvalReport(**values))
    return out


# ---------------------------------------------------------------------------
# figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> None:
    # no timestamp or version metadata, so reruns write identical bytes
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})


def plot_accuracy(reports: Sequence[EvalReport], path) -> Path:
    plt = _pyplot()
    rows = [r for r in _sorted(reports) if r.accuracy_lexicalized is not None or r.accuracy_delexicalized is not None]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.38
    for shift, attr, label in ((-width / 2, "accuracy_lexicalized", "lexicalized"), (width / 2, "accuracy_delexicalized", "delexicalized")):
        vals = [getattr(r, attr) for r in rows]
        xs = [i + shift for i, v in enumerate(vals) if v is not None]
        ax.bar(xs, [v for v in vals if v is not None], width, label=label)
    ax.set_xticks(range(len(rows)), [r.method for r in rows])
    ax.set_ylim(0, 1.05)
    ax.axhline(0.5, color="grey", lw=0.8, ls=":")
    ax.set_ylabel("test accuracy")
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = Path(path)
    _save(fig, path)
    plt.close(fig)
    return path


def plot_few_shot(curves: dict[str, list[tuple[int, float]]], target: float, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for method in ROW_ORDER:
        if curves.get(method):
            ns, accs = zip(*curves[method])
            ax.plot(ns, accs, marker="o", label=method)
    ax.axhline(target, color="grey", lw=0.8, ls="--")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("training examples")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = Path(path)
    _save(fig, path)
    plt.close(fig)
    return path


def plot_forgetting(reports: Sequence[EvalReport], path) -> Path:
    plt = _pyplot()
    rows = [r for r in _sorted(reports) if r.forgetting_delta is not None]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(rows)), [100 * r.forgetting_delta for r in rows], color="tab:red")
    ax.set_xticks(range(len(rows)), [r.method for r in rows])
    ax.axhline(0, color="black", lw=0.8)
    ax.set_ylabel("proxy accuracy drop (pts)")
    fig.tight_layout()
    path = Path(path)
    _save(fig, path)
    plt.close(fig)
    return path


def finite_or_none(x) -> float | None:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x
