"""Per-session accuracies, the AVG/PD/NLA/BMA summary, and report emission.

Accuracies are held as exact integer counts so nothing drifts when sessions
are merged; reports render percentages with one decimal place while the
counts travel alongside for exact reconstruction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import SetupError, UndefinedMetricError


@dataclass(frozen=True)
class AccuracyCell:
    correct: int
    total: int

    def __post_init__(self):
        if self.total <= 0 or not 0 <= self.correct <= self.total:
            raise ValueError(f"bad accuracy counts {self.correct}/{self.total}")

    @property
    def value(self) -> float:
        return self.correct / self.total

    @property
    def pct(self) -> float:
        return round(100.0 * self.correct / self.total, 1)


def cell_from_percent(pct: float, denom: int = 1000) -> AccuracyCell:
    """Exact-count cell for a table-style percentage (95.4 -> 954/1000)."""
    return AccuracyCell(correct=round(pct * denom / 100.0), total=denom)


@dataclass
class SessionAccuracy:
    session: int
    all_seen: AccuracyCell
    base: AccuracyCell | None = None      # subset: base-session classes
    inc: AccuracyCell | None = None       # subset: incremental classes, t >= 2
    per_class: dict[int, AccuracyCell] = field(default_factory=dict)


def accuracy_subset(
    predictions: Sequence[int], truths: Sequence[int], class_subset: Sequence[int]
) -> AccuracyCell:
    """Accuracy over the samples whose true class lies in ``class_subset``.

    Predictions must already be argmax classes over the full seen-class
    probabilities; an empty filtered set is an undefined metric, not zero.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must align")
    subset = set(class_subset)
    pairs = [(p, t) for p, t in zip(predictions, truths) if t in subset]
    if not pairs:
        raise UndefinedMetricError("no samples with truth in the requested subset")
    correct = sum(1 for p, t in pairs if p == t)
    return AccuracyCell(correct, len(pairs))


@dataclass
class MetricSummary:
    avg: float
    pd: float
    nla: float | None
    bma: float | None


def summarize(matrix: Sequence[SessionAccuracy], sessions: int) -> MetricSummary:
    """AVG, PD, NLA, BMA over a complete accuracy matrix.

    AVG averages all-seen accuracy over sessions; PD is first-session minus
    final-session all-seen accuracy; NLA averages the incremental-class
    subset over sessions 2..T (absent when T = 1 or the subset is missing);
    BMA averages the base-class subset over all sessions.
    """
    rows = sorted(matrix, key=lambda r: r.session)
    if len(rows) != sessions or [r.session for r in rows] != list(range(1, sessions + 1)):
        raise SetupError(f"matrix incomplete: need sessions 1..{sessions}")
    avg = sum(r.all_seen.value for r in rows) / sessions
    pd = rows[0].all_seen.value - rows[-1].all_seen.value
    nla = None
    if sessions >= 2 and all(r.inc is not None for r in rows[1:]):
        nla = sum(r.inc.value for r in rows[1:]) / (sessions - 1)
    bma = None
    if all(r.base is not None for r in rows):
        bma = sum(r.base.value for r in rows) / sessions
    return MetricSummary(avg=avg, pd=pd, nla=nla, bma=bma)


@dataclass
class SessionReport:
    session: int
    classes_seen: int
    accuracy: SessionAccuracy
    losses: list[float] = field(default_factory=list)


def _cell_dict(cell: AccuracyCell | None) -> dict | None:
    if cell is None:
        return None
    return {"correct": cell.correct, "total": cell.total, "pct": cell.pct}


def session_row(report: SessionReport) -> dict:
    """Deterministic JSON object for one session (stable key order)."""
    acc = report.accuracy
    return {
        "session": report.session,
        "classes_seen": report.classes_seen,
        "accuracy": {
            "all": _cell_dict(acc.all_seen),
            "base": _cell_dict(acc.base),
            "inc": _cell_dict(acc.inc),
        },
        "per_class": {
            str(cid): _cell_dict(acc.per_class[cid]) for cid in sorted(acc.per_class)
        },
        "losses": list(report.losses),
    }


def report_from_row(row: dict) -> SessionReport:
    """Rebuild a SessionReport from its JSON row (counts are exact)."""

    def cell(d: dict | None) -> AccuracyCell | None:
        return None if d is None else AccuracyCell(d["correct"], d["total"])

    acc = row["accuracy"]
    accuracy = SessionAccuracy(
        session=row["session"],
        all_seen=cell(acc["all"]),
        base=cell(acc["base"]),
        inc=cell(acc["inc"]),
        per_class={int(cid): cell(c) for cid, c in row["per_class"].items()},
    )
    return SessionReport(
        session=row["session"],
        classes_seen=row["classes_seen"],
        accuracy=accuracy,
        losses=list(row["losses"]),
    )


def _summary_dict(summary: MetricSummary) -> dict:
    def pct(x):
        return None if x is None else round(100.0 * x, 1)

    return {
        "avg": summary.avg,
        "pd": summary.pd,
        "nla": summary.nla,
        "bma": summary.bma,
        "avg_pct": pct(summary.avg),
        "pd_pct": pct(summary.pd),
        "nla_pct": pct(summary.nla),
        "bma_pct": pct(summary.bma),
    }


def emit_report(
    reports: Sequence[SessionReport],
    path: str | Path,
    fmt: str,
    config_digest: str = "",
) -> Path:
    """Write one report file (json, csv, or plotdata); returns its path."""
    if not reports:
        raise ValueError("no session reports to emit")
    reports = sorted(reports, key=lambda r: r.session)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        summary = summarize([r.accuracy for r in reports], len(reports))
        doc = {
            "config_digest": config_digest,
            "sessions": [session_row(r) for r in reports],
            "summary": _summary_dict(summary),
        }
        out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    elif fmt == "csv":
        lines = ["session,classes_seen,acc_all_pct,acc_base_pct,acc_inc_pct"]
        for r in reports:
            acc = r.accuracy
            base = "" if acc.base is None else f"{acc.base.pct}"
            inc = "" if acc.inc is None else f"{acc.inc.pct}"
            lines.append(f"{r.session},{r.classes_seen},{acc.all_seen.pct},{base},{inc}")
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "plotdata":
        lines = [f"{r.session} {r.accuracy.all_seen.pct}" for r in reports]
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return out
