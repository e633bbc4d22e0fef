"""Optimality gaps, table aggregation and report/trace emission.

Conventions: across-instance spreads use the sample standard deviation
(denominator k-1, NaN for a single value); within-population diversity uses
the population variance (denominator N). Gaps are fractions internally and
percent with two decimals in reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConsistencyError, ValidationError

NAN = float("nan")
GAP_RTOL = 1e-9


def optimality_gap(found: float, optimal: float) -> float:
    """``(found - optimal) / optimal``; values within 1e-9 relative of the
    optimum count as exactly 0."""
    if not optimal > 0:
        raise ValidationError(f"optimal length must be positive, got {optimal}")
    if found < optimal - GAP_RTOL * optimal:
        raise ConsistencyError(
            f"found length {found!r} is shorter than the optimum {optimal!r}; the optimum is wrong")
    if found <= optimal + GAP_RTOL * optimal:
        return 0.0
    return (found - optimal) / optimal


def is_optimal(found: float, optimal: float | None) -> bool:
    return optimal is not None and optimal > 0 and optimality_gap(found, optimal) == 0.0


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    k = len(values)
    if k == 0:
        return NAN, NAN
    mean = math.fsum(values) / k
    if k == 1:
        return mean, NAN
    var = math.fsum((v - mean) ** 2 for v in values) / (k - 1)
    return mean, math.sqrt(var)


def mean_gap(gaps: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation of per-instance gaps."""
    if len(gaps) == 0:
        raise ValidationError("mean_gap needs at least one gap")
    if any(math.isnan(g) for g in gaps):
        raise ValidationError("gap list contains NaN")
    return _mean_std(list(gaps))


def success_step_stats(records: Iterable) -> tuple[float, float]:
    """Mean and sample std of ``success_step`` over the runs that reached the
    optimum; ``(nan, nan)`` with no successes, ``(value, nan)`` with one."""
    steps = [float(r.success_step) for r in records if r.success_step is not None]
    return _mean_std(steps)


def population_variance(lengths: Sequence[float]) -> float:
    if len(lengths) == 0:
        raise ValidationError("population_variance needs at least one length")
    # shifted two-pass: an all-equal population gives exactly 0
    x0 = lengths[0]
    d = [x - x0 for x in lengths]
    m = math.fsum(d) / len(d)
    return math.fsum((v - m) ** 2 for v in d) / len(d)


def fmt_pm(mean: float, std: float, pct: bool = False) -> str:
    scale = 100.0 if pct else 1.0

    def one(v):
        return "NaN" if math.isnan(v) else f"{v * scale:.2f}"

    return f"{one(mean)} ± {one(std)}"


# -- aggregation -------------------------------------------------------------

@dataclass
class ExperimentSummary:
    family: str
    n: int
    strategy: str
    model_label: str
    gap_mean: float
    gap_std: float
    success_mean: float
    success_std: float
    runs: int
    run_ids: list[str] = field(default_factory=list)

    @property
    def problem(self) -> str:
        return f"{self.family}-{self.n}"

    @property
    def column(self) -> str:
        return column_key(self.strategy, self.model_label)

    def to_dict(self) -> dict:
        def num(v):
            return None if math.isnan(v) else round(v, 10)

        return {
            "family": self.family,
            "n": self.n,
            "strategy": self.strategy,
            "model_label": self.model_label,
            "gap_mean_pct": num(self.gap_mean * 100),
            "gap_std_pct": num(self.gap_std * 100),
            "success_mean": num(self.success_mean),
            "success_std": num(self.success_std),
            "runs": self.runs,
            "run_ids": list(self.run_ids),
        }


def column_key(strategy: str, model_label: str = "") -> str:
    return f"{strategy}@{model_label}" if model_label else strategy


def record_gap(record) -> float:
    if record.optimal_length is None or record.best is None:
        return NAN
    return optimality_gap(record.best.length, record.optimal_length)


def summarize(records: Iterable) -> list[ExperimentSummary]:
    """One summary per (family, n, strategy, model label) cell.

    Records without an optimum contribute to success stats only.
    """
    cells: dict[tuple, list] = defaultdict(list)
    for r in records:
        cells[(r.family, r.n, r.strategy, r.model_label)].append(r)
    out = []
    for (family, n, strategy, label), rs in sorted(cells.items()):
        rs = sorted(rs, key=lambda r: r.run_id)
        gaps = [g for g in map(record_gap, rs) if not math.isnan(g)]
        gm, gs = mean_gap(gaps) if gaps else (NAN, NAN)
        sm, ss = success_step_stats(rs)
        out.append(ExperimentSummary(family, n, strategy, label, gm, gs, sm, ss, len(rs),
                                     [r.run_id for r in rs]))
    return out


def _problem_key(problem: str):
    fam, _, n = problem.rpartition("-")
    return (fam, int(n)) if n.isdigit() else (problem, 0)


def render_table(summaries: Sequence[ExperimentSummary], problems: Sequence[str] = (),
                 strategies: Sequence[str] = ()) -> str:
    """Tab-separated table: one row per problem (``family-n``), gap and
    success-step columns per strategy (``strategy@model`` for model-driven runs)."""
    strategies = sorted(set(strategies) | {s.column for s in summaries})
    problems = sorted(set(problems) | {s.problem for s in summaries}, key=_problem_key)
    by_key = {(s.problem, s.column): s for s in summaries}
    header = (["problem"] + [f"gap_pct[{s}]" for s in strategies]
              + [f"success_step[{s}]" for s in strategies])
    lines = ["\t".join(header)]
    for p in problems:
        row = [p]
        for s in strategies:
            cell = by_key.get((p, s))
            row.append(fmt_pm(cell.gap_mean, cell.gap_std, pct=True) if cell else fmt_pm(NAN, NAN))
        for s in strategies:
            cell = by_key.get((p, s))
            row.append(fmt_pm(cell.success_mean, cell.success_std) if cell else fmt_pm(NAN, NAN))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def convergence_trace(record) -> str:
    rows = []
    for g in record.generations:
        gap = (optimality_gap(g.best_length, record.optimal_length) * 100
               if record.optimal_length else NAN)
        rows.append((g.generation, repr(gap)))
    return _csv(("generation", "gap_pct"), rows)


def diversity_trace(record) -> str:
    return _csv(("generation", "variance"), [(g.generation, repr(g.variance)) for g in record.generations])


def _write(path: Path, text: str, written: list[Path]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    written.append(path)


def emit_reports(summaries: Sequence[ExperimentSummary], records: Sequence, out_dir,
                 problems: Sequence[str] = (), strategies: Sequence[str] = ()) -> list[Path]:
    """Write ``table.tsv``, per-run traces and ``summary.json`` under ``out_dir``.

    ``problems`` and ``strategies`` add rows/columns that have no runs yet
    (rendered as NaN cells). Returns the written paths.
    """
    out = Path(out_dir)
    written: list[Path] = []
    _write(out / "table.tsv", render_table(summaries, problems, strategies), written)
    for r in sorted(records, key=lambda r: r.run_id):
        _write(out / "traces" / f"{r.run_id}.convergence.csv", convergence_trace(r), written)
        _write(out / "traces" / f"{r.run_id}.diversity.csv", diversity_trace(r), written)
    summary = {"cells": [s.to_dict() for s in summaries]}
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n", written)
    return written

