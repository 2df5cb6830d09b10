"""Metrics CSV (fixed, versioned header) and cross-seed aggregation."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
COLUMNS = (
    "schema_version", "run_id", "variant", "seed", "phase", "step", "episodic_return_mean", "success_rate",
    "policy_loss", "value_loss", "sym_policy_loss", "sym_value_loss", "approx_kl", "clip_frac",
    "epochs_completed", "q_loss", "v_loss", "bc_loss", "episodes",
)
SUMMARY_COLUMNS = (
    "variant", "phase", "step", "n_seeds", "return_median", "return_p25", "return_p75",
    "success_median", "success_p25", "success_p75",
)

log = logging.getLogger(__name__)


class MetricsError(ValueError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class MetricsWriter:
    """Writes the header once, then one row per call; ``step`` must not decrease within a phase."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None
        self._writer = None
        self._last_step: dict[str, int] = {}

    def __enter__(self):
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def write(self, row: dict) -> None:
        unknown = set(row) - set(COLUMNS)
        if unknown:
            raise MetricsError(f"unknown metrics columns {sorted(unknown)}")
        phase = row.get("phase", "train")
        step = int(row["step"])
        if step < self._last_step.get(phase, -1):
            raise MetricsError(f"step went backwards in phase {phase}: {step}")
        self._last_step[phase] = step
        full = dict(row, schema_version=SCHEMA_VERSION)
        self._writer.writerow([_fmt(full.get(c)) for c in COLUMNS])


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise MetricsError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            if int(r["schema_version"]) != SCHEMA_VERSION:
                raise MetricsError(f"{path}: schema version {r['schema_version']} != {SCHEMA_VERSION}")
            rows.append(r)
    return rows


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise MetricsError(f"{path}: unexpected summary header {reader.fieldnames}")
        return list(reader)


def _num(x: str) -> float:
    return float(x) if x not in ("", None) else math.nan


def quantiles(values) -> tuple[float, float, float]:
    """(median, p25, p75) with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=np.float64)
    p25, med, p75 = np.percentile(v, [25, 50, 75], method="linear")
    return float(med), float(p25), float(p75)


def aggregate_curves(curves: dict[str, list[dict]], phase: str = "train") -> list[dict]:
    """``curves`` maps seed label -> rows of one variant.  One output row per step bucket.

    Curves of unequal length are truncated to the shortest one (with a warning).
    """
    series = {k: [r for r in rows if r["phase"] == phase] for k, rows in curves.items()}
    series = {k: v for k, v in series.items() if v}
    if not series:
        return []
    lengths = {len(v) for v in series.values()}
    if len(lengths) > 1:
        log.warning("curves have different lengths %s; truncating to %d", sorted(lengths), min(lengths))
    n = min(lengths)
    out = []
    for k in range(n):
        rows = [v[k] for v in series.values()]
        ret = quantiles([_num(r["episodic_return_mean"]) for r in rows])
        suc = quantiles([_num(r["success_rate"]) for r in rows])
        out.append(dict(
            variant=rows[0]["variant"], phase=phase, step=min(int(r["step"]) for r in rows), n_seeds=len(rows),
            return_median=ret[0], return_p25=ret[1], return_p75=ret[2],
            success_median=suc[0], success_p25=suc[1], success_p75=suc[2],
        ))
    return out


def aggregate_run_dir(run_dir: str | Path, out_path: str | Path | None = None) -> Path:
    run_dir = Path(run_dir)
    files = sorted(run_dir.rglob("metrics.csv"))
    if not files:
        raise MetricsError(f"{run_dir}: no metrics.csv files found")
    by_variant: dict[str, dict[str, list[dict]]] = defaultdict(dict)
    for f in files:
        rows = read_metrics(f)
        if rows:
            by_variant[rows[0]["variant"]][str(f.relative_to(run_dir))] = rows
    summary = []
    for variant in sorted(by_variant):
        for phase in ("train", "eval"):
            summary.extend(aggregate_curves(by_variant[variant], phase))
    out_path = Path(out_path) if out_path else run_dir / "summary.csv"
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in summary:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    return out_path
