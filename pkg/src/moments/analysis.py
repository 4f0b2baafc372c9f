"""Classification metrics, bootstrap intervals and logit-based modality analyses.

Model outputs arrive as :class:`LogitRecord` objects: for every modality
combination a model was queried under (``"A"``, ``"LV"``, ``"ALV"`` ...), the
logits of the ground-truth and the incorrect answer.  Their difference, dZ,
measures how confidently the model was right.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    EmptyInput,
    EmptySlice,
    LengthMismatch,
    MissingCombination,
    NonFinite,
    OneClassOnly,
    ParseError,
    TooFewValidResamples,
)

MODALITIES = ("A", "L", "V")
ALL_COMBINATIONS = tuple(
    "".join(c) for r in (1, 2, 3) for c in itertools.combinations(MODALITIES, r)
)
SLICES = ("IM", "NIM", "all")


def canonical_combo(combo: str | Iterable[str]) -> str:
    """Normalize a combination name to sorted ``A``/``L``/``V`` letters (``"VL"`` -> ``"LV"``)."""
    letters = set(combo.upper()) if isinstance(combo, str) else {str(m).upper() for m in combo}
    if not letters or not letters <= set(MODALITIES):
        raise ValueError(f"invalid modality combination {combo!r}")
    return "".join(m for m in MODALITIES if m in letters)


# -- confusion-matrix metrics --------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the roles of the two classes exchanged."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


def _binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def _check_lengths(a, b) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise EmptyInput("no predictions")


def confusion(preds, labels) -> ConfusionCounts:
    p = _binary(preds, "preds")
    y = _binary(labels, "labels")
    _check_lengths(p, y)
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def _require_total(c: ConfusionCounts) -> None:
    if c.total == 0:
        raise EmptyInput("confusion matrix is empty")


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 whenever a marginal is empty."""
    _require_total(c)
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def accuracy(c: ConfusionCounts) -> float:
    _require_total(c)
    return (c.tp + c.tn) / c.total


def f1(c: ConfusionCounts) -> float:
    _require_total(c)
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels, "labels")
    _check_lengths(s, y)
    if not np.all(np.isfinite(s)):
        raise NonFinite("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("roc_auc needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _from_confusion(fn: Callable[[ConfusionCounts], float], needs_both: bool) -> Callable:
    """Metric on (preds, labels).

    With ``needs_both`` the metric is treated as undefined (raises
    :class:`OneClassOnly`) when the labels contain one class only; MCC and
    F1 fall back to 0 there, which would drag bootstrap intervals toward 0.
    """

    def metric(preds, labels) -> float:
        if needs_both and np.unique(np.asarray(labels)).size < 2:
            raise OneClassOnly(f"{fn.__name__} is undefined for single-class labels")
        return fn(confusion(preds, labels))

    metric.__name__ = fn.__name__
    return metric


#: name -> metric(values, labels); values are 0/1 predictions except for roc_auc (scores)
METRICS: dict[str, Callable] = {
    "mcc": _from_confusion(mcc, True),
    "accuracy": _from_confusion(accuracy, False),
    "f1": _from_confusion(f1, True),
    "roc_auc": roc_auc,
}
_POINT = {"mcc": mcc, "accuracy": accuracy, "f1": f1}


def bootstrap_ci(metric: Callable, preds, labels, B: int = 1000, level: float = 0.95,
                 seed=0) -> tuple[float, float]:
    """Percentile bootstrap interval of ``metric(preds, labels)``.

    Resample ``i`` draws its indices from ``default_rng([seed, i])`` so the
    result does not depend on evaluation order.  Resamples on which the
    metric is undefined (it raises or returns NaN) are skipped; if fewer than
    half of them are usable :class:`TooFewValidResamples` is raised.
    """
    p = np.asarray(preds)
    y = np.asarray(labels)
    _check_lengths(p, y)
    if B < 1 or not 0 < level < 1:
        raise ValueError("need B >= 1 and 0 < level < 1")
    seed_entropy = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    n = y.size
    values = []
    for i in range(B):
        idx = np.random.default_rng([*seed_entropy, i]).integers(0, n, n)
        try:
            v = float(metric(p[idx], y[idx]))
        except (ValueError, ZeroDivisionError):
            continue
        if math.isfinite(v):
            values.append(v)
    if len(values) < 0.5 * B:
        raise TooFewValidResamples(f"only {len(values)} of {B} resamples gave a defined metric")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def metrics_report(preds, labels, scores=None, B: int = 1000, level: float = 0.95, seed=0,
                   score_source: str | None = None) -> list[dict]:
    """Rows ``{metric, value, ci_lo, ci_hi}`` for MCC, accuracy, F1 and (given scores) ROC AUC."""
    rows = []
    counts = confusion(preds, labels)
    for name in ("mcc", "accuracy", "f1"):
        lo, hi = bootstrap_ci(METRICS[name], preds, labels, B, level, seed)
        rows.append({"metric": name, "value": _POINT[name](counts), "ci_lo": lo, "ci_hi": hi})
    if scores is not None:
        lo, hi = bootstrap_ci(roc_auc, scores, labels, B, level, seed)
        row = {"metric": "roc_auc", "value": roc_auc(scores, labels), "ci_lo": lo, "ci_hi": hi}
        if score_source:
            row["score_source"] = score_source
        rows.append(row)
    return rows


# -- logit records -------------------------------------------------------------


@dataclass(frozen=True)
class LogitEntry:
    z_true: float
    z_false: float = 0.0


def delta_z(entry: LogitEntry) -> float:
    """Ground-truth logit minus incorrect logit."""
    if not (math.isfinite(entry.z_true) and math.isfinite(entry.z_false)):
        raise NonFinite(f"non-finite logits {entry}")
    return entry.z_true - entry.z_false


@dataclass
class LogitRecord:
    moment_id: str
    ground_truth: int
    entries: dict[str, LogitEntry]

    def __post_init__(self):
        if self.ground_truth not in (0, 1):
            raise ValueError(f"ground_truth must be 0 or 1, got {self.ground_truth}")
        entries = {}
        for combo, e in self.entries.items():
            key = canonical_combo(combo)
            if key in entries:
                raise ValueError(f"{self.moment_id}: duplicate combination {key}")
            if isinstance(e, Mapping):
                e = LogitEntry(float(e["z_true"]), float(e.get("z_false", 0.0)))
            elif not isinstance(e, LogitEntry):
                e = LogitEntry(float(e))  # a bare number is a precomputed dZ
            delta_z(e)
            entries[key] = e
        self.entries = entries

    @classmethod
    def from_deltas(cls, moment_id: str, ground_truth: int, deltas: Mapping[str, float]) -> "LogitRecord":
        return cls(moment_id, ground_truth, {k: LogitEntry(float(v)) for k, v in deltas.items()})

    def dz(self, combo: str) -> float:
        key = canonical_combo(combo)
        if key not in self.entries:
            raise MissingCombination(f"{self.moment_id}: no entry for combination {key}")
        return delta_z(self.entries[key])

    def to_json(self) -> dict:
        return {
            "moment_id": self.moment_id,
            "ground_truth": self.ground_truth,
            "entries": {k: {"z_true": e.z_true, "z_false": e.z_false} for k, e in self.entries.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "LogitRecord":
        return cls(str(d["moment_id"]), int(d["ground_truth"]), dict(d["entries"]))


def read_logit_records(path: str | os.PathLike) -> list[LogitRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(LogitRecord.from_json(json.loads(line)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (MissingCombination, NonFinite)):
                raise
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_logit_records(records: Iterable[LogitRecord], path: str | os.PathLike) -> None:
    Path(path).write_text("".join(json.dumps(r.to_json()) + "\n" for r in records))


# -- modality contribution -----------------------------------------------------


@dataclass(frozen=True)
class ContributionReport:
    modality: str
    class_slice: str
    score: float
    n: int


def _select(records: Sequence[LogitRecord], class_slice: str) -> list[LogitRecord]:
    if class_slice not in SLICES:
        raise ValueError(f"slice must be one of {SLICES}")
    if class_slice == "all":
        chosen = list(records)
    else:
        want = 1 if class_slice == "IM" else 0
        chosen = [r for r in records if r.ground_truth == want]
    if not chosen:
        raise EmptySlice(f"no records in slice {class_slice}")
    return chosen


def record_contribution(record: LogitRecord, modality: str, combos: Iterable[str] | None = None,
                        normalized: bool = False) -> float:
    """dZ summed over combinations with ``modality`` minus the sum over those without it.

    With ``normalized`` each of the two sums is divided by its number of
    combinations (an empty side contributes 0).
    """
    m = canonical_combo(modality)
    if len(m) != 1:
        raise ValueError(f"expected a single modality, got {modality!r}")
    keys = sorted({canonical_combo(c) for c in (combos if combos is not None else record.entries)})
    inc = [record.dz(c) for c in keys if m in c]
    exc = [record.dz(c) for c in keys if m not in c]
    if normalized:
        return (sum(inc) / len(inc) if inc else 0.0) - (sum(exc) / len(exc) if exc else 0.0)
    return sum(inc) - sum(exc)


def contribution(records: Sequence[LogitRecord], modality: str, combos: Iterable[str] | None = None,
                 class_slice: str = "all", normalized: bool = False) -> ContributionReport:
    """Per-record contributions of ``modality`` summed over a class slice.

    ``combos`` defaults to the combinations of the first record; every record
    must carry all of them.
    """
    chosen = _select(records, class_slice)
    keys = sorted({canonical_combo(c) for c in (combos if combos is not None else chosen[0].entries)})
    score = sum(record_contribution(r, modality, keys, normalized) for r in chosen)
    return ContributionReport(canonical_combo(modality), class_slice, float(score), len(chosen))


def reliable_type_filter(records: Iterable[LogitRecord], threshold: float = 3.0,
                         unimodal: Sequence[str] = MODALITIES) -> list[LogitRecord]:
    """Records whose dZ exceeds ``threshold`` under every listed single modality."""
    return [r for r in records if all(r.dz(m) > threshold for m in unimodal)]


def confidence_pairs(records: Iterable[LogitRecord]) -> list[dict]:
    """Best single-modality dZ against best multi-modality dZ, per record."""
    out = []
    for r in records:
        uni = [r.dz(c) for c in r.entries if len(c) == 1]
        multi = [r.dz(c) for c in r.entries if len(c) > 1]
        if not uni:
            raise MissingCombination(f"{r.moment_id}: no single-modality entry")
        if not multi:
            raise MissingCombination(f"{r.moment_id}: no multi-modality entry")
        out.append({
            "moment_id": r.moment_id,
            "best_unimodal_dz": max(uni),
            "best_multimodal_dz": max(multi),
            "ground_truth": r.ground_truth,
        })
    return out


# -- prediction files and report writers ---------------------------------------


@dataclass
class Predictions:
    ids: list[str]
    labels: np.ndarray
    preds: np.ndarray
    scores: np.ndarray | None


def read_predictions(path: str | os.PathLike) -> Predictions:
    """Read ``moment_id,label,pred[,score]`` rows from CSV or JSON lines."""
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".csv":
            rows = list(csv.DictReader(text.splitlines()))
        else:
            rows = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        ids = [str(r.get("moment_id", i)) for i, r in enumerate(rows)]
        labels = np.array([int(r["label"]) for r in rows])
        preds = np.array([int(r["pred"]) for r in rows])
        has_score = rows and all(r.get("score") not in (None, "") for r in rows)
        scores = np.array([float(r["score"]) for r in rows]) if has_score else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no predictions")
    return Predictions(ids, labels, preds, scores)


def write_csv(rows: Sequence[Mapping], path: str | os.PathLike, fields: Sequence[str] | None = None) -> None:
    fields = list(fields or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
