"""Duration model for important moments and placement of non-important ones.

Important-moment durations are summarized by a two-parameter Gamma fitted by
maximum likelihood.  Non-important segments get durations drawn from that
fit and are placed, per game, inside the stretches of the full game that
contain no important moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import digamma, polygamma

from .errors import DegenerateData, EmptyInput, InfeasiblePlacement
from .media_io import TimeSpan

MIN_DURATION = 1.0
MAX_DURATION = 300.0
IM_MARGIN = 1.0


@dataclass(frozen=True)
class GammaParams:
    shape: float  # k
    scale: float  # theta, seconds

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0 and math.isfinite(self.shape * self.scale)):
            raise ValueError(f"invalid Gamma parameters k={self.shape}, theta={self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def variance(self) -> float:
        return self.shape * self.scale**2


@dataclass(frozen=True)
class DurationSummary:
    label: int
    modality: str  # "video" or "audio"
    count: int
    mean: float
    min: float
    max: float

    @property
    def class_name(self) -> str:
        return "IM" if self.label == 1 else "NIM"


def _check_durations(durations) -> np.ndarray:
    x = np.asarray(list(durations), dtype=np.float64)
    if x.size < 2:
        raise DegenerateData(f"need at least 2 durations, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DegenerateData("durations must be finite and positive")
    if np.ptp(x) <= 1e-9 * np.max(x):
        raise DegenerateData("durations have zero variance (up to rounding)")
    return x


def moment_estimates(durations) -> GammaParams:
    """Method-of-moments fit: k = m^2/v, theta = v/m (population variance)."""
    x = _check_durations(durations)
    m, v = x.mean(), x.var()
    return GammaParams(m * m / v, v / m)


def fit_gamma_mle(durations, tol: float = 1e-8, max_iter: int = 100) -> GammaParams:
    """Maximum-likelihood Gamma fit.

    The shape solves ``log k - digamma(k) = log(mean) - mean(log x)``; Newton
    iterations start from the method-of-moments estimate and stop once the
    update is below ``tol``.  The scale then follows as ``mean / k``.
    """
    x = _check_durations(durations)
    mean = x.mean()
    s = math.log(mean) - np.log(x).mean()
    if not s > 0:
        raise DegenerateData("log-mean gap is not positive; durations are numerically constant")
    k = moment_estimates(x).shape
    for _ in range(max_iter):
        f = math.log(k) - digamma(k) - s
        df = 1.0 / k - polygamma(1, k)
        if not (df < 0 and math.isfinite(f)):
            break  # derivative lost to rounding at very large k; keep the current estimate
        step = f / df
        new_k = k - step
        while new_k <= 0:
            step /= 2
            new_k = k - step
        k, done = new_k, abs(step) < tol
        if done:
            break
    return GammaParams(float(k), float(mean / k))


def _marsaglia_tsang(shape: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-scale Gamma(shape) draws for shape >= 1 (vectorized rejection)."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, int(1.2 * (n - filled)))
        z = rng.standard_normal(m)
        u = rng.random(m)
        v = (1.0 + c * z) ** 3
        ok = v > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = ok & (np.log(u) < 0.5 * z * z + d - d * v + d * np.log(np.where(ok, v, 1.0)))
        got = (d * v)[accept][: n - filled]
        out[filled : filled + got.size] = got
        filled += got.size
    return out


def sample_durations(params: GammaParams, n: int, seed, clamp: tuple[float, float] | None = (MIN_DURATION, MAX_DURATION)) -> list[float]:
    """``n`` i.i.d. Gamma draws, deterministic per ``seed``, clamped to ``clamp``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    k = params.shape
    if k >= 1:
        draws = _marsaglia_tsang(k, n, rng)
    else:
        # boost: Gamma(k) = Gamma(k + 1) * U^(1/k)
        draws = _marsaglia_tsang(k + 1.0, n, rng) * rng.random(n) ** (1.0 / k)
    draws *= params.scale
    if clamp is not None:
        draws = np.clip(draws, *clamp)
    return draws.tolist()


def free_gaps(g_duration: float, important: Iterable[TimeSpan], margin: float = IM_MARGIN) -> list[TimeSpan]:
    """Parts of ``[0, g_duration]`` at least ``margin`` away from every important span."""
    spans = sorted(important)
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            raise ValueError(f"important spans overlap: {a} and {b}")
    gaps = []
    cursor = 0.0
    for span in spans:
        if span.start < -1e-9 or span.end > g_duration + 1e-9:
            raise ValueError(f"important span {span} outside [0, {g_duration}]")
        lo, hi = cursor, span.start - margin
        if hi > lo:
            gaps.append(TimeSpan(lo, hi))
        cursor = max(cursor, span.end + margin)
    if g_duration > cursor:
        gaps.append(TimeSpan(cursor, g_duration))
    return gaps


def _assign(gaps: Sequence[TimeSpan], durations: Sequence[float], rng: np.random.Generator):
    """Assign each duration to a gap; returns per-gap lists and the leftovers."""
    capacity = [g.duration for g in gaps]
    assigned: list[list[float]] = [[] for _ in gaps]
    unplaced = []
    for d in durations:
        fits = [i for i, c in enumerate(capacity) if c >= d - 1e-9]
        if not fits:
            unplaced.append(d)
            continue
        weights = np.array([capacity[i] for i in fits])
        i = fits[int(rng.choice(len(fits), p=weights / weights.sum()))] if weights.sum() > 0 else fits[0]
        assigned[i].append(d)
        capacity[i] -= d
    return assigned, unplaced


def _layout(gap: TimeSpan, durations: list[float], rng: np.random.Generator) -> list[TimeSpan]:
    """Random order, with the gap's slack split uniformly among the interstices."""
    if not durations:
        return []
    order = rng.permutation(len(durations))
    slack = max(0.0, gap.duration - sum(durations))
    cuts = np.sort(rng.random(len(durations))) * slack
    spans = []
    cursor = gap.start
    prev_cut = 0.0
    for j, cut in zip(order, cuts):
        cursor += cut - prev_cut
        prev_cut = cut
        d = durations[j]
        spans.append(TimeSpan(cursor, min(cursor + d, gap.end)))
        cursor += d
    return spans


def place_nonimportant(
    g_duration: float,
    important: Sequence[TimeSpan],
    durations: Sequence[float],
    seed,
    margin: float = IM_MARGIN,
    longest_first: bool = True,
) -> list[TimeSpan]:
    """Place non-important spans in the gaps around the important ones.

    Durations are consumed longest first and each goes to a gap that can
    still hold it (chosen with probability proportional to its remaining
    room).  Within a gap the spans are shuffled and the unused time is split
    uniformly at random between them, so a lone span starts uniformly over
    its feasible offsets.  Raises :class:`InfeasiblePlacement`, carrying the
    partial placement, when some durations do not fit.
    """
    rng = np.random.default_rng(seed)
    gaps = free_gaps(g_duration, important, margin)
    ordered = sorted((float(d) for d in durations), reverse=longest_first)
    assigned, unplaced = _assign(gaps, ordered, rng)
    placed = sorted(span for gap, ds in zip(gaps, assigned) for span in _layout(gap, ds, rng))
    if unplaced:
        raise InfeasiblePlacement(
            f"{len(unplaced)} of {len(ordered)} durations could not be placed", placed, unplaced
        )
    return placed


def duration_summary(moments) -> list[DurationSummary]:
    """Per class and modality duration statistics of moment records."""
    moments = list(moments)
    if not moments:
        raise EmptyInput("no moments to summarize")
    out = []
    for label in sorted({m.label for m in moments}, reverse=True):
        group = [m for m in moments if m.label == label]
        for modality in ("video", "audio"):
            d = np.array([getattr(m, f"{modality}_span").duration for m in group])
            out.append(DurationSummary(label, modality, len(d), float(d.mean()), float(d.min()), float(d.max())))
    return out
