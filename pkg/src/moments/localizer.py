"""Hierarchical localization of a highlight reel (H) inside a full game (G).

Step 1 compares the initial frame of every H second against one
representative (center) frame per G second, then rescans every native frame
of the G seconds that cleared the candidate threshold.  Step 2 revisits the
H seconds that are still below the similarity threshold, searching only the
G range bracketed by their well-localized neighbours.  Step 3 matches every
remaining H frame inside small windows around the anchor matches and groups
the matched G frames into moments.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from threading import Lock
from typing import Iterable, Sequence

import numpy as np

from .media_io import FrameSource, FrameSpan, center_index, initial_index, second_range
from .ssim import DEFAULT_PARAMS, Pyramid, SsimParams, similarity

log = logging.getLogger(__name__)

# G frames per similarity batch; bounds memory for 256 px frames to ~100 MB
CHUNK = 96


class Status(str, Enum):
    WELL = "WellLocalized"
    POOR = "PoorlyLocalized"
    UNMATCHED = "Unmatched"


@dataclass
class SecondAlignment:
    h_second: int
    g_frame: int | None = None
    similarity: float = -1.0
    status: Status = Status.UNMATCHED

    def to_json(self) -> dict:
        return {
            "h_second": self.h_second,
            "g_frame": self.g_frame,
            "similarity": self.similarity,
            "status": self.status.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SecondAlignment":
        return cls(d["h_second"], d["g_frame"], d["similarity"], Status(d["status"]))


@dataclass
class LocalizerConfig:
    sim_threshold: float = 0.8
    candidate_threshold: float = 0.8
    separation: float = 1.0  # seconds
    dense_window: float = 2.0  # seconds
    monotonic: bool = True
    neighbor_cap: float = 120.0  # seconds
    metric: str = "ms_ssim"
    workers: int = 1

    def __post_init__(self):
        for name in ("sim_threshold", "candidate_threshold"):
            value = getattr(self, name)
            if not -1.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (-1, 1], got {value}")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.dense_window < 0 or self.neighbor_cap <= 0:
            raise ValueError("dense_window must be >= 0 and neighbor_cap > 0")
        if self.metric not in ("ms_ssim", "ssim"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class AlignmentResult:
    per_second: list[SecondAlignment]
    frame_matches: dict[int, int]
    moments: list[FrameSpan]
    localized_fraction: float
    frame_fraction: float = 0.0
    evaluations: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    g_fps: str = "1"

    def to_json(self) -> dict:
        return {
            "per_second": [a.to_json() for a in self.per_second],
            "frame_matches": sorted([h, g] for h, g in self.frame_matches.items()),
            "moments": [[m.start, m.end] for m in self.moments],
            "localized_fraction": self.localized_fraction,
            "frame_fraction": self.frame_fraction,
            "evaluations": dict(self.evaluations),
            "config": self.config,
            "g_fps": self.g_fps,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AlignmentResult":
        return cls(
            per_second=[SecondAlignment.from_json(a) for a in d["per_second"]],
            frame_matches={int(h): int(g) for h, g in d["frame_matches"]},
            moments=[FrameSpan(int(s), int(e)) for s, e in d["moments"]],
            localized_fraction=float(d["localized_fraction"]),
            frame_fraction=float(d.get("frame_fraction", 0.0)),
            evaluations=dict(d.get("evaluations", {})),
            config=dict(d.get("config", {})),
            g_fps=str(d.get("g_fps", "1")),
        )


class Matcher:
    """Similarity scoring between H and G frames with caching and counting."""

    def __init__(self, h: FrameSource, g: FrameSource, cfg: LocalizerConfig,
                 params: SsimParams = DEFAULT_PARAMS):
        self.h, self.g, self.cfg, self.params = h, g, cfg, params
        self.evaluations: Counter = Counter()
        self._lock = Lock()
        self._h_cache: dict[int, Pyramid] = {}

    def _count(self, step: str, n: int) -> None:
        with self._lock:
            self.evaluations[step] += n

    def h_pyramid(self, index: int, keep: bool = True) -> Pyramid:
        """Pyramid of one H frame; anchors are kept, dense-step frames are not."""
        pyr = self._h_cache.get(index)
        if pyr is None:
            with self._lock:
                frame = self.h.frame(index)
            pyr = Pyramid(frame, self.params)
            if keep:
                self._h_cache[index] = pyr
        return pyr

    def g_pyramid(self, indices: Sequence[int]) -> Pyramid:
        with self._lock:
            frames = self.g.take(indices)
        return Pyramid(frames, self.params)

    def compare(self, h_pyr: Pyramid, g_pyr: Pyramid, step: str) -> np.ndarray:
        self._count(step, len(g_pyr))
        return np.atleast_1d(similarity(h_pyr, g_pyr, self.cfg.metric))

    def best_over(self, h_index: int, g_indices: Iterable[int], step: str) -> tuple[int | None, float]:
        """Highest-scoring G frame; ties resolve to the lowest index."""
        indices = sorted(set(g_indices))
        best_idx, best_sim = None, -math.inf
        h_pyr = self.h_pyramid(h_index)
        for lo in range(0, len(indices), CHUNK):
            chunk = indices[lo : lo + CHUNK]
            scores = self.compare(h_pyr, self.g_pyramid(chunk), step)
            k = int(np.argmax(scores))
            if scores[k] > best_sim:
                best_idx, best_sim = chunk[k], float(scores[k])
        return best_idx, best_sim


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def coarse_scores(matcher: Matcher, h_seconds: Sequence[int]) -> np.ndarray:
    """``(len(h_seconds), G_seconds)`` similarity of H anchors vs G representatives."""
    h, g = matcher.h, matcher.g
    reps = [center_index(s, g.fps) for s in range(g.full_seconds)]
    out = np.full((len(h_seconds), len(reps)), -1.0)
    anchors = [matcher.h_pyramid(initial_index(s, h.fps)) for s in h_seconds]
    for lo in range(0, len(reps), CHUNK):
        g_pyr = matcher.g_pyramid(reps[lo : lo + CHUNK])

        def score(i):
            return matcher.compare(anchors[i], g_pyr, "coarse")

        for i, row in enumerate(_map(score, range(len(anchors)), matcher.cfg.workers)):
            out[i, lo : lo + len(row)] = row
    return out


def candidates_from_scores(scores: np.ndarray, threshold: float) -> list[int]:
    """G seconds at or above threshold, best first, lower second first on ties."""
    hits = np.flatnonzero(scores >= threshold)
    return sorted(hits.tolist(), key=lambda s: (-scores[s], s))


def coarse_candidates(h_anchor, g_reps, cfg: LocalizerConfig,
                      params: SsimParams = DEFAULT_PARAMS) -> list[int]:
    """Stand-alone form of step 1's first phase on in-memory frames."""
    anchor = Pyramid(h_anchor, params)
    reps = Pyramid(np.asarray(g_reps), params)
    scores = np.atleast_1d(similarity(anchor, reps, cfg.metric))
    return candidates_from_scores(scores, cfg.candidate_threshold)


def refine_within_seconds(matcher: Matcher, h_second: int, candidate_seconds: Sequence[int]) -> SecondAlignment:
    if not candidate_seconds:
        return SecondAlignment(h_second)
    g = matcher.g
    indices = [i for s in candidate_seconds for i in range(*second_range(s, g.fps)) if i < g.frame_count]
    anchor = initial_index(h_second, matcher.h.fps)
    g_frame, sim = matcher.best_over(anchor, indices, "refine")
    status = Status.WELL if sim >= matcher.cfg.sim_threshold else Status.POOR
    return SecondAlignment(h_second, g_frame, sim, status)


def _merge(ranges: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for lo, hi in sorted(r for r in ranges if r[1] > r[0]):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def step2_window(prev: SecondAlignment | None, nxt: SecondAlignment | None,
                 g_count: int, g_fps: Fraction, cfg: LocalizerConfig) -> list[tuple[int, int]]:
    """Half-open G index ranges to search for a poorly localized H second."""
    cap = math.ceil(cfg.neighbor_cap * g_fps)
    if prev is None and nxt is None:
        ranges = [(0, cap), (g_count - cap, g_count)]
    elif not cfg.monotonic:
        ranges = [(n.g_frame - cap, n.g_frame + cap + 1) for n in (prev, nxt) if n is not None]
    elif prev is not None and nxt is not None:
        lo, hi = prev.g_frame + 1, nxt.g_frame
        ranges = [(lo, min(hi, lo + cap)), (max(lo, hi - cap), hi)]
    elif prev is not None:
        ranges = [(prev.g_frame + 1, prev.g_frame + 1 + cap)]
    else:
        ranges = [(nxt.g_frame - cap, nxt.g_frame)]
    return _merge((max(0, lo), min(g_count, hi)) for lo, hi in ranges)


def prune_and_relocalize(alignments: list[SecondAlignment], matcher: Matcher) -> list[SecondAlignment]:
    cfg, g = matcher.cfg, matcher.g
    well = [a for a in alignments if a.status is Status.WELL]
    well_seconds = [a.h_second for a in well]

    def relocalize(a: SecondAlignment) -> SecondAlignment:
        if a.status is Status.WELL:
            return a
        k = int(np.searchsorted(well_seconds, a.h_second))
        prev = well[k - 1] if k > 0 else None
        nxt = well[k] if k < len(well) else None
        ranges = step2_window(prev, nxt, g.frame_count, g.fps, cfg)
        indices = [i for lo, hi in ranges for i in range(lo, hi)]
        if not indices:
            return a
        anchor = initial_index(a.h_second, matcher.h.fps)
        g_frame, sim = matcher.best_over(anchor, indices, "prune")
        if g_frame is None or sim <= a.similarity:
            return a
        status = Status.WELL if sim >= cfg.sim_threshold else Status.POOR
        return SecondAlignment(a.h_second, g_frame, sim, status)

    return _map(relocalize, alignments, cfg.workers)


def dense_match(alignments: list[SecondAlignment], matcher: Matcher) -> dict[int, int]:
    """Match every frame of each well-localized H second.

    The search covers ``dense_window`` seconds around the second's anchor
    match and, when the following second is also well localized, around its
    anchor too, so frames after a splice inside the second still find their
    source.
    """
    cfg, h, g = matcher.cfg, matcher.h, matcher.g
    radius = math.ceil(cfg.dense_window * g.fps)
    by_second = {a.h_second: a for a in alignments}

    def around(a: SecondAlignment) -> tuple[int, int]:
        return max(0, a.g_frame - radius), min(g.frame_count, a.g_frame + radius + 1)

    def match_second(a: SecondAlignment) -> list[tuple[int, int]]:
        if a.status is not Status.WELL:
            return []
        ranges = [around(a)]
        nxt = by_second.get(a.h_second + 1)
        if nxt is not None and nxt.status is Status.WELL:
            ranges.append(around(nxt))
        window = [i for lo, hi in _merge(ranges) for i in range(lo, hi)]
        g_pyrs = [matcher.g_pyramid(window[i : i + CHUNK]) for i in range(0, len(window), CHUNK)]
        pairs = []
        first, stop = second_range(a.h_second, h.fps)
        for hi_idx in range(first, min(stop, h.frame_count)):
            h_pyr = matcher.h_pyramid(hi_idx, keep=False)
            scores = np.concatenate([matcher.compare(h_pyr, gp, "dense") for gp in g_pyrs])
            k = int(np.argmax(scores))
            if scores[k] >= cfg.sim_threshold:
                pairs.append((hi_idx, window[k]))
        return pairs

    matches: dict[int, int] = {}
    for pairs in _map(match_second, alignments, cfg.workers):
        matches.update(pairs)
    return matches


def group_moments(g_indices: Iterable[int], fps_g, separation: float) -> list[FrameSpan]:
    """Split sorted G indices into runs whose gaps are at most ``separation`` seconds."""
    indices = sorted(set(int(i) for i in g_indices))
    if not indices:
        return []
    max_gap = separation * Fraction(fps_g)
    spans = []
    start = prev = indices[0]
    for i in indices[1:]:
        if i - prev > max_gap:
            spans.append(FrameSpan(start, prev + 1))
            start = i
        prev = i
    spans.append(FrameSpan(start, prev + 1))
    return spans


def localize(h: FrameSource, g: FrameSource, cfg: LocalizerConfig | None = None,
             params: SsimParams = DEFAULT_PARAMS) -> AlignmentResult:
    """Run all three steps and group the matches into moments."""
    cfg = cfg or LocalizerConfig()
    matcher = Matcher(h, g, cfg, params)
    h_seconds = list(range(h.full_seconds))

    t0 = time.perf_counter()
    scores = coarse_scores(matcher, h_seconds) if g.full_seconds else np.empty((len(h_seconds), 0))
    cands = [candidates_from_scores(row, cfg.candidate_threshold) for row in scores]
    step1 = _map(lambda s: refine_within_seconds(matcher, s, cands[s]), h_seconds, cfg.workers)
    n_well = sum(a.status is Status.WELL for a in step1)
    log.info("step 1: %d/%d seconds well localized (%.1fs, %d evaluations)",
             n_well, len(h_seconds), time.perf_counter() - t0,
             matcher.evaluations["coarse"] + matcher.evaluations["refine"])

    t0 = time.perf_counter()
    step2 = prune_and_relocalize(step1, matcher)
    n_well = sum(a.status is Status.WELL for a in step2)
    log.info("step 2: %d/%d seconds well localized (%.1fs, %d evaluations)",
             n_well, len(h_seconds), time.perf_counter() - t0, matcher.evaluations["prune"])

    t0 = time.perf_counter()
    matches = dense_match(step2, matcher)
    moments = group_moments(matches.values(), g.fps, cfg.separation)
    log.info("step 3: %d frames matched, %d moments (%.1fs, %d evaluations)",
             len(matches), len(moments), time.perf_counter() - t0, matcher.evaluations["dense"])

    h_frames = second_range(len(h_seconds), h.fps)[0] if h_seconds else 0
    evaluations = dict(matcher.evaluations)
    evaluations["total"] = sum(matcher.evaluations.values())
    return AlignmentResult(
        per_second=step2,
        frame_matches=dict(sorted(matches.items())),
        moments=moments,
        localized_fraction=n_well / len(h_seconds) if h_seconds else 0.0,
        frame_fraction=len(matches) / h_frames if h_frames else 0.0,
        evaluations=evaluations,
        config={**asdict(cfg), "ssim": {**asdict(params), "scale_weights": list(params.scale_weights)}},
        g_fps=str(g.fps),
    )


def span_iou(a: FrameSpan, b: FrameSpan) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    return inter / union if union else 0.0


def score_against_truth(moments: Sequence[FrameSpan], truth: Sequence[FrameSpan], fps) -> list[dict]:
    """For each true span, the best-overlapping moment, its IoU and boundary errors in seconds."""
    fps = Fraction(fps)
    rows = []
    for t in truth:
        best = max(moments, key=lambda m: span_iou(m, t), default=None)
        iou = span_iou(best, t) if best is not None else 0.0
        if best is None or iou == 0.0:
            rows.append({"truth": [t.start, t.end], "match": None, "iou": 0.0,
                         "start_error": None, "end_error": None})
            continue
        rows.append({
            "truth": [t.start, t.end],
            "match": [best.start, best.end],
            "iou": iou,
            "start_error": float(abs(best.start - t.start) / fps),
            "end_error": float(abs(best.end - t.end) / fps),
        })
    return rows
