"""Procedural full-game videos and spliced highlight reels with ground truth.

A synthetic "game" is a camera panning across an endless band-limited random
texture with a handful of drifting blobs on top.  Frames close in time share
most of their content and frames far apart share none of it, which is the
property the SSIM-based localizer depends on.  A highlight reel is a
concatenation of game segments with broadcast-style overlays and sensor noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import SpanOutOfRange
from .media_io import FrameSpan, TimeSpan, VideoMeta

OVERLAY_KINDS = ("Scorecard", "AdBanner", "Watermark")

# Pan speed in pixels/second at the reference 64 px frame height.  Chosen so
# that same-instant frames with overlays and noise stay well above 0.8 while
# frames a full second apart fall below it.
PATTERN_SPEED = 3.3

# (top, left, height, width) as fractions of the frame; 10.5% of the area in total
_OVERLAY_BOXES = {
    "Scorecard": (0.04, 0.04, 0.12, 0.26),
    "AdBanner": (0.86, 0.20, 0.10, 0.60),
    "Watermark": (0.04, 0.84, 0.12, 0.12),
}
MAX_OVERLAY_AREA = 0.15


@dataclass
class SynthSpec:
    seed: int = 0
    g_duration: float = 60.0
    fps: int = 5
    frame_size: tuple[int, int] = (64, 96)  # (height, width)
    highlight_segments: list[tuple[float, float]] = field(default_factory=list)
    overlay_kinds: tuple[str, ...] = ()
    noise_sigma: float = 0.0
    pattern_speed: float = PATTERN_SPEED

    def __post_init__(self):
        self.frame_size = tuple(int(v) for v in self.frame_size)
        self.highlight_segments = [tuple(map(float, s)) for s in self.highlight_segments]
        self.overlay_kinds = tuple(self.overlay_kinds)
        if not 1 <= self.fps <= 30:
            raise ValueError(f"fps must be in [1, 30], got {self.fps}")
        if self.g_duration <= 0:
            raise ValueError("g_duration must be positive")
        unknown = set(self.overlay_kinds) - set(OVERLAY_KINDS)
        if unknown:
            raise ValueError(f"unknown overlay kinds: {sorted(unknown)}")

    @property
    def frame_count(self) -> int:
        return int(round(self.g_duration * self.fps))

    def meta(self, path: str = "<synthetic>") -> VideoMeta:
        h, w = self.frame_size
        return VideoMeta(path, Fraction(self.fps), self.frame_count, self.frame_count / self.fps, w, h)


class GameRenderer:
    """Renders frame ``i`` of the synthetic game for a given spec."""

    def __init__(self, spec: SynthSpec, n_waves: int = 48, n_blobs: int = 6):
        self.spec = spec
        h, w = spec.frame_size
        rng = np.random.default_rng([spec.seed, 0x5EED])
        scale = h / 64.0
        # wavelengths between 10 and 40 px at the reference height
        wavelength = rng.uniform(10.0, 40.0, n_waves) * scale
        theta = rng.uniform(0.0, np.pi, n_waves)
        k = 2 * np.pi / wavelength
        self._kx = k * np.cos(theta)
        self._ky = k * np.sin(theta)
        self._phase = rng.uniform(0, 2 * np.pi, n_waves)
        self._omega = rng.normal(0.0, 0.05, n_waves)
        self._amp = 60.0 / np.sqrt(n_waves / 2.0)
        self._speed = spec.pattern_speed * scale
        self._heading = rng.uniform(0, 2 * np.pi)
        self._wobble = rng.uniform(0.02, 0.06)
        self._blob_pos = rng.uniform(0, 1, (n_blobs, 2)) * (h, w)
        self._blob_vel = rng.normal(0, 1.5, (n_blobs, 2)) * scale
        self._blob_amp = rng.choice([-1.0, 1.0], n_blobs) * rng.uniform(40, 70, n_blobs)
        self._blob_r = rng.uniform(2.5, 4.5, n_blobs) * scale
        self._ys = np.arange(h, dtype=np.float64)
        self._xs = np.arange(w, dtype=np.float64)

    def camera(self, t: float) -> tuple[float, float]:
        # heading drifts slowly so the path never doubles back within a game
        heading = self._heading + 0.6 * np.sin(self._wobble * t)
        dist = self._speed * t
        return dist * np.cos(heading), dist * np.sin(heading)

    def render(self, index: int) -> np.ndarray:
        h, w = self.spec.frame_size
        t = index / self.spec.fps
        cx, cy = self.camera(t)
        # cos(a + b) = cos a cos b - sin a sin b turns the wave sum into two
        # (H x waves) @ (waves x W) products
        a = self._kx[:, None] * (self._xs + cx)[None, :] + (self._phase + self._omega * t)[:, None]
        b = self._ky[:, None] * (self._ys + cy)[None, :]
        img = 128.0 + self._amp * (np.cos(b).T @ np.cos(a) - np.sin(b).T @ np.sin(a))
        pos = (self._blob_pos + self._blob_vel * t) % (h, w)
        for (py, px), amp, r in zip(pos, self._blob_amp, self._blob_r):
            gy = np.exp(-((self._ys - py) ** 2) / (2 * r * r))
            gx = np.exp(-((self._xs - px) ** 2) / (2 * r * r))
            img += amp * np.outer(gy, gx)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_game(spec: SynthSpec) -> tuple[np.ndarray, VideoMeta]:
    """All frames of the synthetic game as an ``(N, H, W)`` uint8 array."""
    renderer = GameRenderer(spec)
    frames = np.stack([renderer.render(i) for i in range(spec.frame_count)])
    return frames, spec.meta()


def overlay_mask(kind: str, frame_size: tuple[int, int]) -> tuple[slice, slice]:
    h, w = frame_size
    top, left, bh, bw = _OVERLAY_BOXES[kind]
    r0, c0 = int(round(top * h)), int(round(left * w))
    return slice(r0, r0 + max(1, int(round(bh * h)))), slice(c0, c0 + max(1, int(round(bw * w))))


def apply_overlays(frame: np.ndarray, kinds) -> np.ndarray:
    out = frame.copy()
    for kind in kinds:
        rows, cols = overlay_mask(kind, frame.shape)
        box = out[rows, cols]
        bh, bw = box.shape
        if kind == "Scorecard":
            box[:] = 20
            box[bh // 3 : 2 * bh // 3, bw // 8 : bw // 2] = 230
        elif kind == "AdBanner":
            stripes = (np.arange(bw) // max(1, bw // 12)) % 2
            box[:] = np.where(stripes, 250, 200)[None, :]
        else:
            box[:] = 235
            box[bh // 4 : 3 * bh // 4, bw // 4 : 3 * bw // 4] = 90
    return out


def overlay_area(kinds, frame_size: tuple[int, int]) -> float:
    mask = np.zeros(frame_size, dtype=bool)
    for kind in kinds:
        mask[overlay_mask(kind, frame_size)] = True
    return float(mask.mean())


def make_highlight(game: np.ndarray, spec: SynthSpec) -> tuple[np.ndarray, list[FrameSpan]]:
    """Splice the spec's segments into a reel; returns frames and true G spans."""
    n = game.shape[0]
    spans: list[FrameSpan] = []
    for start, end in spec.highlight_segments:
        span = FrameSpan(int(round(start * spec.fps)), int(round(end * spec.fps)))
        if span.start < 0 or span.end > n or span.end <= span.start:
            raise SpanOutOfRange(f"segment [{start}, {end}) outside game of {n / spec.fps:.1f}s")
        spans.append(span)
    ordered = sorted(spans)
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.start < prev.end:
            raise SpanOutOfRange(f"segments overlap: {prev} and {nxt}")
    if overlay_area(spec.overlay_kinds, game.shape[1:]) > MAX_OVERLAY_AREA:
        raise ValueError("overlays exceed the area cap")

    reel = []
    for span in spans:
        for i in range(span.start, span.end):
            frame = apply_overlays(game[i], spec.overlay_kinds)
            if spec.noise_sigma > 0:
                rng = np.random.default_rng([spec.seed, 0x401_5E, i])
                noisy = frame + rng.normal(0.0, spec.noise_sigma, frame.shape)
                frame = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
            reel.append(frame)
    return np.stack(reel), spans


def write_corpus(spec: SynthSpec, out_dir: str | Path) -> dict:
    """Write raw frame files for G and H plus a ground-truth JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    game, meta = generate_game(spec)
    reel, spans = make_highlight(game, spec)
    h, w = spec.frame_size
    game.tofile(out / "game.gray")
    reel.tofile(out / "highlight.gray")
    truth = {
        "spec": {**asdict(spec), "frame_size": list(spec.frame_size)},
        "width": w,
        "height": h,
        "fps": spec.fps,
        "game": {"path": "game.gray", "frame_count": int(game.shape[0])},
        "highlight": {"path": "highlight.gray", "frame_count": int(reel.shape[0])},
        "spans": [[s.start, s.end] for s in spans],
        "time_spans": [[s.start / spec.fps, s.end / spec.fps] for s in spans],
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    return truth


def load_raw(path: str | Path, width: int, height: int) -> np.ndarray:
    data = np.fromfile(path, dtype=np.uint8)
    if data.size % (width * height):
        raise ValueError(f"{path}: size is not a whole number of {width}x{height} frames")
    return data.reshape(-1, height, width)


__all__ = [
    "SynthSpec",
    "GameRenderer",
    "generate_game",
    "make_highlight",
    "apply_overlays",
    "overlay_area",
    "write_corpus",
    "load_raw",
    "TimeSpan",
]
