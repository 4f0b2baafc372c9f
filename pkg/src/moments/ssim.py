"""Single- and multi-scale structural similarity on 8-bit grayscale frames.

Frames are 2-D ``uint8`` (or any real) numpy arrays.  Statistics use a
normalized Gaussian window evaluated at valid positions only, so no border
padding leaks into the score.

Repeated comparisons against the same frame (the localizer compares one
highlight frame against thousands of game frames) go through
:class:`Pyramid`, which caches the per-scale means and variances so that a
comparison only has to filter the cross product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .errors import DimensionMismatch, FrameTooSmall

DEFAULT_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0
    scale_weights: tuple[float, ...] = field(default=DEFAULT_SCALE_WEIGHTS)

    def __post_init__(self):
        object.__setattr__(self, "scale_weights", tuple(float(w) for w in self.scale_weights))
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if not self.scale_weights or any(w <= 0 for w in self.scale_weights):
            raise ValueError("scale_weights must be non-empty and positive")
        if abs(sum(self.scale_weights) - 1.0) > 1e-6:
            # the canonical five weights sum to 1.0001; accept and renormalize
            total = sum(self.scale_weights)
            if abs(total - 1.0) > 1e-3:
                raise ValueError(f"scale_weights must sum to 1, got {total}")
            object.__setattr__(
                self, "scale_weights", tuple(w / total for w in self.scale_weights)
            )

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @cached_property
    def window(self) -> np.ndarray:
        return gaussian_window(self.window_size, self.gaussian_sigma)

    def max_levels(self, shape: tuple[int, int]) -> int:
        """Deepest pyramid whose coarsest level still fits one window."""
        side = min(shape)
        levels = 0
        while levels < len(self.scale_weights) and side >= self.window_size * 2**levels:
            levels += 1
        return levels

    def weights_for(self, levels: int) -> np.ndarray:
        w = np.asarray(self.scale_weights[:levels], dtype=np.float64)
        return w / w.sum()


DEFAULT_PARAMS = SsimParams()


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


@numba.njit(cache=True, nogil=True)
def _sep_filter(x, g):
    n, h, w = x.shape
    k = g.shape[0]
    ho, wo = h - k + 1, w - k + 1
    out = np.zeros((n, ho, wo))
    tmp = np.empty((h, wo))
    for b in range(n):
        tmp[:] = 0.0
        for i in range(h):
            for t in range(k):
                gt = g[t]
                for j in range(wo):
                    tmp[i, j] += gt * x[b, i, j + t]
        for i in range(ho):
            for t in range(k):
                gt = g[t]
                for j in range(wo):
                    out[b, i, j] += gt * tmp[i + t, j]
    return out


@numba.njit(cache=True, nogil=True)
def _compare_level(xa, mua, vara, xb, mub, varb, g, c1, c2):
    """Mean luminance, contrast-structure and SSIM terms per pair.

    Inputs are stacks; a stack of length 1 broadcasts against the other.
    """
    n = max(xa.shape[0], xb.shape[0])
    h, w = xa.shape[1], xa.shape[2]
    k = g.shape[0]
    ho, wo = h - k + 1, w - k + 1
    out = np.zeros((n, 3))
    tmp = np.empty((h, wo))
    row = np.empty(wo)
    inv = 1.0 / (ho * wo)
    for b in range(n):
        ia = b if xa.shape[0] > 1 else 0
        ib = b if xb.shape[0] > 1 else 0
        tmp[:] = 0.0
        for i in range(h):
            for t in range(k):
                gt = g[t]
                for j in range(wo):
                    tmp[i, j] += gt * (xa[ia, i, j + t] * xb[ib, i, j + t])
        s_lum = 0.0
        s_cs = 0.0
        s_ssim = 0.0
        for i in range(ho):
            row[:] = 0.0
            for t in range(k):
                gt = g[t]
                for j in range(wo):
                    row[j] += gt * tmp[i + t, j]
            for j in range(wo):
                ma = mua[ia, i, j]
                mb = mub[ib, i, j]
                lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1)
                cs = (2.0 * (row[j] - ma * mb) + c2) / (vara[ia, i, j] + varb[ib, i, j] + c2)
                s_lum += lum
                s_cs += cs
                s_ssim += lum * cs
        out[b, 0] = s_lum * inv
        out[b, 1] = s_cs * inv
        out[b, 2] = s_ssim * inv
    return out


@numba.njit(cache=True, nogil=True)
def _pair_level(a, b, g, c1, c2):
    """Mean luminance, contrast-structure and SSIM terms of two 2-D frames.

    Same arithmetic as :class:`Pyramid` followed by :func:`_compare_level`,
    fused into one horizontal and one vertical sweep.
    """
    h, w = a.shape
    k = g.shape[0]
    ho, wo = h - k + 1, w - k + 1
    ta = np.zeros((h, wo))
    tb = np.zeros((h, wo))
    taa = np.zeros((h, wo))
    tbb = np.zeros((h, wo))
    tab = np.zeros((h, wo))
    for i in range(h):
        for t in range(k):
            gt = g[t]
            for j in range(wo):
                va = a[i, j + t]
                vb = b[i, j + t]
                ta[i, j] += gt * va
                tb[i, j] += gt * vb
                taa[i, j] += gt * (va * va)
                tbb[i, j] += gt * (vb * vb)
                tab[i, j] += gt * (va * vb)
    ra = np.empty(wo)
    rb = np.empty(wo)
    raa = np.empty(wo)
    rbb = np.empty(wo)
    rab = np.empty(wo)
    inv = 1.0 / (ho * wo)
    s_lum = 0.0
    s_cs = 0.0
    s_ssim = 0.0
    for i in range(ho):
        ra[:] = 0.0
        rb[:] = 0.0
        raa[:] = 0.0
        rbb[:] = 0.0
        rab[:] = 0.0
        for t in range(k):
            gt = g[t]
            for j in range(wo):
                ra[j] += gt * ta[i + t, j]
                rb[j] += gt * tb[i + t, j]
                raa[j] += gt * taa[i + t, j]
                rbb[j] += gt * tbb[i + t, j]
                rab[j] += gt * tab[i + t, j]
        for j in range(wo):
            ma = ra[j]
            mb = rb[j]
            lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1)
            cs = (2.0 * (rab[j] - ma * mb) + c2) / ((raa[j] - ma * ma) + (rbb[j] - mb * mb) + c2)
            s_lum += lum
            s_cs += cs
            s_ssim += lum * cs
    return s_lum * inv, s_cs * inv, s_ssim * inv


def _pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def _as_float(frame) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim < 2:
        raise DimensionMismatch(f"expected a 2-D frame, got shape {arr.shape}")
    return arr


def downsample2x(frame) -> np.ndarray:
    """2x2 mean pool of an 8-bit frame, rounded half up; odd tails dropped."""
    arr = np.asarray(frame)
    if arr.shape[-1] < 2 or arr.shape[-2] < 2:
        raise FrameTooSmall(f"cannot downsample frame of shape {arr.shape}")
    pooled = _pool2(arr.astype(np.float64))
    return np.floor(pooled + 0.5).clip(0, 255).astype(np.uint8)


class Pyramid:
    """Per-scale Gaussian statistics of one frame or a stack of frames.

    ``frames`` may be ``(H, W)`` or ``(N, H, W)``.  Comparing a single-frame
    pyramid with a stack scores the frame against every member of the stack.
    """

    def __init__(self, frames, params: SsimParams = DEFAULT_PARAMS, levels: int | None = None):
        x = _as_float(frames)
        self.params = params
        self.single = x.ndim == 2
        self.shape = x.shape[-2:]
        max_levels = params.max_levels(self.shape)
        if max_levels == 0:
            raise FrameTooSmall(
                f"frame {self.shape} smaller than the {params.window_size}px window"
            )
        self.levels = max_levels if levels is None else min(levels, max_levels)
        x = np.ascontiguousarray(x.reshape((-1,) + self.shape))
        g = params.window
        self.x: list[np.ndarray] = []
        self.mu: list[np.ndarray] = []
        self.var: list[np.ndarray] = []
        for level in range(self.levels):
            if level:
                x = np.ascontiguousarray(_pool2(x))
            mu = _sep_filter(x, g)
            self.x.append(x)
            self.mu.append(mu)
            self.var.append(_sep_filter(x * x, g) - mu * mu)

    def __len__(self) -> int:
        return self.x[0].shape[0]

    def _stats(self, other: "Pyramid", levels: int) -> list[np.ndarray]:
        if self.shape != other.shape:
            raise DimensionMismatch(f"frame shapes differ: {self.shape} vs {other.shape}")
        if len(self) != len(other) and 1 not in (len(self), len(other)):
            raise DimensionMismatch(f"cannot pair stacks of {len(self)} and {len(other)}")
        levels = min(levels, self.levels, other.levels)
        p = self.params
        return [
            _compare_level(
                self.x[i], self.mu[i], self.var[i],
                other.x[i], other.mu[i], other.var[i],
                p.window, p.c1, p.c2,
            )
            for i in range(levels)
        ]

    def _result(self, other: "Pyramid", values: np.ndarray):
        if self.single and other.single:
            return float(values[0])
        return values

    def ssim(self, other: "Pyramid"):
        """Mean single-scale SSIM at full resolution, clamped to [-1, 1]."""
        (stats,) = self._stats(other, 1)
        return self._result(other, np.clip(stats[:, 2], -1.0, 1.0))

    def ms_ssim(self, other: "Pyramid"):
        per_level = self._stats(other, self.levels)
        weights = self.params.weights_for(len(per_level))
        score = np.ones(per_level[0].shape[0])
        for level, stats in enumerate(per_level):
            factor = stats[:, 1]
            if level == len(per_level) - 1:
                factor = factor * stats[:, 0]
            # negative means have no real fractional power
            score = score * np.maximum(factor, 0.0) ** weights[level]
        return self._result(other, score)


def _pair(a, b, params: SsimParams, levels: int | None = None) -> tuple[Pyramid, Pyramid]:
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    return Pyramid(a, params, levels), Pyramid(b, params, levels)


def _check_pair(a, b, params: SsimParams) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise DimensionMismatch(f"expected 2-D frames, got shape {a.shape}")
    if params.max_levels(a.shape) == 0:
        raise FrameTooSmall(f"frame {a.shape} smaller than the {params.window_size}px window")
    return np.ascontiguousarray(a), np.ascontiguousarray(b)


def ssim_single(a, b, params: SsimParams = DEFAULT_PARAMS) -> float:
    """Mean SSIM over all valid window positions."""
    a, b = _check_pair(a, b, params)
    return float(np.clip(_pair_level(a, b, params.window, params.c1, params.c2)[2], -1.0, 1.0))


def ms_ssim(a, b, params: SsimParams = DEFAULT_PARAMS) -> float:
    """Multi-scale SSIM.

    Uses as many scales as the frame size allows (up to
    ``len(params.scale_weights)``), renormalizing the weights of the scales
    that are kept.  Raises :class:`FrameTooSmall` below one window.
    """
    a, b = _check_pair(a, b, params)
    levels = params.max_levels(a.shape)
    weights = params.weights_for(levels)
    score = 1.0
    for level in range(levels):
        if level:
            a, b = np.ascontiguousarray(_pool2(a)), np.ascontiguousarray(_pool2(b))
        lum, cs, _ = _pair_level(a, b, params.window, params.c1, params.c2)
        factor = cs * lum if level == levels - 1 else cs
        score *= max(factor, 0.0) ** weights[level]
    return float(score)


def similarity(a: Pyramid, b: Pyramid, metric: str = "ms_ssim"):
    if metric == "ms_ssim":
        return a.ms_ssim(b)
    if metric == "ssim":
        return a.ssim(b)
    raise ValueError(f"unknown similarity metric {metric!r}")
