"""Unimodal logistic-regression baselines.

Text moments are featurized by n-gram counts, audio by averaged MFCCs and
video by the mean of precomputed per-frame embeddings.  A plain L2-regularized
logistic regression is trained on each with full-batch gradient descent.
"""

from __future__ import annotations

import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from scipy.special import expit

from .errors import (
    DimMismatch,
    EmptyCorpus,
    InconsistentDim,
    NonFiniteFeature,
    NotMono,
    ParseError,
    SingleClass,
    TooFewPerClass,
    TooShort,
)

MAX_VOCAB = 50_000
N_MFCC = 20
N_MELS = 26
PRE_EMPHASIS = 0.97
LOG_FLOOR = 1e-10

_PUNCT = re.compile(r"[^\w\s]")


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (rows, dim)
    row_ids: list[str]
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("feature values must be a 2-D array")
        self.row_ids = [str(i) for i in self.row_ids]
        if len(self.row_ids) != self.values.shape[0]:
            raise ValueError("need one row id per row")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise ValueError("row ids must be unique")
        if self.feature_names is not None and len(self.feature_names) != self.values.shape[1]:
            raise ValueError("need one feature name per column")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def subset(self, ids: Sequence[str]) -> "FeatureMatrix":
        pos = {r: i for i, r in enumerate(self.row_ids)}
        idx = [pos[str(i)] for i in ids]
        return FeatureMatrix(self.values[idx], [self.row_ids[i] for i in idx], self.feature_names)


def _default_ids(n: int, ids) -> list[str]:
    return [str(i) for i in (ids if ids is not None else range(n))]


# -- text ----------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub("", text.lower()).split()


def _ngrams(tokens: list[str], n_lo: int, n_hi: int) -> list[str]:
    return [" ".join(tokens[i : i + n]) for n in range(n_lo, n_hi + 1) for i in range(len(tokens) - n + 1)]


@dataclass
class NgramVectorizer:
    n_lo: int = 1
    n_hi: int = 4
    min_df: int = 2
    max_features: int = MAX_VOCAB
    vocabulary: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.n_lo <= self.n_hi:
            raise ValueError(f"need 1 <= n_lo <= n_hi, got {self.n_lo}, {self.n_hi}")

    def fit(self, texts: Sequence[str]) -> "NgramVectorizer":
        df = Counter()
        for text in texts:
            df.update(set(_ngrams(tokenize(text), self.n_lo, self.n_hi)))
        kept = [g for g, c in df.items() if c >= self.min_df]
        if len(kept) > self.max_features:
            kept = sorted(kept, key=lambda g: (-df[g], g))[: self.max_features]
        if not kept:
            raise EmptyCorpus("no n-gram reaches the minimum document frequency")
        self.vocabulary = sorted(kept)
        return self

    def transform(self, texts: Sequence[str], ids=None) -> FeatureMatrix:
        index = {g: j for j, g in enumerate(self.vocabulary)}
        values = np.zeros((len(texts), len(index)))
        for i, text in enumerate(texts):
            for gram, count in Counter(_ngrams(tokenize(text), self.n_lo, self.n_hi)).items():
                j = index.get(gram)
                if j is not None:
                    values[i, j] = count
        return FeatureMatrix(values, _default_ids(len(texts), ids), list(self.vocabulary))

    def spec(self) -> dict:
        return {"kind": "ngram", "n_lo": self.n_lo, "n_hi": self.n_hi, "min_df": self.min_df,
                "max_features": self.max_features, "vocabulary": list(self.vocabulary)}


def ngram_features(texts: Sequence[str], n_lo: int = 1, n_hi: int = 4, min_df: int = 2,
                   ids=None, max_features: int = MAX_VOCAB) -> FeatureMatrix:
    """Count features for every n-gram with document frequency at least ``min_df``."""
    vec = NgramVectorizer(n_lo, n_hi, min_df, max_features).fit(texts)
    return vec.transform(texts, ids)


# -- audio ---------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: float, nfft: int, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters evenly spaced in mel between 0 Hz and Nyquist, ``(n_mels, nfft//2+1)``."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _mono(waveform) -> np.ndarray:
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise NotMono(f"expected a mono waveform, got shape {x.shape}")
    return x


def mfcc_frames(waveform, sample_rate: float, n_mfcc: int = N_MFCC) -> np.ndarray:
    """Per-frame MFCCs, ``(n_frames, n_mfcc)``."""
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    x = _mono(waveform)
    frame_len = int(round(0.025 * sample_rate))
    hop = int(round(0.010 * sample_rate))
    if x.size < frame_len or frame_len < 1:
        raise TooShort(f"{x.size} samples is shorter than one 25 ms frame ({frame_len})")
    x = np.concatenate([x[:1], x[1:] - PRE_EMPHASIS * x[:-1]])
    n_frames = 1 + (x.size - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(frame_len)
    nfft = 1 << (frame_len - 1).bit_length()
    mag = np.abs(np.fft.rfft(frames, nfft))
    energies = mag @ mel_filterbank(sample_rate, nfft).T
    logs = np.log(np.maximum(energies, LOG_FLOOR))
    return dct(logs, type=2, norm="ortho", axis=1)[:, :n_mfcc]


def mfcc_features(waveform, sample_rate: float, pool: str = "mean") -> np.ndarray:
    """20 MFCCs averaged over frames; ``pool="mean_std"`` appends the standard deviations."""
    coeffs = mfcc_frames(waveform, sample_rate)
    if pool == "mean":
        return coeffs.mean(axis=0)
    if pool == "mean_std":
        return np.concatenate([coeffs.mean(axis=0), coeffs.std(axis=0)])
    raise ValueError(f"unknown pooling {pool!r}")


def read_wav(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Mono float waveform in [-1, 1] and its sample rate; stereo is averaged."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        data = data / -float(np.iinfo(data.dtype).min)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data, int(rate)


# -- video ---------------------------------------------------------------------


def avg_embedding_features(path: str | os.PathLike) -> FeatureMatrix:
    """Mean frame embedding per moment from a JSONL file of ``{moment_id, frames}``."""
    ids, rows = [], []
    dim = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            mid = str(obj["moment_id"])
            frames = obj["frames"]
            if not frames:
                raise ValueError("no frames")
            widths = {len(f) for f in frames}
            arr = np.asarray(frames, dtype=np.float64) if len(widths) == 1 else None
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if arr is None:
            raise InconsistentDim(f"{path}:{lineno}: frames of different lengths {sorted(widths)}")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise InconsistentDim(f"{path}:{lineno}: dimension {arr.shape[1]} differs from {dim}")
        if mid in ids:
            raise ParseError(f"{path}:{lineno}: duplicate moment id {mid}")
        ids.append(mid)
        rows.append(arr.mean(axis=0))
    if not rows:
        raise ParseError(f"{path}: no embeddings")
    return FeatureMatrix(np.stack(rows), ids)


# -- split and model -----------------------------------------------------------


def split_3to1(ids: Sequence, labels: Sequence[int], seed=0) -> tuple[list[str], list[str]]:
    """Stratified 75/25 train/test split, deterministic per seed."""
    ids = [str(i) for i in ids]
    labels = np.asarray(labels)
    if len(ids) != labels.size:
        raise ValueError("ids and labels differ in length")
    rng = np.random.default_rng(seed)
    train, test = set(), set()
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if members.size < 4:
            raise TooFewPerClass(f"class {cls} has {members.size} samples, need at least 4")
        members = rng.permutation(members)
        n_train = int(round(0.75 * members.size))
        train.update(members[:n_train].tolist())
        test.update(members[n_train:].tolist())
    return [ids[i] for i in sorted(train)], [ids[i] for i in sorted(test)]


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    l2: float
    feature_spec: dict = field(default_factory=dict)
    converged: bool = False
    n_iter: int = 0
    loss: float = math.nan

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise NonFiniteFeature("model parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.size

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias, "l2": self.l2,
                "feature_spec": self.feature_spec, "converged": self.converged,
                "n_iter": self.n_iter, "loss": self.loss}

    @classmethod
    def from_json(cls, d: dict) -> "LogRegModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]), float(d["l2"]),
                   dict(d.get("feature_spec") or {}), bool(d.get("converged", False)),
                   int(d.get("n_iter", 0)), float(d.get("loss", math.nan)))


def save_model(model: LogRegModel, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(model.to_json()))


def load_model(path: str | os.PathLike) -> LogRegModel:
    try:
        return LogRegModel.from_json(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)


def loss_and_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean negative log-likelihood plus ``l2/2 * |w|^2`` (bias unpenalized) and its gradient."""
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w)
    r = (expit(z) - y) / y.size
    return float(loss), X.T @ r + l2 * w, float(r.sum())


def train_logreg(X, y, l2: float = 1.0, max_iter: int = 500, tol: float = 1e-6,
                 feature_spec: dict | None = None) -> LogRegModel:
    """Gradient descent with Armijo backtracking from the zero model.

    Columns are centered before optimizing.  The bias is not penalized, so
    this is an exact reparametrization (same objective, same optimum) that
    keeps a large feature offset from making the bias direction stiff.
    """
    A = _values(X)
    y = np.asarray(y, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != y.size:
        raise ValueError(f"feature rows ({A.shape[0]}) and labels ({y.size}) differ")
    if not np.all(np.isfinite(A)):
        raise NonFiniteFeature("features contain NaN or infinity")
    if np.unique(y).size < 2:
        raise SingleClass("training labels contain a single class")
    mu = A.mean(axis=0) if A.shape[0] else np.zeros(A.shape[1])
    A = A - mu
    w = np.zeros(A.shape[1])
    b = 0.0
    loss, gw, gb = loss_and_grad(w, b, A, y, l2)
    step = 1.0
    converged = False
    it = 0
    while it < max_iter:
        gnorm = max(np.abs(gw).max(initial=0.0), abs(gb))
        if gnorm < tol:
            converged = True
            break
        sq = gw @ gw + gb * gb
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, new_gw, new_gb = loss_and_grad(w_new, b_new, A, y, l2)
            if new_loss <= loss - 1e-4 * step * sq or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:  # line search exhausted; stay put
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        step *= 2.0
        it += 1
    else:
        converged = max(np.abs(gw).max(initial=0.0), abs(gb)) < tol
    return LogRegModel(w, float(b - w @ mu), l2, dict(feature_spec or {}), converged, it, loss)


def predict_logreg(model: LogRegModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels (1 iff probability >= 0.5) and probabilities."""
    A = _values(X)
    if A.ndim != 2 or A.shape[1] != model.dim:
        raise DimMismatch(f"features have dimension {A.shape[-1]}, model expects {model.dim}")
    probs = expit(A @ model.weights + model.bias)
    return (probs >= 0.5).astype(np.int64), probs


# -- manifest-level featurization ----------------------------------------------


MODALITY_KINDS = {"text": "ngram", "audio": "mfcc", "video": "embedding"}


def featurize(records, modality: str, spec: dict | None = None, embeddings: str | os.PathLike | None = None):
    """Feature matrix for moment records; returns it with the spec to reproduce it.

    ``spec`` (from a trained model) pins the n-gram vocabulary; without it a
    new vocabulary is fitted on ``records``.
    """
    ids = [r.id for r in records]
    if modality == "text":
        texts = [r.transcript_text for r in records]
        settings = {k: spec[k] for k in ("n_lo", "n_hi", "min_df", "max_features") if spec and k in spec}
        if spec and spec.get("vocabulary"):
            vec = NgramVectorizer(**settings, vocabulary=list(spec["vocabulary"]))
        else:
            vec = NgramVectorizer(**settings).fit(texts)
        return vec.transform(texts, ids), vec.spec()
    if modality == "audio":
        pool = (spec or {}).get("pool", "mean")
        rows = []
        for r in records:
            path = r.media_paths.get("audio")
            if not path:
                raise ParseError(f"{r.id}: record has no audio clip")
            wave, rate = read_wav(path)
            rows.append(mfcc_features(wave, rate, pool))
        return FeatureMatrix(np.stack(rows), ids), {"kind": "mfcc", "pool": pool}
    if modality == "video":
        if embeddings is None:
            raise ParseError("video baseline needs an embeddings file")
        fm = avg_embedding_features(embeddings)
        missing = set(ids) - set(fm.row_ids)
        if missing:
            raise ParseError(f"no embeddings for {len(missing)} moments, e.g. {sorted(missing)[0]}")
        fm = fm.subset(ids)
        if spec and spec.get("dim") not in (None, fm.dim):
            raise DimMismatch(f"embeddings have dimension {fm.dim}, model expects {spec['dim']}")
        return fm, {"kind": "embedding", "dim": fm.dim}
    raise ValueError(f"unknown modality {modality!r}; expected one of {sorted(MODALITY_KINDS)}")
