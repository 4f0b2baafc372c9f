"""Pipeline configuration: one TOML file with a section per subcommand.

Example::

    seed = 7
    workers = 2

    [localize]
    sim_threshold = 0.8
    dense_window = 2.0

    [ssim]
    window_size = 11

    [metrics]
    B = 1000

Unknown keys are rejected so typos fail loudly.  Command-line flags override
file values; the effective configuration is hashed and the hash is embedded
in every artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .localizer import LocalizerConfig
from .ssim import SsimParams


@dataclass
class SamplerSettings:
    margin: float = 1.0
    clamp_min: float = 1.0
    clamp_max: float = 300.0
    longest_first: bool = True

    def __post_init__(self):
        if self.margin < 0 or not 0 < self.clamp_min <= self.clamp_max:
            raise ValueError("need margin >= 0 and 0 < clamp_min <= clamp_max")


@dataclass
class ExtractSettings:
    evs: float = 3.0

    def __post_init__(self):
        if self.evs < 0:
            raise ValueError("evs must be non-negative")


@dataclass
class BaselineSettings:
    l2: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6
    n_lo: int = 1
    n_hi: int = 4
    min_df: int = 2
    max_features: int = 50_000
    pool: str = "mean"

    def __post_init__(self):
        if self.l2 < 0 or self.max_iter < 0 or self.tol <= 0:
            raise ValueError("need l2 >= 0, max_iter >= 0 and tol > 0")
        if not 1 <= self.n_lo <= self.n_hi:
            raise ValueError("need 1 <= n_lo <= n_hi")
        if self.pool not in ("mean", "mean_std"):
            raise ValueError("pool must be 'mean' or 'mean_std'")


@dataclass
class MetricsSettings:
    B: int = 1000
    level: float = 0.95

    def __post_init__(self):
        if self.B < 1 or not 0 < self.level < 1:
            raise ValueError("need B >= 1 and 0 < level < 1")


_SECTIONS = {
    "localize": LocalizerConfig,
    "ssim": SsimParams,
    "sampler": SamplerSettings,
    "extract": ExtractSettings,
    "baseline": BaselineSettings,
    "metrics": MetricsSettings,
}


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    localize: LocalizerConfig = field(default_factory=LocalizerConfig)
    ssim: SsimParams = field(default_factory=SsimParams)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    extract: ExtractSettings = field(default_factory=ExtractSettings)
    baseline: BaselineSettings = field(default_factory=BaselineSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def build_config(data: dict[str, Any] | None = None, overrides: dict[str, dict] | None = None) -> PipelineConfig:
    """Config from parsed TOML ``data`` with per-section ``overrides`` applied on top."""
    data = dict(data or {})
    overrides = overrides or {}
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    top.update(overrides.get("", {}))
    unknown = set(top) - {"seed", "workers"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = data.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        values = {**values, **{k: v for k, v in overrides.get(name, {}).items() if v is not None}}
        sections[name] = values
    if "workers" in top and "workers" not in sections["localize"]:
        sections["localize"]["workers"] = top["workers"]
    try:
        seed, workers = int(top.get("seed", 0)), int(top.get("workers", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed and workers must be integers: {exc}") from exc
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return PipelineConfig(
        seed=seed,
        workers=workers,
        **{name: _build(cls, sections[name], name) for name, cls in _SECTIONS.items()},
    )


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, dict] | None = None) -> PipelineConfig:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return build_config(data, overrides)


def file_hash(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]
