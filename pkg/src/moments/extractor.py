"""Turn localized spans into labeled moment records and a JSONL manifest."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InvalidSpan, MomentsError
from .media_io import FrameSpan, TimeSpan, Transcript, VideoMeta, extract_clip

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "moments-manifest"
MANIFEST_VERSION = 1
EVS_SECONDS = 3.0

IMPORTANT, NON_IMPORTANT = 1, 0


@dataclass
class MomentRecord:
    id: str
    game_id: str
    label: int
    video_span: TimeSpan
    audio_span: TimeSpan
    transcript_text: str = ""
    media_paths: dict[str, str | None] = field(default_factory=lambda: {"video": None, "audio": None})

    def __post_init__(self):
        if self.label not in (IMPORTANT, NON_IMPORTANT):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if abs(self.audio_span.start - self.video_span.start) > 1e-9:
            raise ValueError("audio span must start with the video span")
        if self.audio_span.end < self.video_span.end - 1e-9:
            raise ValueError("audio span must not end before the video span")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "game_id": self.game_id,
            "label": self.label,
            "video_span": [self.video_span.start, self.video_span.end],
            "audio_span": [self.audio_span.start, self.audio_span.end],
            "transcript_text": self.transcript_text,
            "media_paths": dict(self.media_paths),
        }

    @classmethod
    def from_json(cls, d: dict) -> "MomentRecord":
        return cls(
            id=d["id"],
            game_id=d["game_id"],
            label=int(d["label"]),
            video_span=TimeSpan(*map(float, d["video_span"])),
            audio_span=TimeSpan(*map(float, d["audio_span"])),
            transcript_text=d.get("transcript_text", ""),
            media_paths=dict(d.get("media_paths") or {"video": None, "audio": None}),
        )


def frames_to_timespan(span: FrameSpan, fps) -> TimeSpan:
    fps = Fraction(fps)
    if fps <= 0:
        raise InvalidSpan(f"fps must be positive, got {fps}")
    if span.start < 0 or span.end <= span.start:
        raise InvalidSpan(f"invalid frame span [{span.start}, {span.end})")
    return TimeSpan(float(span.start / fps), float(span.end / fps))


def apply_evs(video_span: TimeSpan, transcript: Transcript | None, evs: float = EVS_SECONDS,
              g_duration: float | None = None) -> TimeSpan:
    """Audio span: video span extended by ``evs`` seconds, snapped to commentary.

    If a transcript segment contains the extended end point, the audio runs
    to the end of that segment so the commentary is not cut mid-sentence.
    """
    if evs < 0:
        raise ValueError("evs must be non-negative")
    end = video_span.end + evs
    if transcript is not None:
        containing = [s.end for s in transcript.segments if s.start <= end < s.end]
        if containing:
            end = max(containing)
    if g_duration is not None:
        end = min(end, g_duration)
    return TimeSpan(video_span.start, max(end, video_span.end))


def collect_transcript(transcript: Transcript | None, audio_span: TimeSpan) -> str:
    """Texts of segments lying more than half inside ``audio_span``."""
    if transcript is None:
        return ""
    parts = []
    for seg in transcript.segments:
        overlap = min(seg.end, audio_span.end) - max(seg.start, audio_span.start)
        if overlap > 0.5 * seg.duration and seg.text:
            parts.append(seg.text)
    return " ".join(parts)


def evs_lag_report(records: Iterable[MomentRecord], transcript: Transcript) -> list[dict]:
    """Lag from each important moment's start to its first overlapping segment."""
    report = []
    for rec in records:
        if rec.label != IMPORTANT:
            continue
        starts = [s.start for s in transcript.segments
                  if s.start < rec.audio_span.end and s.end > rec.video_span.start]
        lag = (min(starts) - rec.video_span.start) if starts else None
        report.append({"id": rec.id, "lag": lag})
    return report


def write_manifest(records: Sequence[MomentRecord], path: str | os.PathLike, provenance: dict | None = None) -> Path:
    """Write header + one record per line; the file appears atomically or not at all."""
    path = Path(path)
    header = {"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION, "provenance": provenance or {}}
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_manifest(path: str | os.PathLike) -> tuple[dict, list[MomentRecord]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise MomentsError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise MomentsError(f"{path}: not a moments manifest")
    if header.get("version") != MANIFEST_VERSION:
        raise MomentsError(f"{path}: unsupported manifest version {header.get('version')}")
    return header, [MomentRecord.from_json(json.loads(ln)) for ln in lines[1:]]


def build_moments(
    alignment,
    nim_spans: Sequence[TimeSpan],
    transcript: Transcript | None,
    meta: VideoMeta,
    out_dir: str | os.PathLike,
    game_id: str = "game",
    source: str | os.PathLike | None = None,
    evs: float = EVS_SECONDS,
    provenance: dict | None = None,
) -> tuple[list[MomentRecord], Path]:
    """Assemble records for one game and write ``manifest.jsonl`` in ``out_dir``.

    ``alignment`` is an :class:`~moments.localizer.AlignmentResult` or a plain
    sequence of G frame spans for the important moments.  When ``source``
    is given each record's clips are cut from it; records whose extraction
    fails go to ``rejects.jsonl`` instead of the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    im_spans = getattr(alignment, "moments", alignment)
    spans = [(IMPORTANT, frames_to_timespan(s, meta.fps)) for s in im_spans]
    spans += [(NON_IMPORTANT, TimeSpan(s.start, s.end)) for s in nim_spans]
    counters = {IMPORTANT: 0, NON_IMPORTANT: 0}
    records, rejects = [], []
    for label, video_span in spans:
        video_span = TimeSpan(video_span.start, min(video_span.end, meta.duration))
        audio_span = apply_evs(video_span, transcript, evs, meta.duration)
        rec_id = f"{game_id}-{'IM' if label else 'NIM'}-{counters[label]:04d}"
        counters[label] += 1
        rec = MomentRecord(rec_id, game_id, label, video_span, audio_span,
                           collect_transcript(transcript, audio_span))
        if source is not None:
            try:
                paths = extract_clip(source, video_span, audio_span, out / "media", rec_id, meta)
            except MomentsError as exc:
                log.warning("%s: extraction failed: %s", rec_id, exc)
                rejects.append({"id": rec_id, "error": f"{type(exc).__name__}: {exc}"})
                continue
            rec.media_paths = {"video": paths["video_path"], "audio": paths["audio_path"]}
        records.append(rec)
    if rejects:
        (out / "rejects.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rejects))
    manifest = write_manifest(records, out / "manifest.jsonl", provenance)
    return records, manifest
