"""Video probing, grayscale decoding, clip extraction and transcript loading.

All media work is delegated to an FFmpeg-compatible command line tool run as
a subprocess; nothing here links a codec library.  The tool is located via
``$MOMENTS_FFMPEG``, then ``ffmpeg`` on ``$PATH``, then the binary bundled
with the optional ``imageio-ffmpeg`` package.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import shutil
import subprocess
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import (
    DecodeError,
    EmptyTranscriptWarning,
    ParseError,
    PipeBroken,
    SpanOutOfRange,
    TranscodeError,
)

log = logging.getLogger(__name__)

TRANSCODER_ENV = "MOMENTS_FFMPEG"
DEFAULT_DOWNSCALE = 256


@dataclass(frozen=True, order=True)
class FrameSpan:
    """Half-open interval of frame indices ``[start, end)``."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, order=True)
class TimeSpan:
    """Half-open interval in seconds."""

    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start

    def overlaps(self, other: "TimeSpan") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class VideoMeta:
    path: str
    fps: Fraction
    frame_count: int
    duration: float
    width: int
    height: int

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.frame_count < 0:
            raise ValueError("frame_count must be non-negative")

    @property
    def full_seconds(self) -> int:
        """Number of complete seconds; a trailing partial second is ignored."""
        return math.floor(Fraction(self.frame_count) / self.fps)

    def second_range(self, second: int) -> tuple[int, int]:
        return second_range(second, self.fps)

    def to_json(self) -> dict:
        return {
            "path": self.path,
            "fps": str(self.fps),
            "frame_count": self.frame_count,
            "duration": self.duration,
            "width": self.width,
            "height": self.height,
        }


def second_range(second: int, fps: Fraction, period: Fraction = Fraction(1)) -> tuple[int, int]:
    """Native frame indices ``[first, stop)`` whose timestamps fall in a period."""
    return math.ceil(second * period * fps), math.ceil((second + 1) * period * fps)


def initial_index(second: int, fps: Fraction, period: Fraction = Fraction(1)) -> int:
    return math.ceil(second * period * fps)


def center_index(second: int, fps: Fraction, period: Fraction = Fraction(1)) -> int:
    first, stop = second_range(second, fps, period)
    idx = math.floor((second + Fraction(1, 2)) * period * fps)
    return min(max(idx, first), stop - 1)


SELECTORS: dict[str, Callable[[int, Fraction, Fraction], int]] = {
    "center": center_index,
    "initial": initial_index,
}


@dataclass
class Segment:
    start: float
    end: float
    text: str

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Transcript:
    segments: list[Segment] = field(default_factory=list)

    @property
    def overlaps(self) -> list[tuple[int, int]]:
        """Index pairs of consecutive segments whose times overlap."""
        return [
            (i, i + 1)
            for i, (a, b) in enumerate(zip(self.segments, self.segments[1:]))
            if b.start < a.end
        ]

    def to_json(self) -> dict:
        return {"segments": [vars(s) for s in self.segments]}


# -- transcoder ------------------------------------------------------------


def transcoder() -> str:
    exe = os.environ.get(TRANSCODER_ENV)
    if exe:
        return exe
    exe = shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        raise DecodeError(
            f"no transcoder found: set ${TRANSCODER_ENV}, put ffmpeg on PATH "
            "or install imageio-ffmpeg"
        ) from None
    return imageio_ffmpeg.get_ffmpeg_exe()


def _run(args: list[str], error=DecodeError) -> subprocess.CompletedProcess:
    try:
        return subprocess.run(args, capture_output=True, check=False)
    except OSError as exc:
        raise error(f"cannot run transcoder {args[0]!r}: {exc}") from exc


_DURATION_RE = re.compile(r"Duration:\s*(\d+):(\d+):(\d+(?:\.\d+)?)")
_VIDEO_RE = re.compile(r"Stream #\d+:\d+.*?: Video: .*?(\d{2,5})x(\d{2,5})")
_FPS_RE = re.compile(r"(\d+(?:\.\d+)?)(k?) (?:fps|tbr)")


def _parse_fps(text: str) -> Fraction:
    value, kilo = text
    fps = Fraction(value) * (1000 if kilo else 1)
    # 29.97 and friends are NTSC rates
    ntsc = Fraction(round(fps * Fraction(1001, 1000)) * 1000, 1001)
    if fps.denominator != 1 and abs(float(ntsc - fps)) < 0.006:
        return ntsc
    return fps


def probe(path: str | os.PathLike) -> VideoMeta:
    """Stream metadata of the first video stream.

    ``frame_count`` is obtained by demuxing every packet, so it is exact even
    for containers with unreliable headers.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    exe = transcoder()
    info = _run([exe, "-hide_banner", "-i", str(path)]).stderr.decode(errors="replace")
    video = _VIDEO_RE.search(info)
    if not video:
        raise DecodeError(f"{path}: no decodable video stream")
    stream_line = info[video.start() : info.find("\n", video.start())]
    rates = _FPS_RE.findall(stream_line)
    if not rates:
        raise DecodeError(f"{path}: cannot determine frame rate")
    fps = _parse_fps(rates[0])

    # one framecrc line per demuxed packet; stream copy, nothing is decoded
    counted = _run([exe, "-v", "error", "-nostdin", "-i", str(path), "-map", "0:v:0",
                    "-c", "copy", "-f", "framecrc", "-"])
    if counted.returncode != 0:
        raise DecodeError(f"{path}: cannot read video packets")
    frame_count = sum(
        1 for line in counted.stdout.decode(errors="replace").splitlines()
        if line.strip() and not line.startswith("#")
    )
    width, height = int(video.group(1)), int(video.group(2))
    return VideoMeta(str(path), fps, frame_count, float(frame_count / fps), width, height)


def scaled_size(width: int, height: int, downscale) -> tuple[int, int]:
    """Target ``(width, height)`` for a downscale request.

    ``downscale`` is a target width (aspect preserved) or an explicit pair.
    """
    if downscale is None:
        return width, height
    if isinstance(downscale, (tuple, list)):
        return int(downscale[0]), int(downscale[1])
    w = int(downscale)
    return w, max(1, int(round(height * w / width)))


def _decode_cmd(path, size: tuple[int, int], start: float | None = None, count: int | None = None):
    cmd = [transcoder(), "-v", "error", "-nostdin"]
    if start:
        cmd += ["-ss", f"{start:.6f}"]
    cmd += ["-i", str(path), "-map", "0:v:0", "-fps_mode", "passthrough"]
    if count is not None:
        cmd += ["-frames:v", str(count)]
    w, h = size
    cmd += ["-vf", f"scale={w}:{h}:flags=bilinear", "-pix_fmt", "gray", "-f", "rawvideo", "-"]
    return cmd


def _read_frames(cmd: list[str], size: tuple[int, int]) -> Iterator[np.ndarray]:
    w, h = size
    packet = w * h
    try:
        proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    except OSError as exc:
        raise DecodeError(f"cannot run transcoder: {exc}") from exc
    emitted = 0
    try:
        while True:
            buf = proc.stdout.read(packet)
            if not buf:
                break
            if len(buf) < packet:
                raise PipeBroken(f"short frame packet ({len(buf)} of {packet} bytes)")
            emitted += 1
            yield np.frombuffer(buf, dtype=np.uint8).reshape(h, w)
    finally:
        proc.stdout.close()
        if proc.poll() is None:
            proc.kill()
        proc.wait()
        stderr = proc.stderr.read().decode(errors="replace")
        proc.stderr.close()
    if proc.returncode != 0:
        err = PipeBroken if emitted else DecodeError
        raise err(f"transcoder exited with {proc.returncode}: {stderr.strip()[:500]}")


def decode_gray(
    path: str | os.PathLike,
    sample_fps: Fraction | float | None = None,
    downscale=None,
    selector: str | Callable = "center",
    meta: VideoMeta | None = None,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(native_frame_index, frame)`` in temporal order.

    With ``sample_fps`` one frame is emitted per sampling period, chosen by
    ``selector`` (``"center"``, ``"initial"`` or a callable
    ``(period_index, fps, period) -> frame_index``); a trailing partial
    period is dropped.  Without it every frame is emitted.
    """
    meta = meta or probe(path)
    size = scaled_size(meta.width, meta.height, downscale)
    frames = _read_frames(_decode_cmd(path, size), size)
    if sample_fps is None:
        yield from enumerate(frames)
        return

    sample_fps = Fraction(sample_fps)
    if sample_fps <= 0 or sample_fps > meta.fps:
        raise ValueError(f"sample_fps must be in (0, {meta.fps}], got {sample_fps}")
    pick = SELECTORS[selector] if isinstance(selector, str) else selector
    period = 1 / sample_fps
    n_periods = math.floor(Fraction(meta.frame_count) * sample_fps / meta.fps)
    wanted = iter([pick(k, meta.fps, period) for k in range(n_periods)])
    target = next(wanted, None)
    for index, frame in enumerate(frames):
        if target is None:
            frames.close()
            break
        if index == target:
            yield index, frame
            target = next(wanted, None)


# -- random access frame sources -------------------------------------------


class FrameSource:
    """Random access to grayscale frames of one stream."""

    fps: Fraction
    frame_count: int
    frame_shape: tuple[int, int]

    def frames(self, start: int, stop: int) -> np.ndarray:
        raise NotImplementedError

    def take(self, indices) -> np.ndarray:
        indices = list(indices)
        if not indices:
            return np.empty((0,) + self.frame_shape, dtype=np.uint8)
        return np.stack([self.frames(i, i + 1)[0] for i in indices])

    def frame(self, index: int) -> np.ndarray:
        return self.frames(index, index + 1)[0]

    @property
    def full_seconds(self) -> int:
        return math.floor(Fraction(self.frame_count) / self.fps)

    def _clip(self, start: int, stop: int) -> tuple[int, int]:
        return max(0, start), min(self.frame_count, stop)


class ArrayFrameSource(FrameSource):
    def __init__(self, frames: np.ndarray, fps, path: str = "<memory>"):
        self.array = np.asarray(frames)
        self.fps = Fraction(fps)
        self.frame_count = int(self.array.shape[0])
        self.frame_shape = tuple(self.array.shape[1:])
        self.path = path

    def frames(self, start: int, stop: int) -> np.ndarray:
        start, stop = self._clip(start, stop)
        return self.array[start:stop]

    def take(self, indices) -> np.ndarray:
        return self.array[np.asarray(list(indices), dtype=np.int64)]

    @property
    def meta(self) -> VideoMeta:
        h, w = self.frame_shape
        return VideoMeta(self.path, self.fps, self.frame_count, float(self.frame_count / self.fps), w, h)


class RawFrameSource(ArrayFrameSource):
    """Headerless ``width*height``-byte gray frames on disk (memory mapped)."""

    def __init__(self, path: str | os.PathLike, width: int, height: int, fps):
        data = np.memmap(path, dtype=np.uint8, mode="r")
        if data.size % (width * height):
            raise DecodeError(f"{path}: not a whole number of {width}x{height} frames")
        super().__init__(data.reshape(-1, height, width), fps, str(path))


class VideoFrameSource(FrameSource):
    """Decodes blocks of a video on demand, keeping a small LRU of blocks."""

    def __init__(self, path, downscale=DEFAULT_DOWNSCALE, meta: VideoMeta | None = None,
                 block_seconds: int = 2, cache_blocks: int = 64):
        self.path = str(path)
        self.meta = meta or probe(path)
        self.fps = self.meta.fps
        self.frame_count = self.meta.frame_count
        self.size = scaled_size(self.meta.width, self.meta.height, downscale)
        self.frame_shape = (self.size[1], self.size[0])
        self.block = max(1, math.ceil(block_seconds * self.fps))
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._capacity = cache_blocks

    def _block(self, b: int) -> np.ndarray:
        if b in self._cache:
            self._cache.move_to_end(b)
            return self._cache[b]
        start = b * self.block
        count = min(self.block, self.frame_count - start)
        # seek half a frame early so rounding cannot skip the first wanted frame
        seek = float((start - Fraction(1, 2)) / self.fps) if start else None
        frames = list(_read_frames(_decode_cmd(self.path, self.size, seek, count), self.size))
        if len(frames) < count:
            raise DecodeError(f"{self.path}: expected {count} frames at {start}, got {len(frames)}")
        arr = np.stack(frames)
        self._cache[b] = arr
        if len(self._cache) > self._capacity:
            self._cache.popitem(last=False)
        return arr

    def frames(self, start: int, stop: int) -> np.ndarray:
        start, stop = self._clip(start, stop)
        if stop <= start:
            return np.empty((0,) + self.frame_shape, dtype=np.uint8)
        parts = []
        for b in range(start // self.block, (stop - 1) // self.block + 1):
            arr = self._block(b)
            lo = max(start - b * self.block, 0)
            hi = min(stop - b * self.block, arr.shape[0])
            parts.append(arr[lo:hi])
        return np.concatenate(parts)


# -- clips and transcripts -------------------------------------------------


def extract_clip(
    path: str | os.PathLike,
    video_span: TimeSpan,
    audio_span: TimeSpan,
    out_dir: str | os.PathLike,
    name: str | None = None,
    meta: VideoMeta | None = None,
) -> dict[str, str]:
    """Cut one video-only and one audio-only file for a moment."""
    meta = meta or probe(path)
    eps = 1e-6
    for label, span in (("video", video_span), ("audio", audio_span)):
        if span.start < -eps or span.end > meta.duration + eps or span.end <= span.start:
            raise SpanOutOfRange(
                f"{label} span [{span.start:.3f}, {span.end:.3f}) outside [0, {meta.duration:.3f}]"
            )
    if abs(audio_span.start - video_span.start) > eps:
        raise SpanOutOfRange("audio span must start with the video span")
    if audio_span.end < video_span.end - eps:
        raise SpanOutOfRange("audio span must not end before the video span")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = name or f"{Path(path).stem}_{video_span.start:.3f}_{video_span.end:.3f}"
    video_path = out / f"{stem}.mp4"
    audio_path = out / f"{stem}.wav"
    exe = transcoder()
    jobs = [
        (video_path, video_span, ["-map", "0:v:0", "-an", "-c:v", "libx264", "-preset", "veryfast"]),
        (audio_path, audio_span, ["-map", "0:a:0", "-vn", "-c:a", "pcm_s16le"]),
    ]
    for target, span, codec in jobs:
        cmd = [exe, "-v", "error", "-nostdin", "-y", "-ss", f"{span.start:.6f}", "-i", str(path),
               "-t", f"{span.duration:.6f}", *codec, str(target)]
        result = _run(cmd, TranscodeError)
        if result.returncode != 0:
            raise TranscodeError(
                f"{target.name}: {result.stderr.decode(errors='replace').strip()[:500]}"
            )
    return {"video_path": str(video_path), "audio_path": str(audio_path)}


def parse_transcript(payload) -> Transcript:
    if isinstance(payload, list):
        raw = payload
    elif isinstance(payload, dict) and isinstance(payload.get("segments"), list):
        raw = payload["segments"]
    else:
        raise ParseError('transcript must be {"segments": [...]}')
    segments = []
    for i, item in enumerate(raw):
        try:
            start, end = float(item["start"]), float(item["end"])
            text = str(item.get("text", "")).strip()
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"segment {i}: {exc!r}") from exc
        if not (math.isfinite(start) and math.isfinite(end)) or end <= start:
            raise ParseError(f"segment {i}: end {end} must exceed start {start}")
        segments.append(Segment(start, end, text))
    segments.sort(key=lambda s: (s.start, s.end))
    transcript = Transcript(segments)
    if not segments:
        warnings.warn("transcript has no segments", EmptyTranscriptWarning, stacklevel=2)
    elif transcript.overlaps:
        log.info("transcript has %d overlapping segment pairs", len(transcript.overlaps))
    return transcript


def read_transcript(path: str | os.PathLike) -> Transcript:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_transcript(payload)
