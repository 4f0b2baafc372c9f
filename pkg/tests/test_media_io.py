from __future__ import annotations

import json
import subprocess
import warnings
from fractions import Fraction

import numpy as np
import pytest

from moments import media_io
from moments.errors import DecodeError, EmptyTranscriptWarning, ParseError, SpanOutOfRange
from moments.media_io import (
    ArrayFrameSource,
    FrameSpan,
    RawFrameSource,
    TimeSpan,
    VideoFrameSource,
    VideoMeta,
    center_index,
    decode_gray,
    extract_clip,
    initial_index,
    parse_transcript,
    probe,
    read_transcript,
    scaled_size,
    second_range,
)


def _have_transcoder() -> bool:
    try:
        exe = media_io.transcoder()
        return subprocess.run([exe, "-version"], capture_output=True).returncode == 0
    except (DecodeError, OSError):
        return False


needs_ffmpeg = pytest.mark.skipif(not _have_transcoder(), reason="no FFmpeg-compatible transcoder")


@pytest.fixture(scope="module")
def video(tmp_path_factory):
    """10 s, 25 fps test pattern with a sine soundtrack."""
    path = tmp_path_factory.mktemp("media") / "clip.mp4"
    exe = media_io.transcoder()
    cmd = [exe, "-v", "error", "-y",
           "-f", "lavfi", "-i", "testsrc=size=320x180:rate=25:duration=10",
           "-f", "lavfi", "-i", "sine=frequency=440:duration=10",
           "-c:v", "libx264", "-g", "25", "-pix_fmt", "yuv420p", "-c:a", "aac", "-shortest", str(path)]
    subprocess.run(cmd, check=True, capture_output=True)
    return path


# -- pure helpers ----------------------------------------------------------------


def test_second_indexing_rules():
    fps = Fraction(25)
    assert [center_index(s, fps) for s in range(3)] == [12, 37, 62]
    assert [initial_index(s, fps) for s in range(3)] == [0, 25, 50]
    assert second_range(2, fps) == (50, 75)
    ntsc = Fraction(30000, 1001)
    first, stop = second_range(1, ntsc)
    assert first == 30 and stop == 60
    assert first <= center_index(1, ntsc) < stop


def test_video_meta_invariants():
    meta = VideoMeta("x", Fraction(25), 135000, 5400.0, 1920, 1080)
    assert meta.full_seconds == 5400
    assert VideoMeta("y", Fraction(1), 1, 1.0, 2, 2).duration == 1.0
    with pytest.raises(ValueError):
        VideoMeta("z", Fraction(0), 1, 1.0, 2, 2)


def test_scaled_size_preserves_aspect():
    assert scaled_size(1920, 1080, 256) == (256, 144)
    assert scaled_size(320, 180, 128) == (128, 72)
    assert scaled_size(320, 180, None) == (320, 180)
    assert scaled_size(320, 180, (80, 45)) == (80, 45)


def test_fps_parsing_snaps_ntsc():
    assert media_io._parse_fps(("29.97", "")) == Fraction(30000, 1001)
    assert media_io._parse_fps(("25", "")) == 25
    assert media_io._parse_fps(("23.98", "")) == Fraction(24000, 1001)


def test_array_and_raw_sources(tmp_path):
    frames = np.arange(6 * 4 * 5, dtype=np.uint8).reshape(6, 4, 5)
    src = ArrayFrameSource(frames, 2)
    np.testing.assert_array_equal(src.frames(4, 10), frames[4:])
    np.testing.assert_array_equal(src.take([5, 0]), frames[[5, 0]])
    assert src.full_seconds == 3
    path = tmp_path / "f.gray"
    frames.tofile(path)
    raw = RawFrameSource(path, 5, 4, 2)
    np.testing.assert_array_equal(raw.frame(3), frames[3])
    with pytest.raises(DecodeError):
        RawFrameSource(path, 7, 4, 2)


# -- transcripts -----------------------------------------------------------------


def test_read_transcript_sorts(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"segments": [
        {"start": 4.5, "end": 9.0, "text": "and the cross"},
        {"start": 0.0, "end": 4.2, "text": "Kick off"},
    ]}))
    t = read_transcript(path)
    assert [s.start for s in t.segments] == [0.0, 4.5]
    assert t.segments[0].text == "Kick off"
    assert t.overlaps == []


def test_transcript_errors_and_flags(tmp_path):
    with pytest.raises(ParseError):
        parse_transcript({"segments": [{"start": 3.0, "end": 3.0, "text": "x"}]})
    with pytest.raises(ParseError):
        parse_transcript({"nope": []})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        read_transcript(bad)
    with pytest.warns(EmptyTranscriptWarning):
        assert parse_transcript({"segments": []}).segments == []
    t = parse_transcript([{"start": 0, "end": 5, "text": "a"}, {"start": 4, "end": 6, "text": "b"}])
    assert t.overlaps == [(0, 1)]


# -- transcoder-backed -----------------------------------------------------------


@needs_ffmpeg
def test_probe(video):
    meta = probe(video)
    assert meta.fps == 25 and meta.frame_count == 250
    assert (meta.width, meta.height) == (320, 180)
    assert abs(meta.duration - meta.frame_count / meta.fps) <= 1 / meta.fps


@needs_ffmpeg
def test_probe_errors(tmp_path, video):
    with pytest.raises(FileNotFoundError):
        probe(tmp_path / "missing.mp4")
    truncated = tmp_path / "trunc.mp4"
    truncated.write_bytes(video.read_bytes()[:2000])
    with pytest.raises(DecodeError):
        probe(truncated)


@needs_ffmpeg
def test_single_frame_video(tmp_path):
    path = tmp_path / "one.mp4"
    subprocess.run([media_io.transcoder(), "-v", "error", "-y", "-f", "lavfi", "-i",
                    "testsrc=size=64x64:rate=1:duration=1", "-frames:v", "1", "-c:v", "libx264",
                    "-pix_fmt", "yuv420p", str(path)], check=True, capture_output=True)
    meta = probe(path)
    assert meta.frame_count == 1 and meta.duration == 1.0


@needs_ffmpeg
def test_decode_all_and_sampled(video):
    meta = probe(video)
    frames = list(decode_gray(video, downscale=128, meta=meta))
    assert [i for i, _ in frames] == list(range(250))
    assert frames[0][1].shape == (72, 128) and frames[0][1].dtype == np.uint8
    sampled = [i for i, _ in decode_gray(video, 1, 128, "center", meta)]
    assert sampled == [12 + 25 * s for s in range(10)]
    initial = [i for i, _ in decode_gray(video, 1, 128, "initial", meta)]
    assert initial == [25 * s for s in range(10)]
    with pytest.raises(ValueError):
        list(decode_gray(video, 30, 128, meta=meta))


@needs_ffmpeg
def test_random_access_matches_sequential(video):
    meta = probe(video)
    sequential = np.stack([f for _, f in decode_gray(video, downscale=(80, 45), meta=meta)])
    src = VideoFrameSource(video, downscale=(80, 45), meta=meta, block_seconds=1, cache_blocks=2)
    for i in [249, 0, 37, 26, 25, 24, 100, 13, 74, 175]:
        np.testing.assert_array_equal(src.frame(i), sequential[i])
    np.testing.assert_array_equal(src.frames(20, 60), sequential[20:60])


@needs_ffmpeg
def test_extract_clip_durations(video, tmp_path):
    meta = probe(video)
    out = extract_clip(video, TimeSpan(2.0, 5.0), TimeSpan(2.0, 8.0), tmp_path, "m", meta)
    v = probe(out["video_path"])
    assert abs(v.duration - 3.0) <= 0.1
    from moments.baselines import read_wav

    wave, rate = read_wav(out["audio_path"])
    assert abs(len(wave) / rate - 6.0) <= 0.1


@needs_ffmpeg
def test_extract_clip_span_checks(video, tmp_path):
    meta = probe(video)
    with pytest.raises(SpanOutOfRange):
        extract_clip(video, TimeSpan(2.0, 5.0), TimeSpan(2.0, 4.0), tmp_path, meta=meta)
    with pytest.raises(SpanOutOfRange):
        extract_clip(video, TimeSpan(8.0, 11.0), TimeSpan(8.0, 11.0), tmp_path, meta=meta)


@needs_ffmpeg
def test_frames_to_clip_round_trip(video, tmp_path):
    from moments.extractor import frames_to_timespan

    meta = probe(video)
    span = frames_to_timespan(FrameSpan(50, 125), meta.fps)
    out = extract_clip(video, span, span, tmp_path, "rt", meta)
    assert abs(probe(out["video_path"]).duration - span.duration) <= 0.1


def test_transcoder_env_override(monkeypatch):
    monkeypatch.setenv(media_io.TRANSCODER_ENV, "/opt/custom/ffmpeg")
    assert media_io.transcoder() == "/opt/custom/ffmpeg"


def test_missing_transcoder_binary(monkeypatch, tmp_path):
    monkeypatch.setenv(media_io.TRANSCODER_ENV, str(tmp_path / "no-such-ffmpeg"))
    video = tmp_path / "x.mp4"
    video.write_bytes(b"\0")
    with pytest.raises(DecodeError):
        probe(video)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DecodeError):
            list(decode_gray(video, meta=VideoMeta(str(video), Fraction(25), 10, 0.4, 8, 8)))


def test_pipe_broken_mid_stream(tmp_path):
    from moments.errors import PipeBroken

    script = tmp_path / "dying-transcoder"
    script.write_text("#!/bin/sh\nhead -c 100 /dev/zero\nexit 1\n")
    script.chmod(0o755)
    frames = media_io._read_frames([str(script)], (8, 8))
    assert next(frames).shape == (8, 8)
    with pytest.raises(PipeBroken):
        next(frames)
