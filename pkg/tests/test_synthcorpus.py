from __future__ import annotations

import json

import numpy as np
import pytest

from moments.errors import SpanOutOfRange
from moments.localizer import localize, score_against_truth
from moments.media_io import RawFrameSource
from moments.ssim import ms_ssim
from moments.synthcorpus import (
    MAX_OVERLAY_AREA,
    OVERLAY_KINDS,
    SynthSpec,
    generate_game,
    load_raw,
    make_highlight,
    overlay_area,
    write_corpus,
)
from synth_cases import pair, sources


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(fps=0)
    with pytest.raises(ValueError):
        SynthSpec(fps=31)
    with pytest.raises(ValueError):
        SynthSpec(overlay_kinds=("Logo",))
    with pytest.raises(ValueError):
        SynthSpec(g_duration=0)


def test_frame_count_and_determinism():
    spec = SynthSpec(seed=5, g_duration=60, fps=5)
    a, meta = generate_game(spec)
    b, _ = generate_game(spec)
    assert a.shape == (300, 64, 96) and a.dtype == np.uint8
    assert meta.frame_count == 300 and meta.duration == 60.0
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate_game(SynthSpec(seed=6, g_duration=60))[0])


def test_temporal_similarity_bounds():
    for seed in range(3):
        game, _ = generate_game(SynthSpec(seed=seed, g_duration=20))
        for i in range(0, 90, 9):
            assert ms_ssim(game[i], game[i + 1]) > 0.9
            assert ms_ssim(game[i], game[i + 5]) < 0.8


def test_clean_highlight_equals_slice():
    spec = SynthSpec(seed=1, g_duration=30, highlight_segments=[(10.0, 20.0)])
    game, _ = generate_game(spec)
    reel, spans = make_highlight(game, spec)
    assert [(s.start, s.end) for s in spans] == [(50, 100)]
    np.testing.assert_array_equal(reel, game[50:100])


def test_overlay_similarity_band():
    spec = SynthSpec(seed=2, g_duration=30, highlight_segments=[(5.0, 15.0)], overlay_kinds=("Scorecard",))
    game, _ = generate_game(spec)
    reel, spans = make_highlight(game, spec)
    for j in range(0, 50, 7):
        assert 0.8 < ms_ssim(reel[j], game[spans[0].start + j]) < 1.0


def test_overlay_area_cap():
    assert overlay_area(OVERLAY_KINDS, (64, 96)) <= MAX_OVERLAY_AREA
    assert overlay_area(OVERLAY_KINDS, (144, 256)) <= MAX_OVERLAY_AREA
    assert overlay_area((), (64, 96)) == 0.0


@pytest.mark.parametrize("segments", [[(10.0, 20.0), (15.0, 25.0)], [(50.0, 70.0)], [(-1.0, 3.0)]])
def test_bad_segments(segments):
    spec = SynthSpec(seed=0, g_duration=60, highlight_segments=segments)
    game, _ = generate_game(SynthSpec(seed=0, g_duration=60))
    with pytest.raises(SpanOutOfRange):
        make_highlight(game, spec)


def test_segments_keep_spec_order():
    spec = SynthSpec(seed=3, g_duration=40, highlight_segments=[(30.0, 32.0), (5.0, 6.0)])
    game, _ = generate_game(spec)
    reel, spans = make_highlight(game, spec)
    np.testing.assert_array_equal(reel[:10], game[150:160])
    assert [s.start for s in spans] == [150, 25]


def test_write_corpus_round_trip(tmp_path):
    spec = SynthSpec(seed=4, g_duration=12, highlight_segments=[(2.0, 5.0)], overlay_kinds=("Watermark",))
    truth = write_corpus(spec, tmp_path)
    on_disk = json.loads((tmp_path / "truth.json").read_text())
    assert on_disk == json.loads(json.dumps(truth))
    assert on_disk["spans"] == [[10, 25]] and on_disk["time_spans"] == [[2.0, 5.0]]
    game = load_raw(tmp_path / "game.gray", truth["width"], truth["height"])
    np.testing.assert_array_equal(game, generate_game(spec)[0])
    raw = RawFrameSource(tmp_path / "highlight.gray", truth["width"], truth["height"], truth["fps"])
    assert raw.frame_count == 15
    with pytest.raises(ValueError):
        load_raw(tmp_path / "game.gray", 95, 64)


def test_end_to_end_oracle():
    for seed in (0, 1):
        _, game, reel, truth = pair(seed)
        r = localize(*sources(game, reel))
        rows = score_against_truth(r.moments, truth, 5)
        assert len(rows) == len(truth)
        for row in rows:
            assert row["iou"] >= 0.9
            assert row["start_error"] <= 1.0 and row["end_error"] <= 1.0


def test_different_seed_is_not_matched():
    _, game, _, _ = pair(8)
    _, _, reel, _ = pair(9)
    assert localize(*sources(game, reel)).localized_fraction < 0.05
